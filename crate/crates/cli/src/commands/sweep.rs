use layerpot::geometry::BoundaryMesh;
use layerpot::kernels::{Family, KernelSpec};
use layerpot::potentials::{assemble_biharmonic_traces, assemble_k, AssemblyOptions, BoundaryOperator};
use layerpot::solver::nullspace_basis;
use serde_json::Value;

use super::Ctx;
use crate::error::CliError;
use crate::output::{fmt9, int, Csv, Obj, OutDir};
use crate::setup::{build_mesh, kernel_with};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Axis {
    /// `ρ` of the biharmonic family; operator `−½I + K*_ρ`.
    Rho,
    /// Lamé `λ`; operator `½I + K`.
    LameLambda,
    /// Refinement level; Laplace operator `−½I + K`.
    Refinement,
    /// Apex height of a bipyramid; Laplace operator `½I + K`.
    Corner,
}

struct Row {
    nodes: usize,
    kernel_dim: usize,
    expected: usize,
    min_sv: f64,
    cond: f64,
}

pub fn run(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let axis = match cfg.require("sweep", "axis")?.as_str() {
        "rho" => Axis::Rho,
        "lame_lambda" => Axis::LameLambda,
        "refinement" => Axis::Refinement,
        "corner" => Axis::Corner,
        other => return Err(CliError::Config(format!("unknown sweep axis {other:?}"))),
    };
    let values = cfg
        .f64_list("sweep", "values")?
        .ok_or_else(|| CliError::Config(format!("{}: missing [sweep] values", cfg.path().display())))?;
    let tol = cfg.f64_or("sweep", "kernel_tol", 1e-6)?;
    if axis == Axis::Refinement && values.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
        return Err(CliError::Config("refinement sweep values must be nonnegative integers".into()));
    }
    // geometry for the non-refinement axes is built once, up front
    let base = match axis {
        Axis::Corner => None,
        Axis::Refinement => {
            build_mesh(cfg, Some(0))?;
            None
        }
        _ => Some(build_mesh(cfg, None)?),
    };
    let level = cfg.usize_or("mesh", "level", 2)?;
    let dim = base.as_ref().map_or(3, |m| m.dim());
    let lame = match axis {
        Axis::LameLambda => Some(kernel_with(cfg, dim, values.first().copied(), None)?),
        _ => None,
    };
    if let Some(spec) = &lame {
        if !matches!(spec.family, Family::Lame { .. }) {
            return Err(CliError::Config("the lame_lambda axis needs [kernel] family = lame".into()));
        }
    }
    cfg.check_unused()?;

    let mut out = OutDir::create(&ctx.out)?;
    let mut csv = Csv::new("sweep.csv");
    let mut rows_json = Vec::new();
    let mut failed = 0usize;
    let mut mismatched = 0usize;
    for &v in &values {
        let res = row(cfg, axis, v, base.as_ref(), level, dim, tol);
        match res {
            Ok(r) => {
                let status = if r.kernel_dim == r.expected { "ok" } else { "kernel_mismatch" };
                if r.kernel_dim != r.expected {
                    mismatched += 1;
                }
                csv.row(vec![
                    fmt9(v),
                    status.into(),
                    r.nodes.to_string(),
                    r.kernel_dim.to_string(),
                    r.expected.to_string(),
                    fmt9(r.min_sv),
                    fmt9(r.cond),
                ]);
                rows_json.push(
                    Obj::new()
                        .f("parameter", v)
                        .put("status", status)
                        .put("nodes", int(r.nodes))
                        .put("kernel_dim", int(r.kernel_dim))
                        .put("expected_kernel_dim", int(r.expected))
                        .f("min_singular_value", r.min_sv)
                        .f("condition_estimate", r.cond)
                        .build(),
                );
            }
            Err(e) => {
                failed += 1;
                let msg = format!("failed: {}", e.to_string().replace([',', '\n'], ";"));
                csv.row(vec![fmt9(v), msg.clone(), "nan".into(), "nan".into(), "nan".into(), "nan".into(), "nan".into()]);
                rows_json.push(Obj::new().f("parameter", v).put("status", msg).build());
            }
        }
    }
    out.csv(&csv)?;
    let report = ctx
        .header("sweep")
        .put("axis", format!("{axis:?}"))
        .f("kernel_tol", tol)
        .put("rows", Value::Array(rows_json))
        .put("failed_rows", int(failed))
        .put("kernel_mismatches", int(mismatched));
    out.json("report.json", &report.build())?;
    out.finish()
}

fn row(
    cfg: &crate::config::Config,
    axis: Axis,
    v: f64,
    base: Option<&BoundaryMesh<f64>>,
    level: usize,
    dim: usize,
    tol: f64,
) -> Result<Row, CliError> {
    let opts = AssemblyOptions::default();
    let owned;
    let (mesh, op, expected): (&BoundaryMesh<f64>, BoundaryOperator<f64>, usize) = match axis {
        Axis::Rho => {
            let mesh = base.expect("mesh");
            let (_, kstar) = assemble_biharmonic_traces(mesh, v, &opts)?;
            (mesh, kstar.with_kappa(-0.5), dim + 1)
        }
        Axis::LameLambda => {
            let mesh = base.expect("mesh");
            let spec = kernel_with(cfg, dim, Some(v), None)?;
            (mesh, assemble_k(mesh, &spec, &opts)?.with_kappa(0.5), dim * (dim + 1) / 2)
        }
        Axis::Refinement => {
            owned = build_mesh(cfg, Some(v as usize))?;
            let spec = KernelSpec::laplace(owned.dim())?;
            (&owned, assemble_k(&owned, &spec, &opts)?.with_kappa(-0.5), 0)
        }
        Axis::Corner => {
            if v <= 0.0 {
                return Err(CliError::Numerical(format!("degenerate bipyramid with apex height {v}")));
            }
            let (verts, faces) = crate::setup::bipyramid(v);
            owned = layerpot::geometry::build_triangulated_boundary(&verts, &faces, level)?;
            let spec = KernelSpec::laplace(3)?;
            (&owned, assemble_k(&owned, &spec, &opts)?.with_kappa(0.5), 1)
        }
    };
    let ns = nullspace_basis(&op, tol)?;
    let d = ns.dim();
    let min_sv = ns.smallest_singular_values.get(d).copied().unwrap_or(f64::NAN);
    Ok(Row {
        nodes: mesh.len(),
        kernel_dim: d,
        expected,
        min_sv,
        cond: ns.sigma_max / min_sv,
    })
}
