use std::time::Instant;

use layerpot::bvp::{solve, BoundaryData, ProblemKind, ProblemSpec, Solution};
use layerpot::diagnostics::power_weight;
use layerpot::geometry::BoundaryMesh;
use layerpot::kernels::{Family, KernelSpec};
use layerpot::Error;
use serde_json::Value;

use super::Ctx;
use crate::error::CliError;
use crate::output::{fmt9, int, num, nums, Csv, Obj, OutDir};
use crate::setup::{build_kernel, build_mesh, problem_kind, Recipe};

pub fn run(ctx: &Ctx) -> Result<(), CliError> {
    let t0 = Instant::now();
    let cfg = &ctx.cfg;
    let mesh = build_mesh(cfg, None)?;
    let kernel = build_kernel(cfg, mesh.dim())?;
    let kind = problem_kind(&cfg.require("problem", "kind")?)?;
    let recipe = Recipe::from_config(cfg, "problem")?;
    let exterior = cfg.bool_or("problem", "exterior", false)?;
    let auto = ctx.auto_project || cfg.bool_or("problem", "auto_project", false)?;
    let stride = cfg.usize_or("problem", "consistency_stride", 0)?;
    let alpha = cfg.f64_or("weight", "alpha", 0.0)?;
    let center = cfg.point("weight", "center")?.unwrap_or([0.0, 0.0, 1.0]);
    let kernel_tol = cfg.f64("solver", "kernel_tol")?;
    let compat_tol = cfg.f64("solver", "compat_tol")?;
    let points = cfg.points("eval", "points")?;
    let order = cfg.usize_or("eval", "order", 1)?;
    cfg.check_unused()?;
    if order > 2 {
        return Err(CliError::Config("[eval] order must be 0, 1 or 2".into()));
    }

    let data = recipe.boundary_data(kind, &mesh, &kernel)?;
    let integrals = data_integrals(&mesh, &data);
    let mut spec = ProblemSpec::new(kind, &mesh, kernel.clone(), data)?.exterior(exterior).auto_project(auto);
    spec.consistency_stride = stride;
    if let Some(t) = kernel_tol {
        spec.solve.kernel_tol = t;
    }
    if let Some(t) = compat_tol {
        spec.solve.compat_tol = t;
    }
    if kind == ProblemKind::WeightedLaplaceNeumann {
        spec = spec.with_weight(power_weight(&mesh, center, alpha)?);
    }

    let mut out = OutDir::create(&ctx.out)?;
    let mut report = ctx
        .header("solve")
        .put("mesh", mesh_summary(&mesh))
        .put("kernel", kernel_summary(&kernel))
        .put(
            "problem",
            Obj::new()
                .put("kind", format!("{kind:?}"))
                .put("data", recipe.name())
                .put("exterior", exterior)
                .put("auto_project", auto),
        );
    let sol = match solve(&spec) {
        Ok(s) => s,
        Err(e @ Error::Compatibility { .. }) => {
            if let Error::Compatibility { functional, value, tol } = &e {
                report.set("status", "compatibility_violation");
                report.set(
                    "compatibility",
                    Obj::new()
                        .put("functional", functional.as_str())
                        .f("value", *value)
                        .f("tolerance", *tol)
                        .put("data_integral", nums(&integrals)),
                );
            }
            out.json("report.json", &report.build())?;
            out.finish()?;
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };

    write_density(&mut out, &sol)?;
    let values = if points.is_empty() { Vec::new() } else { sol.eval(&points, order)? };
    let m = kernel.m().min(3);
    let n = mesh.dim();
    let mut header: Vec<String> = ["point", "x", "y", "z", "near_boundary"].iter().map(|s| s.to_string()).collect();
    for k in 0..m {
        header.push(format!("u{k}"));
    }
    if order >= 1 {
        for k in 0..m {
            for a in ["x", "y", "z"].iter().take(n) {
                header.push(format!("u{k}_{a}"));
            }
        }
    }
    let mut csv = Csv::new("eval.csv").with_header(header);
    for (i, (p, v)) in points.iter().zip(&values).enumerate() {
        let mut row = vec![i.to_string(), fmt9(p[0]), fmt9(p[1]), fmt9(p[2]), u8::from(v.near_boundary).to_string()];
        row.extend(v.value[..m].iter().map(|x| fmt9(*x)));
        if order >= 1 {
            for k in 0..m {
                row.extend(v.gradient[k][..n].iter().map(|x| fmt9(*x)));
            }
        }
        csv.row(row);
    }
    out.csv(&csv)?;

    let r = &sol.report;
    report.set("status", "ok");
    report.set(
        "solve",
        Obj::new()
            .put("representation", format!("{:?}", sol.representation))
            .f("residual", r.residual)
            .f("relative_residual", r.relative_residual)
            .f("condition_estimate", r.condition_estimate)
            .put("kernel_dimension", int(r.null_dim))
            .put("ambiguous_kernel", r.ambiguous_kernel)
            .put("constraint_residuals", nums(&r.constraint_residuals))
            .put("data_integral", nums(&integrals)),
    );
    report.set(
        "correction",
        Obj::new()
            .put("constant", nums(&sol.correction.constant))
            .put("linear", Value::Array(sol.correction.linear.iter().map(|row| nums(row)).collect())),
    );
    report.set(
        "projection_norm",
        match &sol.projection {
            Some(p) => num(p.iter().map(|v| v * v).sum::<f64>().sqrt()),
            None => Value::Null,
        },
    );
    if let Some(w) = &sol.weighted {
        report.set(
            "weighted",
            Obj::new()
                .f("alpha", alpha)
                .f("data_norm", w.data_norm)
                .f("density_norm", w.density_norm)
                .f("residual_norm", w.residual_norm)
                .f("a2_constant", w.a2_constant),
        );
    }
    if let Some(c) = sol.consistency {
        report.set("boundary_consistency", num(c));
    }
    report.set("eval_points", int(points.len()));
    out.json("report.json", &report.build())?;
    out.json("timings.json", &Obj::new().f("total_seconds", t0.elapsed().as_secs_f64()).build())?;
    out.finish()
}

/// `∫ f dσ` of each data component.
fn data_integrals(mesh: &BoundaryMesh<f64>, data: &BoundaryData<f64>) -> Vec<f64> {
    let w = mesh.weights();
    match data {
        BoundaryData::Field(f) => (0..f.m).map(|k| f.component(k).iter().zip(w).map(|(a, b)| a * b).sum()).collect(),
        BoundaryData::Dirichlet(p) => vec![p.f.iter().zip(w).map(|(a, b)| a * b).sum(), p.g.iter().zip(w).map(|(a, b)| a * b).sum()],
        BoundaryData::Neumann(v) => {
            let n = mesh.len();
            vec![v[n..].iter().zip(w).map(|(a, b)| a * b).sum()]
        }
    }
}

fn write_density(out: &mut OutDir, sol: &Solution<'_, f64>) -> Result<(), CliError> {
    let mesh = sol.mesh;
    let nn = mesh.len();
    let comps = sol.density.len() / nn;
    // biharmonic densities are stacked blocks, the others interleaved per node
    let stacked = sol.kind.is_biharmonic();
    let mut header: Vec<String> = ["node", "x", "y", "z", "weight"].iter().map(|s| s.to_string()).collect();
    header.extend((0..comps).map(|k| format!("density{k}")));
    let mut csv = Csv::new("density.csv").with_header(header);
    for i in 0..nn {
        let x = mesh.nodes()[i];
        let mut row = vec![i.to_string(), fmt9(x[0]), fmt9(x[1]), fmt9(x[2]), fmt9(mesh.weights()[i])];
        for k in 0..comps {
            let v = if stacked { sol.density[k * nn + i] } else { sol.density[i * comps + k] };
            row.push(fmt9(v));
        }
        csv.row(row);
    }
    out.csv(&csv)
}

pub fn mesh_summary(mesh: &BoundaryMesh<f64>) -> Obj {
    Obj::new()
        .put("dimension", int(mesh.dim()))
        .put("panels", int(mesh.panels().len()))
        .put("nodes", int(mesh.len()))
        .f("h", mesh.h())
        .f("total_measure", mesh.total_measure())
        .f("lipschitz", mesh.lipschitz())
}

pub fn kernel_summary(k: &KernelSpec<f64>) -> Obj {
    match k.family {
        Family::Laplace => Obj::new().put("family", "laplace"),
        Family::Lame { mu, lambda } => Obj::new().put("family", "lame").f("mu", mu).f("lambda", lambda),
        Family::Biharmonic { rho } => Obj::new().put("family", "biharmonic").f("rho", rho),
    }
}
