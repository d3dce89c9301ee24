//! `rh`, `dyadic` and `weights`: probes of the harmonic-analysis estimates.

use layerpot::bvp::{solve, BoundaryData, ProblemKind, ProblemSpec, Solution};
use layerpot::diagnostics::{
    ap_constant, dyadic_maximal, good_lambda_check, ntmf_on_nodes, power_weight, reverse_holder_ratio, ConeSide, GoodLambdaOptions,
    GoodLambdaReport, NtmfSampler, Weight,
};
use layerpot::geometry::{chart_cubes, surface_ball, BoundaryMesh, SurfaceCubeTree};
use layerpot::kernels::KernelSpec;
use layerpot::potentials::DensityField;
use layerpot::scalar::dist;
use serde_json::Value;

use super::Ctx;
use crate::error::CliError;
use crate::output::{fmt9, int, num, nums, Csv, Obj, OutDir};
use crate::setup::{build_mesh, Recipe};

fn levels(ctx: &Ctx, section: &str, default: &[usize]) -> Result<Vec<usize>, CliError> {
    let l = ctx.cfg.usize_list(section, "levels")?.unwrap_or_else(|| default.to_vec());
    if l.is_empty() {
        return Err(CliError::Config(format!("[{section}] levels is empty")));
    }
    Ok(l)
}

/// Interior Laplace Dirichlet solve of nodal data.
fn dirichlet<'a>(mesh: &'a BoundaryMesh<f64>, data: Vec<f64>) -> Result<Solution<'a, f64>, CliError> {
    let spec = ProblemSpec::new(
        ProblemKind::LaplaceDirichlet,
        mesh,
        KernelSpec::laplace(mesh.dim())?,
        BoundaryData::Field(DensityField::new(mesh, 1, data)?),
    )?;
    Ok(solve(&spec)?)
}

/// Interior nontangential maximal function of a scalar solution at `nodes` (0 elsewhere).
fn interior_ntmf(mesh: &BoundaryMesh<f64>, sol: &Solution<'_, f64>, truncation: f64, nodes: &[usize]) -> Result<Vec<f64>, CliError> {
    let sampler = NtmfSampler::for_mesh(mesh);
    let ev = sol.evaluator()?;
    let field = ntmf_on_nodes(mesh, nodes, |x| Ok(ev.point(x, 0)?.value[0]), ConeSide::Interior, truncation, &sampler)?;
    Ok(field.values)
}

pub fn rh(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let levels = levels(ctx, "rh", &[1, 2, 3])?;
    let r = cfg.f64_or("rh", "radius", 0.25)?;
    let p = cfg.f64_or("rh", "p", 10.0)?;
    let p0 = cfg.f64_or("rh", "p0", 2.0)?;
    let kappa = cfg.f64_or("rh", "enlargement", 3.0)?;
    let truncation = cfg.f64_or("rh", "truncation", 0.5)?;
    let anchor = cfg.point("rh", "point")?.unwrap_or([0.0, 0.0, 1.0]);
    let stability = cfg.f64_or("rh", "stability", 0.3)?;
    let meshes: Vec<BoundaryMesh<f64>> = levels.iter().map(|&l| build_mesh(cfg, Some(l))).collect::<Result<_, _>>()?;
    cfg.check_unused()?;
    if r <= 0.0 {
        return Err(CliError::Config("[rh] radius must be positive".into()));
    }

    let mut csv = Csv::new("rh.csv");
    let mut ratios = Vec::new();
    let mut rows = Vec::new();
    for (mesh, level) in meshes.iter().zip(&levels) {
        let node = mesh.nearest_node(anchor);
        let x0 = mesh.nodes()[node];
        // data vanishing on I(P, 3r), smooth across its edge
        let data: Vec<f64> = mesh.nodes().iter().map(|x| (dist(*x, x0) - 3.0 * r).max(0.0).powi(2)).collect();
        let vanish = surface_ball(mesh, node, 3.0 * r).len();
        let sol = dirichlet(mesh, data)?;
        let big_f = interior_ntmf(mesh, &sol, truncation, &surface_ball(mesh, node, r * kappa))?;
        let rep = reverse_holder_ratio(mesh, &big_f, node, r, p, p0, kappa, None)?;
        csv.row(vec![
            level.to_string(),
            fmt9(mesh.h()),
            fmt9(r),
            rep.inner_nodes.to_string(),
            rep.outer_nodes.to_string(),
            fmt9(rep.lhs),
            fmt9(rep.rhs),
            fmt9(rep.ratio),
        ]);
        rows.push(
            Obj::new()
                .put("level", int(*level))
                .f("h", mesh.h())
                .put("nodes", int(mesh.len()))
                .put("vanishing_nodes", int(vanish))
                .put("inner_nodes", int(rep.inner_nodes))
                .put("outer_nodes", int(rep.outer_nodes))
                .f("lhs", rep.lhs)
                .f("rhs", rep.rhs)
                .f("ratio", rep.ratio)
                .f("solve_residual", sol.report.relative_residual)
                .build(),
        );
        ratios.push(rep.ratio);
    }
    let finite = ratios.iter().all(|v| v.is_finite());
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    let spread = if lo > 0.0 { hi / lo - 1.0 } else { f64::INFINITY };
    let mut out = OutDir::create(&ctx.out)?;
    out.csv(&csv)?;
    let report = ctx
        .header("rh")
        .f("radius", r)
        .f("p", p)
        .f("p0", p0)
        .f("enlargement", kappa)
        .f("truncation", truncation)
        .put("jump_term", "not applicable: the double layer has no conormal jump")
        .put("levels", Value::Array(rows))
        .put("ratios", nums(&ratios))
        .f("relative_spread", spread)
        .put("finite", finite)
        .put("stable", spread <= stability);
    out.json("report.json", &report.build())?;
    out.finish()?;
    if finite {
        Ok(())
    } else {
        Err(CliError::Verification("reverse Hölder ratio is not finite".into()))
    }
}

/// Dyadic maximal operator invariants on `f`; returns the names of those that fail.
fn dyadic_invariants(tree: &SurfaceCubeTree<f64>, f: &[f64]) -> Result<Vec<&'static str>, CliError> {
    let mut bad = Vec::new();
    let nodes = &tree.root().nodes;
    let mf = dyadic_maximal(tree, f)?;
    let top = nodes.iter().map(|&i| f[i].abs()).fold(0.0, f64::max);
    let tol = 1e-12 * top.max(1.0);
    let mass: f64 = nodes.iter().map(|&i| tree.weights[i]).sum();
    let avg = nodes.iter().map(|&i| tree.weights[i] * f[i].abs()).sum::<f64>() / mass;
    if nodes.iter().any(|&i| mf[i] + tol < avg) {
        bad.push("dominates_root_average");
    }
    if nodes.iter().any(|&i| mf[i] > top + tol) {
        bad.push("bounded_by_sup");
    }
    let c = vec![2.5; f.len()];
    if dyadic_maximal(tree, &c)?.iter().zip(0..).any(|(v, i)| nodes.contains(&i) && (v - 2.5).abs() > 1e-12) {
        bad.push("constants_fixed");
    }
    let bigger: Vec<f64> = f.iter().map(|v| v.abs() + 1.0).collect();
    let mb = dyadic_maximal(tree, &bigger)?;
    if nodes.iter().any(|&i| mb[i] + tol < mf[i]) {
        bad.push("monotone");
    }
    let l2 = |v: &[f64]| nodes.iter().map(|&i| tree.weights[i] * v[i] * v[i]).sum::<f64>().sqrt();
    if l2(&mf) > 10.0 * l2(f) {
        bad.push("l2_bound");
    }
    let scaled: Vec<f64> = f.iter().map(|v| 3.0 * v).collect();
    let ms = dyadic_maximal(tree, &scaled)?;
    if nodes.iter().any(|&i| (ms[i] - 3.0 * mf[i]).abs() > 3.0 * tol) {
        bad.push("homogeneous");
    }
    Ok(bad)
}

fn weighted_difference(a: &GoodLambdaReport<f64>, b: &GoodLambdaReport<f64>) -> f64 {
    let mut d = 0.0f64;
    for (x, y) in [
        (&a.level_sets, &b.level_sets),
        (&a.level_sets_a, &b.level_sets_a),
        (&a.f_level_sets, &b.f_level_sets),
        (&a.delta, &b.delta),
    ] {
        for (u, v) in x.iter().zip(y.iter()) {
            d = d.max((u - v).abs());
        }
    }
    for (u, v) in [(a.lhs, b.lhs), (a.data_term, b.data_term), (a.constant, b.constant), (a.max_delta, b.max_delta)] {
        d = d.max((u - v).abs());
    }
    d
}

pub fn dyadic(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let levels = levels(ctx, "dyadic", &[2, 3])?;
    let depth = cfg.usize_or("dyadic", "depth", 3)?;
    let half = cfg.f64_or("dyadic", "half_width", 0.6)?;
    let anchor = cfg.point("dyadic", "point")?.unwrap_or([0.0, 0.0, 1.0]);
    let p = cfg.f64_or("dyadic", "p", 4.0)?;
    let q = cfg.f64_or("dyadic", "q", 2.0)?;
    let a = cfg.f64_or("dyadic", "a", 2.0)?;
    let gamma = cfg.f64_or("dyadic", "gamma", 0.1)?;
    let samples = cfg.usize_or("dyadic", "samples", 16)?;
    let truncation = cfg.f64_or("dyadic", "truncation", 0.5)?;
    let weighted_tol = cfg.f64_or("dyadic", "weighted_tol", 1e-12)?;
    let recipe = Recipe::from_config(cfg, "problem")?;
    let meshes: Vec<BoundaryMesh<f64>> = levels.iter().map(|&l| build_mesh(cfg, Some(l))).collect::<Result<_, _>>()?;
    cfg.check_unused()?;
    let opts = GoodLambdaOptions {
        a,
        gamma,
        samples,
        ..GoodLambdaOptions::new(p, q)
    };

    let mut lambda_csv = Csv::new("lambda.csv");
    let mut dyadic_csv = Csv::new("dyadic.csv");
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (mesh, level) in meshes.iter().zip(&levels) {
        let spec = KernelSpec::laplace(mesh.dim())?;
        let data = match recipe.boundary_data(ProblemKind::LaplaceDirichlet, mesh, &spec)? {
            BoundaryData::Field(f) => f.values,
            _ => unreachable!("Laplace Dirichlet data is a nodal field"),
        };
        let small_f: Vec<f64> = data.iter().map(|v| v.abs()).collect();
        let sol = dirichlet(mesh, data)?;
        let tree = chart_cubes(mesh, mesh.nearest_node(anchor), half, depth)?;
        let big_f = interior_ntmf(mesh, &sol, truncation, &tree.root().nodes)?;
        let plain = good_lambda_check(&tree, &big_f, &small_f, &opts, None)?;
        let weighted = good_lambda_check(&tree, &big_f, &small_f, &opts, Some(&Weight::uniform(mesh.len())))?;
        let wdiff = weighted_difference(&plain, &weighted);
        let invariants = dyadic_invariants(&tree, &big_f)?;
        let mf = dyadic_maximal(&tree, &big_f)?;
        let l2 = |v: &[f64]| tree.root().nodes.iter().map(|&i| tree.weights[i] * v[i] * v[i]).sum::<f64>().sqrt();
        let ml2 = l2(&mf) / l2(&big_f);
        for (k, lam) in plain.lambdas.iter().enumerate() {
            lambda_csv.row(vec![
                level.to_string(),
                fmt9(*lam),
                fmt9(plain.level_sets[k]),
                fmt9(weighted.level_sets[k]),
                fmt9(plain.level_sets_a[k]),
                fmt9(plain.f_level_sets[k]),
                fmt9(plain.delta[k]),
            ]);
        }
        dyadic_csv.row(vec![
            level.to_string(),
            fmt9(mesh.h()),
            fmt9(plain.constant),
            fmt9(plain.constant_data_only),
            fmt9(plain.max_delta),
            fmt9(ml2),
            fmt9(wdiff),
        ]);
        for name in &invariants {
            failures.push(format!("dyadic invariant {name} fails at level {level}"));
        }
        if !plain.constant.is_finite() {
            failures.push(format!("good-lambda constant is not finite at level {level}"));
        }
        if !(wdiff <= weighted_tol) {
            failures.push(format!("weighted and unweighted reports differ by {wdiff:e} at level {level}"));
        }
        rows.push(
            Obj::new()
                .put("level", int(*level))
                .f("h", mesh.h())
                .put("nodes", int(mesh.len()))
                .put("cube_nodes", int(tree.root().nodes.len()))
                .f("solve_residual", sol.report.relative_residual)
                .f("constant", plain.constant)
                .f("constant_data_only", plain.constant_data_only)
                .f("lhs", plain.lhs)
                .f("f_average", plain.f_average)
                .f("data_term", plain.data_term)
                .f("max_delta", plain.max_delta)
                .f("delta_allowed", plain.delta_allowed)
                .f("maximal_l2_ratio", ml2)
                .f("weighted_difference", wdiff)
                .put("invariants_failed", Value::Array(invariants.iter().map(|s| Value::from(*s)).collect()))
                .build(),
        );
    }
    let mut out = OutDir::create(&ctx.out)?;
    out.csv(&lambda_csv)?;
    out.csv(&dyadic_csv)?;
    let report = ctx
        .header("dyadic")
        .put("data", recipe.name())
        .put("depth", int(depth))
        .f("half_width", half)
        .f("p", p)
        .f("q", q)
        .f("a", a)
        .f("gamma", gamma)
        .put("levels", Value::Array(rows))
        .put("passed", failures.is_empty())
        .put("failures", Value::Array(failures.iter().map(|s| Value::from(s.as_str())).collect()));
    out.json("report.json", &report.build())?;
    out.finish()?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(failures.join("; ")))
    }
}

/// How the `A_p` constants of one exponent behave under refinement.
fn classify(a: &[f64]) -> &'static str {
    let k = a.len();
    if k < 3 {
        return "inconclusive";
    }
    let (x, y, z) = (a[k - 3], a[k - 2], a[k - 1]);
    if (z - y).abs() < 0.1 * y {
        "bounded"
    } else if y > x && z > y && z - y > 0.5 * (y - x) {
        "divergent"
    } else {
        "inconclusive"
    }
}

pub fn weights(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let levels = levels(ctx, "weights", &[1, 2, 3])?;
    let alphas = cfg.f64_list("weights", "alphas")?.unwrap_or_else(|| vec![-1.0, 0.4, 1.2]);
    let p = cfg.f64_or("weights", "p", 1.5)?;
    let center = cfg.point("weights", "center")?.unwrap_or([0.0, 0.0, 1.0]);
    let meshes: Vec<BoundaryMesh<f64>> = levels.iter().map(|&l| build_mesh(cfg, Some(l))).collect::<Result<_, _>>()?;
    cfg.check_unused()?;
    let n = meshes[0].dim() as f64;

    let mut csv = Csv::new("ap.csv");
    let mut per_alpha = Vec::new();
    let mut failures = Vec::new();
    let uniform: Vec<f64> = meshes
        .iter()
        .map(|m| ap_constant(m, &Weight::uniform(m.len()), p))
        .collect::<Result<_, _>>()?;
    if uniform.iter().any(|v| *v != 1.0) {
        failures.push(format!("A_p of the constant weight is {uniform:?}, not 1"));
    }
    for &alpha in &alphas {
        let mut consts = Vec::new();
        for (mesh, level) in meshes.iter().zip(&levels) {
            let w = power_weight(mesh, center, alpha)?;
            let a = ap_constant(mesh, &w, p)?;
            csv.row(vec![fmt9(alpha), level.to_string(), fmt9(mesh.h()), mesh.len().to_string(), fmt9(a)]);
            consts.push(a);
        }
        let member = -(n - 1.0) < alpha && alpha < (n - 1.0) * (p - 1.0);
        let observed = classify(&consts);
        let agrees = match observed {
            "bounded" => member,
            "divergent" => !member,
            _ => true,
        };
        if !agrees {
            failures.push(format!("alpha = {alpha}: expected {}, observed {observed}", if member { "A_p" } else { "not A_p" }));
        }
        per_alpha.push(
            Obj::new()
                .f("alpha", alpha)
                .put("constants", nums(&consts))
                .put("expected_member", member)
                .put("observed", observed)
                .put("agrees", agrees)
                .build(),
        );
    }
    let mut out = OutDir::create(&ctx.out)?;
    out.csv(&csv)?;
    let report = ctx
        .header("weights")
        .f("p", p)
        .put("center", nums(&center))
        .put("levels", Value::Array(levels.iter().map(|l| int(*l)).collect()))
        .put("uniform_constants", nums(&uniform))
        .put("membership_interval", Value::Array(vec![num(-(n - 1.0)), num((n - 1.0) * (p - 1.0))]))
        .put("alphas", Value::Array(per_alpha))
        .put("passed", failures.is_empty())
        .put("failures", Value::Array(failures.iter().map(|s| Value::from(s.as_str())).collect()));
    out.json("report.json", &report.build())?;
    out.finish()?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(failures.join("; ")))
    }
}
