use layerpot::bvp::*;
use layerpot::diagnostics::{power_weight, rellich_equivalence_of, Weight};
use layerpot::geometry::{build_triangulated_boundary, unit_sphere, BoundaryMesh, SphereBase};
use layerpot::kernels::{conormal_of_field, fundamental_derivatives, KernelSpec};
use layerpot::potentials::*;
use layerpot::scalar::{dist, Vec3};
use layerpot::solver::{compatibility_project, SubspaceSpec};
use layerpot::Error;
use proptest::prelude::*;

fn sphere(level: usize) -> BoundaryMesh<f64> {
    unit_sphere(SphereBase::Icosahedron, level)
}

fn lap() -> KernelSpec<f64> {
    KernelSpec::laplace(3).unwrap()
}

fn scalar(mesh: &BoundaryMesh<f64>, f: impl Fn(Vec3<f64>) -> f64) -> BoundaryData<f64> {
    BoundaryData::Field(DensityField::from_fn(mesh, 1, |x, _| vec![f(x)]))
}

fn interior_points() -> Vec<Vec3<f64>> {
    vec![
        [0.0, 0.0, 0.5],
        [0.3, -0.2, 0.1],
        [-0.4, 0.1, -0.3],
        [0.1, 0.5, 0.2],
        [0.0, 0.0, 0.0],
        [0.2, 0.2, -0.5],
        [-0.1, -0.6, 0.0],
        [0.55, 0.0, 0.1],
        [-0.3, -0.3, 0.3],
        [0.0, 0.35, -0.45],
    ]
}

#[test]
fn laplace_neumann_first_harmonic() {
    let mesh = sphere(3);
    let spec = ProblemSpec::new(ProblemKind::LaplaceNeumann, &mesh, lap(), scalar(&mesh, |x| x[2])).unwrap();
    let sol = solve(&spec).unwrap();
    assert_eq!(sol.representation, Representation::SingleLayer);
    let pts = interior_points();
    let v = sol.eval(&pts, 0).unwrap();
    assert!((v[0].value[0] - 0.5).abs() <= 0.03 * 0.5, "{}", v[0].value[0]);
    for (p, x) in v.iter().zip(&pts) {
        assert!((p.value[0] - x[2]).abs() <= 0.03 * 0.5, "{x:?}: {}", p.value[0]);
    }
}

#[test]
fn laplace_dirichlet_examples() {
    let mesh = sphere(2);
    let pts = interior_points();
    let sol = solve(&ProblemSpec::new(ProblemKind::LaplaceDirichlet, &mesh, lap(), scalar(&mesh, |x| x[2])).unwrap()).unwrap();
    assert_eq!(sol.representation, Representation::DoubleLayer);
    let v = sol.eval(&pts, 0).unwrap();
    assert!((v[0].value[0] - 0.5).abs() <= 0.03 * 0.5);

    let ones = solve(&ProblemSpec::new(ProblemKind::LaplaceDirichlet, &mesh, lap(), scalar(&mesh, |_| 1.0)).unwrap()).unwrap();
    for p in ones.eval(&pts[1..4], 0).unwrap() {
        assert!((p.value[0] - 1.0).abs() <= 0.01);
    }

    let x0 = [0.0, 0.0, 3.0];
    let pole = solve(&ProblemSpec::new(ProblemKind::LaplaceDirichlet, &mesh, lap(), scalar(&mesh, |x| 1.0 / dist(x, x0))).unwrap()).unwrap();
    for (p, x) in pole.eval(&pts, 0).unwrap().iter().zip(&pts) {
        let want = 1.0 / dist(*x, x0);
        assert!((p.value[0] - want).abs() <= 0.03 * want);
    }
}

#[test]
fn zero_data_gives_trivial_solutions() {
    let mesh = sphere(1);
    let sol = solve(&ProblemSpec::new(ProblemKind::LaplaceNeumann, &mesh, lap(), scalar(&mesh, |_| 0.0)).unwrap()).unwrap();
    for p in sol.eval(&interior_points(), 1).unwrap() {
        assert!(p.gradient[0].iter().all(|g| g.abs() <= 1e-8));
    }
    let lame = KernelSpec::lame(3, 1.0, 1.0).unwrap();
    let data = BoundaryData::Field(DensityField::zeros(&mesh, 3));
    let sol = solve(&ProblemSpec::new(ProblemKind::Traction, &mesh, lame, data).unwrap()).unwrap();
    for p in sol.eval(&interior_points(), 1).unwrap() {
        assert!(p.gradient.iter().flatten().all(|g| g.abs() <= 1e-8));
    }
}

#[test]
fn incompatible_neumann_data() {
    let mesh = sphere(1);
    let spec = ProblemSpec::new(ProblemKind::LaplaceNeumann, &mesh, lap(), scalar(&mesh, |x| 1.0 + x[0])).unwrap();
    match solve(&spec) {
        Err(Error::Compatibility { value, .. }) => assert!(value.abs() > 1.0),
        other => panic!("{other:?}"),
    }
    let sol = solve(&spec.clone().auto_project(true)).unwrap();
    let delta = sol.projection.expect("projection recorded");
    assert!(delta.iter().all(|d| (d - 1.0).abs() < 1e-10));
}

#[test]
fn spec_validation() {
    let mesh = sphere(1);
    assert!(ProblemSpec::new(ProblemKind::Traction, &mesh, lap(), scalar(&mesh, |_| 0.0)).is_err());
    let bad = BoundaryData::Field(DensityField::zeros(&mesh, 3));
    assert!(ProblemSpec::new(ProblemKind::LaplaceNeumann, &mesh, lap(), bad).is_err());
    let nan = scalar(&mesh, |_| f64::NAN);
    assert!(ProblemSpec::new(ProblemKind::LaplaceDirichlet, &mesh, lap(), nan).is_err());
    let spec = ProblemSpec::new(ProblemKind::LaplaceDirichlet, &mesh, lap(), scalar(&mesh, |_| 1.0)).unwrap();
    assert!(solve(&spec.exterior(true)).is_err());
}

/// Kelvin field `Γ(x − x0)a` with its gradient `grad[k*3 + j]`.
fn kelvin(spec: &KernelSpec<f64>, x: Vec3<f64>, x0: Vec3<f64>, a: [f64; 3]) -> ([f64; 3], Vec<f64>) {
    let z = [x[0] - x0[0], x[1] - x0[1], x[2] - x0[2]];
    let kv = fundamental_derivatives(spec, &z, 1).unwrap();
    let mut u = [0.0; 3];
    let mut g = vec![0.0; 9];
    for k in 0..3 {
        for l in 0..3 {
            u[k] += kv.get(k, l) * a[l];
            for j in 0..3 {
                g[k * 3 + j] += kv.derivative(k, l, &[j]).unwrap() * a[l];
            }
        }
    }
    (u, g)
}

/// Removes the least-squares rigid motion from samples of a field.
fn remove_rigid(pts: &[Vec3<f64>], vals: &mut [[f64; 3]]) {
    let basis = |x: Vec3<f64>| -> Vec<[f64; 3]> {
        vec![
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [-x[1], x[0], 0.0],
            [-x[2], 0.0, x[0]],
            [0.0, -x[2], x[1]],
        ]
    };
    let mut g = [[0.0; 6]; 6];
    let mut r = [0.0; 6];
    for (x, v) in pts.iter().zip(vals.iter()) {
        let b = basis(*x);
        for i in 0..6 {
            r[i] += (0..3).map(|k| b[i][k] * v[k]).sum::<f64>();
            for j in 0..6 {
                g[i][j] += (0..3).map(|k| b[i][k] * b[j][k]).sum::<f64>();
            }
        }
    }
    let m = layerpot::linalg::Matrix::from_fn(6, 6, |i, j| g[i][j]);
    let coef = layerpot::linalg::Lu::factor(m).unwrap().solve(&r);
    for (x, v) in pts.iter().zip(vals.iter_mut()) {
        let b = basis(*x);
        for i in 0..6 {
            for k in 0..3 {
                v[k] -= coef[i] * b[i][k];
            }
        }
    }
}

fn grid_points(step: f64, radius: f64) -> Vec<Vec3<f64>> {
    let mut out = Vec::new();
    let k = (radius / step).floor() as i32;
    for i in -k..=k {
        for j in -k..=k {
            for l in -k..=k {
                let x = [i as f64 * step, j as f64 * step, l as f64 * step];
                if dist(x, [0.0; 3]) <= radius {
                    out.push(x);
                }
            }
        }
    }
    out
}

#[test]
fn traction_recovers_kelvin_field() {
    let mesh = sphere(2);
    let lame = KernelSpec::lame(3, 1.0, 1.5).unwrap();
    let (x0, a) = ([0.0, 0.0, 3.0], [1.0, 0.5, -0.3]);
    let data = DensityField::from_fn(&mesh, 3, |x, n| {
        let (_, g) = kelvin(&lame, x, x0, a);
        conormal_of_field(&lame, &g, &n)
    });
    // the quadrature leaves a tiny rigid-motion component in the traction
    let spec = ProblemSpec::new(ProblemKind::Traction, &mesh, lame.clone(), BoundaryData::Field(data)).unwrap();
    let sol = solve(&spec.auto_project(true)).unwrap();
    assert!(sol.projection.as_ref().unwrap().iter().all(|d| d.abs() < 1e-6));
    let pts = grid_points(0.2, 0.7);
    let mut got: Vec<[f64; 3]> = sol.eval(&pts, 0).unwrap().iter().map(|p| p.value).collect();
    let mut want: Vec<[f64; 3]> = pts.iter().map(|x| kelvin(&lame, *x, x0, a).0).collect();
    remove_rigid(&pts, &mut got);
    remove_rigid(&pts, &mut want);
    let num: f64 = got.iter().zip(&want).map(|(g, w)| (0..3).map(|k| (g[k] - w[k]).powi(2)).sum::<f64>()).sum();
    let den: f64 = want.iter().map(|w| w.iter().map(|v| v * v).sum::<f64>()).sum();
    let rel = (num / den).sqrt();
    assert!(rel <= 0.05, "relative error {rel}");
}

#[test]
fn eval_gradient_matches_finite_differences() {
    let mesh = sphere(2);
    let x0 = [0.0, 0.0, 3.0];
    let sol = solve(&ProblemSpec::new(ProblemKind::LaplaceDirichlet, &mesh, lap(), scalar(&mesh, |x| 1.0 / dist(x, x0))).unwrap()).unwrap();
    let h = 1e-4;
    for x in [[0.1, 0.2, 0.3], [-0.4, 0.0, 0.2]] {
        let p = sol.eval(&[x], 2).unwrap()[0];
        let mut lap_fd = 0.0;
        for a in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[a] += h;
            xm[a] -= h;
            let v = sol.eval(&[xp, xm], 0).unwrap();
            let fd = (v[0].value[0] - v[1].value[0]) / (2.0 * h);
            assert!((fd - p.gradient[0][a]).abs() <= 1e-5 * p.gradient[0].iter().map(|g| g.abs()).fold(0.0, f64::max));
            lap_fd += (v[0].value[0] + v[1].value[0] - 2.0 * p.value[0]) / (h * h);
        }
        let lap_h = p.hessian[0][0][0] + p.hessian[0][1][1] + p.hessian[0][2][2];
        assert!(lap_h.abs() < 1e-8, "{lap_h}");
        assert!(lap_fd.abs() < 1e-3, "{lap_fd}");
    }
}

#[test]
fn near_boundary_points_are_flagged() {
    let mesh = sphere(2);
    let sol = solve(&ProblemSpec::new(ProblemKind::LaplaceDirichlet, &mesh, lap(), scalar(&mesh, |x| x[2])).unwrap()).unwrap();
    let v = sol.eval(&[[0.0, 0.0, 0.99], [0.0, 0.0, 0.5]], 0).unwrap();
    assert!(v[0].near_boundary && !v[1].near_boundary);
    assert!((v[0].value[0] - 0.99).abs() < 0.05, "{}", v[0].value[0]);
}

#[test]
fn trace_reproduces_data_under_refinement() {
    let mut errs = Vec::new();
    for level in [1, 2] {
        let mesh = sphere(level);
        let f = |x: Vec3<f64>| x[0] * x[1] + 0.5 * x[2];
        let sol = solve(&ProblemSpec::new(ProblemKind::LaplaceDirichlet, &mesh, lap(), scalar(&mesh, f)).unwrap()).unwrap();
        let nodes: Vec<usize> = (0..mesh.len()).collect();
        let tr = sol.trace(&nodes, 0).unwrap();
        let e = tr
            .iter()
            .zip(mesh.nodes())
            .map(|(p, x)| (p.value[0] - f(*x)).abs())
            .fold(0.0, f64::max);
        errs.push(e);
    }
    assert!(errs[1] < errs[0], "{errs:?}");
}

fn permuted_octahedron(level: usize, reverse: bool) -> BoundaryMesh<f64> {
    let v = vec![
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ];
    let mut f = vec![[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4], [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]];
    if reverse {
        f.reverse();
    }
    build_triangulated_boundary(&v, &f, level).unwrap()
}

#[test]
fn normalization_ignores_node_ordering() {
    let a = permuted_octahedron(2, false);
    let b = permuted_octahedron(2, true);
    let pts = interior_points();
    let f = |x: Vec3<f64>| x[2] + 0.3 * x[0];
    let vals: Vec<Vec<f64>> = [&a, &b]
        .iter()
        .map(|m| {
            let data = DensityField::from_fn(m, 1, |x, _| vec![f(x)]);
            let mut data = data;
            let w = m.weights();
            let mean: f64 = data.values.iter().zip(w).map(|(v, w)| v * w).sum::<f64>() / m.total_measure();
            data.values.iter_mut().for_each(|v| *v -= mean);
            let sol = solve(&ProblemSpec::new(ProblemKind::LaplaceNeumann, m, lap(), BoundaryData::Field(data)).unwrap()).unwrap();
            sol.eval(&pts, 0).unwrap().iter().map(|p| p.value[0]).collect()
        })
        .collect();
    for (x, y) in vals[0].iter().zip(&vals[1]) {
        assert!((x - y).abs() <= 1e-10, "{x} vs {y}");
    }
}

#[test]
fn biharmonic_dirichlet_manufactured() {
    let mesh = sphere(2);
    let rho = 0.25;
    let opts = BiharmonicOptions {
        consistency_stride: 16,
        ..BiharmonicOptions::default()
    };
    let pair = |u: &dyn Fn(Vec3<f64>) -> (f64, Vec3<f64>)| {
        let mut p = DirichletPair::zeros(mesh.len());
        for (i, (x, n)) in mesh.nodes().iter().zip(mesh.normals()).enumerate() {
            let (v, g) = u(*x);
            p.f[i] = v;
            p.g[i] = g[0] * n[0] + g[1] * n[1] + g[2] * n[2];
        }
        p
    };
    let quad = pair(&|x| (x[2] * x[2], [0.0, 0.0, 2.0 * x[2]]));
    let sol = solve_biharmonic_dirichlet(&mesh, rho, &quad, &opts).unwrap();
    let v = sol.eval(&[[0.0; 3], [0.0, 0.0, 0.5]], 0).unwrap();
    // ‖u₀‖ = sup over the ball = 1
    assert!(v[0].value[0].abs() <= 5e-2, "{}", v[0].value[0]);
    assert!((v[1].value[0] - 0.25).abs() <= 5e-2, "{}", v[1].value[0]);
    assert!(sol.consistency.unwrap() < 0.1, "{:?}", sol.consistency);

    let lin = pair(&|x| (x[0], [1.0, 0.0, 0.0]));
    let sol = solve_biharmonic_dirichlet(&mesh, rho, &lin, &BiharmonicOptions::default()).unwrap();
    let g = sol.eval(&[[0.1, -0.2, 0.2]], 1).unwrap()[0].gradient[0];
    assert!((g[0] - 1.0).abs() <= 0.02 && g[1].abs() <= 0.02 && g[2].abs() <= 0.02, "{g:?}");

    let zero = solve_biharmonic_dirichlet(&mesh, rho, &DirichletPair::zeros(mesh.len()), &BiharmonicOptions::default()).unwrap();
    assert!(zero.density.iter().all(|v| *v == 0.0));
}

#[test]
fn biharmonic_neumann_manufactured() {
    let mesh = sphere(2);
    let rho = 0.25;
    let hess: Vec<Vec<f64>> = (0..mesh.len()).map(|_| vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]).collect();
    let gl = vec![[0.0; 3]; mesh.len()];
    let pair = NeumannPair::from_jets(&mesh, rho, &hess, &gl).unwrap();
    let stencil = TangentialStencil::new(&mesh).unwrap();
    let data = pair.stacked(&mesh, &stencil);
    let opts = BiharmonicOptions {
        auto_project: true,
        ..BiharmonicOptions::default()
    };
    let sol = solve_biharmonic_neumann(&mesh, rho, &data, &opts).unwrap();
    let data = compatibility_project(&data, &SubspaceSpec::biharmonic_x(&mesh)).unwrap();
    assert_eq!(sol.representation, Representation::SRho);
    let h = sol.eval(&[[0.0; 3]], 2).unwrap()[0].hessian[0];
    let mut err = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let want = if i == 2 && j == 2 { 2.0 } else { 0.0 };
            err = err.max((h[i][j] - want).abs());
        }
    }
    assert!(err <= 0.2, "{h:?}");

    let (k, _) = assemble_biharmonic_traces(&mesh, rho, &AssemblyOptions::default()).unwrap();
    let back = k.with_kappa(-0.5).apply(&sol.density);
    let res = back.iter().zip(&data).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = data.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(res <= 1e-8 * scale.max(1.0), "{res}");

    let zero = solve_biharmonic_neumann(&mesh, rho, &vec![0.0; 2 * mesh.len()], &BiharmonicOptions::default()).unwrap();
    for p in zero.eval(&interior_points()[..3], 1).unwrap() {
        assert!(p.value[0].abs() < 1e-12 && p.gradient[0].iter().all(|g| g.abs() < 1e-12));
    }
}

#[test]
fn weighted_neumann_reports_norms() {
    let mesh = sphere(2);
    let w = power_weight(&mesh, [0.0, 0.0, 1.0], 0.4).unwrap();
    let spec = ProblemSpec::new(ProblemKind::WeightedLaplaceNeumann, &mesh, lap(), scalar(&mesh, |x| x[2]))
        .unwrap()
        .with_weight(w.clone());
    let sol = solve(&spec).unwrap();
    let rep = sol.weighted.unwrap();
    assert!(rep.a2_constant >= 1.0 && rep.a2_constant.is_finite());
    assert!(rep.residual_norm <= 1e-10 * rep.data_norm);
    let r = rellich_equivalence_of(&sol, Some(&w)).unwrap();
    let ratio = r.ratio.unwrap();
    assert!((0.2..=5.0).contains(&ratio), "{ratio}");

    let missing = ProblemSpec::new(ProblemKind::WeightedLaplaceNeumann, &mesh, lap(), scalar(&mesh, |x| x[2])).unwrap();
    assert!(solve(&missing).is_err());
    assert!(Weight::new(vec![1.0, 0.0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn pipeline_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mesh = sphere(1);
        let f = |x: Vec3<f64>| a * x[2] + b * x[0] * x[1];
        let g = |x: Vec3<f64>| x[2];
        let run = |h: &dyn Fn(Vec3<f64>) -> f64| -> Vec<f64> {
            let sol = solve(&ProblemSpec::new(ProblemKind::LaplaceDirichlet, &mesh, lap(), scalar(&mesh, h)).unwrap()).unwrap();
            sol.eval(&interior_points(), 0).unwrap().iter().map(|p| p.value[0]).collect()
        };
        let uf = run(&f);
        let ug = run(&g);
        let sum = run(&|x| f(x) + 2.0 * g(x));
        for i in 0..uf.len() {
            prop_assert!((uf[i] + 2.0 * ug[i] - sum[i]).abs() <= 1e-10);
        }
    }
}
