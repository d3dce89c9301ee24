use layerpot::geometry::{circle_mesh, unit_sphere, BoundaryMesh, SphereBase};
use layerpot::kernels::{conormal_of_field, KernelSpec};
use layerpot::linalg::wdot;
use layerpot::potentials::*;
use layerpot::solver::*;
use layerpot::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sphere(level: usize) -> BoundaryMesh<f64> {
    unit_sphere(SphereBase::Icosahedron, level)
}

fn lap() -> KernelSpec<f64> {
    KernelSpec::laplace(3).unwrap()
}

fn y1(mesh: &BoundaryMesh<f64>) -> Vec<f64> {
    mesh.nodes().iter().map(|x| x[2]).collect()
}

fn rel_err(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    (wdot(&d, &d, w) / wdot(b, b, w)).sqrt()
}

#[test]
fn rigid_motion_counts() {
    assert_eq!(rigid_motion_basis(&sphere(1), 3).unwrap().len(), 6);
    let circle = circle_mesh::<f64>(40, [0.0, 0.0], 1.0).unwrap();
    assert_eq!(rigid_motion_basis(&circle, 2).unwrap().len(), 3);
    assert!(rigid_motion_basis(&sphere(1), 2).is_err());
}

#[test]
fn rigid_motions_carry_no_traction() {
    let spec = KernelSpec::lame(3, 1.3, 0.7).unwrap();
    let normal = [0.6, 0.0, 0.8];
    // gradients of x ↦ e_a (zero) and of the rotations −x_b e_a + x_a e_b
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let mut grad = vec![0.0; 9];
        grad[a * 3 + b] = -1.0;
        grad[b * 3 + a] = 1.0;
        let t = conormal_of_field(&spec, &grad, &normal);
        assert!(t.iter().all(|v| *v == 0.0), "{t:?}");
    }
}

#[test]
fn projection_examples() {
    let mesh = sphere(1);
    let ones = vec![1.0; mesh.len()];
    let p = compatibility_project(&ones, &SubspaceSpec::mean_zero(&mesh, 1)).unwrap();
    assert!(p.iter().all(|v| v.abs() < 1e-13));

    let psi = SubspaceSpec::psi_orthogonal(&mesh).unwrap();
    for r in rigid_motion_traces(&mesh, 3) {
        let p = compatibility_project(&r, &psi).unwrap();
        assert!(p.iter().all(|v| v.abs() < 1e-12));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f: Vec<f64> = (0..mesh.len() * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let once = compatibility_project(&f, &psi).unwrap();
    let twice = compatibility_project(&once, &psi).unwrap();
    let diff = once.iter().zip(&twice).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    assert!(diff <= 1e-12, "{diff}");
    assert!(psi.residuals(&once).iter().all(|r| r.abs() < 1e-12));
}

#[test]
fn kernel_dimensions() {
    for level in [1, 2] {
        let mesh = sphere(level);
        let k = assemble_k(&mesh, &lap(), &AssemblyOptions::default()).unwrap();
        let ns = nullspace_basis(&k.clone().with_kappa(0.5), 1e-8).unwrap();
        assert_eq!(ns.dim(), 1, "level {level}");
        let ones = vec![1.0; mesh.len()];
        let cos = wdot(&ns.basis[0], &ones, mesh.weights()).abs() / wdot(&ones, &ones, mesh.weights()).sqrt();
        assert!(cos >= 0.99, "{cos}");
        let ext = nullspace_basis(&k.with_kappa(-0.5), 1e-8).unwrap();
        assert_eq!(ext.dim(), 0);
        assert!(ext.smallest_singular_values[0] > 0.1 * ext.sigma_max);

        let lame = KernelSpec::lame(3, 1.0, 1.5).unwrap();
        let kl = assemble_k(&mesh, &lame, &AssemblyOptions::default()).unwrap();
        assert_eq!(nullspace_basis(&kl.with_kappa(0.5), 1e-8).unwrap().dim(), 6, "level {level}");
    }
}

#[test]
fn first_harmonic_densities() {
    let mesh = sphere(3);
    let f = y1(&mesh);
    let k = assemble_k(&mesh, &lap(), &AssemblyOptions::default()).unwrap().with_kappa(0.5);
    let rep = solve_second_kind(&k, &f, Some(&SubspaceSpec::mean_zero(&mesh, 1)), &SolveOptions::default()).unwrap();
    let want: Vec<f64> = f.iter().map(|v| 3.0 * v).collect();
    let e = rel_err(&rep.density, &want, mesh.weights());
    assert!(e < 0.02, "3Y1: {e}");
    assert_eq!(rep.null_dim, 1);

    let ks = assemble_kstar(&mesh, &lap(), &AssemblyOptions::default()).unwrap().with_kappa(-0.5);
    let rep = solve_second_kind(&ks, &f, None, &SolveOptions::default()).unwrap();
    let want: Vec<f64> = f.iter().map(|v| -1.5 * v).collect();
    let e = rel_err(&rep.density, &want, mesh.weights());
    assert!(e < 0.02, "-3/2 Y1: {e}");
    assert_eq!(rep.null_dim, 0);
}

#[test]
fn residual_contract_and_zero_rhs() {
    let mesh = sphere(2);
    let op = assemble_kstar(&mesh, &lap(), &AssemblyOptions::default()).unwrap().with_kappa(-0.5);
    let zero = vec![0.0; mesh.len()];
    let rep = solve_second_kind(&op, &zero, None, &SolveOptions::default()).unwrap();
    assert!(rep.density.iter().all(|v| *v == 0.0));

    let f = y1(&mesh);
    let rep = solve_second_kind(&op, &f, None, &SolveOptions::default()).unwrap();
    let res: f64 = op.apply(&rep.density).iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let fnorm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(res <= 1e-10 * fnorm);
    assert!((res - rep.residual).abs() <= 1e-12);
    assert!(rep.condition_estimate.is_finite() && rep.condition_estimate >= 1.0);
}

#[test]
fn incompatible_rhs_is_rejected() {
    let mesh = sphere(2);
    let op = assemble_k(&mesh, &lap(), &AssemblyOptions::default()).unwrap().with_kappa(0.5);
    let f: Vec<f64> = mesh.nodes().iter().map(|x| 1.0 + x[2]).collect();
    let err = solve_second_kind(&op, &f, Some(&SubspaceSpec::mean_zero(&mesh, 1)), &SolveOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Compatibility { .. }), "{err:?}");
    assert!(solve_second_kind(&op, &f[1..], None, &SolveOptions::default()).is_err());
}

#[test]
fn single_precision_solve() {
    let mesh: BoundaryMesh<f32> = unit_sphere(SphereBase::Icosahedron, 2);
    let spec = KernelSpec::<f32>::laplace(3).unwrap();
    let op = assemble_kstar(&mesh, &spec, &AssemblyOptions::default()).unwrap().with_kappa(-0.5);
    let f: Vec<f32> = mesh.nodes().iter().map(|x| x[2]).collect();
    let rep = solve_second_kind(&op, &f, None, &SolveOptions { kernel_tol: 1e-5, ..SolveOptions::default() }).unwrap();
    assert!(rep.relative_residual < 1e-4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn solve_is_linear(scale in -5.0f64..5.0, seed in 0u64..50) {
        let mesh = sphere(1);
        let op = assemble_kstar(&mesh, &lap(), &AssemblyOptions::default()).unwrap().with_kappa(-0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f64> = (0..mesh.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = solve_second_kind(&op, &f, None, &SolveOptions::default()).unwrap().density;
        let fs: Vec<f64> = f.iter().map(|v| v * scale).collect();
        let gs = solve_second_kind(&op, &fs, None, &SolveOptions::default()).unwrap().density;
        for (a, b) in g.iter().zip(&gs) {
            prop_assert!((a * scale - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn interior_operators_are_dual(seed in 0u64..50) {
        let mesh = sphere(1);
        let k = assemble_k(&mesh, &lap(), &AssemblyOptions::default()).unwrap().with_kappa(0.5);
        let ks = assemble_kstar(&mesh, &lap(), &AssemblyOptions::default()).unwrap().with_kappa(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f64> = (0..mesh.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..mesh.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = mesh.weights();
        let lhs = wdot(&k.apply(&f), &h, w);
        let rhs = wdot(&f, &ks.apply(&h), w);
        prop_assert!((lhs - rhs).abs() <= 1e-8, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn projection_is_idempotent(seed in 0u64..100) {
        let mesh = sphere(1);
        let s = SubspaceSpec::mean_zero(&mesh, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f64> = (0..mesh.len()).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let p1 = compatibility_project(&f, &s).unwrap();
        let p2 = compatibility_project(&p1, &s).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
