use std::f64::consts::PI;

use layerpot::geometry::{unit_sphere, SphereBase};
use layerpot::kernels::*;
use layerpot::scalar::*;
use proptest::prelude::*;

fn lap3() -> KernelSpec<f64> {
    KernelSpec::laplace(3).unwrap()
}

fn lame3() -> KernelSpec<f64> {
    KernelSpec::lame(3, 1.3, 0.7).unwrap()
}

fn specs() -> Vec<KernelSpec<f64>> {
    vec![
        KernelSpec::laplace(2).unwrap(),
        lap3(),
        KernelSpec::lame(2, 0.8, 1.9).unwrap(),
        lame3(),
        KernelSpec::biharmonic(2, 0.3).unwrap(),
        KernelSpec::biharmonic(3, -0.2).unwrap(),
    ]
}

#[test]
fn sphere_areas() {
    assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-15);
    assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-14);
    assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-14);
    assert!((sphere_area(5) - 8.0 * PI * PI / 3.0).abs() < 1e-13);
}

#[test]
fn laplace_value_and_flux() {
    let v = fundamental_solution(&lap3(), &[1.0, 0.0, 0.0]).unwrap();
    assert!((v.get(0, 0) - 1.0 / (4.0 * PI)).abs() < 1e-16);
    // ∮ ∂Γ/∂r over the unit sphere must be −1
    let mesh = unit_sphere::<f64>(SphereBase::Icosahedron, 3);
    let mut flux = 0.0;
    for (x, w) in mesh.nodes().iter().zip(mesh.weights()) {
        let d = fundamental_derivatives(&lap3(), x, 1).unwrap();
        let g = d.gradient.unwrap();
        flux += w * (g[0] * x[0] + g[1] * x[1] + g[2] * x[2]);
    }
    assert!((flux + 1.0).abs() < 1e-12);
    let v2 = fundamental_solution(&KernelSpec::<f64>::laplace(2).unwrap(), &[0.0, 2.0]).unwrap();
    assert!((v2.get(0, 0) + 2f64.ln() / (2.0 * PI)).abs() < 1e-16);
}

#[test]
fn biharmonic_values_and_flux() {
    let b3 = KernelSpec::biharmonic(3, 0.5).unwrap();
    let v = fundamental_solution(&b3, &[0.0, 1.0, 0.0]).unwrap();
    assert!((v.get(0, 0) + 1.0 / (8.0 * PI)).abs() < 1e-16);
    let b2 = KernelSpec::biharmonic(2, 0.5).unwrap();
    let v = fundamental_solution(&b2, &[0.6, 0.8]).unwrap();
    assert!((v.get(0, 0) + 1.0 / (8.0 * PI)).abs() < 1e-16);
    // Δ²B = δ: the flux of ∇ΔB through the unit sphere is +1.
    let mesh = unit_sphere::<f64>(SphereBase::Icosahedron, 3);
    let mut flux = 0.0;
    for (x, w) in mesh.nodes().iter().zip(mesh.weights()) {
        let d = fundamental_derivatives(&b3, x, 3).unwrap();
        let mut gl = [0.0; 3];
        for p in 0..3 {
            for i in 0..3 {
                gl[p] += d.derivative(0, 0, &[i, i, p]).unwrap();
            }
        }
        flux += w * dot(gl, *x);
    }
    assert!((flux - 1.0).abs() < 1e-12, "{flux}");
    // the circle version
    let mut flux2 = 0.0;
    let k = 400;
    for j in 0..k {
        let t = 2.0 * PI * (j as f64 + 0.5) / k as f64;
        let x = [t.cos(), t.sin()];
        let d = fundamental_derivatives(&b2, &x, 3).unwrap();
        let mut gl = [0.0; 2];
        for p in 0..2 {
            for i in 0..2 {
                gl[p] += d.derivative(0, 0, &[i, i, p]).unwrap();
            }
        }
        flux2 += 2.0 * PI / k as f64 * (gl[0] * x[0] + gl[1] * x[1]);
    }
    assert!((flux2 - 1.0).abs() < 1e-12, "{flux2}");
}

#[test]
fn kelvin_matches_kupradze_form() {
    let (mu, lambda) = (1.3, 0.7);
    let x = [0.3, -0.4, 1.1];
    let r = norm(x);
    let v = fundamental_solution(&lame3(), &x).unwrap();
    for k in 0..3 {
        for l in 0..3 {
            let d = if k == l { 1.0 } else { 0.0 };
            let kup = ((lambda + 3.0 * mu) * d / r + (lambda + mu) * x[k] * x[l] / r.powi(3))
                / (8.0 * PI * mu * (lambda + 2.0 * mu));
            assert!((v.get(k, l) - kup).abs() < 1e-15);
            assert_eq!(v.get(k, l), v.get(l, k));
        }
    }
}

fn value_fn(spec: &KernelSpec<f64>, x: &[f64], k: usize, l: usize) -> f64 {
    fundamental_solution(spec, x).unwrap().get(k, l)
}

#[test]
fn derivatives_match_finite_differences() {
    let h = 1e-5;
    for spec in specs() {
        let n = spec.dim;
        let m = spec.m();
        let x: Vec<f64> = [0.6, -0.48, 0.64][..n].to_vec();
        let x = {
            let r = norm_slice(&x);
            x.iter().map(|a| a / r).collect::<Vec<_>>()
        };
        let d = fundamental_derivatives(&spec, &x, 3).unwrap();
        // each order against central differences of the order below
        for order in 1..=3 {
            let idx_count = n.pow(order as u32 - 1);
            for k in 0..m {
                for l in 0..m {
                    for flat in 0..idx_count {
                        let mut alpha = Vec::new();
                        let mut f = flat;
                        for _ in 0..order - 1 {
                            alpha.push(f % n);
                            f /= n;
                        }
                        for p in 0..n {
                            let mut xp = x.clone();
                            let mut xm = x.clone();
                            xp[p] += h;
                            xm[p] -= h;
                            let lower = |y: &[f64]| {
                                let dd = fundamental_derivatives(&spec, y, 3).unwrap();
                                dd.derivative(k, l, &alpha).unwrap()
                            };
                            let fd = (lower(&xp) - lower(&xm)) / (2.0 * h);
                            let mut full = alpha.clone();
                            full.push(p);
                            let an = d.derivative(k, l, &full).unwrap();
                            let scale = an.abs().max(1e-2);
                            assert!((fd - an).abs() / scale < 1e-6, "{:?} order {order} {k}{l} {:?}: {fd} vs {an}", spec.family, full);
                        }
                    }
                }
            }
        }
        let _ = value_fn;
    }
}

#[test]
fn derivative_tensors_symmetric() {
    for spec in specs() {
        let n = spec.dim;
        let x: Vec<f64> = [0.3, 0.9, -0.2][..n].to_vec();
        let d = fundamental_derivatives(&spec, &x, 3).unwrap();
        for k in 0..spec.m() {
            for l in 0..spec.m() {
                for i in 0..n {
                    for j in 0..n {
                        assert_eq!(d.derivative(k, l, &[i, j]), d.derivative(k, l, &[j, i]));
                        for p in 0..n {
                            let a = d.derivative(k, l, &[i, j, p]).unwrap();
                            assert_eq!(a, d.derivative(k, l, &[p, i, j]).unwrap());
                            assert_eq!(a, d.derivative(k, l, &[j, p, i]).unwrap());
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn kernels_even() {
    for spec in specs() {
        let n = spec.dim;
        let x: Vec<f64> = [0.3, 0.9, -0.2][..n].to_vec();
        let mx: Vec<f64> = x.iter().map(|a| -a).collect();
        let a = fundamental_solution(&spec, &x).unwrap();
        let b = fundamental_solution(&spec, &mx).unwrap();
        assert_eq!(a.value, b.value);
    }
}

#[test]
fn pole_and_spec_errors() {
    assert_eq!(fundamental_solution(&lap3(), &[0.0, 0.0, 0.0]).unwrap_err(), layerpot::Error::Pole);
    assert!(KernelSpec::<f64>::lame(3, 0.0, 1.0).is_err());
    assert!(KernelSpec::<f64>::lame(3, 1.0, -0.7).is_err());
    assert!(KernelSpec::<f64>::lame(3, 1.0, -0.6).is_ok());
    assert!(KernelSpec::<f64>::biharmonic(3, -0.5).is_err());
    assert!(KernelSpec::<f64>::biharmonic(3, 1.0).is_err());
    assert!(KernelSpec::<f64>::biharmonic(3, -0.49).is_ok());
    assert!(fundamental_derivatives(&lap3(), &[1.0, 0.0, 0.0], 4).is_err());
}

#[test]
fn laplace_conormal_example() {
    let k = conormal_kernel(&lap3(), &[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
    assert!((k[0] + 1.0 / (4.0 * PI)).abs() < 1e-16);
    assert_eq!(
        conormal_kernel(&lap3(), &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap_err(),
        layerpot::Error::Pole
    );
}

#[test]
fn gauss_identity_over_sphere() {
    let mesh = unit_sphere::<f64>(SphereBase::Icosahedron, 3);
    for spec in [lap3(), lame3(), KernelSpec::lame(3, 1.0, 20.0).unwrap()] {
        let m = spec.m();
        let mut s = vec![0.0; m * m];
        for ((y, nrm), w) in mesh.nodes().iter().zip(mesh.normals()).zip(mesh.weights()) {
            let k = conormal_kernel(&spec, &[0.0, 0.0, 0.0], y, nrm).unwrap();
            for a in 0..m * m {
                s[a] += w * k[a];
            }
        }
        for k in 0..m {
            for l in 0..m {
                let target = if k == l { -1.0 } else { 0.0 };
                assert!((s[k * m + l] - target).abs() < 0.02, "{:?}", s);
            }
        }
    }
}

/// Traction of the Kelvin column `k` computed from the analytic gradient.
#[test]
fn lame_conormal_is_traction_of_kelvin_columns() {
    let spec = lame3();
    let x = [0.1, 0.2, -0.3];
    let y = [0.9, -0.4, 0.5];
    let nrm = normalize([0.2, 0.7, -0.3]);
    let z = sub(y, x);
    let d = fundamental_derivatives(&spec, &z, 1).unwrap();
    let k = conormal_kernel(&spec, &x, &y, &nrm).unwrap();
    for col in 0..3 {
        let mut grad = [0.0; 9];
        for comp in 0..3 {
            for j in 0..3 {
                grad[comp * 3 + j] = d.derivative(comp, col, &[j]).unwrap();
            }
        }
        let t = conormal_of_field(&spec, &grad, &nrm);
        for l in 0..3 {
            assert!((k[col * 3 + l] - t[l]).abs() < 1e-15, "{col} {l}");
        }
    }
}

#[test]
fn conormal_of_rigid_and_identity_fields() {
    let spec = lame3();
    let (mu, lambda) = (1.3, 0.7);
    let skew = [0.0, 0.4, -1.2, -0.4, 0.0, 0.3, 1.2, -0.3, 0.0];
    let nrm = normalize([0.3, -0.2, 0.9]);
    assert_eq!(conormal_of_field(&spec, &skew, &nrm), vec![0.0, 0.0, 0.0]);
    let id = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let t = conormal_of_field(&spec, &id, &nrm);
    for k in 0..3 {
        assert!((t[k] - (3.0 * lambda + 2.0 * mu) * nrm[k]).abs() < 1e-15);
    }
}

#[test]
fn coefficient_symmetry_and_legendre_hadamard() {
    for spec in specs() {
        assert!(spec.coefficients_symmetric());
    }
    let spec = KernelSpec::lame(3, 1.3, -0.8).unwrap();
    let lh = spec.legendre_hadamard_constant(2000, 7);
    assert!(lh >= 1.3 - 1e-12);
    assert!(lh < 1.3 + 0.05);
}

#[test]
fn pde_residuals_decay() {
    // finite-difference operators applied to the fundamental solutions away
    // from the pole
    let x0 = [0.7, -0.5, 0.9];
    let lap = |f: &dyn Fn(&[f64; 3]) -> f64, x: &[f64; 3], h: f64| {
        let mut s = -6.0 * f(x);
        for p in 0..3 {
            let mut a = *x;
            let mut b = *x;
            a[p] += h;
            b[p] -= h;
            s += f(&a) + f(&b);
        }
        s / (h * h)
    };
    let mut prev = [f64::INFINITY; 3];
    for h in [4e-2, 2e-2, 1e-2] {
        let g = |x: &[f64; 3]| value_fn(&lap3(), x, 0, 0);
        let r_lap = lap(&g, &x0, h).abs();
        let b3 = KernelSpec::biharmonic(3, 0.1).unwrap();
        let b = |x: &[f64; 3]| value_fn(&b3, x, 0, 0);
        let lb = |x: &[f64; 3]| lap(&b, x, h);
        let r_bih = lap(&lb, &x0, h).abs();
        // Lamé: −μΔu − (λ+μ)∇div u on each Kelvin column
        let spec = lame3();
        let (mu, lambda) = (1.3, 0.7);
        let mut r_lame: f64 = 0.0;
        for col in 0..3 {
            for k in 0..3 {
                let uk = |x: &[f64; 3]| value_fn(&spec, x, k, col);
                let mut gd = 0.0;
                for i in 0..3 {
                    let ui = |x: &[f64; 3]| value_fn(&spec, x, i, col);
                    let mut pp = x0;
                    let mut pm = x0;
                    let mut mp = x0;
                    let mut mm = x0;
                    pp[k] += h;
                    pp[i] += h;
                    pm[k] += h;
                    pm[i] -= h;
                    mp[k] -= h;
                    mp[i] += h;
                    mm[k] -= h;
                    mm[i] -= h;
                    gd += (ui(&pp) - ui(&pm) - ui(&mp) + ui(&mm)) / (4.0 * h * h);
                }
                let res = -mu * lap(&uk, &x0, h) - (lambda + mu) * gd;
                r_lame = r_lame.max(res.abs());
            }
        }
        let cur = [r_lap, r_bih, r_lame];
        for a in 0..3 {
            assert!(cur[a] < prev[a], "{a}: {cur:?} vs {prev:?}");
            assert!(cur[a] < 5e-2);
        }
        prev = cur;
    }
}

#[test]
fn mrho_and_krho_examples() {
    // u = x₁², N = e₃
    let h = [2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let m: f64 = mrho_pointwise(0.3, &h, &[0.0, 0.0, 1.0]).unwrap();
    assert!((m - 0.6).abs() < 1e-15);
    // u = x₃³ on {x₃ = 0}: Hessian 0, ∇Δu = (0,0,6)
    let k = krho_tangential_coords(0.3, &[0.0, 0.0, 6.0], &[0.0; 9], &[0.0, 0.0, 1.0]).unwrap();
    assert_eq!(k.normal_part, 6.0);
    assert!(k.n_ij.iter().all(|&v| v == 0.0));
    let bad = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    assert!(matches!(mrho_pointwise(0.3, &bad, &[0.0, 0.0, 1.0]), Err(layerpot::Error::Validation(_))));
    // u = x₁x₃ with N = e₃: ∂²u/∂N∂T_13 = N_1(HN)_3 − N_3(HN)_1 = −1
    let h2 = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    let k2 = krho_tangential_coords(0.3f64, &[0.0; 3], &h2, &[0.0, 0.0, 1.0]).unwrap();
    assert_eq!(k2.n_ij[2], -1.0);
    assert_eq!(k2.n_ij[6], 1.0);
    assert!((k2.factor - 0.35).abs() < 1e-15);
}

#[test]
fn theta_rho_relation() {
    assert_eq!(rho_from_theta(3, 0.0), 0.0);
    assert_eq!(theta_from_rho(3, 0.0).unwrap(), 0.0);
    assert!((rho_from_theta(3, 1.0f64) - 5.0 / 6.0).abs() < 1e-15);
    assert!((theta_from_rho(3, 5.0f64 / 6.0).unwrap() - 1.0).abs() < 1e-14);
    assert!(theta_from_rho(3, 1.0).is_err());
}

#[test]
fn rellich_tensor_examples() {
    let n = 3;
    let u_grad = [0.3, -1.0, 2.0];
    let u_hess: [f64; 9] = [1.0, 0.5, -0.2, 0.5, 2.0, 0.1, -0.2, 0.1, -0.7];
    let zero_jac = [0.0; 9];
    let zero_hess = [0.0; 27];
    let (e, _) = rellich_tensors(0.4, VectorJet { jac: &zero_jac, hess: &zero_hess }, &u_grad, &u_hess);
    assert!(e.iter().all(|&v| v == 0.0));
    let (_, l) = rellich_tensors(0.4, VectorJet { jac: &zero_jac, hess: &zero_hess }, &u_grad, &[0.0; 9]);
    assert!(l.iter().all(|&v| v == 0.0));
    let id = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let (e, _) = rellich_tensors(0.0, VectorJet { jac: &id, hess: &zero_hess }, &u_grad, &u_hess);
    for a in 0..n * n {
        assert!((e[a] - (1.5 - 2.0) * u_hess[a]).abs() < 1e-15);
    }
}

#[test]
fn single_precision_kernels() {
    let spec = KernelSpec::<f32>::laplace(3).unwrap();
    let v = fundamental_solution(&spec, &[1.0f32, 0.0, 0.0]).unwrap();
    assert!((v.get(0, 0) - 1.0 / (4.0 * std::f32::consts::PI)).abs() < 1e-7);
}

proptest! {
    #[test]
    fn theta_rho_roundtrip(n in 2usize..6, t in 0.0f64..1.0) {
        let lo = 1.0 / (1.0 - n as f64);
        let rho = lo + (1.0 - lo) * (0.001 + 0.998 * t);
        let theta = theta_from_rho(n, rho).unwrap();
        prop_assert!((rho_from_theta(n, theta) - rho).abs() < 1e-12);
    }

    #[test]
    fn conormal_forms_agree(g in proptest::collection::vec(-2.0f64..2.0, 9), nv in proptest::collection::vec(-1.0f64..1.0, 3), mu in 0.1f64..5.0, lr in 0.0f64..1.0) {
        let lambda = -2.0 * mu / 3.0 + 1e-3 + lr * 5.0;
        let spec = KernelSpec::lame(3, mu, lambda).unwrap();
        let nn = norm_slice(&nv).max(1e-3);
        let nrm: Vec<f64> = nv.iter().map(|a| a / nn).collect();
        let a = conormal_of_field(&spec, &g, &nrm);
        let b = conormal_by_coefficients(&spec, &g, &nrm);
        for k in 0..3 {
            prop_assert!((a[k] - b[k]).abs() <= 1e-14 * (1.0 + a[k].abs()) * 10.0);
        }
    }

    #[test]
    fn kelvin_symmetric(x in proptest::collection::vec(-2.0f64..2.0, 3)) {
        prop_assume!(norm_slice(&x) > 1e-3);
        let v = fundamental_solution(&lame3(), &x).unwrap();
        for k in 0..3 { for l in 0..3 { prop_assert_eq!(v.get(k, l), v.get(l, k)); } }
    }
}
