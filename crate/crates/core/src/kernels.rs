//! Fundamental solutions, conormal kernels, the biharmonic boundary
//! operators `M_ρ`, `K_ρ`, and the tensors of the Rellich identity.
//!
//! Conventions: `L = −Δ` for Laplace (so `Γ(x) = 1/(4π|x|)` in 3D),
//! `L = −μΔ − (λ+μ)∇div` for Lamé, and `Δ²` for the biharmonic family, whose
//! fundamental solution `B` satisfies `Δ²B = δ` and whose Laplacian
//! `Γ_B = ΔB` is the fundamental solution of `Δ` (not `−Δ`).
//!
//! Derivatives of radial functions `φ(|x|)` use `T = r⁻¹ d/dr`:
//! `D^k φ = Σ_m T^{k−m}φ · {δ^m x^{k−2m}}`, summed over the ways of pairing
//! `m` index pairs into Kronecker deltas.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::*;

/// Area of the unit sphere in `ℝⁿ`.
pub fn sphere_area(n: usize) -> f64 {
    let pi = std::f64::consts::PI;
    let (mut w, mut k) = if n % 2 == 0 { (2.0 * pi, 2) } else { (2.0, 1) };
    while k < n {
        w *= 2.0 * pi / k as f64;
        k += 2;
    }
    w
}

/// Finite sum of terms `c · r^p · (log r)^e`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialFunction {
    pub terms: Vec<(f64, i32, u32)>,
}

impl RadialFunction {
    pub fn new(terms: Vec<(f64, i32, u32)>) -> Self {
        let mut f = RadialFunction { terms };
        f.simplify();
        f
    }

    fn simplify(&mut self) {
        let mut out: Vec<(f64, i32, u32)> = Vec::new();
        for &(c0, p, e) in &self.terms {
            if let Some(t) = out.iter_mut().find(|t| t.1 == p && t.2 == e) {
                t.0 += c0;
            } else {
                out.push((c0, p, e));
            }
        }
        out.retain(|t| t.0 != 0.0);
        out.sort_by(|a, b| (a.1, a.2).cmp(&(b.1, b.2)));
        self.terms = out;
    }

    pub fn eval<T: Real>(&self, r: T) -> T {
        let lr = r.ln();
        self.eval_with_log(r, lr)
    }

    fn eval_with_log<T: Real>(&self, r: T, lr: T) -> T {
        let mut s = T::zero();
        for &(c0, p, e) in &self.terms {
            s += c::<T>(c0) * r.powi(p) * lr.powi(e as i32);
        }
        s
    }

    /// `φ'(r)`.
    pub fn derivative(&self) -> Self {
        let mut t = Vec::new();
        for &(c0, p, e) in &self.terms {
            if p != 0 {
                t.push((c0 * p as f64, p - 1, e));
            }
            if e > 0 {
                t.push((c0 * e as f64, p - 1, e - 1));
            }
        }
        RadialFunction::new(t)
    }

    /// `T φ = φ'(r)/r`.
    pub fn t_op(&self) -> Self {
        let d = self.derivative();
        RadialFunction::new(d.terms.into_iter().map(|(c0, p, e)| (c0, p - 1, e)).collect())
    }

    /// Laplacian in `ℝⁿ`: `n Tφ + r² T²φ`.
    pub fn laplacian(&self, n: usize) -> Self {
        let t1 = self.t_op();
        let t2 = t1.t_op();
        let mut terms: Vec<_> = t1.terms.iter().map(|&(c0, p, e)| (c0 * n as f64, p, e)).collect();
        terms.extend(t2.terms.iter().map(|&(c0, p, e)| (c0, p + 2, e)));
        RadialFunction::new(terms)
    }

    pub fn scaled(&self, s: f64) -> Self {
        RadialFunction::new(self.terms.iter().map(|&(c0, p, e)| (c0 * s, p, e)).collect())
    }
}

/// Highest derivative order supported by [`RadialKernel`].
pub const MAX_ORDER: usize = 6;

/// A radial function together with its iterates `T^j φ`, `j ≤ MAX_ORDER`.
#[derive(Clone, Debug)]
pub struct RadialKernel {
    tpow: Vec<RadialFunction>,
}

impl RadialKernel {
    pub fn new(phi: RadialFunction) -> Self {
        let mut tpow = vec![phi];
        for j in 0..MAX_ORDER {
            let next = tpow[j].t_op();
            tpow.push(next);
        }
        RadialKernel { tpow }
    }

    pub fn base(&self) -> &RadialFunction {
        &self.tpow[0]
    }

    /// `[φ, Tφ, …, T^upto φ]` at radius `r`.
    #[inline]
    pub fn jet<T: Real>(&self, r: T, upto: usize) -> [T; MAX_ORDER + 1] {
        let lr = r.ln();
        let mut out = [T::zero(); MAX_ORDER + 1];
        for j in 0..=upto {
            out[j] = self.tpow[j].eval_with_log(r, lr);
        }
        out
    }
}

/// `D^k φ(x)[v_1, …, v_k]` from the jet of `φ`, where `xdot(i) = x·v_i` and
/// `pdot(i, j) = v_i·v_j`.
pub fn radial_multilinear<T: Real>(
    k: usize,
    jet: &[T; MAX_ORDER + 1],
    xdot: &dyn Fn(usize) -> T,
    pdot: &dyn Fn(usize, usize) -> T,
) -> T {
    fn rec<T: Real>(
        k: usize,
        used: u32,
        m: usize,
        acc: T,
        jet: &[T; MAX_ORDER + 1],
        xdot: &dyn Fn(usize) -> T,
        pdot: &dyn Fn(usize, usize) -> T,
    ) -> T {
        let first = (0..k).find(|&i| used & (1 << i) == 0);
        let Some(i) = first else {
            return acc * jet[k - m];
        };
        let used_i = used | (1 << i);
        let mut s = rec(k, used_i, m, acc * xdot(i), jet, xdot, pdot);
        for j in i + 1..k {
            if used_i & (1 << j) == 0 {
                s += rec(k, used_i | (1 << j), m + 1, acc * pdot(i, j), jet, xdot, pdot);
            }
        }
        s
    }
    rec(k, 0, 0, T::one(), jet, xdot, pdot)
}

/// Component `D_{i_1} … D_{i_k} φ(x)`.
pub fn radial_component<T: Real>(jet: &[T; MAX_ORDER + 1], x: &[T], idx: &[usize]) -> T {
    let xd = |a: usize| x[idx[a]];
    let pd = |a: usize, b: usize| if idx[a] == idx[b] { T::one() } else { T::zero() };
    radial_multilinear(idx.len(), jet, &xd, &pd)
}

/// Full derivative tensor of order `k` (row-major over `n^k` indices).
pub fn radial_tensor<T: Real>(jet: &[T; MAX_ORDER + 1], x: &[T], k: usize) -> Vec<T> {
    let n = x.len();
    let total = n.pow(k as u32);
    let mut out = vec![T::zero(); total];
    let mut idx = vec![0usize; k];
    for (flat, o) in out.iter_mut().enumerate() {
        let mut f = flat;
        for a in (0..k).rev() {
            idx[a] = f % n;
            f /= n;
        }
        // Tensors are symmetric; reuse the sorted representative.
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        if sorted != idx {
            continue;
        }
        *o = radial_component(jet, x, &idx);
    }
    let mut idx2 = vec![0usize; k];
    for flat in 0..total {
        let mut f = flat;
        for a in (0..k).rev() {
            idx2[a] = f % n;
            f /= n;
        }
        idx2.sort_unstable();
        let mut rep = 0;
        for &i in &idx2 {
            rep = rep * n + i;
        }
        out[flat] = out[rep];
    }
    out
}

/// `−Δ` fundamental solution of Laplace's equation.
pub fn laplace_radial(n: usize) -> RadialFunction {
    let w = sphere_area(n);
    if n == 2 {
        RadialFunction::new(vec![(-1.0 / (2.0 * std::f64::consts::PI), 0, 1)])
    } else {
        RadialFunction::new(vec![(1.0 / ((n as f64 - 2.0) * w), 2 - n as i32, 0)])
    }
}

/// Fundamental solution `B` of `Δ²`, with `ω_n` the area of the unit sphere.
pub fn biharmonic_radial(n: usize) -> RadialFunction {
    let w = sphere_area(n);
    let pi = std::f64::consts::PI;
    match n {
        2 => RadialFunction::new(vec![(-1.0 / (8.0 * pi), 2, 0), (1.0 / (8.0 * pi), 2, 1)]),
        4 => RadialFunction::new(vec![(-1.0 / (4.0 * w), 0, 1)]),
        _ => {
            let nf = n as f64;
            RadialFunction::new(vec![(1.0 / (2.0 * (nf - 2.0) * (nf - 4.0) * w), 4 - n as i32, 0)])
        }
    }
}

/// The three operator families.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Family<T> {
    Laplace,
    Lame { mu: T, lambda: T },
    Biharmonic { rho: T },
}

/// Validated choice of operator family and dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpec<T> {
    pub family: Family<T>,
    pub dim: usize,
}

fn check_dim(n: usize) -> Result<()> {
    if !(2..=8).contains(&n) {
        return Err(Error::Spec(format!("dimension {n} out of range 2..=8")));
    }
    Ok(())
}

impl<T: Real> KernelSpec<T> {
    pub fn laplace(n: usize) -> Result<Self> {
        check_dim(n)?;
        Ok(KernelSpec {
            family: Family::Laplace,
            dim: n,
        })
    }

    pub fn lame(n: usize, mu: T, lambda: T) -> Result<Self> {
        check_dim(n)?;
        if !(mu > T::zero()) {
            return Err(Error::Spec(format!("Lamé μ must be positive, got {mu}")));
        }
        if !(lambda > -c::<T>(2.0) * mu / cu(n)) {
            return Err(Error::Spec(format!("Lamé λ must exceed −2μ/n, got {lambda}")));
        }
        Ok(KernelSpec {
            family: Family::Lame { mu, lambda },
            dim: n,
        })
    }

    pub fn biharmonic(n: usize, rho: T) -> Result<Self> {
        check_dim(n)?;
        check_rho(n, rho)?;
        Ok(KernelSpec {
            family: Family::Biharmonic { rho },
            dim: n,
        })
    }

    /// Number of solution components.
    pub fn m(&self) -> usize {
        match self.family {
            Family::Lame { .. } => self.dim,
            _ => 1,
        }
    }

    pub fn rho(&self) -> Option<T> {
        match self.family {
            Family::Biharmonic { rho } => Some(rho),
            _ => None,
        }
    }

    /// θ paired with ρ in the Rellich identity.
    pub fn theta(&self) -> Option<T> {
        self.rho().map(|r| theta_from_rho(self.dim, r).expect("validated ρ"))
    }

    /// Coefficients `a_ij^kl` of the conormal derivative
    /// `(∂u/∂ν)^k = a_ij^kl D_j u^l N_i`.
    pub fn coefficient(&self, i: usize, j: usize, k: usize, l: usize) -> T {
        let d = |a: usize, b: usize| if a == b { T::one() } else { T::zero() };
        match self.family {
            Family::Lame { mu, lambda } => mu * d(i, j) * d(k, l) + lambda * d(i, k) * d(j, l) + mu * d(i, l) * d(j, k),
            _ => d(i, j) * d(k, 0) * d(l, 0),
        }
    }

    /// True when `a_ij^kl = a_ji^lk` for all indices.
    pub fn coefficients_symmetric(&self) -> bool {
        let (n, m) = (self.dim, self.m());
        for i in 0..n {
            for j in 0..n {
                for k in 0..m {
                    for l in 0..m {
                        if self.coefficient(i, j, k, l) != self.coefficient(j, i, l, k) {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    /// Smallest observed `a_ij^kl ξ_iξ_jη^kη^l / (|ξ|²|η|²)` over random
    /// `ξ, η`; the Legendre–Hadamard condition asks for at least `μ`.
    pub fn legendre_hadamard_constant(&self, samples: usize, seed: u64) -> T {
        let (n, m) = (self.dim, self.m());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best = T::infinity();
        for _ in 0..samples {
            let xi: Vec<T> = (0..n).map(|_| c(rng.gen_range(-1.0..1.0))).collect();
            let eta: Vec<T> = (0..m).map(|_| c(rng.gen_range(-1.0..1.0))).collect();
            let mut q = T::zero();
            for i in 0..n {
                for j in 0..n {
                    for k in 0..m {
                        for l in 0..m {
                            q += self.coefficient(i, j, k, l) * xi[i] * xi[j] * eta[k] * eta[l];
                        }
                    }
                }
            }
            let den = xi.iter().map(|&a| a * a).sum::<T>() * eta.iter().map(|&a| a * a).sum::<T>();
            if den > T::zero() {
                best = best.min(q / den);
            }
        }
        best
    }
}

fn check_rho<T: Real>(n: usize, rho: T) -> Result<()> {
    let lo = T::one() / (T::one() - cu(n));
    if !(rho > lo && rho < T::one()) {
        return Err(Error::Spec(format!("ρ = {rho} outside (1/(1−n), 1)")));
    }
    Ok(())
}

/// `ρ = (2θ + nθ²)/(1 + 2θ + nθ²)`.
pub fn rho_from_theta<T: Real>(n: usize, theta: T) -> T {
    let q = c::<T>(2.0) * theta + cu::<T>(n) * theta * theta;
    q / (T::one() + q)
}

/// The root of `n(ρ−1)θ² + 2(ρ−1)θ + ρ = 0` continuous with `θ(0) = 0`.
pub fn theta_from_rho<T: Real>(n: usize, rho: T) -> Result<T> {
    check_rho(n, rho)?;
    let nn = cu::<T>(n);
    let s = ((T::one() + (nn - T::one()) * rho) / (T::one() - rho)).sqrt();
    Ok((s - T::one()) / nn)
}

/// Radial data of one family, ready for repeated evaluation.
#[derive(Clone, Debug)]
pub struct KernelEval<T> {
    pub spec: KernelSpec<T>,
    /// Laplace `−Δ` fundamental solution `G`.
    pub g: RadialKernel,
    /// Biharmonic fundamental solution `B`.
    pub b: RadialKernel,
    /// `Γ_B = ΔB`.
    pub gamma: RadialKernel,
}

impl<T: Real> KernelEval<T> {
    pub fn new(spec: &KernelSpec<T>) -> Self {
        let n = spec.dim;
        let b = biharmonic_radial(n);
        let gamma = b.laplacian(n);
        KernelEval {
            spec: spec.clone(),
            g: RadialKernel::new(laplace_radial(n)),
            b: RadialKernel::new(b),
            gamma: RadialKernel::new(gamma),
        }
    }

    fn lame_consts(&self) -> (T, T, T) {
        match self.spec.family {
            Family::Lame { mu, lambda } => (mu, lambda, (lambda + mu) / (lambda + c::<T>(2.0) * mu)),
            _ => unreachable!("Lamé constants requested for another family"),
        }
    }

    /// Derivative `D^α Γ^{kl}` of the fundamental matrix (`m = 1` families
    /// ignore `k`, `l`).
    fn component(&self, jg: &[T; MAX_ORDER + 1], jb: &[T; MAX_ORDER + 1], x: &[T], k: usize, l: usize, alpha: &[usize]) -> T {
        match self.spec.family {
            Family::Laplace => radial_component(jg, x, alpha),
            Family::Biharmonic { .. } => radial_component(jb, x, alpha),
            Family::Lame { .. } => {
                let (mu, _, a) = self.lame_consts();
                let mut idx = vec![k, l];
                idx.extend_from_slice(alpha);
                let gpart = if k == l { radial_component(jg, x, alpha) } else { T::zero() };
                (gpart + a * radial_component(jb, x, &idx)) / mu
            }
        }
    }

    /// Traction kernel `∂/∂ν(y) Γ_k(y−x)` as an `m×m` matrix `[k][l]`, the
    /// `l`-th conormal component of the `k`-th column; `z = y − x`.
    #[inline]
    pub fn conormal(&self, z: Vec3<T>, nrm: Vec3<T>) -> [[T; 3]; 3] {
        let r = norm(z);
        let mut out = [[T::zero(); 3]; 3];
        match self.spec.family {
            Family::Lame { .. } => {
                let (mu, lambda, a) = self.lame_consts();
                let jg = self.g.jet(r, 1);
                let jb = self.b.jet(r, 3);
                let zn = dot(z, nrm);
                let tg = jg[1];
                let s = lambda * (T::one() - a) / mu;
                let two_a = c::<T>(2.0) * a;
                for k in 0..self.spec.dim {
                    for l in 0..self.spec.dim {
                        let d3 = jb[3] * zn * z[k] * z[l]
                            + jb[2] * (nrm[k] * z[l] + nrm[l] * z[k] + if k == l { zn } else { T::zero() });
                        out[k][l] = s * nrm[l] * z[k] * tg
                            + nrm[k] * z[l] * tg
                            + if k == l { zn * tg } else { T::zero() }
                            + two_a * d3;
                    }
                }
            }
            Family::Laplace => {
                let jg = self.g.jet(r, 1);
                out[0][0] = jg[1] * dot(z, nrm);
            }
            Family::Biharmonic { .. } => {
                let jgm = self.gamma.jet(r, 1);
                out[0][0] = jgm[1] * dot(z, nrm);
            }
        }
        out
    }

    /// `∂_z^α` of the conormal kernel returned by [`KernelEval::conormal`].
    pub fn conormal_derivative(&self, z: Vec3<T>, nrm: Vec3<T>, alpha: &[usize]) -> [[T; 3]; 3] {
        let n = self.spec.dim;
        let r = norm(z);
        let order = alpha.len() + 1;
        let jg = self.g.jet(r, order);
        let jb = self.b.jet(r, order + 2);
        let x = &z[..n];
        let mut out = [[T::zero(); 3]; 3];
        let with = |a: usize| {
            let mut idx = vec![a];
            idx.extend_from_slice(alpha);
            idx
        };
        match self.spec.family {
            Family::Laplace | Family::Biharmonic { .. } => {
                let jr = if let Family::Laplace = self.spec.family { jg } else { self.gamma.jet(r, order) };
                let mut s = T::zero();
                for a in 0..n {
                    s += nrm[a] * radial_component(&jr, x, &with(a));
                }
                out[0][0] = s;
            }
            Family::Lame { mu, lambda } => {
                for k in 0..n {
                    let mut div = T::zero();
                    for j in 0..n {
                        div += self.component(&jg, &jb, x, j, k, &with(j));
                    }
                    for l in 0..n {
                        let mut s = lambda * nrm[l] * div;
                        for j in 0..n {
                            s += mu
                                * nrm[j]
                                * (self.component(&jg, &jb, x, l, k, &with(j)) + self.component(&jg, &jb, x, j, k, &with(l)));
                        }
                        out[k][l] = s;
                    }
                }
            }
        }
        out
    }

    /// Fundamental matrix `Γ(z)` (`m×m`, padded to 3×3).
    #[inline]
    pub fn value(&self, z: Vec3<T>) -> [[T; 3]; 3] {
        let r = norm(z);
        let mut out = [[T::zero(); 3]; 3];
        match self.spec.family {
            Family::Lame { .. } => {
                let (mu, _, a) = self.lame_consts();
                let jg = self.g.jet(r, 0);
                let jb = self.b.jet(r, 2);
                for k in 0..self.spec.dim {
                    for l in 0..self.spec.dim {
                        let d2 = jb[2] * z[k] * z[l] + if k == l { jb[1] } else { T::zero() };
                        out[k][l] = ((if k == l { jg[0] } else { T::zero() }) + a * d2) / mu;
                    }
                }
            }
            Family::Laplace => out[0][0] = self.g.jet(r, 0)[0],
            Family::Biharmonic { .. } => out[0][0] = self.b.jet(r, 0)[0],
        }
        out
    }

    /// Gradient `D_i Γ^{kl}(z)` as `[k][l][i]`.
    pub fn gradient(&self, z: Vec3<T>) -> [[[T; 3]; 3]; 3] {
        let n = self.spec.dim;
        let m = self.spec.m();
        let r = norm(z);
        let jg = self.g.jet(r, 3);
        let jb = self.b.jet(r, 4);
        let mut out = [[[T::zero(); 3]; 3]; 3];
        for k in 0..m {
            for l in 0..m {
                for i in 0..n {
                    out[k][l][i] = self.component(&jg, &jb, &z[..n], k, l, &[i]);
                }
            }
        }
        out
    }

    /// Hessian `D_iD_j Γ^{kl}(z)` as `[k][l][i][j]`.
    pub fn hessian(&self, z: Vec3<T>) -> [[[[T; 3]; 3]; 3]; 3] {
        let n = self.spec.dim;
        let m = self.spec.m();
        let r = norm(z);
        let jg = self.g.jet(r, 3);
        let jb = self.b.jet(r, 4);
        let mut out = [[[[T::zero(); 3]; 3]; 3]; 3];
        for k in 0..m {
            for l in 0..m {
                for i in 0..n {
                    for j in i..n {
                        let v = self.component(&jg, &jb, &z[..n], k, l, &[i, j]);
                        out[k][l][i][j] = v;
                        out[k][l][j][i] = v;
                    }
                }
            }
        }
        out
    }
}

/// Fundamental solution and, when requested, its derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelValue<T> {
    pub m: usize,
    pub n: usize,
    /// `Γ^{kl}` at `[k*m + l]`.
    pub value: Vec<T>,
    /// `D_i Γ^{kl}` at `[(k*m + l)*n + i]`.
    pub gradient: Option<Vec<T>>,
    /// `D_iD_j Γ^{kl}` at `[((k*m + l)*n + i)*n + j]`.
    pub hessian: Option<Vec<T>>,
    /// `D_iD_jD_p Γ^{kl}` at `[(((k*m + l)*n + i)*n + j)*n + p]`.
    pub third: Option<Vec<T>>,
}

impl<T: Real> KernelValue<T> {
    pub fn get(&self, k: usize, l: usize) -> T {
        self.value[k * self.m + l]
    }

    /// Derivative `D^α Γ^{kl}` for `|α| ≤ 3` from the stored tensors.
    pub fn derivative(&self, k: usize, l: usize, alpha: &[usize]) -> Option<T> {
        let n = self.n;
        let base = k * self.m + l;
        match alpha.len() {
            0 => Some(self.value[base]),
            1 => self.gradient.as_ref().map(|g| g[base * n + alpha[0]]),
            2 => self.hessian.as_ref().map(|h| h[(base * n + alpha[0]) * n + alpha[1]]),
            3 => self.third.as_ref().map(|t| t[((base * n + alpha[0]) * n + alpha[1]) * n + alpha[2]]),
            _ => None,
        }
    }
}

fn check_offset<T: Real>(spec: &KernelSpec<T>, x: &[T]) -> Result<T> {
    if x.len() != spec.dim {
        return Err(Error::Dimension(format!("offset has {} components, expected {}", x.len(), spec.dim)));
    }
    let r = norm_slice(x);
    if !(r > T::zero()) {
        return Err(Error::Pole);
    }
    Ok(r)
}

/// `Γ(x)` for the family of `spec` (matrix-valued for Lamé).
pub fn fundamental_solution<T: Real>(spec: &KernelSpec<T>, x: &[T]) -> Result<KernelValue<T>> {
    fundamental_derivatives(spec, x, 0)
}

/// `Γ(x)` with closed-form derivatives up to `order ≤ 3`.
pub fn fundamental_derivatives<T: Real>(spec: &KernelSpec<T>, x: &[T], order: usize) -> Result<KernelValue<T>> {
    let r = check_offset(spec, x)?;
    if order > 3 {
        return Err(Error::Spec(format!("derivative order {order} exceeds 3")));
    }
    let ev = KernelEval::new(spec);
    let jg = ev.g.jet(r, MAX_ORDER);
    let jb = ev.b.jet(r, MAX_ORDER);
    let (n, m) = (spec.dim, spec.m());
    let tensor = |d: usize| -> Vec<T> {
        let mut out = Vec::with_capacity(m * m * n.pow(d as u32));
        let mut idx = vec![0usize; d];
        for k in 0..m {
            for l in 0..m {
                for flat in 0..n.pow(d as u32) {
                    let mut f = flat;
                    for a in (0..d).rev() {
                        idx[a] = f % n;
                        f /= n;
                    }
                    let mut sorted = idx.clone();
                    sorted.sort_unstable();
                    out.push(ev.component(&jg, &jb, x, k, l, &sorted));
                }
            }
        }
        out
    };
    Ok(KernelValue {
        m,
        n,
        value: tensor(0),
        gradient: (order >= 1).then(|| tensor(1)),
        hessian: (order >= 2).then(|| tensor(2)),
        third: (order >= 3).then(|| tensor(3)),
    })
}

/// `∂/∂ν(y) Γ_k(y − x)` as a row-major `m×m` matrix (`[k][l]`: conormal
/// component `l` of column `k`). Defined for Laplace and Lamé.
pub fn conormal_kernel<T: Real>(spec: &KernelSpec<T>, x: &[T], y: &[T], normal: &[T]) -> Result<Vec<T>> {
    if matches!(spec.family, Family::Biharmonic { .. }) {
        return Err(Error::Spec("the biharmonic family has no first-order conormal kernel".into()));
    }
    let n = spec.dim;
    if n > 3 || x.len() != n || y.len() != n || normal.len() != n {
        return Err(Error::Dimension("conormal kernel needs points in ℝ² or ℝ³".into()));
    }
    let mut z = zero3();
    let mut nv = zero3();
    for i in 0..n {
        z[i] = y[i] - x[i];
        nv[i] = normal[i];
    }
    if !(norm(z) > T::zero()) {
        return Err(Error::Pole);
    }
    let k = KernelEval::new(spec).conormal(z, nv);
    let m = spec.m();
    Ok((0..m * m).map(|a| k[a / m][a % m]).collect())
}

/// Conormal derivative of a field with gradient `grad[k*n + j] = D_j u^k`:
/// `∂u/∂N` for Laplace, `λ(div u)N + μ(∇u + ∇uᵀ)N` for Lamé.
pub fn conormal_of_field<T: Real>(spec: &KernelSpec<T>, grad: &[T], normal: &[T]) -> Vec<T> {
    let n = spec.dim;
    match spec.family {
        Family::Lame { mu, lambda } => {
            let div: T = (0..n).map(|i| grad[i * n + i]).sum();
            (0..n)
                .map(|k| {
                    let mut t = lambda * div * normal[k];
                    for i in 0..n {
                        t += mu * (grad[k * n + i] + grad[i * n + k]) * normal[i];
                    }
                    t
                })
                .collect()
        }
        _ => vec![(0..n).map(|j| grad[j] * normal[j]).sum()],
    }
}

/// The same conormal derivative through the coefficients:
/// `a_ij^kl D_j u^l N_i`.
pub fn conormal_by_coefficients<T: Real>(spec: &KernelSpec<T>, grad: &[T], normal: &[T]) -> Vec<T> {
    let (n, m) = (spec.dim, spec.m());
    (0..m)
        .map(|k| {
            let mut s = T::zero();
            for i in 0..n {
                for j in 0..n {
                    for l in 0..m {
                        s += spec.coefficient(i, j, k, l) * grad[l * n + j] * normal[i];
                    }
                }
            }
            s
        })
        .collect()
}

fn check_symmetric<T: Real>(h: &[T], n: usize) -> Result<()> {
    if h.len() != n * n {
        return Err(Error::Dimension(format!("Hessian has {} entries, expected {}", h.len(), n * n)));
    }
    let scale_ = h.iter().fold(T::zero(), |a, &b| a.max(b.abs())).max(T::one());
    for i in 0..n {
        for j in i + 1..n {
            if (h[i * n + j] - h[j * n + i]).abs() > c::<T>(1e3) * T::epsilon() * scale_ {
                return Err(Error::Validation(format!("Hessian not symmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

/// `M_ρ(u) = ρΔu + (1−ρ) N_iN_j D_iD_j u` from the Hessian at a point.
pub fn mrho_pointwise<T: Real>(rho: T, hessian: &[T], normal: &[T]) -> Result<T> {
    let n = normal.len();
    check_symmetric(hessian, n)?;
    let lap: T = (0..n).map(|i| hessian[i * n + i]).sum();
    let mut nn = T::zero();
    for i in 0..n {
        for j in 0..n {
            nn += normal[i] * normal[j] * hessian[i * n + j];
        }
    }
    Ok(rho * lap + (T::one() - rho) * nn)
}

/// `K_ρ(u) = ∂Δu/∂N + ½(1−ρ) ∂/∂T_ij(n_ij)` in coordinates: the pointwise
/// part `∂Δu/∂N`, the flux coefficients `n_ij = ∂²u/∂N∂T_ij`, and the factor
/// `½(1−ρ)` multiplying their tangential divergence.
#[derive(Clone, Debug, PartialEq)]
pub struct KrhoCoords<T> {
    pub normal_part: T,
    /// Row-major `n×n`, antisymmetric.
    pub n_ij: Vec<T>,
    pub factor: T,
}

/// Coordinates of `K_ρ(u)` at a point from `∇Δu` and the Hessian.
pub fn krho_tangential_coords<T: Real>(rho: T, grad_lap: &[T], hessian: &[T], normal: &[T]) -> Result<KrhoCoords<T>> {
    let n = normal.len();
    check_symmetric(hessian, n)?;
    let hn: Vec<T> = (0..n).map(|a| (0..n).map(|b| hessian[a * n + b] * normal[b]).sum()).collect();
    let mut n_ij = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            n_ij[i * n + j] = normal[i] * hn[j] - normal[j] * hn[i];
        }
    }
    Ok(KrhoCoords {
        normal_part: (0..n).map(|i| grad_lap[i] * normal[i]).sum(),
        n_ij,
        factor: (T::one() - rho) / c(2.0),
    })
}

/// Derivatives of a vector field `α` up to second order at a point:
/// `jac[m*n + i] = D_i α_m`, `hess[(m*n + i)*n + j] = D_iD_j α_m`.
#[derive(Clone, Copy, Debug)]
pub struct VectorJet<'a, T> {
    pub jac: &'a [T],
    pub hess: &'a [T],
}

/// The matrices `(E_ij(α, u), L_ij(u))` of the Rellich identity, with
/// `L_ij = D_iD_j + θδ_ijΔ` and
/// `E_ij = ½ div α L_ij(u) − L_ij(α)·∇u − 2 D_iα·∇D_j u − 2θδ_ij D_kα·∇D_k u`.
pub fn rellich_tensors<T: Real>(theta: T, alpha: VectorJet<'_, T>, u_grad: &[T], u_hess: &[T]) -> (Vec<T>, Vec<T>) {
    let n = u_grad.len();
    let lap_u: T = (0..n).map(|i| u_hess[i * n + i]).sum();
    let div_a: T = (0..n).map(|i| alpha.jac[i * n + i]).sum();
    let d = |i: usize, j: usize| if i == j { T::one() } else { T::zero() };
    let two = c::<T>(2.0);
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            l[i * n + j] = u_hess[i * n + j] + theta * d(i, j) * lap_u;
        }
    }
    // D_kα·∇D_k u = Σ_{k,m} D_kα_m D_mD_k u
    let mut trace_term = T::zero();
    for k in 0..n {
        for m in 0..n {
            trace_term += alpha.jac[m * n + k] * u_hess[m * n + k];
        }
    }
    let mut e = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            let mut la_grad = T::zero();
            let mut da_dd = T::zero();
            for m in 0..n {
                let lap_am: T = (0..n).map(|k| alpha.hess[(m * n + k) * n + k]).sum();
                let la = alpha.hess[(m * n + i) * n + j] + theta * d(i, j) * lap_am;
                la_grad += la * u_grad[m];
                da_dd += alpha.jac[m * n + i] * u_hess[m * n + j];
            }
            e[i * n + j] = div_a * l[i * n + j] / two - la_grad - two * da_dd - two * theta * d(i, j) * trace_term;
        }
    }
    (e, l)
}
