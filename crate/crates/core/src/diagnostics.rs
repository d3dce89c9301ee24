//! Numerical probes of the harmonic-analysis machinery: nontangential
//! maximal functions, reverse Hölder and Cacciopoli ratios, the biharmonic
//! Rellich identity, dyadic maximal functions with the good-λ inequality,
//! and `A_p` weights.

use rayon::prelude::*;

use crate::bvp::Solution;
use crate::error::{Error, Result};
use crate::geometry::{in_cone, surface_ball, tangent_frame, BoundaryMesh, Side, SurfaceCubeTree};
use crate::kernels::{krho_tangential_coords, mrho_pointwise, rellich_tensors, theta_from_rho, VectorJet};
use crate::potentials::BiharmonicJet;
use crate::scalar::*;

/// Exponent standing in for `p_n = 2(n−1)/(n−3)` when `n = 3`.
pub const RH_PROXY_EXPONENT: f64 = 10.0;

/// Strictly positive nodal weight `ω(x_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Weight<T> {
    pub values: Vec<T>,
    ap_cache: Vec<(T, T)>,
}

impl<T: Real> Weight<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v > T::zero())) {
            return Err(Error::Validation(format!("weight is not positive at node {i}")));
        }
        Ok(Weight { values, ap_cache: Vec::new() })
    }

    pub fn uniform(len: usize) -> Self {
        Weight {
            values: vec![T::one(); len],
            ap_cache: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Computes and remembers the `A_p` constant over surface balls.
    pub fn with_ap_constant(mut self, mesh: &BoundaryMesh<T>, p: T) -> Result<Self> {
        if self.cached_ap(p).is_none() {
            let a = ap_constant(mesh, &self, p)?;
            self.ap_cache.push((p, a));
        }
        Ok(self)
    }

    pub fn cached_ap(&self, p: T) -> Option<T> {
        self.ap_cache.iter().find(|(q, _)| *q == p).map(|(_, a)| *a)
    }
}

/// Power weight `ω_α(Q) = |Q − Q₀|^α`; the distance is floored at the
/// nearest-neighbour spacing of the node closest to `Q₀`.
pub fn power_weight<T: Real>(mesh: &BoundaryMesh<T>, q0: Vec3<T>, alpha: T) -> Result<Weight<T>> {
    let n = mesh.dim();
    if alpha <= T::one() - cu(n) {
        return Err(Error::Spec(format!("power weight exponent {alpha:?} must exceed 1 − n")));
    }
    if mesh.len() < 2 {
        return Err(Error::Geometry("power weight needs at least two nodes".into()));
    }
    let nodes = mesh.nodes();
    let k = mesh.nearest_node(q0);
    let floor = nodes
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != k)
        .map(|(_, x)| dist(*x, nodes[k]))
        .fold(T::infinity(), T::min);
    Weight::new(nodes.iter().map(|x| dist(*x, q0).max(floor).powf(alpha)).collect())
}

/// Surface balls `I(x_c, r)` centered at nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct BallFamily<T> {
    pub centers: Vec<usize>,
    pub radii: Vec<T>,
}

impl<T: Real> BallFamily<T> {
    /// Every node as a center, radii `h·2^k` up to the diameter.
    pub fn standard(mesh: &BoundaryMesh<T>) -> Self {
        let mut radii = Vec::new();
        let mut r = mesh.h();
        let d = mesh.diameter();
        while r <= c::<T>(2.0) * d {
            radii.push(r);
            r = r * c(2.0);
        }
        BallFamily {
            centers: (0..mesh.len()).collect(),
            radii,
        }
    }
}

fn check_p<T: Real>(p: T) -> Result<()> {
    if p > T::one() && p.is_finite() {
        Ok(())
    } else {
        Err(Error::Spec(format!("A_p needs 1 < p < ∞, got {p:?}")))
    }
}

/// `(avg ω)(avg ω^{−1/(p−1)})^{p−1}` from the two weighted sums.
fn ap_ratio<T: Real>(measure: T, s_w: T, s_dual: T, p: T) -> T {
    (s_w / measure) * (s_dual / measure).powf(p - T::one())
}

/// `A_p` constant of a weight, maximized over [`BallFamily::standard`].
pub fn ap_constant<T: Real>(mesh: &BoundaryMesh<T>, weight: &Weight<T>, p: T) -> Result<T> {
    ap_constant_family(mesh, weight, p, &BallFamily::standard(mesh))
}

/// `A_p` constant maximized over an explicit ball family.
pub fn ap_constant_family<T: Real>(mesh: &BoundaryMesh<T>, weight: &Weight<T>, p: T, family: &BallFamily<T>) -> Result<T> {
    check_p(p)?;
    if weight.len() != mesh.len() {
        return Err(Error::Dimension("weight does not match the mesh".into()));
    }
    let e = -T::one() / (p - T::one());
    let dual: Vec<T> = weight.values.iter().map(|&o| o.powf(e)).collect();
    let nodes = mesh.nodes();
    let w = mesh.weights();
    let best = family
        .centers
        .par_iter()
        .map(|&ci| {
            let x0 = nodes[ci];
            let mut order: Vec<(T, usize)> = nodes.iter().enumerate().map(|(i, x)| (dist(*x, x0), i)).collect();
            order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let mut radii = family.radii.clone();
            radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (mut m, mut sw, mut sd) = (T::zero(), T::zero(), T::zero());
            let mut k = 0;
            let mut best = T::zero();
            for r in radii {
                while k < order.len() && order[k].0 < r {
                    let i = order[k].1;
                    m += w[i];
                    sw += w[i] * weight.values[i];
                    sd += w[i] * dual[i];
                    k += 1;
                }
                if m > T::zero() {
                    best = best.max(ap_ratio(m, sw, sd, p));
                }
            }
            best
        })
        .reduce(T::zero, T::max);
    Ok(best)
}

/// `A_p` constant maximized over the nonempty cubes of a tree.
pub fn ap_constant_cubes<T: Real>(tree: &SurfaceCubeTree<T>, weight: &Weight<T>, p: T) -> Result<T> {
    check_p(p)?;
    if weight.len() != tree.weights.len() {
        return Err(Error::Dimension("weight does not match the tree".into()));
    }
    let e = -T::one() / (p - T::one());
    let mut best = T::zero();
    for q in tree.cubes.iter().filter(|q| !q.nodes.is_empty()) {
        let (mut m, mut sw, mut sd) = (T::zero(), T::zero(), T::zero());
        for &i in &q.nodes {
            let wi = tree.weights[i];
            m += wi;
            sw += wi * weight.values[i];
            sd += wi * weight.values[i].powf(e);
        }
        best = best.max(ap_ratio(m, sw, sd, p));
    }
    Ok(best)
}

/// Which approach regions a maximal function looks into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConeSide {
    Interior,
    Exterior,
    Both,
}

/// Sample ladder for nontangential maximal functions. Distances are
/// `min_distance·√2^k` with directions fixed per rung, so the sample set for
/// a truncation is contained in the set for any larger truncation.
#[derive(Clone, Debug, PartialEq)]
pub struct NtmfSampler<T> {
    pub min_distance: T,
    /// Tilted directions per rung, besides the normal.
    pub azimuths: usize,
    /// Angle of the tilted directions from the normal, in radians.
    pub tilt: T,
}

impl<T: Real> NtmfSampler<T> {
    pub fn for_mesh(mesh: &BoundaryMesh<T>) -> Self {
        NtmfSampler {
            min_distance: mesh.h() * c(0.5),
            azimuths: 3,
            tilt: c(0.5),
        }
    }

    fn describe(&self) -> String {
        format!(
            "dyadic ladder: min distance {:e}, ratio sqrt(2), {} tilted directions at {:e} rad",
            f64_of(self.min_distance),
            self.azimuths,
            f64_of(self.tilt)
        )
    }

    fn points(&self, mesh: &BoundaryMesh<T>, p: usize, side: Side, truncation: T) -> Vec<Vec3<T>> {
        let x0 = mesh.nodes()[p];
        let nr = mesh.normals()[p];
        let sgn = if side == Side::Interior { -T::one() } else { T::one() };
        let (e1, e2) = if mesh.dim() == 3 {
            tangent_frame(nr)
        } else {
            ([-nr[1], nr[0], T::zero()], zero3())
        };
        let limit = truncation.min(mesh.diameter() * c(2.0));
        let golden: T = c(2.399963229728653);
        let mut out = Vec::new();
        let mut k = 0usize;
        loop {
            let d = self.min_distance * c::<T>(2.0).sqrt().powi(k as i32);
            if d > limit {
                break;
            }
            let mut dirs = vec![scale(nr, sgn)];
            for a in 0..self.azimuths {
                let phi = T::TAU() * cu(a) / cu(self.azimuths.max(1)) + golden * cu(k);
                let t = if mesh.dim() == 3 {
                    add(scale(e1, phi.cos()), scale(e2, phi.sin()))
                } else if a % 2 == 0 {
                    e1
                } else {
                    scale(e1, -T::one())
                };
                dirs.push(normalize(add(scale(nr, sgn * self.tilt.cos()), scale(t, self.tilt.sin()))));
            }
            for dir in dirs {
                let x = add(x0, scale(dir, d));
                if in_cone(mesh, x0, x, truncation) && mesh.is_interior(x) == (side == Side::Interior) {
                    out.push(x);
                }
            }
            k += 1;
        }
        out
    }
}

/// Nodal values of a nontangential maximal function.
#[derive(Clone, Debug, PartialEq)]
pub struct NtmfField<T> {
    /// `(u)* = max((u)*₊, (u)*₋)` over the requested sides.
    pub values: Vec<T>,
    pub interior: Vec<T>,
    pub exterior: Vec<T>,
    pub truncation: T,
    pub sampler: String,
}

/// Maximal function of `|u|` over the sampled approach regions of every
/// node (a lower bound for the true supremum). `magnitude` returns `|u(x)|`.
pub fn ntmf<T: Real>(
    mesh: &BoundaryMesh<T>,
    magnitude: impl Fn(Vec3<T>) -> Result<T> + Sync,
    side: ConeSide,
    truncation: T,
    sampler: &NtmfSampler<T>,
) -> Result<NtmfField<T>> {
    let all: Vec<usize> = (0..mesh.len()).collect();
    ntmf_on_nodes(mesh, &all, magnitude, side, truncation, sampler)
}

/// [`ntmf`] at the listed nodes only; the others get 0.
pub fn ntmf_on_nodes<T: Real>(
    mesh: &BoundaryMesh<T>,
    nodes: &[usize],
    magnitude: impl Fn(Vec3<T>) -> Result<T> + Sync,
    side: ConeSide,
    truncation: T,
    sampler: &NtmfSampler<T>,
) -> Result<NtmfField<T>> {
    if let Some(&p) = nodes.iter().find(|&&p| p >= mesh.len()) {
        return Err(Error::Dimension(format!("node {p} outside the mesh")));
    }
    let one_side = |s: Side| -> Result<Vec<T>> {
        let vals: Vec<T> = nodes
            .par_iter()
            .map(|&p| {
                let mut m = T::zero();
                for x in sampler.points(mesh, p, s, truncation) {
                    m = m.max(magnitude(x)?.abs());
                }
                Ok(m)
            })
            .collect::<Result<_>>()?;
        let mut out = vec![T::zero(); mesh.len()];
        for (&p, v) in nodes.iter().zip(vals) {
            out[p] = v;
        }
        Ok(out)
    };
    let zeros = vec![T::zero(); mesh.len()];
    let interior = if side == ConeSide::Exterior { zeros.clone() } else { one_side(Side::Interior)? };
    let exterior = if side == ConeSide::Interior { zeros } else { one_side(Side::Exterior)? };
    let values = interior.iter().zip(&exterior).map(|(&a, &b)| a.max(b)).collect();
    Ok(NtmfField {
        values,
        interior,
        exterior,
        truncation,
        sampler: sampler.describe(),
    })
}

/// Both sides of the reverse Hölder inequality on one surface ball.
#[derive(Clone, Debug, PartialEq)]
pub struct ReverseHolder<T> {
    /// `(avg_{I_r} F^p)^{1/p}`.
    pub lhs: T,
    /// `(avg_{I_{κr}} F^{p₀})^{1/p₀}` for the enlargement `κ`.
    pub rhs: T,
    /// `lhs / rhs`, and 0 when `lhs` is 0.
    pub ratio: T,
    /// `r·(r^{1−n} ∫ |jump|²)^{1/2}` over `I_{κr/2}` when a conormal jump
    /// is supplied.
    pub jump_term: Option<T>,
    pub inner_nodes: usize,
    pub outer_nodes: usize,
}

fn weighted_power_mean<T: Real>(idx: &[usize], f: &[T], w: &[T], p: T) -> T {
    let m: T = idx.iter().map(|&i| w[i]).sum();
    let s: T = idx.iter().map(|&i| w[i] * f[i].abs().powf(p)).sum();
    (s / m).powf(T::one() / p)
}

/// Reverse Hölder ratio of nodal values `f` on `I(x_p, r)` against
/// `I(x_p, enlargement·r)`, with exponents `p > 2` and `p0` (usually 2).
pub fn reverse_holder_ratio<T: Real>(
    mesh: &BoundaryMesh<T>,
    f: &[T],
    p_node: usize,
    r: T,
    p: T,
    p0: T,
    enlargement: T,
    jump: Option<&[T]>,
) -> Result<ReverseHolder<T>> {
    if f.len() != mesh.len() {
        return Err(Error::Dimension("values do not match the mesh".into()));
    }
    if p <= c(2.0) || p0 < T::one() || p0 >= p {
        return Err(Error::Spec(format!("reverse Hölder needs 1 ≤ p0 < p and p > 2 (p = {p:?}, p0 = {p0:?})")));
    }
    if enlargement < T::one() {
        return Err(Error::Spec("enlargement below 1".into()));
    }
    let inner = surface_ball(mesh, p_node, r);
    let outer = surface_ball(mesh, p_node, r * enlargement);
    if inner.is_empty() {
        return Err(Error::Validation(format!("surface ball of radius {r:?} holds no node")));
    }
    let w = mesh.weights();
    let lhs = weighted_power_mean(&inner, f, w, p);
    let rhs = weighted_power_mean(&outer, f, w, p0);
    let ratio = if lhs == T::zero() { T::zero() } else { lhs / rhs };
    let jump_term = match jump {
        Some(j) => {
            if j.len() != mesh.len() {
                return Err(Error::Dimension("jump does not match the mesh".into()));
            }
            let mid = surface_ball(mesh, p_node, r * enlargement * c(0.5));
            let s: T = mid.iter().map(|&i| w[i] * j[i] * j[i]).sum();
            Some(r * (s / r.powi(mesh.dim() as i32 - 1)).sqrt())
        }
        None => None,
    };
    Ok(ReverseHolder {
        lhs,
        rhs,
        ratio,
        jump_term,
        inner_nodes: inner.len(),
        outer_nodes: outer.len(),
    })
}

/// Both sides of the boundary Cacciopoli inequality.
#[derive(Clone, Debug, PartialEq)]
pub struct Cacciopoli<T> {
    /// `∫_{D_r} |∇u|²`.
    pub lhs: T,
    /// `∫_{D_2r} |u|²`.
    pub volume_term: T,
    /// `∫_{I_2r} |∂u/∂ν| |u|`.
    pub boundary_term: T,
    pub constant: T,
    /// `C (volume_term / r² + boundary_term)`.
    pub rhs: T,
    /// `lhs / (volume_term / r² + boundary_term)`: the smallest constant
    /// that makes the inequality hold.
    pub empirical_constant: T,
    pub samples: usize,
}

/// Cacciopoli ratio at node `p`. `field(x)` returns the components of `u`
/// and its gradient (`grad[k*n + i] = D_i u_k`); `trace(i)` the boundary
/// value and conormal derivative at node `i` from the chosen side.
/// `D_r = B(x_p, r) ∩ Ω_±` is integrated by the midpoint rule on a grid of
/// `grid` cells per diameter.
#[allow(clippy::too_many_arguments)]
pub fn cacciopoli_ratio<T: Real>(
    mesh: &BoundaryMesh<T>,
    field: impl Fn(Vec3<T>) -> Result<(Vec<T>, Vec<T>)> + Sync,
    trace: impl Fn(usize) -> Result<(Vec<T>, Vec<T>)> + Sync,
    p: usize,
    r: T,
    side: Side,
    constant: T,
    grid: usize,
) -> Result<Cacciopoli<T>> {
    let n = mesh.dim();
    let x0 = mesh.nodes()[p];
    let cells = |rad: T| -> Vec<(Vec3<T>, T)> {
        let hstep = rad * c(2.0) / cu(grid);
        let vol = hstep.powi(n as i32);
        let kz = if n == 3 { grid } else { 1 };
        let mut out = Vec::new();
        for iz in 0..kz {
            for iy in 0..grid {
                for ix in 0..grid {
                    let off = |i: usize| -rad + hstep * (cu::<T>(i) + c(0.5));
                    let x = [x0[0] + off(ix), x0[1] + off(iy), if n == 3 { x0[2] + off(iz) } else { T::zero() }];
                    if dist(x, x0) < rad && mesh.is_interior(x) == (side == Side::Interior) {
                        out.push((x, vol));
                    }
                }
            }
        }
        out
    };
    let inner = cells(r);
    if inner.len() < 100 {
        return Err(Error::Accuracy(format!("only {} samples in D_r", inner.len())));
    }
    let lhs: T = inner
        .par_iter()
        .map(|&(x, v)| field(x).map(|(_, g)| v * g.iter().map(|a| *a * *a).sum::<T>()))
        .collect::<Result<Vec<T>>>()?
        .into_iter()
        .sum();
    let outer = cells(r * c(2.0));
    let volume_term: T = outer
        .par_iter()
        .map(|&(x, v)| field(x).map(|(u, _)| v * u.iter().map(|a| *a * *a).sum::<T>()))
        .collect::<Result<Vec<T>>>()?
        .into_iter()
        .sum();
    let ball = surface_ball(mesh, p, r * c(2.0));
    let w = mesh.weights();
    let boundary_term: T = ball
        .par_iter()
        .map(|&i| trace(i).map(|(u, du)| w[i] * norm_slice(&du) * norm_slice(&u)))
        .collect::<Result<Vec<T>>>()?
        .into_iter()
        .sum();
    let base = volume_term / (r * r) + boundary_term;
    Ok(Cacciopoli {
        lhs,
        volume_term,
        boundary_term,
        constant,
        rhs: constant * base,
        empirical_constant: if lhs == T::zero() { T::zero() } else { lhs / base },
        samples: inner.len(),
    })
}

/// Value and derivatives of a vector field: `jac[m][i] = D_i α_m`,
/// `hess[m][i][j] = D_iD_j α_m`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldJet<T> {
    pub value: Vec3<T>,
    pub jac: [[T; 3]; 3],
    pub hess: [[[T; 3]; 3]; 3],
}

/// A smooth vector field with compact support in a ball.
pub trait CompactField<T: Real>: Sync {
    fn jet(&self, x: Vec3<T>) -> FieldJet<T>;
    /// Center and radius of a ball containing the support.
    fn support(&self) -> (Vec3<T>, T);
}

/// `α(x) = a·d·exp(−1/(1 − |x−c|²/R²))` inside the ball, 0 outside.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BumpField<T> {
    pub center: Vec3<T>,
    pub radius: T,
    pub direction: Vec3<T>,
    pub amplitude: T,
}

impl<T: Real> BumpField<T> {
    pub fn new(center: Vec3<T>, radius: T, direction: Vec3<T>) -> Self {
        BumpField {
            center,
            radius,
            direction,
            amplitude: T::one(),
        }
    }

    pub fn scaled(mut self, s: T) -> Self {
        self.amplitude = self.amplitude * s;
        self
    }

    /// The scalar bump with its gradient and Hessian.
    pub fn bump(&self, x: Vec3<T>) -> (T, Vec3<T>, [[T; 3]; 3]) {
        let d = sub(x, self.center);
        let r2 = self.radius * self.radius;
        let s = dot(d, d) / r2;
        if s >= T::one() {
            return (T::zero(), zero3(), [[T::zero(); 3]; 3]);
        }
        let q = T::one() / (T::one() - s);
        let g = (-q).exp() * self.amplitude;
        let g1 = -g * q * q;
        let g2 = g * (q.powi(4) - c::<T>(2.0) * q.powi(3));
        let ds = scale(d, c::<T>(2.0) / r2);
        let grad = scale(ds, g1);
        let mut hess = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                hess[i][j] = g2 * ds[i] * ds[j] + if i == j { g1 * c::<T>(2.0) / r2 } else { T::zero() };
            }
        }
        (g, grad, hess)
    }
}

impl<T: Real> CompactField<T> for BumpField<T> {
    fn jet(&self, x: Vec3<T>) -> FieldJet<T> {
        let (b, g, h) = self.bump(x);
        let mut out = FieldJet {
            value: scale(self.direction, b),
            jac: [[T::zero(); 3]; 3],
            hess: [[[T::zero(); 3]; 3]; 3],
        };
        for m in 0..3 {
            for i in 0..3 {
                out.jac[m][i] = self.direction[m] * g[i];
                for j in 0..3 {
                    out.hess[m][i][j] = self.direction[m] * h[i][j];
                }
            }
        }
        out
    }

    fn support(&self) -> (Vec3<T>, T) {
        (self.center, self.radius)
    }
}

/// The terms of the Rellich identity
/// `½∫⟨N,α⟩{(1−ρ)|∇∇u|² + ρ|Δu|²} = ∫∂_N(α·∇u) M_ρ(u) − ⟨α·∇u, K_ρ(u)⟩ + (1−ρ)∫_{Ω₊} E_ij L_ij`.
#[derive(Clone, Debug, PartialEq)]
pub struct RellichReport<T> {
    pub lhs: T,
    pub mrho_term: T,
    /// `⟨α·∇u, K_ρ(u)⟩` in the weak form.
    pub krho_term: T,
    pub solid_term: T,
    pub rhs: T,
    /// `|lhs − rhs| / (|lhs| + |rhs|)`, 0 when both vanish.
    pub residual: T,
    pub boundary_nodes: usize,
    pub volume_points: usize,
}

const GL4: [(f64, f64); 4] = [
    (-0.8611363115940526, 0.34785484513813146),
    (-0.33998104358485626, 0.6521451548658535),
    (0.33998104358485626, 0.6521451548658535),
    (0.8611363115940526, 0.34785484513813146),
];

fn hess_flat<T: Real>(h: &[[T; 3]; 3], n: usize) -> Vec<T> {
    (0..n * n).map(|a| h[a / n][a % n]).collect()
}

fn check_biharmonic<T: Real>(u: &(impl Fn(Vec3<T>) -> BiharmonicJet<T> + Sync), at: Vec3<T>, r: T, n: usize) -> Result<()> {
    let eps = r * c(1e-3);
    let mut div = T::zero();
    for k in 0..n {
        let mut e = zero3();
        e[k] = eps;
        div += (u(add(at, e)).grad_laplacian[k] - u(sub(at, e)).grad_laplacian[k]) / (eps * c(2.0));
    }
    let j = u(at);
    let hmax = j.hessian.iter().flatten().fold(T::zero(), |a, b| a.max(b.abs()));
    let scale_ = (norm(j.grad_laplacian) + hmax / r) / r;
    if div.abs() > c::<T>(1e-3) * scale_ + c::<T>(1e3) * T::epsilon() {
        return Err(Error::Validation(format!("u is not biharmonic: Δ²u ≈ {div:?}")));
    }
    Ok(())
}

/// Both sides of the Rellich identity on a graph patch for an analytic
/// biharmonic `u` (with jets) and a compactly supported field `α`, over
/// `Ω₊`, the region above the graph. Boundary integrals use the mesh nodes;
/// `K_ρ` is paired weakly through analytic tangential derivatives of
/// `α·∇u`; the solid integral runs over the region above the interpolated
/// graph with a half-cell midpoint rule across and composite Gauss rules
/// along the height.
pub fn rellich_residual<T: Real>(
    mesh: &BoundaryMesh<T>,
    u: impl Fn(Vec3<T>) -> BiharmonicJet<T> + Sync,
    alpha: &impl CompactField<T>,
    rho: T,
) -> Result<RellichReport<T>> {
    let g = mesh
        .graph()
        .ok_or_else(|| Error::UnsupportedGeometry("the Rellich probe runs on graph patches".into()))?;
    let n = mesh.dim();
    let theta = theta_from_rho(n, rho)?;
    let (sc, sr) = alpha.support();
    let (plo, phi) = g.param_box();
    let pc = g.phi_inv(sc);
    let h = mesh.h();
    for a in 0..n - 1 {
        if pc[a] - sr < plo[a] + h || pc[a] + sr > phi[a] - h {
            return Err(Error::Validation("support of α touches the patch boundary".into()));
        }
    }
    check_biharmonic(&u, sc, sr, n)?;
    let one = T::one();

    let nodes = mesh.nodes();
    let normals = mesh.normals();
    let w = mesh.weights();
    let active: Vec<usize> = (0..mesh.len()).filter(|&i| dist(nodes[i], sc) < sr).collect();
    let terms: Vec<[T; 3]> = active
        .par_iter()
        .map(|&i| -> Result<[T; 3]> {
            let x = nodes[i];
            let nr = &normals[i][..n];
            let a = alpha.jet(x);
            let j = u(x);
            let hf = hess_flat(&j.hessian, n);
            let lap: T = (0..n).map(|k| hf[k * n + k]).sum();
            let hh: T = hf.iter().map(|v| *v * *v).sum();
            let an: T = (0..n).map(|k| a.value[k] * nr[k]).sum();
            let lhs = an * ((one - rho) * hh + rho * lap * lap) / c(2.0);
            // ∂_k(α·∇u) = D_kα_l D_l u + α_l D_lD_k u
            let dphi: Vec<T> = (0..n)
                .map(|k| (0..n).map(|l| a.jac[l][k] * j.gradient[l] + a.value[l] * hf[l * n + k]).sum())
                .collect();
            let phi_v: T = (0..n).map(|l| a.value[l] * j.gradient[l]).sum();
            let dn_phi: T = (0..n).map(|k| nr[k] * dphi[k]).sum();
            let m = mrho_pointwise(rho, &hf, nr)?;
            let kc = krho_tangential_coords(rho, &j.grad_laplacian[..n], &hf, nr)?;
            let mut weak = phi_v * kc.normal_part;
            for p in 0..n {
                for q in 0..n {
                    let dt = nr[p] * dphi[q] - nr[q] * dphi[p];
                    weak -= kc.factor * dt * kc.n_ij[p * n + q];
                }
            }
            Ok([w[i] * lhs, w[i] * dn_phi * m, w[i] * weak])
        })
        .collect::<Result<_>>()?;
    let mut sums = [T::zero(); 3];
    for t in &terms {
        for k in 0..3 {
            sums[k] += t[k];
        }
    }

    let hd = n - 1;
    let nx = 2 * (g.nx - 1);
    let ny = if hd == 2 { 2 * (g.ny - 1) } else { 1 };
    let dx = (g.x1 - g.x0) / cu(nx);
    let dy = if hd == 2 { (g.y1 - g.y0) / cu(ny) } else { T::one() };
    let cell_area = dx * dy;
    let mut cells: Vec<[T; 2]> = Vec::new();
    for iy in 0..ny {
        for ix in 0..nx {
            let px = g.x0 + dx * (cu::<T>(ix) + c(0.5));
            let py = if hd == 2 { g.y0 + dy * (cu::<T>(iy) + c(0.5)) } else { T::zero() };
            let lateral = (px - pc[0]).powi(2) + if hd == 2 { (py - pc[1]).powi(2) } else { T::zero() };
            if lateral < sr * sr {
                cells.push([px, py]);
            }
        }
    }
    let segments = 64usize;
    let height = |x: Vec3<T>| if n == 2 { x[1] } else { x[2] };
    let solid_parts: Vec<T> = cells
        .par_iter()
        .map(|&p| {
            let base = g.phi(p);
            let top = height(sc) + sr - height(base);
            if top <= T::zero() {
                return T::zero();
            }
            let seg = top / cu(segments);
            let mut s = T::zero();
            for k in 0..segments {
                for &(xi, wi) in &GL4 {
                    let t = seg * (cu::<T>(k) + (c::<T>(xi) + one) / c(2.0));
                    let mut x = base;
                    if n == 2 {
                        x[1] += t;
                    } else {
                        x[2] += t;
                    }
                    if dist(x, sc) >= sr {
                        continue;
                    }
                    let a = alpha.jet(x);
                    let jac: Vec<T> = (0..n * n).map(|q| a.jac[q / n][q % n]).collect();
                    let hs: Vec<T> = (0..n * n * n).map(|q| a.hess[q / (n * n)][(q / n) % n][q % n]).collect();
                    let j = u(x);
                    let (e, l) = rellich_tensors(theta, VectorJet { jac: &jac, hess: &hs }, &j.gradient[..n], &hess_flat(&j.hessian, n));
                    let el: T = e.iter().zip(&l).map(|(a, b)| *a * *b).sum();
                    s += el * seg * c::<T>(wi) / c(2.0);
                }
            }
            s * cell_area
        })
        .collect();
    let solid: T = solid_parts.iter().copied().sum();
    let solid_term = (one - rho) * solid;
    let lhs = sums[0];
    let rhs = sums[1] - sums[2] + solid_term;
    let den = lhs.abs() + rhs.abs();
    Ok(RellichReport {
        lhs,
        mrho_term: sums[1],
        krho_term: sums[2],
        solid_term,
        rhs,
        residual: if den == T::zero() { T::zero() } else { (lhs - rhs).abs() / den },
        boundary_nodes: active.len(),
        volume_points: cells.len() * segments * GL4.len(),
    })
}

/// Localized dyadic maximal function `M_{Q₀}(F)(x)`: the largest average of
/// `|F|` over the tree's cubes containing `x`, together with the boxes of
/// each depth shifted by half a side that still lie inside the root. Nodes
/// outside the root get 0.
pub fn dyadic_maximal<T: Real>(tree: &SurfaceCubeTree<T>, f: &[T]) -> Result<Vec<T>> {
    dyadic_maximal_weighted(tree, f, None)
}

fn dyadic_maximal_weighted<T: Real>(tree: &SurfaceCubeTree<T>, f: &[T], omega: Option<&[T]>) -> Result<Vec<T>> {
    if f.len() != tree.params.len() {
        return Err(Error::Dimension("values do not match the tree".into()));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite values".into()));
    }
    let pd = tree.param_dim;
    let nodes = &tree.root().nodes;
    let mass = |i: usize| tree.weights[i] * omega.map_or(T::one(), |o| o[i]);
    let mut out = vec![T::zero(); f.len()];
    let shifts: Vec<[bool; 2]> = if pd == 2 {
        vec![[false, false], [true, false], [false, true], [true, true]]
    } else {
        vec![[false, false], [true, false]]
    };
    for d in 0..=tree.max_depth {
        let per = 1usize << d;
        for sh in &shifts {
            if d == 0 && (sh[0] || sh[1]) {
                continue;
            }
            let mut bins: Vec<Option<usize>> = Vec::with_capacity(nodes.len());
            for &i in nodes {
                let mut idx = 0usize;
                let mut ok = true;
                for a in 0..pd {
                    let side = (tree.domain_hi[a] - tree.domain_lo[a]) / cu(per);
                    let off = if sh[a] { side * c(0.5) } else { T::zero() };
                    let t = ((tree.params[i][a] - tree.domain_lo[a] - off) / side).floor();
                    let last = if sh[a] { per as i64 - 2 } else { per as i64 - 1 };
                    let mut k = t.to_i64().unwrap_or(-1);
                    if !sh[a] && k > last {
                        k = last;
                    }
                    if k < 0 || k > last {
                        ok = false;
                        break;
                    }
                    idx = idx * per + k as usize;
                }
                bins.push(if ok { Some(idx) } else { None });
            }
            let nb = per.pow(pd as u32);
            let mut m = vec![T::zero(); nb];
            let mut s = vec![T::zero(); nb];
            for (&i, b) in nodes.iter().zip(&bins) {
                if let Some(b) = *b {
                    m[b] += mass(i);
                    s[b] += mass(i) * f[i].abs();
                }
            }
            for (&i, b) in nodes.iter().zip(&bins) {
                if let Some(b) = *b {
                    if m[b] > T::zero() {
                        out[i] = out[i].max(s[b] / m[b]);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Parameters of a good-λ check.
#[derive(Clone, Debug, PartialEq)]
pub struct GoodLambdaOptions<T> {
    pub p: T,
    pub q: T,
    /// The level multiplier `A` in `|E(Aλ)| ≤ δ|E(λ)| + |{M f > γλ}|`.
    pub a: T,
    pub gamma: T,
    /// Explicit λ grid; by default `samples` geometric levels from
    /// `avg_{2Q₀}|F|` to `max M(F)`.
    pub lambdas: Option<Vec<T>>,
    pub samples: usize,
}

impl<T: Real> GoodLambdaOptions<T> {
    pub fn new(p: T, q: T) -> Self {
        GoodLambdaOptions {
            p,
            q,
            a: c(2.0),
            gamma: c(0.1),
            lambdas: None,
            samples: 16,
        }
    }
}

/// Level sets and constants of the good-λ argument. `Q₀` is the root box
/// shrunk by one half about its center; the root plays `2Q₀`.
#[derive(Clone, Debug, PartialEq)]
pub struct GoodLambdaReport<T> {
    pub lambdas: Vec<T>,
    /// `|E(λ)|` with `E(λ) = {x ∈ Q₀ : M_{2Q₀}(F)(x) > λ}`.
    pub level_sets: Vec<T>,
    /// `|E(Aλ)|`.
    pub level_sets_a: Vec<T>,
    /// `|{x ∈ Q₀ : M_{2Q₀}(f)(x) > γλ}|`.
    pub f_level_sets: Vec<T>,
    /// `(|E(Aλ)| − |{M f > γλ}|)⁺ / |E(λ)|` per level.
    pub delta: Vec<T>,
    pub max_delta: T,
    /// The `δ` tied to `A` by `A = (2δ)^{−1/q}`.
    pub delta_allowed: T,
    /// `(avg_{Q₀} F^q)^{1/q}`.
    pub lhs: T,
    /// `avg_{2Q₀} |F|`.
    pub f_average: T,
    /// `(avg_{2Q₀} f^q)^{1/q}`.
    pub data_term: T,
    /// Smallest `C` with `lhs ≤ C (f_average + data_term)`.
    pub constant: T,
    /// `lhs / data_term`.
    pub constant_data_only: T,
    pub weighted: bool,
}

/// Empirical check of the good-λ inequality and of the resulting
/// `L^q` bound on the cube tree. With a weight, level sets and the
/// `L^q` averages are measured by `ω dσ`.
pub fn good_lambda_check<T: Real>(
    tree: &SurfaceCubeTree<T>,
    big_f: &[T],
    small_f: &[T],
    opts: &GoodLambdaOptions<T>,
    weight: Option<&Weight<T>>,
) -> Result<GoodLambdaReport<T>> {
    let (p, q) = (opts.p, opts.q);
    if !(T::one() < q && q < p) {
        return Err(Error::Spec(format!("good-λ needs 1 < q < p (q = {q:?}, p = {p:?})")));
    }
    let n = tree.params.len();
    if big_f.len() != n || small_f.len() != n {
        return Err(Error::Dimension("values do not match the tree".into()));
    }
    if big_f.iter().chain(small_f).any(|v| *v < T::zero()) {
        return Err(Error::Validation("F and f must be nonnegative".into()));
    }
    let omega: Option<&[T]> = match weight {
        Some(w) if w.len() != n => return Err(Error::Dimension("weight does not match the tree".into())),
        Some(w) => Some(&w.values),
        None => None,
    };
    let mass = |i: usize| tree.weights[i] * omega.map_or(T::one(), |o| o[i]);
    let outer = &tree.root().nodes;
    let inner = tree.dilation(tree.root(), c(0.5)).nodes;
    if inner.is_empty() {
        return Err(Error::Validation("Q₀ holds no node".into()));
    }
    let mf_big = dyadic_maximal(tree, big_f)?;
    let mf_small = dyadic_maximal(tree, small_f)?;
    let sigma_outer = tree.measure(outer);
    let f_average: T = outer.iter().map(|&i| tree.weights[i] * big_f[i]).sum::<T>() / sigma_outer;

    let lambdas = match &opts.lambdas {
        Some(l) => l.clone(),
        None => {
            let top = inner.iter().map(|&i| mf_big[i]).fold(T::zero(), T::max);
            let lo = if f_average > T::zero() { f_average } else { (top * c(1e-3)).max(T::min_positive_value()) };
            let hi = if top > lo { top } else { lo * c(2.0) };
            let k = opts.samples.max(1);
            (0..k)
                .map(|j| lo * (hi / lo).powf(cu::<T>(j) / cu::<T>((k - 1).max(1))))
                .collect()
        }
    };
    if lambdas.len() < 8 {
        return Err(Error::Spec(format!("good-λ needs at least 8 levels, got {}", lambdas.len())));
    }
    let level = |vals: &[T], t: T| -> T { inner.iter().filter(|&&i| vals[i] > t).map(|&i| mass(i)).sum() };
    let mut level_sets = Vec::new();
    let mut level_sets_a = Vec::new();
    let mut f_level_sets = Vec::new();
    let mut delta = Vec::new();
    for &l in &lambdas {
        let e = level(&mf_big, l);
        let ea = level(&mf_big, opts.a * l);
        let ef = level(&mf_small, opts.gamma * l);
        let d = if e > T::zero() { ((ea - ef) / e).max(T::zero()) } else { T::zero() };
        level_sets.push(e);
        level_sets_a.push(ea);
        f_level_sets.push(ef);
        delta.push(d);
    }
    let max_delta = delta.iter().copied().fold(T::zero(), T::max);
    let m_inner: T = inner.iter().map(|&i| mass(i)).sum();
    let m_outer: T = outer.iter().map(|&i| mass(i)).sum();
    let lhs = (inner.iter().map(|&i| mass(i) * big_f[i].powf(q)).sum::<T>() / m_inner).powf(T::one() / q);
    let data_term = (outer.iter().map(|&i| mass(i) * small_f[i].powf(q)).sum::<T>() / m_outer).powf(T::one() / q);
    let ratio = |num: T, den: T| {
        if num == T::zero() {
            T::zero()
        } else if den == T::zero() {
            T::infinity()
        } else {
            num / den
        }
    };
    Ok(GoodLambdaReport {
        lambdas,
        level_sets,
        level_sets_a,
        f_level_sets,
        delta,
        max_delta,
        delta_allowed: opts.a.powf(-q) / c(2.0),
        lhs,
        f_average,
        data_term,
        constant: ratio(lhs, f_average + data_term),
        constant_data_only: ratio(lhs, data_term),
        weighted: weight.is_some(),
    })
}

/// Normal against tangential boundary derivatives in `L²(dσ/ω)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RellichEquivalence<T> {
    pub normal_norm: T,
    pub tangential_norm: T,
    /// `‖∂u/∂N‖ / ‖∇_t u‖`, `None` when the tangential gradient vanishes.
    pub ratio: Option<T>,
    /// `‖∇_t u‖ / ‖∂u/∂N‖`, `None` when the normal derivative vanishes.
    pub reciprocal: Option<T>,
    /// The tangential gradient vanishes.
    pub degenerate: bool,
}

/// Rellich ratios from boundary gradients of a scalar function.
pub fn rellich_equivalence<T: Real>(mesh: &BoundaryMesh<T>, gradients: &[Vec3<T>], weight: Option<&Weight<T>>) -> Result<RellichEquivalence<T>> {
    if gradients.len() != mesh.len() || weight.is_some_and(|w| w.len() != mesh.len()) {
        return Err(Error::Dimension("gradients or weight do not match the mesh".into()));
    }
    let (mut sn, mut st) = (T::zero(), T::zero());
    for (i, g) in gradients.iter().enumerate() {
        let nr = mesh.normals()[i];
        let dn = dot(*g, nr);
        let t = sub(*g, scale(nr, dn));
        let m = mesh.weights()[i] / weight.map_or(T::one(), |w| w.values[i]);
        sn += m * dn * dn;
        st += m * dot(t, t);
    }
    let (normal_norm, tangential_norm) = (sn.sqrt(), st.sqrt());
    let tiny = c::<T>(1e3) * T::epsilon() * (normal_norm + tangential_norm);
    let degenerate = tangential_norm <= tiny;
    Ok(RellichEquivalence {
        normal_norm,
        tangential_norm,
        ratio: if degenerate { None } else { Some(normal_norm / tangential_norm) },
        reciprocal: if normal_norm <= tiny { None } else { Some(tangential_norm / normal_norm) },
        degenerate,
    })
}

/// [`rellich_equivalence`] of a scalar solution, from its extrapolated
/// boundary gradient.
pub fn rellich_equivalence_of<T: Real>(sol: &Solution<'_, T>, weight: Option<&Weight<T>>) -> Result<RellichEquivalence<T>> {
    if sol.kernel.m() != 1 {
        return Err(Error::Spec("Rellich ratios need a scalar solution".into()));
    }
    let nodes: Vec<usize> = (0..sol.mesh.len()).collect();
    let tr = sol.trace(&nodes, 1)?;
    let grads: Vec<Vec3<T>> = tr.iter().map(|p| p.gradient[0]).collect();
    rellich_equivalence(sol.mesh, &grads, weight)
}
