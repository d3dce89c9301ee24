//! Layer potentials, discrete boundary operators and jump residuals.
//!
//! Sign conventions: `Γ` is the fundamental solution of `−L`, `ν` the
//! outward conormal, `+` the interior side. For `u = S(g)` the conormal
//! traces are `∂u_±/∂ν = (±½I + K)g`; for `v = D(g)` the traces are
//! `v_± = (∓½I + K*)g`, so `K*` is the double-layer principal value with
//! kernel `∂_{ν(y)} Γ(y − x)` and `K` its adjoint.

mod biharmonic;
mod stencil;

pub use biharmonic::*;
pub use stencil::TangentialStencil;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{BoundaryMesh, Surface};
use crate::kernels::{conormal_of_field, Family, KernelEval, KernelSpec};
use crate::linalg::{wnorm, Matrix};
use crate::scalar::{c, dist, dot, sub, Real, Vec3};
use crate::solver::rigid_motion_basis;

/// Nodal values of an `m`-component boundary density, node-major
/// (`values[i*m + k]`).
#[derive(Clone, Debug, PartialEq)]
pub struct DensityField<T> {
    pub m: usize,
    pub values: Vec<T>,
}

impl<T: Real> DensityField<T> {
    pub fn new(mesh: &BoundaryMesh<T>, m: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != mesh.len() * m {
            return Err(Error::Dimension(format!(
                "density has {} values, mesh needs {}×{}",
                values.len(),
                mesh.len(),
                m
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite density value".into()));
        }
        Ok(DensityField { m, values })
    }

    pub fn zeros(mesh: &BoundaryMesh<T>, m: usize) -> Self {
        DensityField { m, values: vec![T::zero(); mesh.len() * m] }
    }

    /// Samples `f` at every node; `f` receives the node and its normal.
    pub fn from_fn(mesh: &BoundaryMesh<T>, m: usize, f: impl Fn(Vec3<T>, Vec3<T>) -> Vec<T>) -> Self {
        let mut values = Vec::with_capacity(mesh.len() * m);
        for (x, nn) in mesh.nodes().iter().zip(mesh.normals()) {
            let v = f(*x, *nn);
            values.extend_from_slice(&v[..m]);
        }
        DensityField { m, values }
    }

    pub fn node(&self, i: usize) -> &[T] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    /// Component `k` as a nodal scalar field.
    pub fn component(&self, k: usize) -> Vec<T> {
        self.values.iter().skip(k).step_by(self.m).copied().collect()
    }

    /// `L²(dσ)` norm by nodal quadrature.
    pub fn norm(&self, mesh: &BoundaryMesh<T>) -> T {
        wnorm(&self.values, &expand_weights(mesh.weights(), self.m))
    }
}

/// Quadrature weights repeated once per component.
pub fn expand_weights<T: Real>(w: &[T], m: usize) -> Vec<T> {
    w.iter().flat_map(|&x| std::iter::repeat(x).take(m)).collect()
}

/// Adaptive near-field quadrature: a panel is split while the target lies
/// within `eta` panel radii, at most `max_depth` times.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrature<T> {
    pub eta: T,
    pub max_depth: usize,
    /// Linear reconstruction of the density inside refined panels when a
    /// tangential stencil is available.
    pub linear: bool,
}

impl<T: Real> Default for Quadrature<T> {
    fn default() -> Self {
        Quadrature {
            eta: c(3.0),
            max_depth: 6,
            linear: true,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Sample<T> {
    pub panel: usize,
    pub y: Vec3<T>,
    pub n: Vec3<T>,
    pub w: T,
}

/// Quadrature samples of the whole boundary seen from `x`, panel `skip`
/// excluded. Far panels contribute their node.
pub(crate) fn gather_samples<T: Real>(mesh: &BoundaryMesh<T>, x: Vec3<T>, q: &Quadrature<T>, skip: Option<usize>) -> Vec<Sample<T>> {
    let nodes = mesh.nodes();
    let normals = mesh.normals();
    let weights = mesh.weights();
    let mut out = Vec::with_capacity(nodes.len());
    for j in 0..nodes.len() {
        if Some(j) == skip {
            continue;
        }
        let shape = mesh.panel_shape(j);
        if dist(x, nodes[j]) >= q.eta * shape.radius() || q.max_depth == 0 {
            out.push(Sample {
                panel: j,
                y: nodes[j],
                n: normals[j],
                w: weights[j],
            });
            continue;
        }
        let mut stack = vec![(shape, 0usize)];
        while let Some((s, depth)) = stack.pop() {
            let qp = s.quad_point();
            if depth >= q.max_depth || dist(x, qp.x) >= q.eta * s.radius() {
                out.push(Sample {
                    panel: j,
                    y: qp.x,
                    n: qp.normal,
                    w: qp.weight,
                });
            } else {
                for ch in s.children().into_iter().rev() {
                    stack.push((ch, depth + 1));
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    Single,
    Double,
}

/// Value, gradient `[k][i]` and Hessian `[k][i][j]` of an `m`-vector field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation<T> {
    pub value: [T; 3],
    pub gradient: [[T; 3]; 3],
    pub hessian: [[[T; 3]; 3]; 3],
}

impl<T: Real> Evaluation<T> {
    pub fn zero() -> Self {
        Evaluation {
            value: [T::zero(); 3],
            gradient: [[T::zero(); 3]; 3],
            hessian: [[[T::zero(); 3]; 3]; 3],
        }
    }

    /// Gradient flattened as `grad[k*n + i]`.
    pub fn gradient_flat(&self, m: usize, n: usize) -> Vec<T> {
        let mut g = Vec::with_capacity(m * n);
        for k in 0..m {
            g.extend_from_slice(&self.gradient[k][..n]);
        }
        g
    }
}

/// Off-boundary evaluator for `S(g)` or `D(g)` (Laplace and Lamé families).
#[derive(Clone, Debug)]
pub struct LayerEvaluator<'a, T> {
    mesh: &'a BoundaryMesh<T>,
    kev: KernelEval<T>,
    layer: Layer,
    m: usize,
    density: Vec<T>,
    node_grad: Option<Vec<Vec3<T>>>,
    quad: Quadrature<T>,
}

impl<'a, T: Real> LayerEvaluator<'a, T> {
    pub fn new(mesh: &'a BoundaryMesh<T>, spec: &KernelSpec<T>, layer: Layer, density: &DensityField<T>) -> Result<Self> {
        Self::with_quadrature(mesh, spec, layer, density, Quadrature::default())
    }

    pub fn with_quadrature(
        mesh: &'a BoundaryMesh<T>,
        spec: &KernelSpec<T>,
        layer: Layer,
        density: &DensityField<T>,
        quad: Quadrature<T>,
    ) -> Result<Self> {
        if let Family::Biharmonic { .. } = spec.family {
            return Err(Error::Spec(
                "biharmonic layer potentials take (F, g) or (Λ, f) pairs; use BiharmonicDoubleLayer / BiharmonicSingleLayer".into(),
            ));
        }
        if spec.dim != mesh.dim() {
            return Err(Error::Dimension(format!("kernel dimension {} on a {}-d mesh", spec.dim, mesh.dim())));
        }
        let m = spec.m();
        if density.m != m || density.values.len() != mesh.len() * m {
            return Err(Error::Dimension("density does not match mesh and kernel".into()));
        }
        let node_grad = if quad.linear {
            TangentialStencil::new(mesh).ok().map(|st| {
                let comps: Vec<Vec<Vec3<T>>> = (0..m).map(|k| st.gradient(&density.component(k))).collect();
                (0..mesh.len() * m).map(|ik| comps[ik % m][ik / m]).collect()
            })
        } else {
            None
        };
        Ok(LayerEvaluator {
            mesh,
            kev: KernelEval::new(spec),
            layer,
            m,
            density: density.values.clone(),
            node_grad,
            quad,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Value (and derivatives up to `order ≤ 2`) at an off-boundary point.
    pub fn eval(&self, x: Vec3<T>, order: usize) -> Result<Evaluation<T>> {
        let mesh = self.mesh;
        let n = mesh.dim();
        let m = self.m;
        let d = mesh.distance(x);
        let h = mesh.h();
        if !(d > h * c(1e-9)) {
            return Err(Error::EvaluationPoint(d.to_f64().unwrap_or(f64::NAN)));
        }
        if d < h * c(2.0) {
            log::debug!("evaluation {d:?} from the boundary, below 2h");
        }
        let mut shift = [T::zero(); 3];
        let mut interior = false;
        if self.layer == Layer::Double && mesh.is_closed() && d < h * c(4.0) {
            let p = mesh.nearest_node(x);
            shift[..m].copy_from_slice(&self.density[p * m..(p + 1) * m]);
            interior = mesh.is_interior(x);
        }
        let samples = gather_samples(mesh, x, &self.quad, None);
        let nodes = mesh.nodes();
        let mut out = Evaluation::zero();
        let mut g = [T::zero(); 3];
        for s in &samples {
            let j = s.panel;
            for k in 0..m {
                g[k] = self.density[j * m + k] - shift[k];
                if let Some(ng) = &self.node_grad {
                    g[k] += dot(ng[j * m + k], sub(s.y, nodes[j]));
                }
            }
            match self.layer {
                Layer::Single => {
                    let z = sub(x, s.y);
                    let v = self.kev.value(z);
                    for k in 0..m {
                        for l in 0..m {
                            out.value[k] += s.w * v[k][l] * g[l];
                        }
                    }
                    if order >= 1 {
                        let gr = self.kev.gradient(z);
                        for k in 0..m {
                            for l in 0..m {
                                for i in 0..n {
                                    out.gradient[k][i] += s.w * gr[k][l][i] * g[l];
                                }
                            }
                        }
                    }
                    if order >= 2 {
                        let hs = self.kev.hessian(z);
                        for k in 0..m {
                            for l in 0..m {
                                for i in 0..n {
                                    for jj in 0..n {
                                        out.hessian[k][i][jj] += s.w * hs[k][l][i][jj] * g[l];
                                    }
                                }
                            }
                        }
                    }
                }
                Layer::Double => {
                    let z = sub(s.y, x);
                    let v = self.kev.conormal(z, s.n);
                    for k in 0..m {
                        for l in 0..m {
                            out.value[k] += s.w * v[k][l] * g[l];
                        }
                    }
                    if order >= 1 {
                        for i in 0..n {
                            let dv = self.kev.conormal_derivative(z, s.n, &[i]);
                            for k in 0..m {
                                for l in 0..m {
                                    out.gradient[k][i] -= s.w * dv[k][l] * g[l];
                                }
                            }
                        }
                    }
                    if order >= 2 {
                        for i in 0..n {
                            for jj in i..n {
                                let dv = self.kev.conormal_derivative(z, s.n, &[i, jj]);
                                for k in 0..m {
                                    let mut acc = T::zero();
                                    for l in 0..m {
                                        acc += s.w * dv[k][l] * g[l];
                                    }
                                    out.hessian[k][i][jj] += acc;
                                    if jj != i {
                                        out.hessian[k][jj][i] += acc;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        if interior {
            for k in 0..m {
                out.value[k] -= shift[k];
            }
        }
        Ok(out)
    }

    /// [`LayerEvaluator::eval`] over many points in parallel.
    pub fn eval_many(&self, xs: &[Vec3<T>], order: usize) -> Result<Vec<Evaluation<T>>> {
        xs.par_iter().map(|&x| self.eval(x, order)).collect()
    }

    /// Conormal derivative of the evaluated field with respect to `normal`.
    pub fn conormal_at(&self, x: Vec3<T>, normal: Vec3<T>) -> Result<Vec<T>> {
        let e = self.eval(x, 1)?;
        let n = self.mesh.dim();
        Ok(conormal_of_field(&self.kev.spec, &e.gradient_flat(self.m, n), &normal[..n]))
    }
}

/// `S(g)(x) = Σ_j w_j Γ(x − y_j) g(y_j)` with near-field refinement.
pub fn eval_single_layer<T: Real>(mesh: &BoundaryMesh<T>, spec: &KernelSpec<T>, density: &DensityField<T>, x: Vec3<T>) -> Result<Vec<T>> {
    let e = LayerEvaluator::new(mesh, spec, Layer::Single, density)?.eval(x, 0)?;
    Ok(e.value[..spec.m()].to_vec())
}

/// `D(g)(x)`, the conormal kernel integrated against the density.
pub fn eval_double_layer<T: Real>(mesh: &BoundaryMesh<T>, spec: &KernelSpec<T>, density: &DensityField<T>, x: Vec3<T>) -> Result<Vec<T>> {
    let e = LayerEvaluator::new(mesh, spec, Layer::Double, density)?.eval(x, 0)?;
    Ok(e.value[..spec.m()].to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    /// Double-layer principal value `K*`.
    KStar,
    /// Its adjoint `K`, the conormal trace of the single layer.
    K,
    KStarRho,
    KRho,
}

/// What the calibration step enforced and how far the raw quadrature was
/// from satisfying it.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationReport<T> {
    pub enforced: Vec<String>,
    /// Relative violation of the enforced identities before calibration.
    pub residual_before: T,
    /// Same after calibration.
    pub residual_after: T,
    /// Largest diagonal entry produced by calibration; `O(h)` for a correct
    /// kernel sign, of order one otherwise.
    pub max_diagonal_correction: T,
    pub two_sided: bool,
    pub sign_flipped: bool,
    /// How distribution-valued outputs are represented, when relevant.
    pub pairing: Option<String>,
}

/// Principal-value part of a boundary operator together with the identity
/// coefficient supplied by the caller.
#[derive(Clone, Debug)]
pub struct BoundaryOperator<T> {
    pub kind: OperatorKind,
    pub spec: KernelSpec<T>,
    /// Identity coefficient `κ`; the principal-value matrix never includes it.
    pub kappa: T,
    pub matrix: Matrix<T>,
    /// Diagonal metric of the discrete inner product (one entry per unknown).
    pub weights: Vec<T>,
    pub m: usize,
    pub calibration: CalibrationReport<T>,
}

impl<T: Real> BoundaryOperator<T> {
    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn with_kappa(mut self, kappa: T) -> Self {
        self.kappa = kappa;
        self
    }

    /// `κI + PV` as a dense matrix.
    pub fn full_matrix(&self) -> Matrix<T> {
        let mut a = self.matrix.clone();
        a.shift_diagonal(self.kappa);
        a
    }

    /// `(κI + PV) v`.
    pub fn apply(&self, v: &[T]) -> Vec<T> {
        let mut y = self.matrix.matvec(v);
        for (yi, &vi) in y.iter_mut().zip(v) {
            *yi += self.kappa * vi;
        }
        y
    }

    /// Adjoint in the metric: `W⁻¹ PVᵀ W`.
    pub fn adjoint(&self, kind: OperatorKind) -> BoundaryOperator<T> {
        let w = &self.weights;
        let n = self.dim();
        let matrix = Matrix::from_fn(n, n, |a, b| self.matrix.get(b, a) * w[b] / w[a]);
        BoundaryOperator {
            kind,
            spec: self.spec.clone(),
            kappa: self.kappa,
            matrix,
            weights: self.weights.clone(),
            m: self.m,
            calibration: self.calibration.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AssemblyOptions<T> {
    pub quadrature: Quadrature<T>,
    /// Negates the kernel before calibration (test hook).
    pub flip_sign: bool,
    /// Two-sided deflation; `None` chooses it on sphere meshes.
    pub two_sided: Option<bool>,
}

impl<T: Real> Default for AssemblyOptions<T> {
    fn default() -> Self {
        AssemblyOptions {
            quadrature: Quadrature {
                eta: c(3.0),
                max_depth: 4,
                linear: false,
            },
            flip_sign: false,
            two_sided: None,
        }
    }
}

/// Assembles `K*` (double-layer principal value) for the Laplace or Lamé
/// family.
///
/// Off-diagonal blocks come from refined quadrature of the conormal kernel.
/// Each diagonal block is set so that translations are reproduced exactly
/// (`K*1 = −½` for Laplace), and the remaining exact set (rigid motions for
/// Lamé) is enforced by deflation.
pub fn assemble_kstar<T: Real>(mesh: &BoundaryMesh<T>, spec: &KernelSpec<T>, opts: &AssemblyOptions<T>) -> Result<BoundaryOperator<T>> {
    if !mesh.is_closed() {
        return Err(Error::Geometry("boundary operators need a closed mesh".into()));
    }
    if let Family::Biharmonic { .. } = spec.family {
        return Err(Error::Spec("use assemble_biharmonic_traces for the biharmonic family".into()));
    }
    if spec.dim != mesh.dim() {
        return Err(Error::Dimension(format!("kernel dimension {} on a {}-d mesh", spec.dim, mesh.dim())));
    }
    let m = spec.m();
    let nn = mesh.len();
    let size = nn * m;
    let kev = KernelEval::new(spec);
    let sign = if opts.flip_sign { -T::one() } else { T::one() };
    let half = c::<T>(0.5);
    let nodes = mesh.nodes();
    let mut data = vec![T::zero(); size * size];
    let mut max_diag = T::zero();
    let diag_max: Vec<T> = data
        .par_chunks_mut(size * m)
        .enumerate()
        .map(|(i, rows)| {
            let x = nodes[i];
            let samples = gather_samples(mesh, x, &opts.quadrature, Some(i));
            for s in &samples {
                let kk = kev.conormal(sub(s.y, x), s.n);
                for k in 0..m {
                    for l in 0..m {
                        rows[k * size + s.panel * m + l] += sign * s.w * kk[k][l];
                    }
                }
            }
            let mut dmax = T::zero();
            for k in 0..m {
                for l in 0..m {
                    let mut sum = T::zero();
                    for j in 0..nn {
                        if j != i {
                            sum += rows[k * size + j * m + l];
                        }
                    }
                    let v = if k == l { -half } else { T::zero() } - sum;
                    rows[k * size + i * m + l] = v;
                    dmax = dmax.max(v.abs());
                }
            }
            dmax
        })
        .collect();
    for d in diag_max {
        max_diag = max_diag.max(d);
    }
    let mut matrix = Matrix::from_vec(size, size, data);
    let weights = expand_weights(mesh.weights(), m);
    let exact: Vec<Vec<T>> = match spec.family {
        Family::Laplace => vec![vec![T::one() / mesh.total_measure().sqrt(); nn]],
        _ => rigid_motion_basis(mesh, spec.dim)?,
    };
    let two_sided = opts.two_sided.unwrap_or(matches!(mesh.surface(), Surface::Sphere { .. }));
    let residual_before = exactness_residual(&matrix, &exact, &weights, two_sided);
    let needs_deflation = two_sided || !matches!(spec.family, Family::Laplace);
    if needs_deflation {
        deflate(&mut matrix, &exact, &weights, -half, two_sided);
        if let Family::Laplace = spec.family {
            for i in 0..nn {
                let row = matrix.row(i);
                let mut sum = T::zero();
                for (j, &v) in row.iter().enumerate() {
                    if j != i {
                        sum += v;
                    }
                }
                matrix.set(i, i, -half - sum);
            }
        }
    }
    let residual_after = exactness_residual(&matrix, &exact, &weights, two_sided);
    let mut enforced = vec![match spec.family {
        Family::Laplace => "K*·1 = -1/2 (row sums)".to_string(),
        _ => "K*·b = -b/2 for translations b (diagonal blocks)".to_string(),
    }];
    if !matches!(spec.family, Family::Laplace) {
        enforced.push("K*·ψ = -ψ/2 on rigid motions (deflation)".into());
    }
    if two_sided {
        enforced.push("K·e = -e/2 on the same set (left deflation)".into());
    }
    Ok(BoundaryOperator {
        kind: OperatorKind::KStar,
        spec: spec.clone(),
        kappa: T::zero(),
        matrix,
        weights,
        m,
        calibration: CalibrationReport {
            enforced,
            residual_before,
            residual_after,
            max_diagonal_correction: max_diag,
            two_sided,
            sign_flipped: opts.flip_sign,
            pairing: None,
        },
    })
}

/// Assembles `K = W⁻¹ (K*)ᵀ W`, the conormal trace operator of the single
/// layer.
pub fn assemble_k<T: Real>(mesh: &BoundaryMesh<T>, spec: &KernelSpec<T>, opts: &AssemblyOptions<T>) -> Result<BoundaryOperator<T>> {
    Ok(assemble_kstar(mesh, spec, opts)?.adjoint(OperatorKind::K))
}

/// Largest relative violation of `A e = μ e` (and of `Aᵀ W e = μ W e` when
/// `left`) over a `W`-orthonormal exact set, with `μ = −½`.
fn exactness_residual<T: Real>(a: &Matrix<T>, exact: &[Vec<T>], w: &[T], left: bool) -> T {
    let half = c::<T>(0.5);
    let mut worst = T::zero();
    for e in exact {
        let mut r = a.matvec(e);
        for (ri, &ei) in r.iter_mut().zip(e) {
            *ri += half * ei;
        }
        worst = worst.max(wnorm(&r, w) / wnorm(e, w));
        if left {
            let we: Vec<T> = e.iter().zip(w).map(|(&x, &y)| x * y).collect();
            let mut r = a.tmatvec(&we);
            for (ri, (&ei, &wi)) in r.iter_mut().zip(e.iter().zip(w)) {
                *ri = *ri / wi + half * ei;
            }
            worst = worst.max(wnorm(&r, w) / wnorm(e, w));
        }
    }
    worst
}

/// Replaces `A` by `A(I−P) + μP` (one-sided) or `(I−P)A(I−P) + μP`
/// (two-sided) with `P = B Bᵀ W` for a `W`-orthonormal set `B`.
pub(crate) fn deflate<T: Real>(a: &mut Matrix<T>, basis: &[Vec<T>], w: &[T], mu: T, two_sided: bool) {
    let n = a.rows();
    let r = basis.len();
    let wb: Vec<Vec<T>> = basis.iter().map(|b| b.iter().zip(w).map(|(&x, &y)| x * y).collect()).collect();
    let ab: Vec<Vec<T>> = basis.iter().map(|b| a.matvec(b)).collect();
    a.data_mut().par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for k in 0..r {
            let s = ab[k][i];
            for (v, &q) in row.iter_mut().zip(&wb[k]) {
                *v -= s * q;
            }
        }
    });
    if two_sided {
        // rows of BᵀW A(I−P)
        let bwa: Vec<Vec<T>> = wb.iter().map(|q| a.tmatvec(q)).collect();
        a.data_mut().par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for k in 0..r {
                let s = basis[k][i];
                for (v, &q) in row.iter_mut().zip(&bwa[k]) {
                    *v -= s * q;
                }
            }
        });
    }
    a.data_mut().par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for k in 0..r {
            let s = mu * basis[k][i];
            for (v, &q) in row.iter_mut().zip(&wb[k]) {
                *v += s * q;
            }
        }
    });
}

/// Extrapolated jump residuals, each relative to the weighted `‖g‖`.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpReport<T> {
    /// `‖(v_− − v_+) − g‖`, double layer.
    pub double_layer: T,
    /// `‖(∂u_+/∂ν − ∂u_−/∂ν) − g‖`, single layer.
    pub single_layer: T,
    /// `‖∂v_+/∂ν − ∂v_−/∂ν‖`, double layer.
    pub conormal_continuity: T,
    pub density_norm: T,
    pub nodes_used: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpOptions<T> {
    /// First sample distance as a multiple of `h`; the others are `/2`, `/4`.
    pub d0_factor: T,
    /// Use every `stride`-th node.
    pub stride: usize,
    pub quadrature: Quadrature<T>,
}

impl<T: Real> Default for JumpOptions<T> {
    fn default() -> Self {
        JumpOptions {
            d0_factor: c(2.0),
            stride: 1,
            quadrature: Quadrature::default(),
        }
    }
}

/// Boundary limit from three samples at `d`, `d/2`, `d/4` (quadratic
/// Richardson extrapolation).
pub fn richardson<T: Real>(v_d: T, v_half: T, v_quarter: T) -> T {
    (c::<T>(8.0) * v_quarter - c::<T>(6.0) * v_half + v_d) / c(3.0)
}

/// Extrapolates one-sided limits of `S(g)` and `D(g)` along the normal at
/// each node and compares them with the jump relations.
pub fn trace_jump_residuals<T: Real>(
    mesh: &BoundaryMesh<T>,
    spec: &KernelSpec<T>,
    density: &DensityField<T>,
    opts: &JumpOptions<T>,
) -> Result<JumpReport<T>> {
    let n = mesh.dim();
    let m = spec.m();
    let gnorm = density.norm(mesh);
    let used: Vec<usize> = (0..mesh.len()).step_by(opts.stride.max(1)).collect();
    if gnorm == T::zero() {
        return Ok(JumpReport {
            double_layer: T::zero(),
            single_layer: T::zero(),
            conormal_continuity: T::zero(),
            density_norm: T::zero(),
            nodes_used: used.len(),
        });
    }
    let sl = LayerEvaluator::with_quadrature(mesh, spec, Layer::Single, density, opts.quadrature)?;
    let dl = LayerEvaluator::with_quadrature(mesh, spec, Layer::Double, density, opts.quadrature)?;
    let d0 = mesh.h() * opts.d0_factor;
    let per_node: Vec<Result<[Vec<T>; 3]>> = used
        .par_iter()
        .map(|&p| {
            let x = mesh.nodes()[p];
            let nrm = mesh.normals()[p];
            // [side][distance]: side 0 interior (+), 1 exterior (−)
            let mut dval = [[[T::zero(); 3]; 3]; 2];
            let mut dcon = [[vec![], vec![], vec![]], [vec![], vec![], vec![]]];
            let mut scon = [[vec![], vec![], vec![]], [vec![], vec![], vec![]]];
            for (side, sgn) in [(0usize, -T::one()), (1, T::one())] {
                for (q, f) in [T::one(), c(0.5), c(0.25)].into_iter().enumerate() {
                    let mut y = x;
                    for a in 0..n {
                        y[a] += sgn * d0 * f * nrm[a];
                    }
                    let ed = dl.eval(y, 1)?;
                    dval[side][q] = ed.value;
                    dcon[side][q] = conormal_of_field(spec, &ed.gradient_flat(m, n), &nrm[..n]);
                    let es = sl.eval(y, 1)?;
                    scon[side][q] = conormal_of_field(spec, &es.gradient_flat(m, n), &nrm[..n]);
                }
            }
            let g = density.node(p);
            let mut r = [vec![T::zero(); m], vec![T::zero(); m], vec![T::zero(); m]];
            for k in 0..m {
                let lim = |a: &[[T; 3]; 3], k: usize| richardson(a[0][k], a[1][k], a[2][k]);
                let limv = |a: &[Vec<T>; 3], k: usize| richardson(a[0][k], a[1][k], a[2][k]);
                r[0][k] = lim(&dval[1], k) - lim(&dval[0], k) - g[k];
                r[1][k] = limv(&scon[0], k) - limv(&scon[1], k) - g[k];
                r[2][k] = limv(&dcon[0], k) - limv(&dcon[1], k);
            }
            Ok(r)
        })
        .collect();
    let w = mesh.weights();
    let mut sums = [T::zero(); 3];
    let mut gsum = T::zero();
    for (idx, res) in used.iter().zip(per_node) {
        let r = res?;
        for t in 0..3 {
            for v in &r[t] {
                sums[t] += w[*idx] * *v * *v;
            }
        }
        for v in density.node(*idx) {
            gsum += w[*idx] * *v * *v;
        }
    }
    let gs = gsum.sqrt();
    Ok(JumpReport {
        double_layer: sums[0].sqrt() / gs,
        single_layer: sums[1].sqrt() / gs,
        conormal_continuity: sums[2].sqrt() / gs,
        density_norm: gnorm,
        nodes_used: used.len(),
    })
}

