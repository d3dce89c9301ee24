//! Compatibility subspaces, numerical kernels and the dense second-kind
//! solve.

use crate::error::{Error, Result};
use crate::geometry::BoundaryMesh;
use crate::linalg::{condition_estimate, dot_slices, orthonormalize, weighted_nullspace, wnorm, Lu, Matrix, NullSpace};
use crate::potentials::{affine_pairs, BoundaryOperator};
use crate::scalar::{c, Real};

/// Nodal traces (node-major, `n` components) of the rigid motions `Ax + b`:
/// `n` translations followed by `n(n−1)/2` rotations, not normalized.
pub fn rigid_motion_traces<T: Real>(mesh: &BoundaryMesh<T>, n: usize) -> Vec<Vec<T>> {
    let nn = mesh.len();
    let mut out = Vec::new();
    for k in 0..n {
        let mut v = vec![T::zero(); nn * n];
        for i in 0..nn {
            v[i * n + k] = T::one();
        }
        out.push(v);
    }
    for a in 0..n {
        for b in a + 1..n {
            let mut v = vec![T::zero(); nn * n];
            for (i, x) in mesh.nodes().iter().enumerate() {
                v[i * n + a] = -x[b];
                v[i * n + b] = x[a];
            }
            out.push(v);
        }
    }
    out
}

/// Rigid-motion traces orthonormalized in the quadrature inner product.
pub fn rigid_motion_basis<T: Real>(mesh: &BoundaryMesh<T>, n: usize) -> Result<Vec<Vec<T>>> {
    if !(2..=3).contains(&n) || n != mesh.dim() {
        return Err(Error::Dimension(format!("rigid motions need n = mesh dimension ∈ {{2, 3}}, got {n}")));
    }
    let w = crate::potentials::expand_weights(mesh.weights(), n);
    let raw = rigid_motion_traces(mesh, n);
    let (basis, dropped) = orthonormalize(&raw, &w, c(1e-8));
    if dropped > 0 {
        return Err(Error::NumericalRank(format!("{dropped} rigid motions are degenerate on this mesh")));
    }
    Ok(basis)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubspaceTag {
    /// `∫ f dσ = 0` (componentwise for systems).
    MeanZero,
    /// `∫ f·ψ dσ = 0` for every rigid motion `ψ`.
    PsiOrthogonal,
    /// Orthogonal to the kernel of `½I + K` (dimension `m`).
    XspanKernel,
    /// Orthogonal to the kernel of `½I + K` for elastostatics
    /// (dimension `n(n+1)/2`).
    Tspace,
    /// `Λ(1) = 0`, `Λ(x_j) = ∫ f N_j dσ`.
    BiharmonicX,
    /// Annihilated by the affine equilibrium distributions.
    BiharmonicZ,
}

/// A closed subspace `{v : c_k · v = 0}` described by constraint vectors,
/// with the diagonal metric used for projections.
#[derive(Clone, Debug)]
pub struct SubspaceSpec<T> {
    pub tag: SubspaceTag,
    /// Constraint vectors `c_k` (plain dot product).
    pub constraints: Vec<Vec<T>>,
    /// Diagonal metric `M`; projections are `M`-orthogonal.
    pub metric: Vec<T>,
    /// Generating fields (e.g. kernel basis) the constraints come from.
    pub basis: Vec<Vec<T>>,
}

impl<T: Real> SubspaceSpec<T> {
    fn from_basis(tag: SubspaceTag, basis: Vec<Vec<T>>, pairing: &[T], metric: Vec<T>) -> Self {
        let constraints = basis
            .iter()
            .map(|b| b.iter().zip(pairing).map(|(&x, &w)| x * w).collect())
            .collect();
        SubspaceSpec {
            tag,
            constraints,
            metric,
            basis,
        }
    }

    pub fn mean_zero(mesh: &BoundaryMesh<T>, m: usize) -> Self {
        let w = crate::potentials::expand_weights(mesh.weights(), m);
        let basis = (0..m)
            .map(|k| {
                let mut v = vec![T::zero(); mesh.len() * m];
                for i in 0..mesh.len() {
                    v[i * m + k] = T::one();
                }
                v
            })
            .collect();
        Self::from_basis(SubspaceTag::MeanZero, basis, &w, w.clone())
    }

    pub fn psi_orthogonal(mesh: &BoundaryMesh<T>) -> Result<Self> {
        let n = mesh.dim();
        let w = crate::potentials::expand_weights(mesh.weights(), n);
        let basis = rigid_motion_basis(mesh, n)?;
        Ok(Self::from_basis(SubspaceTag::PsiOrthogonal, basis, &w, w.clone()))
    }

    /// Orthogonal complement of `Ker(½I + K)`; `op` is the `K` operator.
    pub fn xspan_kernel(op: &BoundaryOperator<T>, tol: T) -> Result<Self> {
        let ns = nullspace_basis(&op.clone().with_kappa(c(0.5)), tol)?;
        if ns.dim() != op.m {
            log::warn!("Ker(I/2 + K) has dimension {}, expected {}", ns.dim(), op.m);
        }
        Ok(Self::from_basis(SubspaceTag::XspanKernel, ns.basis, &op.weights, op.weights.clone()))
    }

    /// `T^p`: orthogonal complement of `Ker(½I + K)` for elastostatics.
    pub fn tspace(op: &BoundaryOperator<T>, tol: T) -> Result<Self> {
        let mut s = Self::xspan_kernel(op, tol)?;
        s.tag = SubspaceTag::Tspace;
        Ok(s)
    }

    /// `X^p` for stacked `[λ; f]`: annihilator of the affine pairs.
    pub fn biharmonic_x(mesh: &BoundaryMesh<T>) -> Self {
        let w = mesh.weights();
        let nn = mesh.len();
        let pairing: Vec<T> = std::iter::repeat(T::one()).take(nn).chain(w.iter().copied()).collect();
        let metric: Vec<T> = w.iter().map(|&x| T::one() / x).chain(w.iter().copied()).collect();
        Self::from_basis(SubspaceTag::BiharmonicX, affine_pairs(mesh), &pairing, metric)
    }

    /// `Z^p` for stacked `[F; g]`: annihilated by the kernel of
    /// `−½I + K_ρ`, computed from the assembled `K_ρ`.
    pub fn biharmonic_z(k_rho: &BoundaryOperator<T>, tol: T) -> Result<Self> {
        let ns = nullspace_basis(&k_rho.clone().with_kappa(c(-0.5)), tol)?;
        let nn = k_rho.dim() / 2;
        let w = &k_rho.weights[nn..];
        let metric: Vec<T> = w.iter().chain(w.iter()).copied().collect();
        Ok(Self::from_basis(SubspaceTag::BiharmonicZ, ns.basis, &k_rho.weights, metric))
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    /// Values `c_k · v` scaled by `‖c_k‖_{M⁻¹}`, so that they compare with
    /// `‖v‖_M`.
    pub fn residuals(&self, v: &[T]) -> Vec<T> {
        self.constraints
            .iter()
            .map(|ck| {
                let s: T = ck.iter().zip(&self.metric).map(|(&a, &m)| a * a / m).sum();
                dot_slices(ck, v) / s.sqrt()
            })
            .collect()
    }

    /// Raw functional values `c_k · v`.
    pub fn functionals(&self, v: &[T]) -> Vec<T> {
        self.constraints.iter().map(|ck| dot_slices(ck, v)).collect()
    }

    pub fn metric_norm(&self, v: &[T]) -> T {
        wnorm(v, &self.metric)
    }
}

/// `M`-orthogonal projection onto the subspace.
pub fn compatibility_project<T: Real>(data: &[T], subspace: &SubspaceSpec<T>) -> Result<Vec<T>> {
    let r = subspace.len();
    if r == 0 {
        return Ok(data.to_vec());
    }
    let minv_c: Vec<Vec<T>> = subspace
        .constraints
        .iter()
        .map(|ck| ck.iter().zip(&subspace.metric).map(|(&a, &m)| a / m).collect())
        .collect();
    let g = Matrix::from_fn(r, r, |i, j| dot_slices(&subspace.constraints[i], &minv_c[j]));
    let diag_max = (0..r).fold(T::zero(), |a, i| a.max(g.get(i, i)));
    let lu = Lu::factor(g.clone()).map_err(|_| Error::NumericalRank("degenerate subspace basis".into()))?;
    if lu.pivot_ratio() < c(1e-14) || diag_max == T::zero() {
        return Err(Error::NumericalRank("degenerate subspace basis".into()));
    }
    let rhs = subspace.functionals(data);
    let coef = lu.solve(&rhs);
    let mut out = data.to_vec();
    for (k, mc) in minv_c.iter().enumerate() {
        for (o, &v) in out.iter_mut().zip(mc) {
            *o -= coef[k] * v;
        }
    }
    Ok(out)
}

/// Right kernel of `κI + PV` in the operator's metric: singular vectors
/// below `tol · σ_max`.
pub fn nullspace_basis<T: Real>(op: &BoundaryOperator<T>, tol: T) -> Result<NullSpace<T>> {
    let block = 12.min(op.dim());
    let ns = weighted_nullspace(&op.full_matrix(), &op.weights, tol, block)?;
    if ns.ambiguous {
        log::warn!(
            "ambiguous kernel: {} singular values below tol, spectrum gap under 10×tol",
            ns.dim()
        );
    }
    Ok(ns)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions<T> {
    /// Relative kernel threshold.
    pub kernel_tol: T,
    /// Relative compatibility tolerance.
    pub compat_tol: T,
    /// Skip kernel detection (operator known to be invertible).
    pub assume_invertible: bool,
}

impl<T: Real> Default for SolveOptions<T> {
    fn default() -> Self {
        SolveOptions {
            kernel_tol: c(1e-8),
            compat_tol: c(1e-6),
            assume_invertible: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport<T> {
    pub density: Vec<T>,
    /// `‖(κI + PV)g − f‖₂`, recomputed after the solve.
    pub residual: T,
    /// The same relative to `‖f‖₂` (or absolute when `f = 0`).
    pub relative_residual: T,
    /// Scaled constraint values of the right-hand side.
    pub constraint_residuals: Vec<T>,
    /// 1-norm condition estimate of the (bordered) matrix.
    pub condition_estimate: T,
    pub null_dim: usize,
    pub ambiguous_kernel: bool,
    /// Kernel basis used for the bordering, `W`-orthonormal.
    pub kernel: Vec<Vec<T>>,
}

/// Solves `(κI + PV) g = f`.
///
/// When the operator has a kernel `Z`, the bordered system
/// `[A Z; ZᵀW 0][g; μ] = [f; 0]` is solved so that `g ⟂_W Z`. The
/// right-hand side must satisfy `constraints` (the range condition) to
/// `compat_tol`.
pub fn solve_second_kind<T: Real>(
    op: &BoundaryOperator<T>,
    rhs: &[T],
    constraints: Option<&SubspaceSpec<T>>,
    opts: &SolveOptions<T>,
) -> Result<SolveReport<T>> {
    let n = op.dim();
    if rhs.len() != n {
        return Err(Error::Dimension(format!("rhs has {} entries, operator {}", rhs.len(), n)));
    }
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite right-hand side".into()));
    }
    let mut constraint_residuals = Vec::new();
    if let Some(s) = constraints {
        constraint_residuals = s.residuals(rhs);
        let scale_ = s.metric_norm(rhs);
        for (k, &v) in constraint_residuals.iter().enumerate() {
            if v.abs() > opts.compat_tol * scale_ {
                return Err(Error::Compatibility {
                    functional: format!("{:?}[{}]", s.tag, k),
                    value: s.functionals(rhs)[k].to_f64().unwrap_or(f64::NAN),
                    tol: (opts.compat_tol * scale_).to_f64().unwrap_or(f64::NAN),
                });
            }
        }
    }
    let a = op.full_matrix();
    let (kernel, ambiguous) = if opts.assume_invertible {
        (Vec::new(), false)
    } else {
        let ns = weighted_nullspace(&a, &op.weights, opts.kernel_tol, 12.min(n))?;
        (ns.basis, ns.ambiguous)
    };
    let r = kernel.len();
    let size = n + r;
    let mut b = Matrix::zeros(size, size);
    for i in 0..n {
        b.row_mut(i)[..n].copy_from_slice(a.row(i));
        for (k, z) in kernel.iter().enumerate() {
            b.set(i, n + k, z[i]);
            b.set(n + k, i, z[i] * op.weights[i]);
        }
    }
    let lu = Lu::factor(b.clone()).map_err(|e| Error::Singular(format!("bordered system: {e}")))?;
    let mut rhs_b = rhs.to_vec();
    rhs_b.extend(std::iter::repeat(T::zero()).take(r));
    let sol = lu.solve(&rhs_b);
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("non-finite solution".into()));
    }
    let density = sol[..n].to_vec();
    let ag = op.apply(&density);
    let res: T = ag.iter().zip(rhs).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt();
    let fnorm: T = rhs.iter().map(|&x| x * x).sum::<T>().sqrt();
    let cond = condition_estimate(&b, &lu);
    Ok(SolveReport {
        density,
        residual: res,
        relative_residual: if fnorm > T::zero() { res / fnorm } else { res },
        constraint_residuals,
        condition_estimate: cond,
        null_dim: r,
        ambiguous_kernel: ambiguous,
        kernel,
    })
}
