//! Boundary value problems solved through their layer-potential
//! representations.
//!
//! Interior problems use the `+` side (Ω₊, opposite to the normal):
//! Neumann data by `u = S(g)` with `(½I + K)g = f`, Dirichlet data by
//! `u = D(g)` with `(−½I + K*)g = f`. Exterior Neumann problems use
//! `(−½I + K)g = f`; decay comes with the single layer.

use rayon::prelude::*;

use crate::diagnostics::{ap_constant, Weight};
use crate::error::{Error, Result};
use crate::geometry::BoundaryMesh;
use crate::kernels::{Family, KernelSpec};
use crate::linalg::{wdot, wnorm, Lu, Matrix};
use crate::potentials::{
    assemble_biharmonic_traces, assemble_k, assemble_kstar, expand_weights, richardson, AssemblyOptions, BiharmonicDoubleLayer,
    BiharmonicJet, BiharmonicSingleLayer, DensityField, DirichletPair, Evaluation, Layer, LayerEvaluator,
};
use crate::scalar::{add, c, cu, dist, normalize, scale, sub, zero3, Real, Vec3};
use crate::solver::{compatibility_project, rigid_motion_traces, solve_second_kind, SolveOptions, SolveReport, SubspaceSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    LaplaceDirichlet,
    LaplaceNeumann,
    WeightedLaplaceNeumann,
    SystemDirichlet,
    SystemNeumann,
    Traction,
    BiharmonicDirichlet,
    BiharmonicNeumann,
}

impl ProblemKind {
    pub fn is_neumann(self) -> bool {
        matches!(
            self,
            ProblemKind::LaplaceNeumann
                | ProblemKind::WeightedLaplaceNeumann
                | ProblemKind::SystemNeumann
                | ProblemKind::Traction
                | ProblemKind::BiharmonicNeumann
        )
    }

    pub fn is_biharmonic(self) -> bool {
        matches!(self, ProblemKind::BiharmonicDirichlet | ProblemKind::BiharmonicNeumann)
    }

    fn check_family<T: Real>(self, spec: &KernelSpec<T>) -> Result<()> {
        let ok = match (self, &spec.family) {
            (ProblemKind::LaplaceDirichlet | ProblemKind::LaplaceNeumann | ProblemKind::WeightedLaplaceNeumann, Family::Laplace) => true,
            (ProblemKind::Traction, Family::Lame { .. }) => true,
            (ProblemKind::SystemDirichlet | ProblemKind::SystemNeumann, Family::Laplace | Family::Lame { .. }) => true,
            (ProblemKind::BiharmonicDirichlet | ProblemKind::BiharmonicNeumann, Family::Biharmonic { .. }) => true,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Spec(format!("{self:?} does not match the kernel family {:?}", spec.family)))
        }
    }
}

/// Boundary data of a problem.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryData<T> {
    /// Nodal field with `m` components (Dirichlet values or conormal data).
    Field(DensityField<T>),
    /// Biharmonic Dirichlet data `(F, g)` with `g = ∂u/∂N`.
    Dirichlet(DirichletPair<T>),
    /// Biharmonic Neumann data stacked as `[λ; f]` (see
    /// [`crate::potentials::NeumannPair::stacked`]).
    Neumann(Vec<T>),
}

#[derive(Clone, Debug)]
pub struct ProblemSpec<'a, T> {
    pub kind: ProblemKind,
    pub mesh: &'a BoundaryMesh<T>,
    pub kernel: KernelSpec<T>,
    pub data: BoundaryData<T>,
    pub weight: Option<Weight<T>>,
    pub exterior: bool,
    /// Project slightly incompatible Neumann data instead of failing.
    pub auto_project: bool,
    pub solve: SolveOptions<T>,
    pub assembly: AssemblyOptions<T>,
    /// Every how many nodes the boundary consistency of a biharmonic
    /// Dirichlet solution is checked (0 skips the check).
    pub consistency_stride: usize,
}

impl<'a, T: Real> ProblemSpec<'a, T> {
    pub fn new(kind: ProblemKind, mesh: &'a BoundaryMesh<T>, kernel: KernelSpec<T>, data: BoundaryData<T>) -> Result<Self> {
        kind.check_family(&kernel)?;
        if kernel.dim != mesh.dim() {
            return Err(Error::Dimension(format!("kernel dimension {} on a {}-d mesh", kernel.dim, mesh.dim())));
        }
        let nn = mesh.len();
        match (&data, kind.is_biharmonic()) {
            (BoundaryData::Field(f), false) => {
                if f.m != kernel.m() || f.values.len() != nn * f.m {
                    return Err(Error::Dimension(format!("data has {} components, the kernel {}", f.m, kernel.m())));
                }
            }
            (BoundaryData::Dirichlet(p), true) if kind == ProblemKind::BiharmonicDirichlet => {
                if p.f.len() != nn || p.g.len() != nn {
                    return Err(Error::Dimension("(F, g) does not match the mesh".into()));
                }
            }
            (BoundaryData::Neumann(v), true) if kind == ProblemKind::BiharmonicNeumann => {
                if v.len() != 2 * nn {
                    return Err(Error::Dimension("(λ, f) does not match the mesh".into()));
                }
            }
            _ => return Err(Error::Spec(format!("{kind:?} cannot take this kind of boundary data"))),
        }
        let finite = match &data {
            BoundaryData::Field(f) => f.values.iter().all(|v| v.is_finite()),
            BoundaryData::Dirichlet(p) => p.f.iter().chain(&p.g).all(|v| v.is_finite()),
            BoundaryData::Neumann(v) => v.iter().all(|x| x.is_finite()),
        };
        if !finite {
            return Err(Error::Validation("non-finite boundary data".into()));
        }
        Ok(ProblemSpec {
            kind,
            mesh,
            kernel,
            data,
            weight: None,
            exterior: false,
            auto_project: false,
            solve: SolveOptions::default(),
            assembly: AssemblyOptions::default(),
            consistency_stride: 0,
        })
    }

    pub fn with_weight(mut self, w: Weight<T>) -> Self {
        self.weight = Some(w);
        self
    }

    pub fn exterior(mut self, yes: bool) -> Self {
        self.exterior = yes;
        self
    }

    pub fn auto_project(mut self, yes: bool) -> Self {
        self.auto_project = yes;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Representation {
    SingleLayer,
    DoubleLayer,
    /// `D_ρ` of a Dirichlet pair.
    DRho,
    /// `S_ρ` of a Neumann pair.
    SRho,
}

/// Affine field `c + A x` added to a representation to fix the
/// normalization of non-unique solutions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correction<T> {
    pub constant: [T; 3],
    /// `linear[k][i]` multiplies `x_i` in component `k`.
    pub linear: [[T; 3]; 3],
}

impl<T: Real> Correction<T> {
    pub fn zero() -> Self {
        Correction {
            constant: [T::zero(); 3],
            linear: [[T::zero(); 3]; 3],
        }
    }

    pub fn value(&self, x: Vec3<T>) -> [T; 3] {
        let mut v = self.constant;
        for (k, vk) in v.iter_mut().enumerate() {
            for i in 0..3 {
                *vk += self.linear[k][i] * x[i];
            }
        }
        v
    }

    pub fn is_zero(&self) -> bool {
        self.constant.iter().chain(self.linear.iter().flatten()).all(|v| *v == T::zero())
    }
}

/// Norms of a weighted Neumann solve in `L²(dσ/ω)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedReport<T> {
    pub data_norm: T,
    pub density_norm: T,
    pub residual_norm: T,
    /// `A₂` constant of the weight over surface balls.
    pub a2_constant: T,
}

#[derive(Clone, Debug)]
pub struct Solution<'a, T> {
    pub kind: ProblemKind,
    pub representation: Representation,
    pub mesh: &'a BoundaryMesh<T>,
    pub kernel: KernelSpec<T>,
    pub exterior: bool,
    pub density: Vec<T>,
    pub correction: Correction<T>,
    pub report: SolveReport<T>,
    /// Amount removed from the data by auto-projection.
    pub projection: Option<Vec<T>>,
    pub weighted: Option<WeightedReport<T>>,
    /// Relative mismatch between the extrapolated traces of a biharmonic
    /// Dirichlet solution and its data.
    pub consistency: Option<T>,
}

/// Value and derivatives of a solution at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointValue<T> {
    pub value: [T; 3],
    pub gradient: [[T; 3]; 3],
    pub hessian: [[[T; 3]; 3]; 3],
    /// The point was within `h/2` of the boundary and the value was
    /// extrapolated from farther points.
    pub near_boundary: bool,
}

impl<T: Real> PointValue<T> {
    fn zero() -> Self {
        PointValue {
            value: [T::zero(); 3],
            gradient: [[T::zero(); 3]; 3],
            hessian: [[[T::zero(); 3]; 3]; 3],
            near_boundary: false,
        }
    }

    fn from_eval(e: Evaluation<T>) -> Self {
        PointValue {
            value: e.value,
            gradient: e.gradient,
            hessian: e.hessian,
            near_boundary: false,
        }
    }

    fn from_jet(j: BiharmonicJet<T>) -> Self {
        let mut p = Self::zero();
        p.value[0] = j.value;
        p.gradient[0] = j.gradient;
        p.hessian[0] = j.hessian;
        p
    }

    fn map3(a: &Self, b: &Self, d: &Self, f: impl Fn(T, T, T) -> T) -> Self {
        let mut out = Self::zero();
        for k in 0..3 {
            out.value[k] = f(a.value[k], b.value[k], d.value[k]);
            for i in 0..3 {
                out.gradient[k][i] = f(a.gradient[k][i], b.gradient[k][i], d.gradient[k][i]);
                for j in 0..3 {
                    out.hessian[k][i][j] = f(a.hessian[k][i][j], b.hessian[k][i][j], d.hessian[k][i][j]);
                }
            }
        }
        out
    }
}

fn field_data<'s, T: Real>(spec: &'s ProblemSpec<'_, T>) -> Result<&'s DensityField<T>> {
    match &spec.data {
        BoundaryData::Field(f) => Ok(f),
        _ => Err(Error::Spec("expected a nodal field".into())),
    }
}

fn check_compatibility<T: Real>(
    data: &[T],
    subspace: Option<&SubspaceSpec<T>>,
    auto_project: bool,
    tol: T,
) -> Result<(Vec<T>, Option<Vec<T>>)> {
    let Some(s) = subspace else {
        return Ok((data.to_vec(), None));
    };
    let scale_ = s.metric_norm(data);
    let worst = s.residuals(data).into_iter().fold(T::zero(), |a, r| a.max(r.abs()));
    if worst <= tol * scale_ || !auto_project {
        return Ok((data.to_vec(), None));
    }
    let projected = compatibility_project(data, s)?;
    log::info!("projected incompatible data (largest scaled functional {worst:?})");
    let delta = data.iter().zip(&projected).map(|(&a, &b)| a - b).collect();
    Ok((projected, Some(delta)))
}

/// Solves a problem of any kind.
pub fn solve<'a, T: Real>(spec: &ProblemSpec<'a, T>) -> Result<Solution<'a, T>> {
    match spec.kind {
        ProblemKind::BiharmonicDirichlet => match &spec.data {
            BoundaryData::Dirichlet(p) => solve_biharmonic_dirichlet_with(spec, p),
            _ => Err(Error::Spec("biharmonic Dirichlet data must be a pair (F, g)".into())),
        },
        ProblemKind::BiharmonicNeumann => match &spec.data {
            BoundaryData::Neumann(v) => solve_biharmonic_neumann_with(spec, v),
            _ => Err(Error::Spec("biharmonic Neumann data must be stacked (λ, f)".into())),
        },
        k if k.is_neumann() => solve_neumann(spec),
        _ => solve_dirichlet(spec),
    }
}

/// Neumann and traction problems: `u = S(g)`.
pub fn solve_neumann<'a, T: Real>(spec: &ProblemSpec<'a, T>) -> Result<Solution<'a, T>> {
    if !spec.kind.is_neumann() || spec.kind.is_biharmonic() {
        return Err(Error::Spec(format!("{:?} is not a second-order Neumann problem", spec.kind)));
    }
    let mesh = spec.mesh;
    let data = field_data(spec)?;
    let m = data.m;
    let kappa = if spec.exterior { c(-0.5) } else { c(0.5) };
    let op = assemble_k(mesh, &spec.kernel, &spec.assembly)?.with_kappa(kappa);
    let subspace = if spec.exterior {
        None
    } else if spec.kind == ProblemKind::Traction {
        Some(SubspaceSpec::psi_orthogonal(mesh)?)
    } else {
        Some(SubspaceSpec::mean_zero(mesh, m))
    };
    let (rhs, projection) = check_compatibility(&data.values, subspace.as_ref(), spec.auto_project, spec.solve.compat_tol)?;
    let weighted = if spec.kind == ProblemKind::WeightedLaplaceNeumann {
        Some(weighted_checks(mesh, spec.weight.as_ref(), m)?)
    } else {
        None
    };
    let report = solve_second_kind(&op, &rhs, subspace.as_ref(), &spec.solve)?;
    let mut sol = Solution {
        kind: spec.kind,
        representation: Representation::SingleLayer,
        mesh,
        kernel: spec.kernel.clone(),
        exterior: spec.exterior,
        density: report.density.clone(),
        correction: Correction::zero(),
        report,
        projection,
        weighted: None,
        consistency: None,
    };
    if let Some(w) = weighted {
        let winv = w.values.iter().map(|&o| T::one() / o).collect::<Vec<T>>();
        let dw: Vec<T> = mesh.weights().iter().zip(&winv).map(|(&a, &b)| a * b).collect();
        let dw = expand_weights(&dw, m);
        let res: Vec<T> = op.apply(&sol.density).iter().zip(&rhs).map(|(&a, &b)| a - b).collect();
        sol.weighted = Some(WeightedReport {
            data_norm: wnorm(&rhs, &dw),
            density_norm: wnorm(&sol.density, &dw),
            residual_norm: wnorm(&res, &dw),
            a2_constant: ap_constant(mesh, &w, c(2.0))?,
        });
    }
    if !spec.exterior {
        sol.correction = neumann_normalization(&sol)?;
    }
    Ok(sol)
}

fn weighted_checks<T: Real>(mesh: &BoundaryMesh<T>, w: Option<&Weight<T>>, m: usize) -> Result<Weight<T>> {
    let w = w.ok_or_else(|| Error::Spec("weighted Neumann problem without a weight".into()))?;
    if w.values.len() != mesh.len() {
        return Err(Error::Dimension("weight does not match the mesh".into()));
    }
    if m != 1 {
        return Err(Error::Spec("weighted Neumann problems are scalar".into()));
    }
    let a2 = ap_constant(mesh, w, c(2.0))?;
    if !a2.is_finite() {
        return Err(Error::Validation("the weight has no finite A_2 constant on this mesh".into()));
    }
    Ok(w.clone())
}

/// Zero boundary mean (scalar and general systems) or removal of the
/// rigid-motion component of the trace (traction).
fn neumann_normalization<T: Real>(sol: &Solution<'_, T>) -> Result<Correction<T>> {
    let mesh = sol.mesh;
    let m = sol.kernel.m();
    let n = mesh.dim();
    let all: Vec<usize> = (0..mesh.len()).collect();
    let trace = sol.trace(&all, 0)?;
    let w = mesh.weights();
    let mut corr = Correction::zero();
    if sol.kind == ProblemKind::Traction {
        let raw = rigid_motion_traces(mesh, n);
        let we = expand_weights(w, n);
        let u: Vec<T> = trace.iter().flat_map(|p| p.value[..n].to_vec()).collect();
        let r = raw.len();
        let g = Matrix::from_fn(r, r, |a, b| wdot(&raw[a], &raw[b], &we));
        let rhs: Vec<T> = raw.iter().map(|f| wdot(f, &u, &we)).collect();
        let coef = Lu::factor(g)?.solve(&rhs);
        for k in 0..n {
            corr.constant[k] = -coef[k];
        }
        let mut q = n;
        for a in 0..n {
            for b in a + 1..n {
                // ψ = −x_b e_a + x_a e_b
                corr.linear[a][b] += coef[q];
                corr.linear[b][a] -= coef[q];
                q += 1;
            }
        }
    } else {
        let total: T = w.iter().copied().sum();
        for k in 0..m {
            let s: T = trace.iter().zip(w).map(|(p, &wi)| p.value[k] * wi).sum();
            corr.constant[k] = -s / total;
        }
    }
    Ok(corr)
}

/// Dirichlet problems: `u = D(g)` with `(−½I + K*)g = f`.
pub fn solve_dirichlet<'a, T: Real>(spec: &ProblemSpec<'a, T>) -> Result<Solution<'a, T>> {
    if spec.kind.is_neumann() || spec.kind.is_biharmonic() {
        return Err(Error::Spec(format!("{:?} is not a second-order Dirichlet problem", spec.kind)));
    }
    if spec.exterior {
        return Err(Error::Spec("exterior Dirichlet problems are not provided".into()));
    }
    let data = field_data(spec)?;
    let op = assemble_kstar(spec.mesh, &spec.kernel, &spec.assembly)?.with_kappa(c(-0.5));
    let report = solve_second_kind(&op, &data.values, None, &spec.solve)?;
    Ok(Solution {
        kind: spec.kind,
        representation: Representation::DoubleLayer,
        mesh: spec.mesh,
        kernel: spec.kernel.clone(),
        exterior: false,
        density: report.density.clone(),
        correction: Correction::zero(),
        report,
        projection: None,
        weighted: None,
        consistency: None,
    })
}

/// Options of the biharmonic solves.
#[derive(Clone, Debug, PartialEq)]
pub struct BiharmonicOptions<T> {
    pub assembly: AssemblyOptions<T>,
    pub solve: SolveOptions<T>,
    pub auto_project: bool,
    /// Every how many nodes the Dirichlet boundary consistency is checked
    /// (0 skips the check).
    pub consistency_stride: usize,
}

impl<T: Real> Default for BiharmonicOptions<T> {
    fn default() -> Self {
        BiharmonicOptions {
            assembly: AssemblyOptions::default(),
            solve: SolveOptions::default(),
            auto_project: false,
            consistency_stride: 0,
        }
    }
}

fn biharmonic_spec<'a, T: Real>(
    kind: ProblemKind,
    mesh: &'a BoundaryMesh<T>,
    rho: T,
    data: BoundaryData<T>,
    opts: &BiharmonicOptions<T>,
) -> Result<ProblemSpec<'a, T>> {
    let mut spec = ProblemSpec::new(kind, mesh, KernelSpec::biharmonic(mesh.dim(), rho)?, data)?;
    spec.assembly = opts.assembly.clone();
    spec.solve = opts.solve.clone();
    spec.auto_project = opts.auto_project;
    spec.consistency_stride = opts.consistency_stride;
    Ok(spec)
}

/// `u = D_ρ((½I + K*_ρ)⁻¹(F, −g))`, so that `u = F` and `∂u/∂N = g`.
pub fn solve_biharmonic_dirichlet<'a, T: Real>(
    mesh: &'a BoundaryMesh<T>,
    rho: T,
    data: &DirichletPair<T>,
    opts: &BiharmonicOptions<T>,
) -> Result<Solution<'a, T>> {
    let spec = biharmonic_spec(ProblemKind::BiharmonicDirichlet, mesh, rho, BoundaryData::Dirichlet(data.clone()), opts)?;
    solve_biharmonic_dirichlet_with(&spec, data)
}

fn solve_biharmonic_dirichlet_with<'a, T: Real>(spec: &ProblemSpec<'a, T>, data: &DirichletPair<T>) -> Result<Solution<'a, T>> {
    let mesh = spec.mesh;
    let rho = spec.kernel.rho().ok_or_else(|| Error::Spec("biharmonic kernel expected".into()))?;
    let (_, kstar) = assemble_biharmonic_traces(mesh, rho, &spec.assembly)?;
    let op = kstar.with_kappa(c(0.5));
    let rhs = DirichletPair {
        f: data.f.clone(),
        g: data.g.iter().map(|&v| -v).collect(),
    }
    .stacked();
    let report = solve_second_kind(&op, &rhs, None, &spec.solve)?;
    let mut sol = Solution {
        kind: ProblemKind::BiharmonicDirichlet,
        representation: Representation::DRho,
        mesh,
        kernel: spec.kernel.clone(),
        exterior: false,
        density: report.density.clone(),
        correction: Correction::zero(),
        report,
        projection: None,
        weighted: None,
        consistency: None,
    };
    if spec.consistency_stride > 0 {
        let nodes: Vec<usize> = (0..mesh.len()).step_by(spec.consistency_stride).collect();
        let tr = sol.trace(&nodes, 1)?;
        let (mut err, mut size) = (T::zero(), T::zero());
        for (p, &i) in tr.iter().zip(&nodes) {
            let nr = mesh.normals()[i];
            let dn: T = (0..3).map(|a| p.gradient[0][a] * nr[a]).sum();
            err += (p.value[0] - data.f[i]).powi(2) + (dn - data.g[i]).powi(2);
            size += data.f[i].powi(2) + data.g[i].powi(2);
        }
        sol.consistency = Some(if size > T::zero() { (err / size).sqrt() } else { err.sqrt() });
    }
    Ok(sol)
}

/// `u = S_ρ((−½I + K_ρ)⁻¹(Λ, f))` with `(Λ, f)` stacked as `[λ; f]`. The
/// linear part of `u` is normalized to zero mean and zero mean gradient
/// over a shrunk copy of the node cloud.
pub fn solve_biharmonic_neumann<'a, T: Real>(
    mesh: &'a BoundaryMesh<T>,
    rho: T,
    data: &[T],
    opts: &BiharmonicOptions<T>,
) -> Result<Solution<'a, T>> {
    let spec = biharmonic_spec(ProblemKind::BiharmonicNeumann, mesh, rho, BoundaryData::Neumann(data.to_vec()), opts)?;
    solve_biharmonic_neumann_with(&spec, data)
}

fn solve_biharmonic_neumann_with<'a, T: Real>(spec: &ProblemSpec<'a, T>, data: &[T]) -> Result<Solution<'a, T>> {
    let mesh = spec.mesh;
    let rho = spec.kernel.rho().ok_or_else(|| Error::Spec("biharmonic kernel expected".into()))?;
    let (k, _) = assemble_biharmonic_traces(mesh, rho, &spec.assembly)?;
    let op = k.with_kappa(c(-0.5));
    let x = SubspaceSpec::biharmonic_x(mesh);
    let (rhs, projection) = check_compatibility(data, Some(&x), spec.auto_project, spec.solve.compat_tol)?;
    let report = solve_second_kind(&op, &rhs, Some(&x), &spec.solve)?;
    let mut sol = Solution {
        kind: ProblemKind::BiharmonicNeumann,
        representation: Representation::SRho,
        mesh,
        kernel: spec.kernel.clone(),
        exterior: false,
        density: report.density.clone(),
        correction: Correction::zero(),
        report,
        projection,
        weighted: None,
        consistency: None,
    };
    sol.correction = linear_normalization(&sol)?;
    Ok(sol)
}

fn linear_normalization<T: Real>(sol: &Solution<'_, T>) -> Result<Correction<T>> {
    let mesh = sol.mesh;
    let n = mesh.dim();
    let w = mesh.weights();
    let total: T = w.iter().copied().sum();
    let mut center = zero3();
    for (x, &wi) in mesh.nodes().iter().zip(w) {
        center = add(center, scale(*x, wi / total));
    }
    let cloud: Vec<Vec3<T>> = mesh
        .nodes()
        .iter()
        .map(|x| add(center, scale(sub(*x, center), c(0.5))))
        .filter(|x| mesh.is_interior(*x) && mesh.distance(*x) > mesh.h())
        .collect();
    if cloud.is_empty() {
        return Err(Error::Geometry("no interior points for the linear normalization".into()));
    }
    let vals = eval_raw_many(sol, &cloud, 1)?;
    let k = cu::<T>(cloud.len());
    let mut grad: Vec3<T> = zero3();
    for v in &vals {
        for a in 0..n {
            grad[a] += v.gradient[0][a] / k;
        }
    }
    let mut mean = T::zero();
    for (v, x) in vals.iter().zip(&cloud) {
        let lin: T = (0..n).map(|a| grad[a] * x[a]).sum();
        mean += (v.value[0] - lin) / k;
    }
    let mut corr = Correction::zero();
    corr.constant[0] = -mean;
    for a in 0..n {
        corr.linear[0][a] = -grad[a];
    }
    Ok(corr)
}

enum Evaluator<'b, T> {
    Layer(LayerEvaluator<'b, T>),
    DRho(BiharmonicDoubleLayer<'b, T>),
    SRho(BiharmonicSingleLayer<'b, T>),
}

impl<'b, T: Real> Evaluator<'b, T> {
    fn new(sol: &'b Solution<'_, T>) -> Result<Self> {
        let mesh: &'b BoundaryMesh<T> = sol.mesh;
        Ok(match sol.representation {
            Representation::SingleLayer | Representation::DoubleLayer => {
                let layer = if sol.representation == Representation::SingleLayer { Layer::Single } else { Layer::Double };
                let dens = DensityField::new(mesh, sol.kernel.m(), sol.density.clone())?;
                Evaluator::Layer(LayerEvaluator::new(mesh, &sol.kernel, layer, &dens)?)
            }
            Representation::DRho => {
                let rho = sol.kernel.rho().unwrap();
                Evaluator::DRho(BiharmonicDoubleLayer::new(mesh, rho, &DirichletPair::from_stacked(&sol.density))?)
            }
            Representation::SRho => Evaluator::SRho(BiharmonicSingleLayer::new(mesh, sol.kernel.rho().unwrap(), &sol.density)?),
        })
    }

    fn eval(&self, x: Vec3<T>, order: usize) -> Result<PointValue<T>> {
        match self {
            Evaluator::Layer(e) => e.eval(x, order).map(PointValue::from_eval),
            Evaluator::DRho(e) => e.eval(x, order).map(PointValue::from_jet),
            Evaluator::SRho(e) => e.eval(x, order).map(PointValue::from_jet),
        }
    }
}

fn eval_raw_many<T: Real>(sol: &Solution<'_, T>, xs: &[Vec3<T>], order: usize) -> Result<Vec<PointValue<T>>> {
    let ev = Evaluator::new(sol)?;
    xs.par_iter().map(|&x| ev.eval(x, order)).collect()
}

fn add_correction<T: Real>(p: &mut PointValue<T>, corr: &Correction<T>, x: Vec3<T>, order: usize) {
    let v = corr.value(x);
    for k in 0..3 {
        p.value[k] += v[k];
        if order >= 1 {
            for i in 0..3 {
                p.gradient[k][i] += corr.linear[k][i];
            }
        }
    }
}

/// Values (and derivatives up to `order ≤ 2`) of a solution. Points closer
/// than `h/2` to the boundary are flagged and their values extrapolated
/// from three points farther out along the local normal.
pub fn eval_solution<T: Real>(sol: &Solution<'_, T>, points: &[Vec3<T>], order: usize) -> Result<Vec<PointValue<T>>> {
    let ev = sol.evaluator()?;
    points.par_iter().map(|&x| ev.point(x, order)).collect()
}

/// Reusable pointwise evaluator of a [`Solution`].
pub struct SolutionEvaluator<'s, 'a, T> {
    sol: &'s Solution<'a, T>,
    ev: Evaluator<'s, T>,
}

impl<T: Real> SolutionEvaluator<'_, '_, T> {
    /// One point of [`eval_solution`].
    pub fn point(&self, x: Vec3<T>, order: usize) -> Result<PointValue<T>> {
        if order > 2 {
            return Err(Error::Spec("derivative order above 2".into()));
        }
        let mesh = self.sol.mesh;
        let h = mesh.h();
        let d = mesh.distance(x);
        let mut out = if d < h * c(0.5) {
            log::debug!("evaluation point {d:?} from the boundary (below h/2); returning an extrapolated value");
            let nr = nearest_normal(mesh, x);
            let dir = if mesh.is_interior(x) { scale(nr, -T::one()) } else { nr };
            let step = h * c(0.5);
            let v: Vec<PointValue<T>> = (1..=3)
                .map(|k| self.ev.eval(add(x, scale(dir, step * cu(k))), order))
                .collect::<Result<_>>()?;
            let mut e = PointValue::map3(&v[0], &v[1], &v[2], |a, b, f| c::<T>(3.0) * a - c::<T>(3.0) * b + f);
            e.near_boundary = true;
            e
        } else {
            self.ev.eval(x, order)?
        };
        add_correction(&mut out, &self.sol.correction, x, order);
        Ok(out)
    }
}

/// Mean normal of the nodes nearest to `x`, ties included, so the result
/// does not depend on node numbering.
fn nearest_normal<T: Real>(mesh: &BoundaryMesh<T>, x: Vec3<T>) -> Vec3<T> {
    let best = dist(mesh.nodes()[mesh.nearest_node(x)], x);
    let tol = best * c(1e-9) + T::epsilon();
    let mut acc = zero3();
    for (p, nr) in mesh.nodes().iter().zip(mesh.normals()) {
        if dist(*p, x) <= best + tol {
            acc = add(acc, *nr);
        }
    }
    normalize(acc)
}

impl<'a, T: Real> Solution<'a, T> {
    /// Boundary traces at the given nodes, extrapolated from the side of the
    /// representation (Richardson from `2h`, `h`, `h/2` along the normal).
    pub fn trace(&self, nodes: &[usize], order: usize) -> Result<Vec<PointValue<T>>> {
        let mesh = self.mesh;
        let ev = Evaluator::new(self)?;
        let sgn = if self.exterior { T::one() } else { -T::one() };
        let d0 = mesh.h() * c(2.0);
        nodes
            .par_iter()
            .map(|&i| {
                let x0 = mesh.nodes()[i];
                let nr = mesh.normals()[i];
                let at = |f: f64| ev.eval(add(x0, scale(nr, sgn * d0 * c(f))), order);
                let (a, b, d) = (at(1.0)?, at(0.5)?, at(0.25)?);
                let mut p = PointValue::map3(&a, &b, &d, richardson);
                add_correction(&mut p, &self.correction, x0, order);
                Ok(p)
            })
            .collect()
    }

    pub fn evaluator(&self) -> Result<SolutionEvaluator<'_, 'a, T>> {
        Ok(SolutionEvaluator {
            sol: self,
            ev: Evaluator::new(self)?,
        })
    }

    /// Evaluates the solution; see [`eval_solution`].
    pub fn eval(&self, points: &[Vec3<T>], order: usize) -> Result<Vec<PointValue<T>>> {
        eval_solution(self, points, order)
    }
}
