use rayon::prelude::*;

use super::{deflate, gather_samples, AssemblyOptions, BoundaryOperator, CalibrationReport, OperatorKind, Quadrature, TangentialStencil};
use crate::error::{Error, Result};
use crate::geometry::BoundaryMesh;
use crate::kernels::{radial_multilinear, KernelEval, KernelSpec, RadialKernel, MAX_ORDER};
use crate::linalg::{dot_slices, orthonormalize, wnorm, Matrix};
use crate::scalar::{c, dot, scale, sub, zero3, Real, Vec3};

/// Index pairs `(i, j)` with `i < j` in the order used by [`NeumannPair::h`].
pub fn tangential_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            out.push((i, j));
        }
    }
    out
}

/// Biharmonic Dirichlet data `(F, g)`: a trace and a second nodal field.
#[derive(Clone, Debug, PartialEq)]
pub struct DirichletPair<T> {
    pub f: Vec<T>,
    pub g: Vec<T>,
}

impl<T: Real> DirichletPair<T> {
    pub fn zeros(len: usize) -> Self {
        DirichletPair {
            f: vec![T::zero(); len],
            g: vec![T::zero(); len],
        }
    }

    /// Stacked `[F; g]`.
    pub fn stacked(&self) -> Vec<T> {
        let mut v = self.f.clone();
        v.extend_from_slice(&self.g);
        v
    }

    pub fn from_stacked(v: &[T]) -> Self {
        let n = v.len() / 2;
        DirichletPair {
            f: v[..n].to_vec(),
            g: v[n..].to_vec(),
        }
    }
}

/// Biharmonic Neumann data `(Λ, f)` with `Λ = ∂h_ij/∂T_ij + h_0`, stored
/// through `h_ij` (`i < j`, in [`tangential_pairs`] order), `h_0` and `f`.
/// The functional acts as `Λ(φ) = ∫ φ h_0 − Σ_{i<j} ∫ h_ij ∂φ/∂T_ij`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeumannPair<T> {
    pub h: Vec<Vec<T>>,
    pub h0: Vec<T>,
    pub f: Vec<T>,
}

impl<T: Real> NeumannPair<T> {
    pub fn zeros(n: usize, len: usize) -> Self {
        NeumannPair {
            h: vec![vec![T::zero(); len]; n * (n - 1) / 2],
            h0: vec![T::zero(); len],
            f: vec![T::zero(); len],
        }
    }

    /// Nodal pairing values `λ_k = Λ(φ_k)` against nodal test functions.
    pub fn dual(&self, mesh: &BoundaryMesh<T>, stencil: &TangentialStencil<T>) -> Vec<T> {
        let w = mesh.weights();
        let mut lam: Vec<T> = self.h0.iter().zip(w).map(|(&a, &b)| a * b).collect();
        for (hij, &(i, j)) in self.h.iter().zip(&tangential_pairs(mesh.dim())) {
            let wh: Vec<T> = hij.iter().zip(w).map(|(&a, &b)| a * b).collect();
            let t = stencil.t_derivative_transpose(mesh.normals(), i, j, &wh);
            for (l, v) in lam.iter_mut().zip(t) {
                *l -= v;
            }
        }
        lam
    }

    /// Stacked `[λ; f]` for the discrete operators.
    pub fn stacked(&self, mesh: &BoundaryMesh<T>, stencil: &TangentialStencil<T>) -> Vec<T> {
        let mut v = self.dual(mesh, stencil);
        v.extend_from_slice(&self.f);
        v
    }

    /// Neumann data `(K_ρ(u), M_ρ(u))` of a biharmonic function from its
    /// Hessian and `∇Δu` at the nodes.
    pub fn from_jets(mesh: &BoundaryMesh<T>, rho: T, hess: &[Vec<T>], grad_lap: &[Vec3<T>]) -> Result<Self> {
        let n = mesh.dim();
        let pairs = tangential_pairs(n);
        let mut out = NeumannPair::zeros(n, mesh.len());
        for (k, nrm) in mesh.normals().iter().enumerate() {
            let kc = crate::kernels::krho_tangential_coords(rho, &grad_lap[k][..n], &hess[k], &nrm[..n])?;
            out.h0[k] = kc.normal_part;
            for (p, &(i, j)) in pairs.iter().enumerate() {
                out.h[p][k] = c::<T>(2.0) * kc.factor * kc.n_ij[i * n + j];
            }
            out.f[k] = crate::kernels::mrho_pointwise(rho, &hess[k], &nrm[..n])?;
        }
        Ok(out)
    }
}

/// Whitney array `(f_0, f_1, …, f_n)` of nodal scalar fields.
#[derive(Clone, Debug, PartialEq)]
pub struct WhitneyArray<T> {
    pub f: Vec<Vec<T>>,
}

impl<T: Real> WhitneyArray<T> {
    pub fn new(mesh: &BoundaryMesh<T>, f: Vec<Vec<T>>) -> Result<Self> {
        if f.len() != mesh.dim() + 1 || f.iter().any(|v| v.len() != mesh.len()) {
            return Err(Error::Dimension("Whitney array needs n+1 nodal fields".into()));
        }
        Ok(WhitneyArray { f })
    }

    /// `(u, D_1u, …, D_nu)` on the nodes for a function with known gradient.
    pub fn from_function(mesh: &BoundaryMesh<T>, u: impl Fn(Vec3<T>) -> (T, Vec3<T>)) -> Self {
        let n = mesh.dim();
        let mut f = vec![Vec::with_capacity(mesh.len()); n + 1];
        for &x in mesh.nodes() {
            let (v, g) = u(x);
            f[0].push(v);
            for i in 0..n {
                f[i + 1].push(g[i]);
            }
        }
        WhitneyArray { f }
    }

    /// Largest violation of `∂f_0/∂T_ij = N_i f_j − N_j f_i`, relative to
    /// the largest `|f_i|`.
    pub fn compatibility_residual(&self, mesh: &BoundaryMesh<T>, stencil: &TangentialStencil<T>) -> T {
        let n = mesh.dim();
        let nr = mesh.normals();
        let mut worst = T::zero();
        for (i, j) in tangential_pairs(n) {
            let d = stencil.t_derivative(nr, i, j, &self.f[0]);
            for k in 0..mesh.len() {
                let r = d[k] - (nr[k][i] * self.f[j + 1][k] - nr[k][j] * self.f[i + 1][k]);
                worst = worst.max(r.abs());
            }
        }
        let scale_ = self.f[1..]
            .iter()
            .flat_map(|v| v.iter())
            .fold(T::zero(), |a, &b| a.max(b.abs()))
            .max(T::min_positive_value());
        worst / scale_
    }

    /// The pair `(F, g) = (f_0, −N_i f_i)` whose double layer is `D_ρ` of the
    /// array.
    pub fn dirichlet_pair(&self, mesh: &BoundaryMesh<T>) -> DirichletPair<T> {
        let n = mesh.dim();
        let g = mesh
            .normals()
            .iter()
            .enumerate()
            .map(|(k, nr)| -(0..n).map(|i| nr[i] * self.f[i + 1][k]).sum::<T>())
            .collect();
        DirichletPair { f: self.f[0].clone(), g }
    }
}

/// Value, gradient, Hessian and `∇Δ` of a scalar biharmonic field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiharmonicJet<T> {
    pub value: T,
    pub gradient: Vec3<T>,
    pub hessian: [[T; 3]; 3],
    pub grad_laplacian: Vec3<T>,
}

impl<T: Real> BiharmonicJet<T> {
    pub fn zero() -> Self {
        BiharmonicJet {
            value: T::zero(),
            gradient: zero3(),
            hessian: [[T::zero(); 3]; 3],
            grad_laplacian: zero3(),
        }
    }

    pub fn hessian_flat(&self, n: usize) -> Vec<T> {
        let mut h = Vec::with_capacity(n * n);
        for i in 0..n {
            h.extend_from_slice(&self.hessian[i][..n]);
        }
        h
    }
}

fn ml<T: Real>(jet: &[T; MAX_ORDER + 1], z: Vec3<T>, vs: &[Vec3<T>]) -> T {
    let xd = |i: usize| dot(z, vs[i]);
    let pd = |i: usize, j: usize| dot(vs[i], vs[j]);
    radial_multilinear(vs.len(), jet, &xd, &pd)
}

fn unit<T: Real>(i: usize) -> Vec3<T> {
    let mut e = zero3();
    e[i] = T::one();
    e
}

fn check_rho<T: Real>(n: usize, rho: T) -> Result<KernelSpec<T>> {
    KernelSpec::biharmonic(n, rho)
}

struct Radials {
    b: RadialKernel,
    gamma: RadialKernel,
}

fn radials<T: Real>(spec: &KernelSpec<T>) -> Radials {
    let kev = KernelEval::new(spec);
    Radials { b: kev.b, gamma: kev.gamma }
}

/// Off-boundary evaluator for `D_ρ(F, g)`.
/// Near-field rule for the biharmonic layers, whose third derivatives decay
/// like `r^{-n-1}`.
pub fn near_field_quadrature<T: Real>() -> Quadrature<T> {
    Quadrature {
        eta: c(6.0),
        max_depth: 9,
        linear: true,
    }
}

#[derive(Clone, Debug)]
pub struct BiharmonicDoubleLayer<'a, T> {
    mesh: &'a BoundaryMesh<T>,
    rho: T,
    rad: std::sync::Arc<(RadialKernel, RadialKernel)>,
    f: Vec<T>,
    /// Full gradient `G = ∇_t F − g N` implied by the data.
    grad: Vec<Vec3<T>>,
    /// `∇_t G_a` at each node.
    grad_t: Vec<[Vec3<T>; 3]>,
    /// `∇_t (∇_t G_a)_b` at each node.
    grad_tt: Vec<[[Vec3<T>; 3]; 3]>,
    quad: Quadrature<T>,
}

impl<'a, T: Real> BiharmonicDoubleLayer<'a, T> {
    pub fn new(mesh: &'a BoundaryMesh<T>, rho: T, data: &DirichletPair<T>) -> Result<Self> {
        Self::with_quadrature(mesh, rho, data, near_field_quadrature())
    }

    pub fn with_quadrature(mesh: &'a BoundaryMesh<T>, rho: T, data: &DirichletPair<T>, quad: Quadrature<T>) -> Result<Self> {
        let spec = check_rho(mesh.dim(), rho)?;
        if data.f.len() != mesh.len() || data.g.len() != mesh.len() {
            return Err(Error::Dimension("(F, g) does not match the mesh".into()));
        }
        let st = TangentialStencil::new(mesh)?;
        let r = radials(&spec);
        let t = st.gradient(&data.f);
        let grad: Vec<Vec3<T>> = t
            .iter()
            .zip(mesh.normals())
            .zip(&data.g)
            .map(|((ti, ni), &gi)| sub(*ti, scale(*ni, gi)))
            .collect();
        let comps: Vec<Vec<Vec3<T>>> = (0..3)
            .map(|a| st.gradient(&grad.iter().map(|v| v[a]).collect::<Vec<T>>()))
            .collect();
        let grad_t: Vec<[Vec3<T>; 3]> = (0..mesh.len()).map(|j| [comps[0][j], comps[1][j], comps[2][j]]).collect();
        let mut grad_tt = vec![[[zero3(); 3]; 3]; mesh.len()];
        for a in 0..3 {
            for b in 0..3 {
                let col = st.gradient(&grad_t.iter().map(|v| v[a][b]).collect::<Vec<T>>());
                for (j, v) in col.into_iter().enumerate() {
                    grad_tt[j][a][b] = v;
                }
            }
        }
        Ok(BiharmonicDoubleLayer {
            mesh,
            rho,
            rad: std::sync::Arc::new((r.b, r.gamma)),
            grad,
            grad_t,
            grad_tt,
            f: data.f.clone(),
            quad,
        })
    }

    /// Jet of `w = D_ρ(F, g)` at `x`; `order` 0 gives the value only,
    /// 1 adds the gradient, 2 adds the Hessian and `∇Δw`.
    pub fn eval(&self, x: Vec3<T>, order: usize) -> Result<BiharmonicJet<T>> {
        let mesh = self.mesh;
        let n = mesh.dim();
        let d = mesh.distance(x);
        let h = mesh.h();
        if !(d > h * c(1e-9)) {
            return Err(Error::EvaluationPoint(d.to_f64().unwrap_or(f64::NAN)));
        }
        let nodes = mesh.nodes();
        let nodes_n = mesh.normals();
        // Affine part reproduced exactly: (F₀, g₀) = (F_P + c·(y−x_P), −c·N).
        let mut aff: Option<(usize, Vec3<T>)> = None;
        let mut interior = false;
        if mesh.is_closed() && d < h * c(4.0) {
            let p = mesh.nearest_node(x);
            aff = Some((p, self.grad[p]));
            interior = mesh.is_interior(x);
        }
        let (bk, gk) = (&self.rad.0, &self.rad.1);
        let one_m = T::one() - self.rho;
        let samples = gather_samples(mesh, x, &self.quad, None);
        let mut out = BiharmonicJet::zero();
        let e: Vec<Vec3<T>> = (0..n).map(unit).collect();
        for s in &samples {
            let j = s.panel;
            let dy = sub(s.y, nodes[j]);
            let mut fv = self.f[j] + dot(self.grad[j], dy);
            let mut gq = self.grad[j];
            if s.y != nodes[j] {
                let nj = nodes_n[j];
                let xi = sub(dy, scale(nj, dot(dy, nj)));
                let mut quad = T::zero();
                for a in 0..3 {
                    let da = dot(self.grad_t[j][a], dy);
                    let mut second = T::zero();
                    for b in 0..3 {
                        second += xi[b] * dot(self.grad_tt[j][a][b], xi);
                    }
                    gq[a] += da + c::<T>(0.5) * second;
                    quad += dy[a] * da;
                }
                fv += c::<T>(0.5) * quad;
            }
            if let Some((p, cv)) = aff {
                fv = fv - self.f[p] - dot(cv, sub(s.y, nodes[p]));
                gq = sub(gq, cv);
            }
            let gv = -dot(gq, s.n);
            let tv = sub(gq, scale(s.n, dot(gq, s.n)));
            let v = sub(scale(s.n, gv), tv);
            let z = sub(s.y, x);
            let r = crate::scalar::norm(z);
            let jb = bk.jet(r, 2 + 2 * order.min(2));
            let jg = gk.jet(r, 1 + order.min(2) + if order >= 2 { 1 } else { 0 });
            let w = s.w;
            out.value += w * (fv * ml(&jg, z, &[s.n]) + self.rho * gv * jg[0] + one_m * ml(&jb, z, &[v, s.n]));
            if order >= 1 {
                for l in 0..n {
                    out.gradient[l] -= w
                        * (fv * ml(&jg, z, &[s.n, e[l]]) + self.rho * gv * ml(&jg, z, &[e[l]]) + one_m * ml(&jb, z, &[v, s.n, e[l]]));
                }
            }
            if order >= 2 {
                for l in 0..n {
                    for m in l..n {
                        let hv = w
                            * (fv * ml(&jg, z, &[s.n, e[l], e[m]])
                                + self.rho * gv * ml(&jg, z, &[e[l], e[m]])
                                + one_m * ml(&jb, z, &[v, s.n, e[l], e[m]]));
                        out.hessian[l][m] += hv;
                        if m != l {
                            out.hessian[m][l] += hv;
                        }
                    }
                    out.grad_laplacian[l] -= w * one_m * ml(&jg, z, &[v, s.n, e[l]]);
                }
            }
        }
        if interior {
            if let Some((p, cv)) = aff {
                out.value += self.f[p] + dot(cv, sub(x, nodes[p]));
                for l in 0..n {
                    out.gradient[l] += cv[l];
                }
            }
        }
        Ok(out)
    }

    pub fn eval_many(&self, xs: &[Vec3<T>], order: usize) -> Result<Vec<BiharmonicJet<T>>> {
        xs.par_iter().map(|&x| self.eval(x, order)).collect()
    }
}

/// Off-boundary evaluator for `S_ρ(Λ, f)(x) = Λ(B^x) − ∫ ∂B^x/∂N f dσ` with
/// `Λ` given by its nodal pairing values.
#[derive(Clone, Debug)]
pub struct BiharmonicSingleLayer<'a, T> {
    mesh: &'a BoundaryMesh<T>,
    rad: std::sync::Arc<(RadialKernel, RadialKernel)>,
    lambda: Vec<T>,
    f: Vec<T>,
}

impl<'a, T: Real> BiharmonicSingleLayer<'a, T> {
    /// `stacked = [λ; f]` as used by the discrete `K_ρ`.
    pub fn new(mesh: &'a BoundaryMesh<T>, rho: T, stacked: &[T]) -> Result<Self> {
        let spec = check_rho(mesh.dim(), rho)?;
        if stacked.len() != 2 * mesh.len() {
            return Err(Error::Dimension("(λ, f) does not match the mesh".into()));
        }
        let r = radials(&spec);
        Ok(BiharmonicSingleLayer {
            mesh,
            rad: std::sync::Arc::new((r.b, r.gamma)),
            lambda: stacked[..mesh.len()].to_vec(),
            f: stacked[mesh.len()..].to_vec(),
        })
    }

    pub fn eval(&self, x: Vec3<T>, order: usize) -> Result<BiharmonicJet<T>> {
        let mesh = self.mesh;
        let n = mesh.dim();
        let d = mesh.distance(x);
        if !(d > mesh.h() * c(1e-9)) {
            return Err(Error::EvaluationPoint(d.to_f64().unwrap_or(f64::NAN)));
        }
        let (bk, gk) = (&self.rad.0, &self.rad.1);
        let e: Vec<Vec3<T>> = (0..n).map(unit).collect();
        let mut out = BiharmonicJet::zero();
        for k in 0..mesh.len() {
            let y = mesh.nodes()[k];
            let nr = mesh.normals()[k];
            let z = sub(y, x);
            let r = crate::scalar::norm(z);
            let jb = bk.jet(r, 1 + order + if order >= 2 { 1 } else { 0 });
            let lam = self.lambda[k];
            let wf = mesh.weights()[k] * self.f[k];
            out.value += lam * jb[0] - wf * ml(&jb, z, &[nr]);
            if order >= 1 {
                for l in 0..n {
                    out.gradient[l] += -lam * ml(&jb, z, &[e[l]]) + wf * ml(&jb, z, &[nr, e[l]]);
                }
            }
            if order >= 2 {
                let jg = gk.jet(r, 2);
                for l in 0..n {
                    for m in l..n {
                        let hv = lam * ml(&jb, z, &[e[l], e[m]]) - wf * ml(&jb, z, &[nr, e[l], e[m]]);
                        out.hessian[l][m] += hv;
                        if m != l {
                            out.hessian[m][l] += hv;
                        }
                    }
                    out.grad_laplacian[l] += -lam * ml(&jg, z, &[e[l]]) + wf * ml(&jg, z, &[nr, e[l]]);
                }
            }
        }
        Ok(out)
    }

    pub fn eval_many(&self, xs: &[Vec3<T>], order: usize) -> Result<Vec<BiharmonicJet<T>>> {
        xs.par_iter().map(|&x| self.eval(x, order)).collect()
    }
}

/// Affine pairs `(1, 0)` and `(x_k, −N_k)` stacked as `[F; g]`.
pub fn affine_pairs<T: Real>(mesh: &BoundaryMesh<T>) -> Vec<Vec<T>> {
    let nn = mesh.len();
    let n = mesh.dim();
    let mut out = Vec::with_capacity(n + 1);
    let mut one = vec![T::one(); nn];
    one.extend(std::iter::repeat(T::zero()).take(nn));
    out.push(one);
    for k in 0..n {
        let mut v: Vec<T> = mesh.nodes().iter().map(|x| x[k]).collect();
        v.extend(mesh.normals().iter().map(|nr| -nr[k]));
        out.push(v);
    }
    out
}

/// Assembles the biharmonic trace operators `(K_ρ, K*_ρ)`.
///
/// `K*_ρ` acts on stacked pairs `[F; g]` and returns the principal values
/// of `(w, −∂w/∂N)` for `w = D_ρ(F, g)`. The singular part is removed by
/// subtracting, row by row, the affine pair matching the data at the target
/// node; the result is then deflated so that `K*_ρ e = ½e` on affine pairs.
/// `K_ρ` acts on `[λ; f]`, where `λ` holds pairings with nodal test
/// functions, and is the adjoint of `K*_ρ` under
/// `⟨(λ, f), (F, g)⟩ = λ·F + Σ w f g`.
pub fn assemble_biharmonic_traces<T: Real>(
    mesh: &BoundaryMesh<T>,
    rho: T,
    opts: &AssemblyOptions<T>,
) -> Result<(BoundaryOperator<T>, BoundaryOperator<T>)> {
    let n = mesh.dim();
    let spec = check_rho(n, rho)?;
    if !mesh.is_closed() {
        return Err(Error::Geometry("biharmonic trace operators need a closed mesh".into()));
    }
    let st = TangentialStencil::new(mesh)?;
    let r = radials(&spec);
    let (bk, gk) = (&r.b, &r.gamma);
    let nn = mesh.len();
    let size = 2 * nn;
    let nodes = mesh.nodes();
    let nrm = mesh.normals();
    let w = mesh.weights();
    let one_m = T::one() - rho;
    let half = c::<T>(0.5);
    let sign = if opts.flip_sign { -T::one() } else { T::one() };
    let mut data = vec![T::zero(); size * nn * 2];
    // rows i (first component) and nn + i (second) are filled together
    let rows: Vec<(Vec<T>, Vec<T>)> = (0..nn)
        .into_par_iter()
        .map(|i| {
            let x = nodes[i];
            let ni = nrm[i];
            let mut r1f = vec![T::zero(); nn];
            let mut r1g = vec![T::zero(); nn];
            let mut r2f = vec![T::zero(); nn];
            let mut r2g = vec![T::zero(); nn];
            let mut t1 = vec![zero3::<T>(); nn];
            let mut t2 = vec![zero3::<T>(); nn];
            let mut c1 = zero3::<T>();
            let mut c2 = zero3::<T>();
            for j in 0..nn {
                if j == i {
                    continue;
                }
                let nj = nrm[j];
                let z = sub(nodes[j], x);
                let rr = crate::scalar::norm(z);
                let jb = bk.jet(rr, 3);
                let jg = gk.jet(rr, 2);
                let wj = w[j] * sign;
                let hbn: Vec3<T> = {
                    let mut v = zero3();
                    for a in 0..n {
                        v[a] = ml(&jb, z, &[unit(a), nj]);
                    }
                    v
                };
                let d3: Vec3<T> = {
                    let mut v = zero3();
                    for a in 0..n {
                        v[a] = ml(&jb, z, &[unit(a), nj, ni]);
                    }
                    v
                };
                let a1 = wj * ml(&jg, z, &[nj]);
                let b1 = wj * (rho * jg[0] + one_m * dot(nj, hbn));
                let e1 = scale(hbn, -wj * one_m);
                let a2 = wj * ml(&jg, z, &[nj, ni]);
                let b2 = wj * (rho * ml(&jg, z, &[ni]) + one_m * dot(nj, d3));
                let e2 = scale(d3, -wj * one_m);
                let dx = sub(nodes[j], x);
                r1f[j] += a1;
                r1f[i] -= a1;
                r1g[j] += b1;
                t1[j] = crate::scalar::add(t1[j], e1);
                // c-coefficients of the subtracted affine pair at node j
                for q in 0..3 {
                    c1[q] += -a1 * dx[q] + b1 * nj[q] - e1[q] + dot(e1, nj) * nj[q];
                }
                r2f[j] += a2;
                r2f[i] -= a2;
                r2g[j] += b2;
                t2[j] = crate::scalar::add(t2[j], e2);
                for q in 0..3 {
                    c2[q] += -a2 * dx[q] + b2 * nj[q] - e2[q] + dot(e2, nj) * nj[q];
                }
            }
            // c = t_i − g_i N_i
            t1[i] = crate::scalar::add(t1[i], c1);
            r1g[i] -= dot(c1, ni);
            t2[i] = crate::scalar::add(t2[i], c2);
            r2g[i] -= dot(c2, ni);
            r1f[i] += half;
            r2g[i] += half;
            for j in 0..nn {
                for &(k, s) in st.row(j) {
                    r1f[k] += dot(t1[j], s);
                    r2f[k] += dot(t2[j], s);
                }
            }
            r1f.extend(r1g);
            r2f.extend(r2g);
            (r1f, r2f)
        })
        .collect();
    for (i, (r1, r2)) in rows.into_iter().enumerate() {
        data[i * size..(i + 1) * size].copy_from_slice(&r1);
        data[(nn + i) * size..(nn + i + 1) * size].copy_from_slice(&r2);
    }
    let mut matrix = Matrix::from_vec(size, size, data);
    let metric: Vec<T> = w.iter().chain(w.iter()).copied().collect();
    let (basis, _) = orthonormalize(&affine_pairs(mesh), &metric, c(1e-10));
    let residual = |a: &Matrix<T>| {
        let mut worst = T::zero();
        for e in &basis {
            let mut y = a.matvec(e);
            for (yi, &ei) in y.iter_mut().zip(e) {
                *yi -= half * ei;
            }
            worst = worst.max(wnorm(&y, &metric));
        }
        worst
    };
    let residual_before = residual(&matrix);
    deflate(&mut matrix, &basis, &metric, half, false);
    let residual_after = residual(&matrix);
    let mut max_diag = T::zero();
    for i in 0..size {
        max_diag = max_diag.max((matrix.get(i, i) - half).abs());
    }
    let jw: Vec<T> = std::iter::repeat(T::one()).take(nn).chain(w.iter().copied()).collect();
    let kstar = BoundaryOperator {
        kind: OperatorKind::KStarRho,
        spec,
        kappa: T::zero(),
        matrix,
        weights: jw,
        m: 1,
        calibration: CalibrationReport {
            enforced: vec!["K*_rho e = e/2 on affine pairs (1,0), (x_k,-N_k) (deflation)".into()],
            residual_before,
            residual_after,
            max_diagonal_correction: max_diag,
            two_sided: false,
            sign_flipped: opts.flip_sign,
            pairing: Some(
                "Lambda stored as nodal pairings lambda_k = Lambda(phi_k); <(lambda,f),(F,g)> = lambda.F + sum w f g".into(),
            ),
        },
    };
    let k = kstar.adjoint(OperatorKind::KRho);
    Ok((k, kstar))
}

/// Jumps of `M_ρ(w)` and `K_ρ(w)` across the boundary for `w = D_ρ` of a
/// Whitney array.
#[derive(Clone, Debug, PartialEq)]
pub struct BiharmonicJumpReport<T> {
    /// `‖[M_ρ(w)]‖` in `L²(dσ)`.
    pub mrho_jump: T,
    /// Weak jump of `K_ρ(w)`: `(Σ_k [K_ρ(w)](φ_k)²)^{1/2}` over the traces of
    /// the polynomials of degree ≤ 3, orthonormal in `L²(dσ)`.
    pub krho_jump: T,
    /// The same norms of the interior traces, for relative comparisons.
    pub mrho_scale: T,
    pub krho_scale: T,
    pub nodes_used: usize,
}

/// Extrapolates `M_ρ(w)` and `K_ρ(w)` to the boundary from both sides and
/// measures their jumps.
pub fn biharmonic_jump_residuals<T: Real>(
    mesh: &BoundaryMesh<T>,
    rho: T,
    array: &WhitneyArray<T>,
    d0_factor: T,
) -> Result<BiharmonicJumpReport<T>> {
    let n = mesh.dim();
    let st = TangentialStencil::new(mesh)?;
    let dl = BiharmonicDoubleLayer::new(mesh, rho, &array.dirichlet_pair(mesh))?;
    let d0 = mesh.h() * d0_factor;
    let pairs = tangential_pairs(n);
    // per node and side: (M_ρ, ∂Δw/∂N, h_ij…)
    let per_node: Vec<Result<[Vec<T>; 2]>> = (0..mesh.len())
        .into_par_iter()
        .map(|p| {
            let x = mesh.nodes()[p];
            let nr = mesh.normals()[p];
            let mut sides = [vec![], vec![]];
            for (side, sgn) in [(0usize, -T::one()), (1, T::one())] {
                let mut vals = vec![vec![T::zero(); 3]; 2 + pairs.len()];
                for (q, f) in [T::one(), c(0.5), c(0.25)].into_iter().enumerate() {
                    let mut y = x;
                    for a in 0..n {
                        y[a] += sgn * d0 * f * nr[a];
                    }
                    let jet = dl.eval(y, 2)?;
                    let hf = jet.hessian_flat(n);
                    vals[0][q] = crate::kernels::mrho_pointwise(rho, &hf, &nr[..n])?;
                    let kc = crate::kernels::krho_tangential_coords(rho, &jet.grad_laplacian[..n], &hf, &nr[..n])?;
                    vals[1][q] = kc.normal_part;
                    for (t, &(i, j)) in pairs.iter().enumerate() {
                        vals[2 + t][q] = c::<T>(2.0) * kc.factor * kc.n_ij[i * n + j];
                    }
                }
                sides[side] = vals.iter().map(|v| super::richardson(v[0], v[1], v[2])).collect();
            }
            Ok(sides)
        })
        .collect();
    let mut interior = Vec::with_capacity(mesh.len());
    let mut exterior = Vec::with_capacity(mesh.len());
    for r in per_node {
        let [a, b] = r?;
        interior.push(a);
        exterior.push(b);
    }
    let w = mesh.weights();
    let to_pair = |vals: &[Vec<T>], diff: Option<&[Vec<T>]>| -> NeumannPair<T> {
        let mut np = NeumannPair::zeros(n, mesh.len());
        for k in 0..mesh.len() {
            let v = |t: usize| vals[k][t] - diff.map_or(T::zero(), |d| d[k][t]);
            np.f[k] = v(0);
            np.h0[k] = v(1);
            for t in 0..pairs.len() {
                np.h[t][k] = v(2 + t);
            }
        }
        np
    };
    let jump = to_pair(&interior, Some(&exterior));
    let inner = to_pair(&interior, None);
    let tests = polynomial_tests(mesh, 3);
    let dual_norm = |lam: &[T]| -> T {
        let mut s = T::zero();
        for phi in &tests {
            let p = dot_slices(lam, phi);
            s += p * p;
        }
        s.sqrt()
    };
    Ok(BiharmonicJumpReport {
        mrho_jump: wnorm(&jump.f, w),
        krho_jump: dual_norm(&jump.dual(mesh, &st)),
        mrho_scale: wnorm(&inner.f, w),
        krho_scale: dual_norm(&inner.dual(mesh, &st)),
        nodes_used: mesh.len(),
    })
}

/// Nodal traces of the monomials of degree ≤ `deg`, orthonormalised in the
/// quadrature inner product.
fn polynomial_tests<T: Real>(mesh: &BoundaryMesh<T>, deg: usize) -> Vec<Vec<T>> {
    let n = mesh.dim();
    let mut exps = Vec::new();
    for a in 0..=deg {
        for b in 0..=deg - a {
            if n == 2 {
                exps.push([a, b, 0]);
            } else {
                for e in 0..=deg - a - b {
                    exps.push([a, b, e]);
                }
            }
        }
    }
    let vs: Vec<Vec<T>> = exps
        .iter()
        .map(|e| {
            mesh.nodes()
                .iter()
                .map(|x| x[0].powi(e[0] as i32) * x[1].powi(e[1] as i32) * x[2].powi(e[2] as i32))
                .collect()
        })
        .collect();
    orthonormalize(&vs, mesh.weights(), c(1e-8)).0
}
