use crate::error::{Error, Result};
use crate::geometry::{tangent_frame, BoundaryMesh, Surface};
use crate::linalg::{Lu, Matrix};
use crate::scalar::{c, cu, dot, scale, sub, zero3, Real, Vec3};

/// Discrete tangential gradient `∇_t F(x_i) ≈ Σ_k S_ik F_k` on the nodes of a
/// mesh.
///
/// Sphere and circle meshes use a per-node quadratic least-squares fit in
/// tangent coordinates; graph patches use centred differences on the cell
/// grid (one-sided of second order at the edges).
#[derive(Clone, Debug)]
pub struct TangentialStencil<T> {
    dim: usize,
    rows: Vec<Vec<(usize, Vec3<T>)>>,
}

impl<T: Real> TangentialStencil<T> {
    pub fn new(mesh: &BoundaryMesh<T>) -> Result<Self> {
        if mesh.graph().is_some() {
            return Ok(Self::graph(mesh));
        }
        match mesh.surface() {
            Surface::Sphere { .. } => Ok(Self::local_fit(mesh)),
            Surface::Flat => Err(Error::UnsupportedGeometry(
                "tangential derivatives need a graph patch or a sphere/circle mesh".into(),
            )),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Sparse row `i`: pairs `(k, S_ik)`.
    pub fn row(&self, i: usize) -> &[(usize, Vec3<T>)] {
        &self.rows[i]
    }

    /// Tangential gradient of a nodal scalar field.
    pub fn gradient(&self, f: &[T]) -> Vec<Vec3<T>> {
        self.rows
            .iter()
            .map(|row| {
                let mut g = zero3();
                for &(k, s) in row {
                    for a in 0..3 {
                        g[a] += s[a] * f[k];
                    }
                }
                g
            })
            .collect()
    }

    /// `∂F/∂T_ab = N_a (∇_t F)_b − N_b (∇_t F)_a` at every node.
    pub fn t_derivative(&self, normals: &[Vec3<T>], a: usize, b: usize, f: &[T]) -> Vec<T> {
        self.gradient(f)
            .iter()
            .zip(normals)
            .map(|(g, nn)| nn[a] * g[b] - nn[b] * g[a])
            .collect()
    }

    /// Transpose of `F ↦ ∂F/∂T_ab` applied to `v`.
    pub fn t_derivative_transpose(&self, normals: &[Vec3<T>], a: usize, b: usize, v: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); v.len()];
        for (i, row) in self.rows.iter().enumerate() {
            let nn = normals[i];
            for &(k, s) in row {
                out[k] += v[i] * (nn[a] * s[b] - nn[b] * s[a]);
            }
        }
        out
    }

    fn local_fit(mesh: &BoundaryMesh<T>) -> Self {
        let dim = mesh.dim();
        let nodes = mesh.nodes();
        let normals = mesh.normals();
        let count = if dim == 2 { 4 } else { 12 }.min(nodes.len() - 1);
        let rows = (0..nodes.len())
            .map(|i| {
                let x = nodes[i];
                let mut nb: Vec<(T, usize)> = (0..nodes.len())
                    .filter(|&k| k != i)
                    .map(|k| (crate::scalar::dist(nodes[k], x), k))
                    .collect();
                nb.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                // keep every neighbour tied with the last one so the stencil
                // does not depend on node numbering
                if let Some(&(cut, _)) = nb.get(count.saturating_sub(1)) {
                    let tol = cut * c::<T>(1e-9);
                    let keep = nb.iter().take_while(|p| p.0 <= cut + tol).count();
                    nb.truncate(keep);
                }
                let ell = nb.last().map_or(T::one(), |p| p.0);
                let mut idx = vec![i];
                idx.extend(nb.iter().map(|p| p.1));
                let (e1, e2) = if dim == 2 {
                    ([-normals[i][1], normals[i][0], T::zero()], zero3())
                } else {
                    tangent_frame(normals[i])
                };
                let basis = |s: T, t: T| -> Vec<T> {
                    if dim == 2 {
                        vec![T::one(), s, s * s]
                    } else {
                        vec![T::one(), s, t, s * s, s * t, t * t]
                    }
                };
                let nb_cols = if dim == 2 { 3 } else { 6 };
                let a = Matrix::from_fn(idx.len(), nb_cols, |r, col| {
                    let d = scale(sub(nodes[idx[r]], x), T::one() / ell);
                    basis(dot(d, e1), dot(d, e2))[col]
                });
                let ata = a.transpose().matmul(&a);
                let lu = Lu::factor(ata).expect("local tangential fit is degenerate");
                let grad_dirs = if dim == 2 { vec![e1] } else { vec![e1, e2] };
                let mut coef = vec![zero3(); idx.len()];
                for (d, e) in grad_dirs.iter().enumerate() {
                    let mut unit = vec![T::zero(); nb_cols];
                    unit[1 + d] = T::one();
                    // row (1+d) of (AᵀA)⁻¹Aᵀ
                    let y = lu.solve(&unit);
                    let w = a.matvec(&y);
                    for (r, cr) in coef.iter_mut().enumerate() {
                        for q in 0..3 {
                            cr[q] += w[r] / ell * e[q];
                        }
                    }
                }
                idx.into_iter().zip(coef).collect()
            })
            .collect();
        TangentialStencil { dim, rows }
    }

    fn graph(mesh: &BoundaryMesh<T>) -> Self {
        let g = mesh.graph().unwrap();
        let dim = mesh.dim();
        let cx = g.nx - 1;
        let cy = if g.ny == 1 { 1 } else { g.ny - 1 };
        let dx = (g.x1 - g.x0) / cu(cx);
        let dy = if g.ny == 1 { T::one() } else { (g.y1 - g.y0) / cu(cy) };
        let normals = mesh.normals();
        let diff = |i: usize, len: usize, h: T| -> Vec<(usize, T)> {
            if len == 1 {
                vec![]
            } else if len == 2 {
                vec![(0, -T::one() / h), (1, T::one() / h)]
            } else if i == 0 {
                vec![(0, c::<T>(-1.5) / h), (1, c::<T>(2.0) / h), (2, c::<T>(-0.5) / h)]
            } else if i == len - 1 {
                vec![(len - 3, c::<T>(0.5) / h), (len - 2, c::<T>(-2.0) / h), (len - 1, c::<T>(1.5) / h)]
            } else {
                vec![(i - 1, c::<T>(-0.5) / h), (i + 1, c::<T>(0.5) / h)]
            }
        };
        let mut rows = Vec::with_capacity(cx * cy);
        for j in 0..cy {
            for i in 0..cx {
                let node = j * cx + i;
                let nn = normals[node];
                let mut row: Vec<(usize, Vec3<T>)> = Vec::new();
                if dim == 2 {
                    let p = -nn[0] / nn[1];
                    let t1 = [T::one(), p, T::zero()];
                    let g11 = dot(t1, t1);
                    for (k, w) in diff(i, cx, dx) {
                        row.push((k, scale(t1, w / g11)));
                    }
                } else {
                    let t1 = [T::one(), T::zero(), -nn[0] / nn[2]];
                    let t2 = [T::zero(), T::one(), -nn[1] / nn[2]];
                    let (g11, g12, g22) = (dot(t1, t1), dot(t1, t2), dot(t2, t2));
                    let det = g11 * g22 - g12 * g12;
                    let (i11, i12, i22) = (g22 / det, -g12 / det, g11 / det);
                    // ∇_t F = g^{ab} ∂_b F T_a
                    let v1 = crate::scalar::add(scale(t1, i11), scale(t2, i12));
                    let v2 = crate::scalar::add(scale(t1, i12), scale(t2, i22));
                    for (k, w) in diff(i, cx, dx) {
                        row.push((j * cx + k, scale(v1, w)));
                    }
                    for (k, w) in diff(j, cy, dy) {
                        row.push((k * cx + i, scale(v2, w)));
                    }
                }
                rows.push(row);
            }
        }
        TangentialStencil { dim, rows }
    }
}
