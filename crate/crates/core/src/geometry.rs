//! Discretized Lipschitz boundaries.
//!
//! A [`BoundaryMesh`] carries one quadrature node per panel. Flat meshes
//! (polygons, triangulated polyhedra, graph patches) use the panel centroid
//! and the flat panel normal. Meshes of a sphere or circle remember the exact
//! surface: nodes and normals sit on it, and node weights are the exact
//! curved panel measures.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::scalar::*;

/// Exact surface underlying a mesh, when one is known.
#[derive(Clone, Debug, PartialEq)]
pub enum Surface<T> {
    /// Piecewise flat panels.
    Flat,
    /// Sphere (n = 3) or circle (n = 2).
    Sphere { center: Vec3<T>, radius: T },
}

/// One boundary panel.
#[derive(Clone, Debug, PartialEq)]
pub struct Panel<T> {
    /// 2 vertices (segments), 3 (triangles) or 4 (graph cells, split along
    /// the diagonal 0–2).
    pub vertices: Vec<usize>,
    pub normal: Vec3<T>,
    /// Length or area of the flat panel.
    pub measure: T,
    pub centroid: Vec3<T>,
}

/// Height samples of a Lipschitz graph `x_n = ψ(x')` on a regular grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphPatch<T> {
    pub nx: usize,
    /// 1 for planar (n = 2) patches.
    pub ny: usize,
    pub x0: T,
    pub x1: T,
    pub y0: T,
    pub y1: T,
    /// Row-major heights, `x` fastest.
    pub heights: Vec<T>,
}

impl<T: Real> GraphPatch<T> {
    pub fn param_dim(&self) -> usize {
        if self.ny == 1 {
            1
        } else {
            2
        }
    }

    fn dx(&self) -> T {
        (self.x1 - self.x0) / cu(self.nx - 1)
    }

    fn dy(&self) -> T {
        if self.ny == 1 {
            T::one()
        } else {
            (self.y1 - self.y0) / cu(self.ny - 1)
        }
    }

    fn h(&self, i: usize, j: usize) -> T {
        self.heights[j * self.nx + i]
    }

    /// Piecewise-linear interpolant of the samples (the same triangles as the
    /// mesh panels).
    pub fn psi(&self, p: [T; 2]) -> T {
        let dx = self.dx();
        let fx = ((p[0] - self.x0) / dx).max(T::zero());
        let i = fx.floor().to_usize().unwrap_or(0).min(self.nx - 2);
        let s = (fx - cu(i)).min(T::one());
        if self.ny == 1 {
            return self.h(i, 0) * (T::one() - s) + self.h(i + 1, 0) * s;
        }
        let dy = self.dy();
        let fy = ((p[1] - self.y0) / dy).max(T::zero());
        let j = fy.floor().to_usize().unwrap_or(0).min(self.ny - 2);
        let t = (fy - cu(j)).min(T::one());
        let h00 = self.h(i, j);
        let h10 = self.h(i + 1, j);
        let h11 = self.h(i + 1, j + 1);
        let h01 = self.h(i, j + 1);
        if s >= t {
            h00 + (h10 - h00) * s + (h11 - h10) * t
        } else {
            h00 + (h11 - h01) * s + (h01 - h00) * t
        }
    }

    /// The chart `Φ(x') = (x', ψ(x'))`.
    pub fn phi(&self, p: [T; 2]) -> Vec3<T> {
        let z = self.psi(p);
        if self.ny == 1 {
            [p[0], z, T::zero()]
        } else {
            [p[0], p[1], z]
        }
    }

    /// `Φ⁻¹`: drops the height coordinate.
    pub fn phi_inv(&self, x: Vec3<T>) -> [T; 2] {
        if self.ny == 1 {
            [x[0], T::zero()]
        } else {
            [x[0], x[1]]
        }
    }

    pub fn param_box(&self) -> ([T; 2], [T; 2]) {
        if self.ny == 1 {
            ([self.x0, T::zero()], [self.x1, T::zero()])
        } else {
            ([self.x0, self.y0], [self.x1, self.y1])
        }
    }
}

/// Geometry of a panel or sub-panel, used for refined quadrature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PanelShape<T> {
    Segment([Vec3<T>; 2]),
    Arc {
        ends: [Vec3<T>; 2],
        center: Vec3<T>,
        radius: T,
    },
    Triangle([Vec3<T>; 3]),
    SphericalTriangle {
        corners: [Vec3<T>; 3],
        center: Vec3<T>,
        radius: T,
    },
    /// Graph cell made of the triangles (0,1,2) and (0,2,3).
    Quad([Vec3<T>; 4]),
}

/// A quadrature point with its own normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadPoint<T> {
    pub x: Vec3<T>,
    pub normal: Vec3<T>,
    pub weight: T,
}

fn tri_area_vec<T: Real>(a: Vec3<T>, b: Vec3<T>, c3: Vec3<T>) -> Vec3<T> {
    scale(cross(sub(b, a), sub(c3, a)), c(0.5))
}

fn on_sphere<T: Real>(p: Vec3<T>, center: Vec3<T>, radius: T) -> Vec3<T> {
    add(center, scale(normalize(sub(p, center)), radius))
}

/// Area of the spherical triangle with the given corners.
fn spherical_area<T: Real>(corners: &[Vec3<T>; 3], center: Vec3<T>, radius: T) -> T {
    let a = normalize(sub(corners[0], center));
    let b = normalize(sub(corners[1], center));
    let d = normalize(sub(corners[2], center));
    let num = dot(a, cross(b, d)).abs();
    let den = T::one() + dot(a, b) + dot(b, d) + dot(d, a);
    c::<T>(2.0) * num.atan2(den) * radius * radius
}

fn mid<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    scale(add(a, b), c(0.5))
}

impl<T: Real> PanelShape<T> {
    /// Single-point rule for the shape.
    pub fn quad_point(&self) -> QuadPoint<T> {
        match *self {
            PanelShape::Segment([a, b]) => {
                let t = sub(b, a);
                let l = norm(t);
                QuadPoint {
                    x: mid(a, b),
                    normal: [t[1] / l, -t[0] / l, T::zero()],
                    weight: l,
                }
            }
            PanelShape::Arc {
                ends: [a, b],
                center,
                radius,
            } => {
                let ua = normalize(sub(a, center));
                let ub = normalize(sub(b, center));
                let ang = (ua[0] * ub[1] - ua[1] * ub[0]).atan2(dot(ua, ub));
                let (sh, ch) = (ang / c(2.0)).sin_cos();
                let m = [ua[0] * ch - ua[1] * sh, ua[0] * sh + ua[1] * ch, T::zero()];
                QuadPoint {
                    x: add(center, scale(m, radius)),
                    normal: m,
                    weight: ang.abs() * radius,
                }
            }
            PanelShape::Triangle([a, b, d]) => {
                let av = tri_area_vec(a, b, d);
                let ar = norm(av);
                QuadPoint {
                    x: scale(add(add(a, b), d), c(1.0 / 3.0)),
                    normal: scale(av, T::one() / ar),
                    weight: ar,
                }
            }
            PanelShape::SphericalTriangle {
                corners,
                center,
                radius,
            } => {
                let cm = scale(add(add(corners[0], corners[1]), corners[2]), c(1.0 / 3.0));
                let nrm = normalize(sub(cm, center));
                QuadPoint {
                    x: add(center, scale(nrm, radius)),
                    normal: nrm,
                    weight: spherical_area(&corners, center, radius),
                }
            }
            PanelShape::Quad([a, b, d, e]) => {
                let v = add(tri_area_vec(a, b, d), tri_area_vec(a, d, e));
                let area = norm(tri_area_vec(a, b, d)) + norm(tri_area_vec(a, d, e));
                QuadPoint {
                    x: scale(add(add(a, b), add(d, e)), c(0.25)),
                    normal: normalize(v),
                    weight: area,
                }
            }
        }
    }

    /// Children under one level of uniform subdivision.
    pub fn children(&self) -> Vec<PanelShape<T>> {
        match *self {
            PanelShape::Segment([a, b]) => {
                let m = mid(a, b);
                vec![PanelShape::Segment([a, m]), PanelShape::Segment([m, b])]
            }
            PanelShape::Arc {
                ends: [a, b],
                center,
                radius,
            } => {
                let m = self.quad_point().x;
                vec![
                    PanelShape::Arc {
                        ends: [a, m],
                        center,
                        radius,
                    },
                    PanelShape::Arc {
                        ends: [m, b],
                        center,
                        radius,
                    },
                ]
            }
            PanelShape::Triangle([a, b, d]) => {
                let (ab, bd, da) = (mid(a, b), mid(b, d), mid(d, a));
                vec![
                    PanelShape::Triangle([a, ab, da]),
                    PanelShape::Triangle([ab, b, bd]),
                    PanelShape::Triangle([da, bd, d]),
                    PanelShape::Triangle([ab, bd, da]),
                ]
            }
            PanelShape::SphericalTriangle {
                corners: [a, b, d],
                center,
                radius,
            } => {
                let p = |u, v| on_sphere(mid(u, v), center, radius);
                let (ab, bd, da) = (p(a, b), p(b, d), p(d, a));
                [[a, ab, da], [ab, b, bd], [da, bd, d], [ab, bd, da]]
                    .into_iter()
                    .map(|corners| PanelShape::SphericalTriangle {
                        corners,
                        center,
                        radius,
                    })
                    .collect()
            }
            PanelShape::Quad([a, b, d, e]) => {
                vec![PanelShape::Triangle([a, b, d]), PanelShape::Triangle([a, d, e])]
            }
        }
    }

    /// Radius of a ball around the quadrature point containing the shape.
    pub fn radius(&self) -> T {
        let q = self.quad_point().x;
        let pts: Vec<Vec3<T>> = match *self {
            PanelShape::Segment(p) => p.to_vec(),
            PanelShape::Arc { ends, .. } => ends.to_vec(),
            PanelShape::Triangle(p) => p.to_vec(),
            PanelShape::SphericalTriangle { corners, .. } => corners.to_vec(),
            PanelShape::Quad(p) => p.to_vec(),
        };
        pts.iter().map(|&p| dist(p, q)).fold(T::zero(), T::max)
    }
}

/// Discretized boundary with one quadrature node per panel.
#[derive(Debug)]
pub struct BoundaryMesh<T> {
    dim: usize,
    vertices: Vec<Vec3<T>>,
    panels: Vec<Panel<T>>,
    nodes: Vec<Vec3<T>>,
    normals: Vec<Vec3<T>>,
    weights: Vec<T>,
    closed: bool,
    surface: Surface<T>,
    graph: Option<GraphPatch<T>>,
    node_params: Option<Vec<[T; 2]>>,
    lipschitz: T,
    index: OnceLock<PanelIndex<T>>,
}

impl<T: Real> Clone for BoundaryMesh<T> {
    fn clone(&self) -> Self {
        BoundaryMesh {
            dim: self.dim,
            vertices: self.vertices.clone(),
            panels: self.panels.clone(),
            nodes: self.nodes.clone(),
            normals: self.normals.clone(),
            weights: self.weights.clone(),
            closed: self.closed,
            surface: self.surface.clone(),
            graph: self.graph.clone(),
            node_params: self.node_params.clone(),
            lipschitz: self.lipschitz,
            index: OnceLock::new(),
        }
    }
}

impl<T: Real> BoundaryMesh<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn vertices(&self) -> &[Vec3<T>] {
        &self.vertices
    }
    pub fn panels(&self) -> &[Panel<T>] {
        &self.panels
    }
    pub fn nodes(&self) -> &[Vec3<T>] {
        &self.nodes
    }
    pub fn normals(&self) -> &[Vec3<T>] {
        &self.normals
    }
    pub fn weights(&self) -> &[T] {
        &self.weights
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn is_closed(&self) -> bool {
        self.closed
    }
    pub fn surface(&self) -> &Surface<T> {
        &self.surface
    }
    pub fn graph(&self) -> Option<&GraphPatch<T>> {
        self.graph.as_ref()
    }
    /// Parameter coordinates `Φ⁻¹(x_i)` of the nodes of a graph patch.
    pub fn node_params(&self) -> Option<&[[T; 2]]> {
        self.node_params.as_deref()
    }
    pub fn lipschitz(&self) -> T {
        self.lipschitz
    }

    pub fn total_measure(&self) -> T {
        self.weights.iter().copied().sum()
    }

    /// Characteristic node spacing: mean panel length, or square root of the
    /// mean panel area.
    pub fn h(&self) -> T {
        let mean = self.total_measure() / cu(self.len());
        if self.dim == 2 {
            mean
        } else {
            mean.sqrt()
        }
    }

    pub fn diameter(&self) -> T {
        let (lo, hi) = self.bounding_box();
        dist(lo, hi)
    }

    pub fn bounding_box(&self) -> (Vec3<T>, Vec3<T>) {
        let mut lo = [T::infinity(); 3];
        let mut hi = [T::neg_infinity(); 3];
        for p in self.vertices.iter().chain(self.nodes.iter()) {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    /// `Σ w_i N_i`, zero for closed meshes up to quadrature error.
    pub fn gauss_vector(&self) -> Vec3<T> {
        let mut s = zero3();
        for (n, &w) in self.normals.iter().zip(&self.weights) {
            s = add(s, scale(*n, w));
        }
        s
    }

    /// Shape of panel `j` for refined quadrature.
    pub fn panel_shape(&self, j: usize) -> PanelShape<T> {
        let v = &self.panels[j].vertices;
        let p = |k: usize| self.vertices[v[k]];
        match (&self.surface, v.len()) {
            (Surface::Sphere { center, radius }, 2) => PanelShape::Arc {
                ends: [p(0), p(1)],
                center: *center,
                radius: *radius,
            },
            (Surface::Sphere { center, radius }, 3) => PanelShape::SphericalTriangle {
                corners: [p(0), p(1), p(2)],
                center: *center,
                radius: *radius,
            },
            (_, 2) => PanelShape::Segment([p(0), p(1)]),
            (_, 3) => PanelShape::Triangle([p(0), p(1), p(2)]),
            _ => PanelShape::Quad([p(0), p(1), p(2), p(3)]),
        }
    }

    /// Flat pieces (segments or triangles) of panel `j`.
    fn flat_pieces(&self, j: usize) -> Vec<Vec<Vec3<T>>> {
        let v = &self.panels[j].vertices;
        let p = |k: usize| self.vertices[v[k]];
        match v.len() {
            2 => vec![vec![p(0), p(1)]],
            3 => vec![vec![p(0), p(1), p(2)]],
            _ => vec![vec![p(0), p(1), p(2)], vec![p(0), p(2), p(3)]],
        }
    }

    fn index(&self) -> &PanelIndex<T> {
        self.index.get_or_init(|| PanelIndex::build(self))
    }

    /// Distance from `x` to the boundary. Flat meshes are measured exactly
    /// against their panels; sphere meshes against the sphere itself.
    pub fn distance(&self, x: Vec3<T>) -> T {
        if let Surface::Sphere { center, radius } = self.surface {
            return (dist(x, center) - radius).abs();
        }
        self.index().distance(self, x)
    }

    /// Index of the node nearest to `x`.
    pub fn nearest_node(&self, x: Vec3<T>) -> usize {
        let mut best = 0;
        let mut bd = T::infinity();
        for (i, p) in self.nodes.iter().enumerate() {
            let d = dist(*p, x);
            if d < bd {
                bd = d;
                best = i;
            }
        }
        best
    }

    /// True when `x` lies in the interior domain Ω₊ (sphere meshes and closed
    /// flat meshes by winding number; graph patches by height).
    pub fn is_interior(&self, x: Vec3<T>) -> bool {
        if let Surface::Sphere { center, radius } = self.surface {
            return dist(x, center) < radius;
        }
        if let Some(g) = &self.graph {
            let p = g.phi_inv(x);
            let z = if self.dim == 2 { x[1] } else { x[2] };
            return z > g.psi(p);
        }
        if self.dim == 2 {
            let mut wind = T::zero();
            for pan in &self.panels {
                let a = sub(self.vertices[pan.vertices[0]], x);
                let b = sub(self.vertices[pan.vertices[1]], x);
                wind += (a[0] * b[1] - a[1] * b[0]).atan2(a[0] * b[0] + a[1] * b[1]);
            }
            wind.abs() > T::PI()
        } else {
            let mut solid = T::zero();
            for pan in &self.panels {
                let a = sub(self.vertices[pan.vertices[0]], x);
                let b = sub(self.vertices[pan.vertices[1]], x);
                let d = sub(self.vertices[pan.vertices[2]], x);
                let (la, lb, ld) = (norm(a), norm(b), norm(d));
                let num = dot(a, cross(b, d));
                let den = la * lb * ld + dot(a, b) * ld + dot(b, d) * la + dot(d, a) * lb;
                solid += c::<T>(2.0) * num.atan2(den);
            }
            solid.abs() > T::TAU()
        }
    }
}

/// Uniform grid over panel bounding balls for distance queries.
#[derive(Debug)]
struct PanelIndex<T> {
    lo: Vec3<T>,
    cell: T,
    dims: [usize; 3],
    buckets: HashMap<[usize; 3], Vec<usize>>,
    max_radius: T,
}

fn point_segment_distance<T: Real>(x: Vec3<T>, a: Vec3<T>, b: Vec3<T>) -> T {
    let ab = sub(b, a);
    let l2 = dot(ab, ab);
    let t = if l2 > T::zero() {
        (dot(sub(x, a), ab) / l2).max(T::zero()).min(T::one())
    } else {
        T::zero()
    };
    dist(x, add(a, scale(ab, t)))
}

/// Exact point–triangle distance.
pub fn point_triangle_distance<T: Real>(x: Vec3<T>, a: Vec3<T>, b: Vec3<T>, d: Vec3<T>) -> T {
    let n = cross(sub(b, a), sub(d, a));
    let nn = norm(n);
    if nn > T::zero() {
        let nu = scale(n, T::one() / nn);
        let h = dot(sub(x, a), nu);
        let p = sub(x, scale(nu, h));
        let inside = dot(cross(sub(b, a), sub(p, a)), nu) >= T::zero()
            && dot(cross(sub(d, b), sub(p, b)), nu) >= T::zero()
            && dot(cross(sub(a, d), sub(p, d)), nu) >= T::zero();
        if inside {
            return h.abs();
        }
    }
    point_segment_distance(x, a, b)
        .min(point_segment_distance(x, b, d))
        .min(point_segment_distance(x, d, a))
}

impl<T: Real> PanelIndex<T> {
    fn build(mesh: &BoundaryMesh<T>) -> Self {
        let (lo, hi) = mesh.bounding_box();
        let mut max_radius = T::zero();
        for j in 0..mesh.panels.len() {
            max_radius = max_radius.max(mesh.panel_shape(j).radius());
        }
        let ext = sub(hi, lo);
        let diam = norm(ext).max(T::epsilon());
        let cell = (max_radius * c(2.0)).max(diam / c(64.0));
        let mut dims = [1usize; 3];
        for k in 0..3 {
            dims[k] = ((ext[k] / cell).floor().to_usize().unwrap_or(0) + 1).min(4096);
        }
        let mut buckets: HashMap<[usize; 3], Vec<usize>> = HashMap::new();
        for (j, p) in mesh.panels.iter().enumerate() {
            let key = Self::key_of(lo, cell, dims, p.centroid);
            buckets.entry(key).or_default().push(j);
        }
        PanelIndex {
            lo,
            cell,
            dims,
            buckets,
            max_radius,
        }
    }

    fn key_of(lo: Vec3<T>, cell: T, dims: [usize; 3], x: Vec3<T>) -> [usize; 3] {
        let mut k = [0usize; 3];
        for a in 0..3 {
            let f = ((x[a] - lo[a]) / cell).floor();
            let f = f.max(T::zero()).to_usize().unwrap_or(0);
            k[a] = f.min(dims[a] - 1);
        }
        k
    }

    fn panel_distance(mesh: &BoundaryMesh<T>, j: usize, x: Vec3<T>) -> T {
        mesh.flat_pieces(j)
            .iter()
            .map(|p| {
                if p.len() == 2 {
                    point_segment_distance(x, p[0], p[1])
                } else {
                    point_triangle_distance(x, p[0], p[1], p[2])
                }
            })
            .fold(T::infinity(), T::min)
    }

    fn distance(&self, mesh: &BoundaryMesh<T>, x: Vec3<T>) -> T {
        // Upper bound from the nearest centroid, then scan every bucket that
        // can hold a closer panel.
        let key = Self::key_of(self.lo, self.cell, self.dims, x);
        let mut best = T::infinity();
        let mut ring = 0usize;
        loop {
            let mut any = false;
            self.for_ring(key, ring, |j| {
                any = true;
                best = best.min(Self::panel_distance(mesh, j, x));
            });
            let reach = cu::<T>(ring) * self.cell - self.max_radius - self.cell;
            let outside = (0..3).all(|a| {
                key[a] < ring && key[a] + ring >= self.dims[a] - 1
            });
            if (best.is_finite() && reach > best) || outside {
                break;
            }
            let _ = any;
            ring += 1;
        }
        best
    }

    fn for_ring(&self, key: [usize; 3], ring: usize, mut f: impl FnMut(usize)) {
        let r = ring as isize;
        for dx in -r..=r {
            for dy in -r..=r {
                for dz in -r..=r {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                        continue;
                    }
                    let k = [key[0] as isize + dx, key[1] as isize + dy, key[2] as isize + dz];
                    if (0..3).any(|a| k[a] < 0 || k[a] >= self.dims[a] as isize) {
                        continue;
                    }
                    if let Some(list) = self.buckets.get(&[k[0] as usize, k[1] as usize, k[2] as usize]) {
                        for &j in list {
                            f(j);
                        }
                    }
                }
            }
        }
    }
}

fn finish_flat<T: Real>(
    dim: usize,
    vertices: Vec<Vec3<T>>,
    faces: Vec<Vec<usize>>,
    closed: bool,
    lipschitz: T,
) -> BoundaryMesh<T> {
    let mut mesh = BoundaryMesh {
        dim,
        vertices,
        panels: Vec::with_capacity(faces.len()),
        nodes: Vec::new(),
        normals: Vec::new(),
        weights: Vec::new(),
        closed,
        surface: Surface::Flat,
        graph: None,
        node_params: None,
        lipschitz,
        index: OnceLock::new(),
    };
    for f in faces {
        mesh.panels.push(Panel {
            vertices: f,
            normal: zero3(),
            measure: T::zero(),
            centroid: zero3(),
        });
    }
    for j in 0..mesh.panels.len() {
        let q = mesh.panel_shape(j).quad_point();
        let p = &mut mesh.panels[j];
        p.normal = q.normal;
        p.measure = q.weight;
        p.centroid = q.x;
        mesh.nodes.push(q.x);
        mesh.normals.push(q.normal);
        mesh.weights.push(q.weight);
    }
    mesh
}

fn segments_intersect<T: Real>(a: Vec3<T>, b: Vec3<T>, p: Vec3<T>, q: Vec3<T>) -> bool {
    let orient = |u: Vec3<T>, v: Vec3<T>, w: Vec3<T>| (v[0] - u[0]) * (w[1] - u[1]) - (v[1] - u[1]) * (w[0] - u[0]);
    let d1 = orient(a, b, p);
    let d2 = orient(a, b, q);
    let d3 = orient(p, q, a);
    let d4 = orient(p, q, b);
    let z = T::zero();
    if ((d1 > z && d2 < z) || (d1 < z && d2 > z)) && ((d3 > z && d4 < z) || (d3 < z && d4 > z)) {
        return true;
    }
    let on = |u: Vec3<T>, v: Vec3<T>, w: Vec3<T>, d: T| {
        d == z
            && w[0] >= u[0].min(v[0])
            && w[0] <= u[0].max(v[0])
            && w[1] >= u[1].min(v[1])
            && w[1] <= u[1].max(v[1])
    };
    on(a, b, p, d1) || on(a, b, q, d2) || on(p, q, a, d3) || on(p, q, b, d4)
}

/// Local Lipschitz slope at a polygon corner with turning angle `β`:
/// the best chart (along the angle bisector) sees both edges at slope
/// `tan(|β|/2)`.
fn corner_slope<T: Real>(e_in: Vec3<T>, e_out: Vec3<T>) -> T {
    let beta = (e_in[0] * e_out[1] - e_in[1] * e_out[0]).atan2(dot(e_in, e_out));
    (beta.abs() / c(2.0)).tan()
}

/// Closed polygon with `panels_per_edge` equal segments per edge.
pub fn build_polygon_boundary<T: Real>(vertices: &[[T; 2]], panels_per_edge: usize) -> Result<BoundaryMesh<T>> {
    let nv = vertices.len();
    if nv < 3 {
        return Err(Error::Geometry("a polygon needs at least 3 vertices".into()));
    }
    if panels_per_edge == 0 {
        return Err(Error::Geometry("panels_per_edge must be positive".into()));
    }
    let pts: Vec<Vec3<T>> = vertices.iter().map(|p| [p[0], p[1], T::zero()]).collect();
    if pts.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::Geometry("non-finite vertex".into()));
    }
    for i in 0..nv {
        if pts[i] == pts[(i + 1) % nv] {
            return Err(Error::Geometry(format!("duplicate consecutive vertex at {i}")));
        }
    }
    let mut area2 = T::zero();
    for i in 0..nv {
        let a = pts[i];
        let b = pts[(i + 1) % nv];
        area2 += a[0] * b[1] - a[1] * b[0];
    }
    let scale_len = pts.iter().map(|p| norm(*p)).fold(T::zero(), T::max).max(T::one());
    if area2.abs() <= T::epsilon() * c(16.0) * scale_len * scale_len {
        return Err(Error::Geometry("collinear vertices".into()));
    }
    for i in 0..nv {
        for j in i + 1..nv {
            let adjacent = j == i + 1 || (i == 0 && j == nv - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(pts[i], pts[(i + 1) % nv], pts[j], pts[(j + 1) % nv]) {
                return Err(Error::Geometry(format!("self-intersecting polygon: edges {i} and {j}")));
            }
        }
    }
    if area2 < T::zero() {
        return Err(Error::Geometry("inverted orientation: vertices must be counterclockwise".into()));
    }
    let mut lip = T::zero();
    for i in 0..nv {
        let e_in = sub(pts[i], pts[(i + nv - 1) % nv]);
        let e_out = sub(pts[(i + 1) % nv], pts[i]);
        lip = lip.max(corner_slope(e_in, e_out));
    }
    let m = panels_per_edge;
    let mut verts = Vec::with_capacity(nv * m);
    for i in 0..nv {
        let a = pts[i];
        let b = pts[(i + 1) % nv];
        for k in 0..m {
            let t = cu::<T>(k) / cu(m);
            verts.push(add(a, scale(sub(b, a), t)));
        }
    }
    let nvert = verts.len();
    let faces = (0..nvert).map(|k| vec![k, (k + 1) % nvert]).collect();
    Ok(finish_flat(2, verts, faces, true, lip))
}

fn check_closed_triangulation<T: Real>(vertices: &[Vec3<T>], faces: &[[usize; 3]]) -> Result<()> {
    if faces.is_empty() {
        return Err(Error::Geometry("no faces".into()));
    }
    let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
    for (fi, f) in faces.iter().enumerate() {
        for &v in f {
            if v >= vertices.len() {
                return Err(Error::Geometry(format!("face {fi} references missing vertex {v}")));
            }
        }
        if f[0] == f[1] || f[1] == f[2] || f[2] == f[0] {
            return Err(Error::Geometry(format!("degenerate face {fi}")));
        }
        let av = tri_area_vec(vertices[f[0]], vertices[f[1]], vertices[f[2]]);
        if norm(av) == T::zero() {
            return Err(Error::Geometry(format!("zero-area face {fi}")));
        }
        for k in 0..3 {
            *directed.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
        }
    }
    let mut undirected: HashMap<(usize, usize), usize> = HashMap::new();
    for (&(a, b), &cnt) in &directed {
        *undirected.entry((a.min(b), a.max(b))).or_default() += cnt;
    }
    let mut bad: Vec<_> = undirected.iter().filter(|(_, &cnt)| cnt != 2).map(|(e, _)| *e).collect();
    if !bad.is_empty() {
        bad.sort();
        return Err(Error::Geometry(format!(
            "not watertight: edge {:?} shared by {} faces",
            bad[0], undirected[&bad[0]]
        )));
    }
    let mut incons: Vec<_> = directed.iter().filter(|(_, &cnt)| cnt > 1).map(|(e, _)| *e).collect();
    if !incons.is_empty() {
        incons.sort();
        return Err(Error::Geometry(format!("inconsistent face orientation along edge {:?}", incons[0])));
    }
    let mut vol = T::zero();
    for f in faces {
        vol += dot(vertices[f[0]], cross(vertices[f[1]], vertices[f[2]]));
    }
    if vol <= T::zero() {
        return Err(Error::Geometry("inverted orientation: normals point inward".into()));
    }
    Ok(())
}

fn subdivide<T: Real>(
    vertices: &mut Vec<Vec3<T>>,
    faces: &[[usize; 3]],
    project: Option<(Vec3<T>, T)>,
) -> Vec<[usize; 3]> {
    let mut mids: HashMap<(usize, usize), usize> = HashMap::new();
    let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vec3<T>>| -> usize {
        let key = (a.min(b), a.max(b));
        if let Some(&m) = mids.get(&key) {
            return m;
        }
        let mut p = mid(vertices[a], vertices[b]);
        if let Some((center, radius)) = project {
            p = on_sphere(p, center, radius);
        }
        vertices.push(p);
        let idx = vertices.len() - 1;
        mids.insert(key, idx);
        idx
    };
    let mut out = Vec::with_capacity(faces.len() * 4);
    for f in faces {
        let ab = midpoint(f[0], f[1], vertices);
        let bc = midpoint(f[1], f[2], vertices);
        let ca = midpoint(f[2], f[0], vertices);
        out.push([f[0], ab, ca]);
        out.push([ab, f[1], bc]);
        out.push([ca, bc, f[2]]);
        out.push([ab, bc, ca]);
    }
    out
}

fn dihedral_lipschitz<T: Real>(vertices: &[Vec3<T>], faces: &[[usize; 3]]) -> T {
    let normals: Vec<Vec3<T>> = faces
        .iter()
        .map(|f| normalize(tri_area_vec(vertices[f[0]], vertices[f[1]], vertices[f[2]])))
        .collect();
    let mut by_edge: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (fi, f) in faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            by_edge.entry((a.min(b), a.max(b))).or_default().push(fi);
        }
    }
    let mut lip = T::zero();
    for fs in by_edge.values() {
        if fs.len() == 2 {
            let n1 = normals[fs[0]];
            let n2 = normals[fs[1]];
            let ang = norm(cross(n1, n2)).atan2(dot(n1, n2));
            lip = lip.max((ang / c(2.0)).tan());
        }
    }
    lip
}

/// Closed triangulated polyhedron, each face split into `4^level` flat
/// triangles.
pub fn build_triangulated_boundary<T: Real>(
    vertices: &[Vec3<T>],
    faces: &[[usize; 3]],
    refinement_level: usize,
) -> Result<BoundaryMesh<T>> {
    if vertices.iter().any(|p| p.iter().any(|x| !x.is_finite())) {
        return Err(Error::Geometry("non-finite vertex".into()));
    }
    check_closed_triangulation(vertices, faces)?;
    let mut verts = vertices.to_vec();
    let mut fs = faces.to_vec();
    for _ in 0..refinement_level {
        fs = subdivide(&mut verts, &fs, None);
    }
    let lip = dihedral_lipschitz(&verts, &fs);
    Ok(finish_flat(3, verts, fs.into_iter().map(|f| f.to_vec()).collect(), true, lip))
}

/// Platonic solid used as the coarsest sphere mesh.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SphereBase {
    Octahedron,
    Icosahedron,
}

fn base_solid<T: Real>(base: SphereBase) -> (Vec<Vec3<T>>, Vec<[usize; 3]>) {
    match base {
        SphereBase::Octahedron => {
            let (o, z) = (T::one(), T::zero());
            let v = vec![[o, z, z], [-o, z, z], [z, o, z], [z, -o, z], [z, z, o], [z, z, -o]];
            let f = vec![
                [0, 2, 4],
                [2, 1, 4],
                [1, 3, 4],
                [3, 0, 4],
                [2, 0, 5],
                [1, 2, 5],
                [3, 1, 5],
                [0, 3, 5],
            ];
            (v, f)
        }
        SphereBase::Icosahedron => {
            let p: T = (T::one() + c::<T>(5.0).sqrt()) / c(2.0);
            let (o, z) = (T::one(), T::zero());
            let raw = [
                [-o, p, z],
                [o, p, z],
                [-o, -p, z],
                [o, -p, z],
                [z, -o, p],
                [z, o, p],
                [z, -o, -p],
                [z, o, -p],
                [p, z, -o],
                [p, z, o],
                [-p, z, -o],
                [-p, z, o],
            ];
            let v: Vec<Vec3<T>> = raw.iter().map(|&q| normalize(q)).collect();
            let mut f = vec![
                [0, 11, 5],
                [0, 5, 1],
                [0, 1, 7],
                [0, 7, 10],
                [0, 10, 11],
                [1, 5, 9],
                [5, 11, 4],
                [11, 10, 2],
                [10, 7, 6],
                [7, 1, 8],
                [3, 9, 4],
                [3, 4, 2],
                [3, 2, 6],
                [3, 6, 8],
                [3, 8, 9],
                [4, 9, 5],
                [2, 4, 11],
                [6, 2, 10],
                [8, 6, 7],
                [9, 8, 1],
            ];
            for t in f.iter_mut() {
                let a = tri_area_vec(v[t[0]], v[t[1]], v[t[2]]);
                let cm = add(add(v[t[0]], v[t[1]]), v[t[2]]);
                if dot(a, cm) < T::zero() {
                    t.swap(1, 2);
                }
            }
            (v, f)
        }
    }
}

/// Sphere of the given center and radius, refined `level` times from a
/// platonic base with midpoints pushed onto the sphere.
pub fn sphere_mesh<T: Real>(base: SphereBase, level: usize, center: Vec3<T>, radius: T) -> Result<BoundaryMesh<T>> {
    if !(radius > T::zero()) {
        return Err(Error::Geometry("sphere radius must be positive".into()));
    }
    let (v, mut f) = base_solid::<T>(base);
    let mut verts: Vec<Vec3<T>> = v.iter().map(|&p| add(center, scale(p, radius))).collect();
    for _ in 0..level {
        f = subdivide(&mut verts, &f, Some((center, radius)));
    }
    let lip = dihedral_lipschitz(&verts, &f);
    let mut mesh = finish_flat(3, verts, f.into_iter().map(|t| t.to_vec()).collect(), true, lip);
    mesh.surface = Surface::Sphere { center, radius };
    for j in 0..mesh.panels.len() {
        let q = mesh.panel_shape(j).quad_point();
        mesh.nodes[j] = q.x;
        mesh.normals[j] = q.normal;
        mesh.weights[j] = q.weight;
    }
    Ok(mesh)
}

/// Unit sphere centered at the origin.
pub fn unit_sphere<T: Real>(base: SphereBase, level: usize) -> BoundaryMesh<T> {
    sphere_mesh(base, level, zero3(), T::one()).expect("unit sphere is valid")
}

/// Circle with `panels` equal arcs.
pub fn circle_mesh<T: Real>(panels: usize, center: [T; 2], radius: T) -> Result<BoundaryMesh<T>> {
    if panels < 3 || !(radius > T::zero()) {
        return Err(Error::Geometry("a circle needs at least 3 panels and a positive radius".into()));
    }
    let verts: Vec<Vec3<T>> = (0..panels)
        .map(|k| {
            let t = T::TAU() * cu(k) / cu(panels);
            [center[0] + radius * t.cos(), center[1] + radius * t.sin(), T::zero()]
        })
        .collect();
    let faces = (0..panels).map(|k| vec![k, (k + 1) % panels]).collect();
    let lip = (T::PI() / cu(panels)).tan();
    let mut mesh = finish_flat(2, verts, faces, true, lip);
    mesh.surface = Surface::Sphere {
        center: [center[0], center[1], T::zero()],
        radius,
    };
    for j in 0..mesh.panels.len() {
        let q = mesh.panel_shape(j).quad_point();
        mesh.nodes[j] = q.x;
        mesh.normals[j] = q.normal;
        mesh.weights[j] = q.weight;
    }
    Ok(mesh)
}

/// Open Lipschitz graph patch `{x_n = ψ(x')}` over a regular grid; the
/// domain Ω₊ lies above the graph, so normals point downward.
pub fn build_graph_patch<T: Real>(patch: GraphPatch<T>) -> Result<BoundaryMesh<T>> {
    let GraphPatch { nx, ny, .. } = patch;
    if nx < 2 || ny < 1 || (ny > 1 && ny < 2) {
        return Err(Error::Geometry("graph grid needs at least 2 samples per axis".into()));
    }
    if patch.heights.len() != nx * ny {
        return Err(Error::Geometry(format!(
            "expected {} heights, got {}",
            nx * ny,
            patch.heights.len()
        )));
    }
    if patch.heights.iter().any(|h| !h.is_finite()) {
        return Err(Error::Geometry("non-finite height sample".into()));
    }
    if !(patch.x1 > patch.x0) || (ny > 1 && !(patch.y1 > patch.y0)) {
        return Err(Error::Geometry("empty parameter box".into()));
    }
    let dx = patch.dx();
    let planar = ny == 1;
    let mut verts = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x = patch.x0 + dx * cu(i);
            if planar {
                verts.push([x, patch.h(i, 0), T::zero()]);
            } else {
                let y = patch.y0 + patch.dy() * cu(j);
                verts.push([x, y, patch.h(i, j)]);
            }
        }
    }
    let mut faces = Vec::new();
    let mut params = Vec::new();
    let mut lip = T::zero();
    if planar {
        for i in 0..nx - 1 {
            // Ω₊ above: traverse right to left so the segment normal points down.
            faces.push(vec![i + 1, i]);
            params.push([patch.x0 + dx * (cu::<T>(i) + c(0.5)), T::zero()]);
            lip = lip.max(((patch.h(i + 1, 0) - patch.h(i, 0)) / dx).abs());
        }
    } else {
        let dy = patch.dy();
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let v00 = j * nx + i;
                let v10 = v00 + 1;
                let v11 = v00 + nx + 1;
                let v01 = v00 + nx;
                // Clockwise seen from above so that normals point down.
                faces.push(vec![v00, v01, v11, v10]);
                params.push([
                    patch.x0 + dx * (cu::<T>(i) + c(0.5)),
                    patch.y0 + dy * (cu::<T>(j) + c(0.5)),
                ]);
                let (h00, h10, h11, h01) = (patch.h(i, j), patch.h(i + 1, j), patch.h(i + 1, j + 1), patch.h(i, j + 1));
                let g1 = [(h10 - h00) / dx, (h11 - h10) / dy];
                let g2 = [(h11 - h01) / dx, (h01 - h00) / dy];
                for g in [g1, g2] {
                    lip = lip.max((g[0] * g[0] + g[1] * g[1]).sqrt());
                }
            }
        }
    }
    let dim = if planar { 2 } else { 3 };
    let mut mesh = finish_flat(dim, verts, faces, false, lip);
    if !planar {
        for (j, p) in params.iter().enumerate() {
            mesh.nodes[j] = patch.phi(*p);
        }
    }
    mesh.node_params = Some(params);
    mesh.graph = Some(patch);
    Ok(mesh)
}

/// Graph patch sampled from a closure on an `nx × ny` grid over
/// `[x0,x1]×[y0,y1]`.
pub fn graph_patch_from_fn<T: Real>(
    nx: usize,
    ny: usize,
    x0: T,
    x1: T,
    y0: T,
    y1: T,
    psi: impl Fn(T, T) -> T,
) -> Result<BoundaryMesh<T>> {
    let mut heights = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x = x0 + (x1 - x0) * cu(i) / cu(nx - 1);
            let y = if ny > 1 { y0 + (y1 - y0) * cu(j) / cu(ny - 1) } else { T::zero() };
            heights.push(psi(x, y));
        }
    }
    build_graph_patch(GraphPatch {
        nx,
        ny,
        x0,
        x1,
        y0,
        y1,
        heights,
    })
}

/// Nodes in the surface ball `I(P, r) = B(P, r) ∩ ∂Ω` around node `p`.
pub fn surface_ball<T: Real>(mesh: &BoundaryMesh<T>, p: usize, r: T) -> Vec<usize> {
    let c0 = mesh.nodes[p];
    mesh.nodes
        .iter()
        .enumerate()
        .filter(|(_, x)| dist(**x, c0) < r)
        .map(|(i, _)| i)
        .collect()
}

/// Nodes in the ball of radius `r` around an arbitrary point.
pub fn nodes_in_ball<T: Real>(mesh: &BoundaryMesh<T>, center: Vec3<T>, r: T) -> Vec<usize> {
    mesh.nodes
        .iter()
        .enumerate()
        .filter(|(_, x)| dist(**x, center) < r)
        .map(|(i, _)| i)
        .collect()
}

/// A cube of the surface dyadic decomposition; its parameter image is an
/// axis-aligned box.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceCube<T> {
    pub nodes: Vec<usize>,
    pub lo: [T; 2],
    pub hi: [T; 2],
    /// Point of the surface above the box center.
    pub center: Vec3<T>,
    pub depth: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// Nodes of a dilated cube, with the box clipped to the parameter domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DilatedCube<T> {
    pub lo: [T; 2],
    pub hi: [T; 2],
    pub clipped: bool,
    pub nodes: Vec<usize>,
}

/// Dyadic decomposition of a graph patch (or of a chart of a closed mesh).
#[derive(Clone, Debug)]
pub struct SurfaceCubeTree<T> {
    pub cubes: Vec<SurfaceCube<T>>,
    pub max_depth: usize,
    /// Number of parameter directions (n − 1).
    pub param_dim: usize,
    /// Parameter coordinates of every node of the mesh (NaN outside the chart).
    pub params: Vec<[T; 2]>,
    /// Quadrature weights of every node.
    pub weights: Vec<T>,
    pub domain_lo: [T; 2],
    pub domain_hi: [T; 2],
}

fn in_box<T: Real>(p: [T; 2], lo: [T; 2], hi: [T; 2], dlo: [T; 2], dhi: [T; 2], pd: usize) -> bool {
    (0..pd).all(|a| {
        let upper = if hi[a] >= dhi[a] { p[a] <= hi[a] } else { p[a] < hi[a] };
        upper && p[a] >= lo[a].max(dlo[a])
    })
}

impl<T: Real> SurfaceCubeTree<T> {
    /// Builds the tree over nodes with parameter coordinates `params`
    /// (entries with NaN are excluded) inside the box `[lo, hi]`.
    pub fn from_params(
        params: Vec<[T; 2]>,
        weights: Vec<T>,
        param_dim: usize,
        lo: [T; 2],
        hi: [T; 2],
        max_depth: usize,
        center_of: impl Fn([T; 2]) -> Vec3<T>,
    ) -> Self {
        let all: Vec<usize> = (0..params.len())
            .filter(|&i| !params[i][0].is_nan() && in_box(params[i], lo, hi, lo, hi, param_dim))
            .collect();
        let mid2 = |a: [T; 2], b: [T; 2]| [(a[0] + b[0]) / c(2.0), (a[1] + b[1]) / c(2.0)];
        let mut cubes = vec![SurfaceCube {
            nodes: all,
            lo,
            hi,
            center: center_of(mid2(lo, hi)),
            depth: 0,
            parent: None,
            children: Vec::new(),
        }];
        let mut frontier = vec![0usize];
        for depth in 1..=max_depth {
            let mut next = Vec::new();
            for &pi in &frontier {
                let (plo, phi) = (cubes[pi].lo, cubes[pi].hi);
                let m = mid2(plo, phi);
                let nchild = 1usize << param_dim;
                for k in 0..nchild {
                    let mut clo = plo;
                    let mut chi = phi;
                    for a in 0..param_dim {
                        if (k >> a) & 1 == 0 {
                            chi[a] = m[a];
                        } else {
                            clo[a] = m[a];
                        }
                    }
                    let nodes: Vec<usize> = cubes[pi]
                        .nodes
                        .iter()
                        .copied()
                        .filter(|&i| in_box(params[i], clo, chi, lo, hi, param_dim))
                        .collect();
                    let idx = cubes.len();
                    cubes.push(SurfaceCube {
                        nodes,
                        lo: clo,
                        hi: chi,
                        center: center_of(mid2(clo, chi)),
                        depth,
                        parent: Some(pi),
                        children: Vec::new(),
                    });
                    cubes[pi].children.push(idx);
                    next.push(idx);
                }
            }
            frontier = next;
        }
        SurfaceCubeTree {
            cubes,
            max_depth,
            param_dim,
            params,
            weights,
            domain_lo: lo,
            domain_hi: hi,
        }
    }

    pub fn root(&self) -> &SurfaceCube<T> {
        &self.cubes[0]
    }

    pub fn at_depth(&self, d: usize) -> impl Iterator<Item = &SurfaceCube<T>> {
        self.cubes.iter().filter(move |q| q.depth == d)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &SurfaceCube<T>> {
        self.at_depth(self.max_depth)
    }

    /// Surface measure of a node set.
    pub fn measure(&self, nodes: &[usize]) -> T {
        nodes.iter().map(|&i| self.weights[i]).sum()
    }

    /// Nodes whose parameter point lies in the box.
    pub fn nodes_in_box(&self, lo: [T; 2], hi: [T; 2]) -> Vec<usize> {
        self.root()
            .nodes
            .iter()
            .copied()
            .filter(|&i| in_box(self.params[i], lo, hi, self.domain_lo, self.domain_hi, self.param_dim))
            .collect()
    }

    /// `αQ`: the parameter box scaled by `α` about its center, clipped to the
    /// parameter domain.
    pub fn dilation(&self, cube: &SurfaceCube<T>, alpha: T) -> DilatedCube<T> {
        let mut lo = cube.lo;
        let mut hi = cube.hi;
        let mut clipped = false;
        for a in 0..self.param_dim {
            let m = (cube.lo[a] + cube.hi[a]) / c(2.0);
            let half = (cube.hi[a] - cube.lo[a]) / c(2.0) * alpha;
            lo[a] = m - half;
            hi[a] = m + half;
            if lo[a] < self.domain_lo[a] {
                lo[a] = self.domain_lo[a];
                clipped = true;
            }
            if hi[a] > self.domain_hi[a] {
                hi[a] = self.domain_hi[a];
                clipped = true;
            }
        }
        let nodes = self.nodes_in_box(lo, hi);
        DilatedCube { lo, hi, clipped, nodes }
    }
}

/// Dyadic cubes of a graph patch down to `max_depth`.
pub fn dyadic_cubes<T: Real>(mesh: &BoundaryMesh<T>, max_depth: usize) -> Result<SurfaceCubeTree<T>> {
    let (g, params) = match (&mesh.graph, &mesh.node_params) {
        (Some(g), Some(p)) => (g, p),
        _ => {
            return Err(Error::UnsupportedGeometry(
                "dyadic cubes need a graph parameterization".into(),
            ))
        }
    };
    let (lo, hi) = g.param_box();
    let gc = g.clone();
    Ok(SurfaceCubeTree::from_params(
        params.clone(),
        mesh.weights.clone(),
        g.param_dim(),
        lo,
        hi,
        max_depth,
        move |p| gc.phi(p),
    ))
}

/// Dyadic cubes of a local chart of a closed surface around node `p`: nodes
/// are projected onto the tangent plane at `p` and the chart is the square of
/// half-width `half_width` there.
pub fn chart_cubes<T: Real>(
    mesh: &BoundaryMesh<T>,
    p: usize,
    half_width: T,
    max_depth: usize,
) -> Result<SurfaceCubeTree<T>> {
    let np = mesh.normals[p];
    let xp = mesh.nodes[p];
    let (e1, e2) = tangent_frame(np);
    let mut params = Vec::with_capacity(mesh.len());
    for i in 0..mesh.len() {
        let d = sub(mesh.nodes[i], xp);
        let s = dot(d, e1);
        let t = if mesh.dim == 3 { dot(d, e2) } else { T::zero() };
        let inside = s.abs() <= half_width && (mesh.dim == 2 || t.abs() <= half_width) && dot(d, np).abs() <= half_width;
        if inside {
            if dot(mesh.normals[i], np) <= T::zero() {
                return Err(Error::UnsupportedGeometry(format!(
                    "chart around node {p} is not a graph (node {i})"
                )));
            }
            params.push([s, t]);
        } else {
            params.push([T::nan(), T::nan()]);
        }
    }
    let pd = mesh.dim - 1;
    let lo = [-half_width, if pd == 2 { -half_width } else { T::zero() }];
    let hi = [half_width, if pd == 2 { half_width } else { T::zero() }];
    let nodes = mesh.nodes.clone();
    let centers: Vec<([T; 2], usize)> = params
        .iter()
        .enumerate()
        .filter(|(_, q)| !q[0].is_nan())
        .map(|(i, q)| (*q, i))
        .collect();
    Ok(SurfaceCubeTree::from_params(
        params,
        mesh.weights.clone(),
        pd,
        lo,
        hi,
        max_depth,
        move |q| {
            let mut best = (T::infinity(), 0usize);
            for (pq, i) in &centers {
                let d = (pq[0] - q[0]).powi(2) + (pq[1] - q[1]).powi(2);
                if d < best.0 {
                    best = (d, *i);
                }
            }
            nodes[best.1]
        },
    ))
}

/// Orthonormal tangent vectors completing `n` to a right-handed frame.
pub fn tangent_frame<T: Real>(n: Vec3<T>) -> (Vec3<T>, Vec3<T>) {
    let a = if n[0].abs() < c(0.9) { [T::one(), T::zero(), T::zero()] } else { [T::zero(), T::one(), T::zero()] };
    let e1 = normalize(sub(a, scale(n, dot(a, n))));
    let e2 = cross(n, e1);
    (e1, e2)
}

/// Which side of the boundary a point or sample belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    /// Ω₊, the interior domain (opposite to the normal).
    Interior,
    /// Ω₋, the exterior domain (along the normal).
    Exterior,
}

/// Accepted nontangential samples for one node.
#[derive(Clone, Debug, PartialEq)]
pub struct ConeSamples<T> {
    pub node: usize,
    pub interior: Vec<Vec3<T>>,
    pub exterior: Vec<Vec3<T>>,
    pub rejected: usize,
}

/// Aperture of the approach regions `γ(P) = {|x − P| < 2 dist(x, ∂Ω)}`.
pub const APERTURE: f64 = 2.0;

/// The small constant in the localized regions `|x − P| < c r`.
pub const TRUNCATION_FACTOR: f64 = 0.25;

/// True when `x` lies in the (truncated) approach region of `p`.
pub fn in_cone<T: Real>(mesh: &BoundaryMesh<T>, p: Vec3<T>, x: Vec3<T>, truncation: T) -> bool {
    let r = dist(x, p);
    r <= truncation && r < c::<T>(APERTURE) * mesh.distance(x)
}

/// Geometrically graded nontangential samples at node `p`: along the normal
/// at distances `truncation·2^{-j}` and along tilted directions jittered in
/// azimuth, each kept only if it passes the aperture test against the
/// boundary distance function.
pub fn cone_samples<T: Real>(mesh: &BoundaryMesh<T>, p: usize, truncation: T, samples_per_node: usize) -> ConeSamples<T> {
    let x0 = mesh.nodes[p];
    let n = mesh.normals[p];
    let (e1, e2) = if mesh.dim == 3 {
        tangent_frame(n)
    } else {
        ([-n[1], n[0], T::zero()], zero3())
    };
    let tilt: T = c(0.6);
    let golden: T = c(2.399963229728653);
    let mut out = ConeSamples {
        node: p,
        interior: Vec::new(),
        exterior: Vec::new(),
        rejected: 0,
    };
    for j in 0..samples_per_node {
        let d = truncation * c::<T>(0.5).powi(j as i32);
        let phi = golden * cu(j);
        let tdir = if mesh.dim == 3 {
            add(scale(e1, phi.cos()), scale(e2, phi.sin()))
        } else if j % 2 == 0 {
            e1
        } else {
            scale(e1, -T::one())
        };
        for (side, sgn) in [(Side::Interior, -T::one()), (Side::Exterior, T::one())] {
            let dirs = [
                scale(n, sgn),
                normalize(add(scale(n, sgn * tilt.cos()), scale(tdir, tilt.sin()))),
            ];
            for dir in dirs {
                let x = add(x0, scale(dir, d));
                if in_cone(mesh, x0, x, truncation) {
                    match side {
                        Side::Interior => out.interior.push(x),
                        Side::Exterior => out.exterior.push(x),
                    }
                } else {
                    out.rejected += 1;
                }
            }
        }
    }
    out
}

/// Text serialization in the mesh file format.
pub fn write_mesh<T: Real>(mesh: &BoundaryMesh<T>) -> String {
    let mut s = format!("dim {} closed {}\n", mesh.dim, if mesh.closed { 1 } else { 0 });
    if let Some(g) = &mesh.graph {
        s.push_str(&format!("g {} {} {:e} {:e} {:e} {:e}\n", g.nx, g.ny, g.x0, g.x1, g.y0, g.y1));
        for row in g.heights.chunks(g.nx) {
            let line: Vec<String> = row.iter().map(|h| format!("{:e}", h)).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        return s;
    }
    for v in &mesh.vertices {
        if mesh.dim == 2 {
            s.push_str(&format!("v {:e} {:e}\n", v[0], v[1]));
        } else {
            s.push_str(&format!("v {:e} {:e} {:e}\n", v[0], v[1], v[2]));
        }
    }
    for p in &mesh.panels {
        let idx: Vec<String> = p.vertices.iter().map(|i| i.to_string()).collect();
        s.push_str(&format!("f {}\n", idx.join(" ")));
    }
    s
}

/// Parses the mesh file format. Closed meshes are refined `level` times
/// (triangles) or split into `level + 1` panels per edge (polygons).
pub fn parse_mesh<T: Real>(text: &str, level: usize) -> Result<BoundaryMesh<T>> {
    let mut dim = None;
    let mut closed = None;
    let mut verts: Vec<Vec3<T>> = Vec::new();
    let mut faces: Vec<Vec<usize>> = Vec::new();
    let mut graph: Option<(usize, usize, [T; 4])> = None;
    let mut heights: Vec<T> = Vec::new();
    let num = |tok: &str, line: usize| -> Result<T> {
        tok.parse::<f64>()
            .map(c)
            .map_err(|_| Error::Parse {
                line,
                msg: format!("bad number '{tok}'"),
            })
    };
    let int = |tok: &str, line: usize| -> Result<usize> {
        tok.parse::<usize>().map_err(|_| Error::Parse {
            line,
            msg: format!("bad index '{tok}'"),
        })
    };
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        match toks[0] {
            "dim" => {
                if toks.len() != 4 || toks[2] != "closed" {
                    return Err(Error::Parse {
                        line,
                        msg: "header must read 'dim n closed {0|1}'".into(),
                    });
                }
                let d = int(toks[1], line)?;
                if d != 2 && d != 3 {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unsupported dimension {d}"),
                    });
                }
                dim = Some(d);
                closed = Some(match toks[3] {
                    "0" => false,
                    "1" => true,
                    other => {
                        return Err(Error::Parse {
                            line,
                            msg: format!("closed flag must be 0 or 1, got '{other}'"),
                        })
                    }
                });
            }
            "v" => {
                let d = dim.ok_or(Error::Parse {
                    line,
                    msg: "vertex before header".into(),
                })?;
                if toks.len() != d + 1 {
                    return Err(Error::Parse {
                        line,
                        msg: format!("vertex needs {d} coordinates"),
                    });
                }
                let mut p = zero3();
                for k in 0..d {
                    p[k] = num(toks[k + 1], line)?;
                }
                verts.push(p);
            }
            "f" => {
                let d = dim.ok_or(Error::Parse {
                    line,
                    msg: "face before header".into(),
                })?;
                if toks.len() != d + 1 {
                    return Err(Error::Parse {
                        line,
                        msg: format!("face needs {d} indices"),
                    });
                }
                let f: Result<Vec<usize>> = toks[1..].iter().map(|t| int(t, line)).collect();
                faces.push(f?);
            }
            "g" => {
                if toks.len() != 7 {
                    return Err(Error::Parse {
                        line,
                        msg: "graph line must read 'g nx ny x0 x1 y0 y1'".into(),
                    });
                }
                graph = Some((
                    int(toks[1], line)?,
                    int(toks[2], line)?,
                    [num(toks[3], line)?, num(toks[4], line)?, num(toks[5], line)?, num(toks[6], line)?],
                ));
            }
            _ if graph.is_some() => {
                for t in toks {
                    heights.push(num(t, line)?);
                }
            }
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown record '{other}'"),
                })
            }
        }
    }
    let dim = dim.ok_or(Error::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    let closed = closed.unwrap_or(true);
    if let Some((nx, ny, b)) = graph {
        if closed {
            return Err(Error::Parse {
                line: 1,
                msg: "graph patches are open (closed 0)".into(),
            });
        }
        let ny = if dim == 2 { 1 } else { ny };
        return build_graph_patch(GraphPatch {
            nx,
            ny,
            x0: b[0],
            x1: b[1],
            y0: b[2],
            y1: b[3],
            heights,
        });
    }
    if !closed {
        return Err(Error::Parse {
            line: 1,
            msg: "open meshes must be graph patches".into(),
        });
    }
    if dim == 2 {
        let order: Vec<usize> = if faces.is_empty() {
            (0..verts.len()).collect()
        } else {
            let mut next: HashMap<usize, usize> = HashMap::new();
            for f in &faces {
                if next.insert(f[0], f[1]).is_some() {
                    return Err(Error::Geometry(format!("vertex {} starts two segments", f[0])));
                }
            }
            let mut ord = vec![faces[0][0]];
            while ord.len() < faces.len() {
                let last = *ord.last().unwrap();
                let nx = *next.get(&last).ok_or_else(|| Error::Geometry("polygon is not closed".into()))?;
                ord.push(nx);
            }
            if next.get(ord.last().unwrap()) != Some(&ord[0]) {
                return Err(Error::Geometry("polygon is not a single closed loop".into()));
            }
            ord
        };
        let pts: Result<Vec<[T; 2]>> = order
            .iter()
            .map(|&i| {
                verts
                    .get(i)
                    .map(|v| [v[0], v[1]])
                    .ok_or_else(|| Error::Geometry(format!("missing vertex {i}")))
            })
            .collect();
        return build_polygon_boundary(&pts?, level + 1);
    }
    let tri: Vec<[usize; 3]> = faces.iter().map(|f| [f[0], f[1], f[2]]).collect();
    build_triangulated_boundary(&verts, &tri, level)
}
