//! Dense linear algebra used by the boundary solvers.
//!
//! Everything here is deterministic: parallel loops only split independent
//! rows and every reduction runs in a fixed order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::{c, cu, Real};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[Vec<T>]) -> Self {
        let rows = cols.first().map_or(0, |v| v.len());
        Self::from_fn(rows, cols.len(), |i, j| cols[j][i])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] += v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        self.data
            .par_chunks(self.cols.max(1))
            .map(|row| dot_slices(row, x))
            .collect()
    }

    /// `y = Aᵀ x`.
    pub fn tmatvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.rows);
        let mut y = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            for (yj, &a) in y.iter_mut().zip(self.row(i)) {
                *yj += a * xi;
            }
        }
        y
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, b: &Matrix<T>) -> Self {
        assert_eq!(self.cols, b.rows);
        let mut out = Self::zeros(self.rows, b.cols);
        let bc = b.cols;
        out.data
            .par_chunks_mut(bc.max(1))
            .enumerate()
            .for_each(|(i, orow)| {
                for (k, &a) in self.row(i).iter().enumerate() {
                    if a == T::zero() {
                        continue;
                    }
                    for (o, &bv) in orow.iter_mut().zip(b.row(k)) {
                        *o += a * bv;
                    }
                }
            });
        out
    }

    /// Adds `s` to every diagonal entry.
    pub fn shift_diagonal(&mut self, s: T) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self.data[i * self.cols + i] += s;
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> T {
        let mut sums = vec![T::zero(); self.cols];
        for i in 0..self.rows {
            for (s, &a) in sums.iter_mut().zip(self.row(i)) {
                *s += a.abs();
            }
        }
        sums.into_iter().fold(T::zero(), T::max)
    }

    pub fn norm_fro(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }
}

#[inline]
pub fn dot_slices<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Weighted inner product `Σ w_i a_i b_i`.
#[inline]
pub fn wdot<T: Real>(a: &[T], b: &[T], w: &[T]) -> T {
    let mut s = T::zero();
    for ((&x, &y), &wi) in a.iter().zip(b).zip(w) {
        s += wi * x * y;
    }
    s
}

pub fn wnorm<T: Real>(a: &[T], w: &[T]) -> T {
    wdot(a, a, w).sqrt()
}

/// In-place `y += s x`.
#[inline]
pub fn axpy<T: Real>(s: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

/// Deterministic pseudo-random vector with entries in `[-1, 1)`.
pub fn seeded_vector<T: Real>(n: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| c(rng.gen_range(-1.0..1.0))).collect()
}

const BLOCK: usize = 48;

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    n: usize,
    lu: Matrix<T>,
    perm: Vec<usize>,
    min_pivot: T,
    max_pivot: T,
    guarded: usize,
}

impl<T: Real> Lu<T> {
    /// Factors `a`; an exactly zero pivot is reported as a singular system.
    pub fn factor(a: Matrix<T>) -> Result<Self> {
        Self::factor_impl(a, None)
    }

    /// Factors `a`, replacing pivots smaller than `floor` in magnitude by
    /// `floor` (keeping their sign). Used for inverse iteration on singular
    /// operators.
    pub fn factor_guarded(a: Matrix<T>, floor: T) -> Result<Self> {
        Self::factor_impl(a, Some(floor))
    }

    fn factor_impl(mut a: Matrix<T>, floor: Option<T>) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::Dimension(format!(
                "LU needs a square matrix, got {}x{}",
                a.rows, a.cols
            )));
        }
        if !a.is_finite() {
            return Err(Error::Singular("matrix has non-finite entries".into()));
        }
        let n = a.rows;
        let mut perm: Vec<usize> = (0..n).collect();
        let mut guarded = 0;
        let mut min_pivot = T::infinity();
        let mut max_pivot = T::zero();
        let mut kb = 0;
        while kb < n {
            let ke = (kb + BLOCK).min(n);
            for k in kb..ke {
                let mut p = k;
                let mut best = a.data[k * n + k].abs();
                for i in k + 1..n {
                    let v = a.data[i * n + k].abs();
                    if v > best {
                        best = v;
                        p = i;
                    }
                }
                if p != k {
                    swap_rows(&mut a.data, n, k, p);
                    perm.swap(k, p);
                }
                let mut piv = a.data[k * n + k];
                if let Some(fl) = floor {
                    if piv.abs() < fl {
                        piv = if piv < T::zero() { -fl } else { fl };
                        a.data[k * n + k] = piv;
                        guarded += 1;
                    }
                }
                if piv == T::zero() {
                    return Err(Error::Singular(format!("zero pivot in column {k}")));
                }
                min_pivot = min_pivot.min(piv.abs());
                max_pivot = max_pivot.max(piv.abs());
                let inv = T::one() / piv;
                let (top, bottom) = a.data.split_at_mut((k + 1) * n);
                let prow = &top[k * n + k + 1..k * n + ke];
                bottom.par_chunks_mut(n).for_each(|row| {
                    let l = row[k] * inv;
                    row[k] = l;
                    if l != T::zero() {
                        for (r, &u) in row[k + 1..ke].iter_mut().zip(prow) {
                            *r -= l * u;
                        }
                    }
                });
            }
            if ke < n {
                for k in kb..ke {
                    let (top, bottom) = a.data.split_at_mut((k + 1) * n);
                    let urow = &top[k * n + ke..k * n + n];
                    for i in 0..(ke - k - 1) {
                        let row = &mut bottom[i * n..(i + 1) * n];
                        let l = row[k];
                        if l != T::zero() {
                            for (r, &u) in row[ke..].iter_mut().zip(urow) {
                                *r -= l * u;
                            }
                        }
                    }
                }
                let (top, bottom) = a.data.split_at_mut(ke * n);
                let top = &*top;
                bottom.par_chunks_mut(n).for_each(|row| {
                    for k in kb..ke {
                        let l = row[k];
                        if l != T::zero() {
                            let urow = &top[k * n + ke..k * n + n];
                            for (r, &u) in row[ke..].iter_mut().zip(urow) {
                                *r -= l * u;
                            }
                        }
                    }
                });
            }
            kb = ke;
        }
        Ok(Lu {
            n,
            lu: a,
            perm,
            min_pivot: if n == 0 { T::one() } else { min_pivot },
            max_pivot,
            guarded,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Ratio of the smallest to the largest pivot magnitude.
    pub fn pivot_ratio(&self) -> T {
        if self.max_pivot == T::zero() {
            T::zero()
        } else {
            self.min_pivot / self.max_pivot
        }
    }

    pub fn guarded_pivots(&self) -> usize {
        self.guarded
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        let d = self.lu.data();
        for i in 0..n {
            let s = dot_slices(&d[i * n..i * n + i], &x[..i]);
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s = dot_slices(&d[i * n + i + 1..(i + 1) * n], &x[i + 1..]);
            x[i] = (x[i] - s) / d[i * n + i];
        }
        x
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let d = self.lu.data();
        let mut z = b.to_vec();
        // Uᵀ z = b
        for i in 0..n {
            z[i] /= d[i * n + i];
            let zi = z[i];
            if zi != T::zero() {
                for (zj, &u) in z[i + 1..].iter_mut().zip(&d[i * n + i + 1..(i + 1) * n]) {
                    *zj -= u * zi;
                }
            }
        }
        // Lᵀ y = z
        for i in (0..n).rev() {
            let yi = z[i];
            if yi != T::zero() {
                for (zj, &l) in z[..i].iter_mut().zip(&d[i * n..i * n + i]) {
                    *zj -= l * yi;
                }
            }
        }
        let mut x = vec![T::zero(); n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = z[k];
        }
        x
    }

    /// Hager–Higham estimate of `‖A⁻¹‖₁`.
    pub fn inverse_norm1_estimate(&self) -> T {
        let n = self.n;
        if n == 0 {
            return T::zero();
        }
        let mut x = vec![T::one() / cu(n); n];
        let mut est = T::zero();
        let mut last_j = usize::MAX;
        for _ in 0..5 {
            let y = self.solve(&x);
            est = y.iter().map(|v| v.abs()).sum();
            let xi: Vec<T> = y
                .iter()
                .map(|&v| if v >= T::zero() { T::one() } else { -T::one() })
                .collect();
            let z = self.solve_transpose(&xi);
            let (j, zmax) = z
                .iter()
                .enumerate()
                .fold((0, T::zero()), |(bj, bv), (j, &v)| {
                    if v.abs() > bv {
                        (j, v.abs())
                    } else {
                        (bj, bv)
                    }
                });
            if zmax <= dot_slices(&z, &x) || j == last_j {
                break;
            }
            last_j = j;
            x = vec![T::zero(); n];
            x[j] = T::one();
        }
        est
    }
}

fn swap_rows<T: Copy>(data: &mut [T], n: usize, a: usize, b: usize) {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let (first, second) = data.split_at_mut(hi * n);
    first[lo * n..(lo + 1) * n].swap_with_slice(&mut second[..n]);
}

/// One-norm condition estimate `‖A‖₁ ‖A⁻¹‖₁`.
pub fn condition_estimate<T: Real>(a: &Matrix<T>, lu: &Lu<T>) -> T {
    a.norm1() * lu.inverse_norm1_estimate()
}

/// Cyclic Jacobi eigen-decomposition of a small symmetric matrix. Returns
/// eigenvalues in ascending order with matching eigenvector columns.
pub fn symmetric_eigen<T: Real>(a: &Matrix<T>) -> (Vec<T>, Matrix<T>) {
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let mut off = T::zero();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += m.get(i, j) * m.get(i, j);
                }
            }
        }
        let scale = m.norm_fro();
        if off.sqrt() <= eps * scale || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq == T::zero() {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (c::<T>(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let cs = T::one() / (t * t + T::one()).sqrt();
                let sn = t * cs;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, cs * mkp - sn * mkq);
                    m.set(k, q, sn * mkp + cs * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, cs * mpk - sn * mqk);
                    m.set(q, k, sn * mpk + cs * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, cs * vkp - sn * vkq);
                    v.set(k, q, sn * vkp + cs * vkq);
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| m.get(i, i).partial_cmp(&m.get(j, j)).unwrap());
    let vals = idx.iter().map(|&i| m.get(i, i)).collect();
    let vecs = Matrix::from_fn(n, n, |r, k| v.get(r, idx[k]));
    (vals, vecs)
}

/// Modified Gram–Schmidt (two passes) in the inner product `Σ w x y`.
/// Vectors whose remaining norm falls below `rel_tol` times their original
/// norm are dropped; the number dropped is returned alongside.
pub fn orthonormalize<T: Real>(vs: &[Vec<T>], w: &[T], rel_tol: T) -> (Vec<Vec<T>>, usize) {
    let mut out: Vec<Vec<T>> = Vec::new();
    let mut dropped = 0;
    for v in vs {
        let mut x = v.clone();
        let n0 = wnorm(&x, w);
        if n0 == T::zero() {
            dropped += 1;
            continue;
        }
        for _ in 0..2 {
            for q in &out {
                let s = wdot(q, &x, w);
                axpy(-s, q, &mut x);
            }
        }
        let n1 = wnorm(&x, w);
        if n1 <= rel_tol * n0 {
            dropped += 1;
            continue;
        }
        for xi in x.iter_mut() {
            *xi /= n1;
        }
        out.push(x);
    }
    (out, dropped)
}

/// Result of a numerical null-space computation.
#[derive(Clone, Debug)]
pub struct NullSpace<T> {
    /// Basis of the null space, orthonormal in the weighted inner product.
    pub basis: Vec<Vec<T>>,
    /// The smallest weighted singular values found, ascending.
    pub smallest_singular_values: Vec<T>,
    pub sigma_max: T,
    /// Set when the first retained singular value is within a factor 10 of
    /// the threshold.
    pub ambiguous: bool,
}

impl<T: Real> NullSpace<T> {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Smallest singular value outside the kernel, relative to σ_max.
    pub fn relative_gap(&self) -> Option<T> {
        self.smallest_singular_values
            .get(self.basis.len())
            .map(|&s| s / self.sigma_max)
    }
}

/// Largest singular value of `A` by power iteration on `AᵀA`.
pub fn sigma_max<T: Real>(a: &Matrix<T>, iters: usize, seed: u64) -> T {
    let mut x: Vec<T> = seeded_vector(a.cols(), seed);
    let mut s = T::zero();
    for _ in 0..iters {
        let nx = crate::scalar::norm_slice(&x);
        if nx == T::zero() {
            return T::zero();
        }
        for v in x.iter_mut() {
            *v /= nx;
        }
        let y = a.matvec(&x);
        s = crate::scalar::norm_slice(&y);
        x = a.tmatvec(&y);
    }
    s
}

/// Right null space of a square matrix `A` in the metric `W = diag(w)`:
/// singular vectors of `W^{1/2} A W^{-1/2}` with singular value below
/// `tol · σ_max`, mapped back by `W^{-1/2}`.
///
/// Block inverse subspace iteration on `(ÂᵀÂ)⁻¹` followed by a Rayleigh–Ritz
/// step; `block` bounds the dimensions that can be detected.
pub fn weighted_nullspace<T: Real>(a: &Matrix<T>, w: &[T], tol: T, block: usize) -> Result<NullSpace<T>> {
    let n = a.rows();
    assert_eq!(n, a.cols());
    assert_eq!(w.len(), n);
    let sw: Vec<T> = w.iter().map(|x| x.sqrt()).collect();
    let mut ah = a.clone();
    for i in 0..n {
        let si = sw[i];
        for (j, v) in ah.row_mut(i).iter_mut().enumerate() {
            *v = *v * si / sw[j];
        }
    }
    let smax = sigma_max(&ah, 60, 0x5eed);
    if smax == T::zero() {
        return Err(Error::NumericalRank("zero operator".into()));
    }
    let p = block.min(n);
    let lu = Lu::factor_guarded(ah.clone(), smax * T::epsilon() * c(16.0))?;
    let ones = vec![T::one(); n];
    let mut xs: Vec<Vec<T>> = (0..p).map(|k| seeded_vector(n, 1000 + k as u64)).collect();
    for _ in 0..6 {
        let ys: Vec<Vec<T>> = xs
            .iter()
            .map(|x| lu.solve(&lu.solve_transpose(x)))
            .collect();
        let (q, _) = orthonormalize(&ys, &ones, T::min_positive_value());
        if q.len() < p {
            return Err(Error::NumericalRank("subspace iteration lost rank".into()));
        }
        xs = q;
    }
    let ys: Vec<Vec<T>> = xs.iter().map(|x| ah.matvec(x)).collect();
    let g = Matrix::from_fn(p, p, |i, j| dot_slices(&ys[i], &ys[j]));
    let (vals, vecs) = symmetric_eigen(&g);
    let sv: Vec<T> = vals.iter().map(|&v| v.max(T::zero()).sqrt()).collect();
    let thresh = tol * smax;
    let mut basis = Vec::new();
    for (k, &s) in sv.iter().enumerate() {
        if s >= thresh {
            break;
        }
        let mut v = vec![T::zero(); n];
        for (j, x) in xs.iter().enumerate() {
            axpy(vecs.get(j, k), x, &mut v);
        }
        for (vi, &si) in v.iter_mut().zip(&sw) {
            *vi /= si;
        }
        basis.push(v);
    }
    let (basis, _) = orthonormalize(&basis, w, c(1e-8));
    let ambiguous = sv
        .get(basis.len())
        .map_or(false, |&s| s < thresh * c(10.0))
        || (basis.len() == p && p < n);
    Ok(NullSpace {
        basis,
        smallest_singular_values: sv,
        sigma_max: smax,
        ambiguous,
    })
}

/// Restarted GMRES for `A x = b` with an operator closure. Returns the
/// iterate and the final relative residual.
pub fn gmres<T: Real>(
    apply: impl Fn(&[T]) -> Vec<T>,
    b: &[T],
    restart: usize,
    max_iter: usize,
    rel_tol: T,
) -> (Vec<T>, T, usize) {
    let n = b.len();
    let mut x = vec![T::zero(); n];
    let bnorm = crate::scalar::norm_slice(b);
    if bnorm == T::zero() {
        return (x, T::zero(), 0);
    }
    let mut total = 0;
    let mut rel = T::one();
    while total < max_iter {
        let ax = apply(&x);
        let r: Vec<T> = b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect();
        let beta = crate::scalar::norm_slice(&r);
        rel = beta / bnorm;
        if rel <= rel_tol {
            break;
        }
        let m = restart.min(max_iter - total).max(1);
        let mut v: Vec<Vec<T>> = vec![r.iter().map(|&ri| ri / beta).collect()];
        let mut h = Matrix::zeros(m + 1, m);
        let mut cs = vec![T::zero(); m];
        let mut sn = vec![T::zero(); m];
        let mut g = vec![T::zero(); m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            let mut wv = apply(&v[k]);
            for (i, vi) in v.iter().enumerate() {
                let hik = dot_slices(&wv, vi);
                h.set(i, k, hik);
                axpy(-hik, vi, &mut wv);
            }
            let hn = crate::scalar::norm_slice(&wv);
            h.set(k + 1, k, hn);
            for i in 0..k {
                let t = cs[i] * h.get(i, k) + sn[i] * h.get(i + 1, k);
                let u = -sn[i] * h.get(i, k) + cs[i] * h.get(i + 1, k);
                h.set(i, k, t);
                h.set(i + 1, k, u);
            }
            let a = h.get(k, k);
            let bb = h.get(k + 1, k);
            let den = (a * a + bb * bb).sqrt();
            cs[k] = if den == T::zero() { T::one() } else { a / den };
            sn[k] = if den == T::zero() { T::zero() } else { bb / den };
            h.set(k, k, den);
            h.set(k + 1, k, T::zero());
            g[k + 1] = -sn[k] * g[k];
            g[k] = cs[k] * g[k];
            k_used = k + 1;
            total += 1;
            rel = g[k + 1].abs() / bnorm;
            if rel <= rel_tol || hn == T::zero() {
                break;
            }
            v.push(wv.iter().map(|&x| x / hn).collect());
        }
        let mut y = vec![T::zero(); k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h.get(i, j) * y[j];
            }
            y[i] = s / h.get(i, i);
        }
        for (j, &yj) in y.iter().enumerate() {
            axpy(yj, &v[j], &mut x);
        }
        if rel <= rel_tol {
            break;
        }
    }
    (x, rel, total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(n: usize, seed: u64) -> Matrix<f64> {
        let v = seeded_vector::<f64>(n * n, seed);
        let mut m = Matrix::from_vec(n, n, v);
        m.shift_diagonal(0.5);
        m
    }

    #[test]
    fn lu_solves_and_transposes() {
        for &n in &[1usize, 5, 47, 48, 49, 130] {
            let a = random_matrix(n, n as u64);
            let x: Vec<f64> = seeded_vector(n, 7);
            let b = a.matvec(&x);
            let lu = Lu::factor(a.clone()).unwrap();
            let y = lu.solve(&b);
            let err: f64 = x.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "n={n} err={err}");
            let bt = a.tmatvec(&x);
            let yt = lu.solve_transpose(&bt);
            let err: f64 = x.iter().zip(&yt).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "n={n} err={err}");
        }
    }

    #[test]
    fn condition_estimate_of_diagonal() {
        let a: Matrix<f64> = Matrix::from_fn(4, 4, |i, j| if i == j { [1.0, 2.0, 4.0, 8.0][i] } else { 0.0 });
        let lu = Lu::factor(a.clone()).unwrap();
        assert!((condition_estimate(&a, &lu) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_eigen_reconstructs() {
        let b = random_matrix(6, 3);
        let s = b.transpose().matmul(&b);
        let (vals, vecs) = symmetric_eigen(&s);
        for k in 0..6 {
            let v = vecs.column(k);
            let sv = s.matvec(&v);
            for i in 0..6 {
                assert!((sv[i] - vals[k] * v[i]).abs() < 1e-9);
            }
        }
        assert!(vals.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn nullspace_of_rank_deficient_matrix() {
        let n = 30;
        let u: Vec<f64> = seeded_vector(n, 11);
        let v: Vec<f64> = seeded_vector(n, 12);
        // A = I - u vᵀ / (v·u) has a one-dimensional kernel spanned by u.
        let vu = dot_slices(&v, &u);
        let a = Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - u[i] * v[j] / vu);
        let w = vec![1.0; n];
        let ns = weighted_nullspace(&a, &w, 1e-8, 6).unwrap();
        assert_eq!(ns.dim(), 1);
        let b = &ns.basis[0];
        let cosv = dot_slices(b, &u).abs() / (crate::scalar::norm_slice(&u) * crate::scalar::norm_slice(b));
        assert!((cosv - 1.0).abs() < 1e-10);
        assert!(!ns.ambiguous);
    }

    #[test]
    fn gmres_matches_lu() {
        let a = random_matrix(40, 5);
        let mut a = a.scaled(0.05);
        a.shift_diagonal(1.0);
        let b: Vec<f64> = seeded_vector(40, 9);
        let (x, rel, _) = gmres(|v| a.matvec(v), &b, 40, 200, 1e-12);
        assert!(rel < 1e-11);
        let y = Lu::factor(a).unwrap().solve(&b);
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-9);
        }
    }
}
