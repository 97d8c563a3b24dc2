//! Small dense linear algebra: a row-major [`Matrix`], one-sided Jacobi SVD,
//! cyclic Jacobi symmetric eigendecomposition, minimum-norm least squares and
//! orthogonal complements.
//!
//! Everything here is sized for desk-scale problems (a few hundred rows at
//! most) and favours accuracy over speed. Both Jacobi iterations deliver
//! residuals close to machine precision, which the rank and coverage tests in
//! [`crate::landscape`] rely on.

use std::ops::{Index, IndexMut};

use serde::Serialize;

use crate::error::{Error, Result};

/// Default relative threshold used by [`rank`] and [`orth_complement`].
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

const MAX_SWEEPS: usize = 100;
const ROTATION_TOL: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major entries, rejecting ragged or non-finite input.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Matrix whose columns are the given vectors (all of length `rows`).
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Self {
        Self::from_fn(rows, columns.len(), |i, j| columns[j][i])
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    /// `self · x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ · x`
    pub fn tr_matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, xi) in x.iter().enumerate() {
            if *xi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    /// Columns `range` of `self` as a new matrix.
    pub fn columns(&self, range: std::ops::Range<usize>) -> Matrix {
        let start = range.start;
        Matrix::from_fn(self.rows, range.len(), |i, j| self[(i, start + j)])
    }

    /// Horizontal concatenation. All parts must share the row count `rows`.
    pub fn hcat(rows: usize, parts: &[Matrix]) -> Result<Matrix> {
        let mut columns = Vec::new();
        for p in parts {
            if p.rows != rows {
                return Err(Error::DimensionMismatch {
                    expected: rows,
                    got: p.rows,
                });
            }
            for j in 0..p.cols {
                columns.push(p.column(j));
            }
        }
        Ok(Matrix::from_columns(rows, &columns))
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone)]
pub struct Svd {
    /// `rows × p` with orthonormal columns, `p = min(rows, cols)`.
    pub u: Matrix,
    /// Singular values, descending.
    pub s: Vec<f64>,
    /// `cols × p` with orthonormal columns.
    pub v: Matrix,
}

#[derive(Debug, Clone, Serialize)]
pub struct SymEigResult {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the unit eigenvector for `eigenvalues[k]`.
    pub eigenvectors: Matrix,
}

impl SymEigResult {
    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(f64::NAN)
    }
}

/// Thin singular value decomposition `M = U diag(S) Vᵀ`.
pub fn svd(m: &Matrix) -> Result<Svd> {
    if m.rows < m.cols {
        let t = svd(&m.transpose())?;
        return Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }
    let (rows, cols) = (m.rows, m.cols);
    if cols == 0 {
        return Ok(Svd {
            u: Matrix::zeros(rows, 0),
            s: Vec::new(),
            v: Matrix::zeros(0, 0),
        });
    }
    let (w, v) = jacobi_orthogonalize(m)?;

    let mut order: Vec<usize> = (0..cols).collect();
    let sigma: Vec<f64> = w.iter().map(|c| norm(c)).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));

    let smax = sigma[order[0]];
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut s = Vec::with_capacity(cols);
    let mut v_cols = Vec::with_capacity(cols);
    let mut deficient = 0;
    for &k in &order {
        let sk = sigma[k];
        s.push(sk);
        v_cols.push(v[k].clone());
        if sk > 0.0 && sk > smax * 1e-13 {
            u_cols.push(w[k].iter().map(|x| x / sk).collect());
        } else {
            deficient += 1;
        }
    }
    let completed = complete_basis(rows, &u_cols, deficient);
    u_cols.extend(completed);

    Ok(Svd {
        u: Matrix::from_columns(rows, &u_cols),
        s,
        v: Matrix::from_columns(cols, &v_cols),
    })
}

/// Hestenes one-sided Jacobi: returns the rotated columns `A·V` and the
/// columns of the orthogonal `V`.
fn jacobi_orthogonalize(m: &Matrix) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let n = m.cols;
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    // columns this small are numerically zero; rotating rounding noise
    // against itself never settles
    let negligible = (1e-14 * m.frobenius_norm()).powi(2);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || alpha <= negligible || beta <= negligible {
                    continue;
                }
                if gamma.abs() <= ROTATION_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut w, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            return Ok((w, v));
        }
    }
    Err(Error::NumericalFailure(format!(
        "one-sided Jacobi did not converge in {MAX_SWEEPS} sweeps"
    )))
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (a, b) in cp.iter_mut().zip(cq.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Extends the orthonormal set `basis` (vectors in R^dim) by `count` further
/// orthonormal vectors drawn from the standard basis.
fn complete_basis(dim: usize, basis: &[Vec<f64>], count: usize) -> Vec<Vec<f64>> {
    let mut all: Vec<Vec<f64>> = basis.to_vec();
    let mut added = Vec::with_capacity(count);
    for _ in 0..count {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for k in 0..dim {
            let mut e = vec![0.0; dim];
            e[k] = 1.0;
            // two passes of classical Gram-Schmidt
            for _ in 0..2 {
                for b in &all {
                    let proj = dot(b, &e);
                    for (x, y) in e.iter_mut().zip(b) {
                        *x -= proj * y;
                    }
                }
            }
            let r = norm(&e);
            if best.as_ref().map_or(true, |(br, _)| r > *br) {
                best = Some((r, e));
            }
        }
        let (r, mut e) = best.expect("dimension is positive when completion is requested");
        e.iter_mut().for_each(|x| *x /= r);
        all.push(e.clone());
        added.push(e);
    }
    added
}

/// Number of singular values above `rel_tol · σ_max`.
pub fn rank(m: &Matrix, rel_tol: f64) -> Result<usize> {
    let s = svd(m)?.s;
    Ok(count_above(&s, rel_tol))
}

fn count_above(s: &[f64], rel_tol: f64) -> usize {
    match s.first() {
        Some(&smax) if smax > 0.0 => s.iter().filter(|&&x| x > rel_tol * smax).count(),
        _ => 0,
    }
}

pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    Ok(svd(m)?.s.first().copied().unwrap_or(0.0))
}

/// Eigendecomposition of `(M + Mᵀ)/2` by cyclic Jacobi rotations.
pub fn sym_eig(m: &Matrix) -> Result<SymEigResult> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.rows,
            got: m.cols,
        });
    }
    let n = m.rows;
    let mut a = Matrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    let mut q = Matrix::identity(n);
    let scale = a.frobenius_norm();

    let mut converged = n <= 1 || scale == 0.0;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for r in (p + 1)..n {
                let apr = a[(p, r)];
                if apr == 0.0 {
                    continue;
                }
                let theta = (a[(r, r)] - a[(p, p)]) / (2.0 * apr);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akr) = (a[(k, p)], a[(k, r)]);
                    a[(k, p)] = c * akp - s * akr;
                    a[(k, r)] = s * akp + c * akr;
                }
                for k in 0..n {
                    let (apk, ark) = (a[(p, k)], a[(r, k)]);
                    a[(p, k)] = c * apk - s * ark;
                    a[(r, k)] = s * apk + c * ark;
                }
                for k in 0..n {
                    let (qkp, qkr) = (q[(k, p)], q[(k, r)]);
                    q[(k, p)] = c * qkp - s * qkr;
                    q[(k, r)] = s * qkp + c * qkr;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NumericalFailure(format!(
            "symmetric Jacobi did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let eigenvalues = order.iter().map(|&i| a[(i, i)]).collect();
    let eigenvectors = Matrix::from_fn(n, n, |i, k| q[(i, order[k])]);
    Ok(SymEigResult {
        eigenvalues,
        eigenvectors,
    })
}

/// Minimum-norm minimiser of `‖Ax − b‖` through the SVD pseudoinverse.
pub fn lstsq(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if a.rows != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.rows,
            got: b.len(),
        });
    }
    let Svd { u, s, v } = svd(a)?;
    let r = count_above(&s, 1e-12);
    let mut x = vec![0.0; a.cols];
    for k in 0..r {
        let coef = dot(&u.column(k), b) / s[k];
        for (xi, vi) in x.iter_mut().zip(v.column(k)) {
            *xi += coef * vi;
        }
    }
    Ok(x)
}

/// Orthonormal basis of `{α : Mᵀα = 0}` for `M` with `d_x` rows.
///
/// The result has `d_x − rank(M)` columns; zero columns means the columns
/// of `M` already span the whole space.
pub fn orth_complement(m: &Matrix, rel_tol: f64) -> Result<Matrix> {
    let dim = m.rows;
    if m.cols == 0 {
        return Ok(Matrix::identity(dim));
    }
    let Svd { u, s, .. } = svd(m)?;
    let r = count_above(&s, rel_tol);
    let range: Vec<Vec<f64>> = (0..r).map(|k| u.column(k)).collect();
    let complement = complete_basis(dim, &range, dim - r);
    Ok(Matrix::from_columns(dim, &complement))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn reconstruct(f: &Svd) -> Matrix {
        let us = Matrix::from_fn(f.u.rows(), f.s.len(), |i, j| f.u[(i, j)] * f.s[j]);
        us.matmul(&f.v.transpose()).unwrap()
    }

    fn orthonormality_error(q: &Matrix) -> f64 {
        let g = q.transpose().matmul(q).unwrap();
        g.sub(&Matrix::identity(q.cols())).frobenius_norm()
    }

    #[test]
    fn svd_of_identity() {
        let f = svd(&Matrix::identity(3)).unwrap();
        assert_eq!(f.s, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn svd_of_zero_matrix() {
        let f = svd(&Matrix::zeros(2, 4)).unwrap();
        assert_eq!(f.s, vec![0.0, 0.0]);
        assert!(orthonormality_error(&f.u) < 1e-12);
        assert!(orthonormality_error(&f.v) < 1e-12);
    }

    #[test]
    fn svd_reconstructs_random_tall_matrix() {
        let m = random_matrix(5, 3, 11);
        let f = svd(&m).unwrap();
        let resid = reconstruct(&f).sub(&m).frobenius_norm();
        assert!(resid < 1e-10 * (1.0 + m.frobenius_norm()), "residual {resid}");
        assert!(orthonormality_error(&f.u) < 1e-10);
        assert!(orthonormality_error(&f.v) < 1e-10);
        assert!(f.s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank(&Matrix::identity(4), DEFAULT_RANK_TOL).unwrap(), 4);
        let a = [1.0, -2.0, 0.5];
        let b = [3.0, 1.0, 4.0, -1.0];
        let outer = Matrix::from_fn(3, 4, |i, j| a[i] * b[j]);
        assert_eq!(rank(&outer, DEFAULT_RANK_TOL).unwrap(), 1);
        assert_eq!(rank(&Matrix::zeros(3, 3), DEFAULT_RANK_TOL).unwrap(), 0);
    }

    #[test]
    fn rank_of_two_stacked_rows_matches_gram_schmidt() {
        let u2 = [0.3, -1.2, 0.7];
        let u3 = [1.1, 0.4, -0.2];
        // Gram-Schmidt oracle: count vectors with nonzero residual.
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for v in [u2.to_vec(), u3.to_vec()] {
            let mut r = v.clone();
            for b in &basis {
                let p = dot(&r, b);
                r.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
            let n = norm(&r);
            if n > 1e-12 {
                basis.push(r.iter().map(|x| x / n).collect());
            }
        }
        let stacked = Matrix::from_rows(&[u2.to_vec(), u3.to_vec()]).unwrap();
        assert_eq!(rank(&stacked, DEFAULT_RANK_TOL).unwrap(), basis.len());
        assert_eq!(basis.len(), 2);
    }

    #[test]
    fn sym_eig_small_cases() {
        let r = sym_eig(&Matrix::diag(&[-1.0, 2.0])).unwrap();
        assert_eq!(r.eigenvalues, vec![-1.0, 2.0]);
        let r = sym_eig(&Matrix::from_vec(1, 1, vec![4.5]).unwrap()).unwrap();
        assert_eq!(r.eigenvalues, vec![4.5]);
    }

    /// Characteristic polynomial coefficients by Faddeev-LeVerrier:
    /// `det(λI − A) = λⁿ + c[1] λⁿ⁻¹ + … + c[n]`.
    fn char_poly(a: &Matrix) -> Vec<f64> {
        let n = a.rows();
        let mut c = vec![1.0];
        let mut mk = Matrix::zeros(n, n);
        for k in 1..=n {
            let mut next = a.matmul(&mk).unwrap();
            for i in 0..n {
                next[(i, i)] += c[k - 1];
            }
            mk = next;
            let am = a.matmul(&mk).unwrap();
            let tr: f64 = (0..n).map(|i| am[(i, i)]).sum();
            c.push(-tr / k as f64);
        }
        c
    }

    fn poly_eval(c: &[f64], x: f64) -> f64 {
        c.iter().fold(0.0, |acc, ci| acc * x + ci)
    }

    /// Real roots of a polynomial with only real, simple roots, by scanning
    /// for sign changes and bisecting.
    fn real_roots(c: &[f64], bound: f64) -> Vec<f64> {
        let steps = 200_000;
        let h = 2.0 * bound / steps as f64;
        let mut roots = Vec::new();
        let mut x0 = -bound;
        let mut f0 = poly_eval(c, x0);
        for k in 1..=steps {
            let x1 = -bound + k as f64 * h;
            let f1 = poly_eval(c, x1);
            if f0 == 0.0 {
                roots.push(x0);
            } else if f0 * f1 < 0.0 {
                let (mut lo, mut hi, mut flo) = (x0, x1, f0);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    let fm = poly_eval(c, mid);
                    if fm == 0.0 {
                        lo = mid;
                        hi = mid;
                        break;
                    }
                    if flo * fm < 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                        flo = fm;
                    }
                }
                roots.push(0.5 * (lo + hi));
            }
            x0 = x1;
            f0 = f1;
        }
        roots
    }

    #[test]
    fn sym_eig_agrees_with_characteristic_polynomial() {
        let b = random_matrix(6, 6, 7);
        let m = Matrix::from_fn(6, 6, |i, j| b[(i, j)] + b[(j, i)]);
        let gersh = (0..6)
            .map(|i| m.row(i).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
            + 1.0;
        let oracle = real_roots(&char_poly(&m), gersh);
        assert_eq!(oracle.len(), 6);
        let r = sym_eig(&m).unwrap();
        for (a, b) in r.eigenvalues.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn sym_eig_reconstruction_and_orthonormality() {
        let b = random_matrix(7, 7, 3);
        let m = Matrix::from_fn(7, 7, |i, j| b[(i, j)] + b[(j, i)]);
        let r = sym_eig(&m).unwrap();
        let q = &r.eigenvectors;
        let recon = q
            .matmul(&Matrix::diag(&r.eigenvalues))
            .unwrap()
            .matmul(&q.transpose())
            .unwrap();
        assert!(recon.sub(&m).frobenius_norm() <= 1e-8 * (1.0 + m.frobenius_norm()));
        assert!(orthonormality_error(q) < 1e-10);
    }

    #[test]
    fn lstsq_examples() {
        let b = vec![1.5, -2.0, 3.0];
        let x = lstsq(&Matrix::identity(3), &b).unwrap();
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi).abs() < 1e-14);
        }
        let a = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let x = lstsq(&a, &[2.0, 4.0, 6.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn lstsq_affine_fit_of_three_points() {
        let xs = [1.0, 2.5, 3.0];
        let ys = [1.0, 3.0, 2.0];
        let a = Matrix::from_fn(3, 2, |i, j| if j == 0 { xs[i] } else { 1.0 });
        let t = lstsq(&a, &ys).unwrap();
        let mse: f64 = a
            .matvec(&t)
            .iter()
            .zip(&ys)
            .map(|(p, y)| (p - y).powi(2))
            .sum::<f64>()
            / 3.0;
        assert!((mse - 0.3205).abs() < 1e-4, "mse {mse}");
    }

    #[test]
    fn lstsq_is_minimum_norm_for_rank_deficient_systems() {
        // two identical columns: the minimum-norm solution splits evenly
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let x = lstsq(&a, &[2.0, 4.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orth_complement_examples() {
        let e1 = Matrix::from_columns(3, &[vec![1.0, 0.0, 0.0]]);
        let c = orth_complement(&e1, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(c.cols(), 2);
        for j in 0..2 {
            assert!(c[(0, j)].abs() < 1e-15);
        }
        assert!(orthonormality_error(&c) < 1e-12);

        let full = orth_complement(&Matrix::identity(3), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(full.cols(), 0);

        let none = orth_complement(&Matrix::zeros(4, 0), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(none, Matrix::identity(4));
    }

    #[test]
    fn orth_complement_of_random_subspace() {
        let m = random_matrix(6, 4, 99);
        let c = orth_complement(&m, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(c.cols(), 2);
        let scale = m.frobenius_norm();
        for j in 0..c.cols() {
            let proj = m.tr_matvec(&c.column(j));
            assert!(norm(&proj) <= 1e-10 * scale);
        }
        assert!(orthonormality_error(&c) < 1e-10);
    }

    fn matrix_strategy() -> impl Strategy<Value = Matrix> {
        (1usize..7, 1usize..7, any::<u64>(), 0usize..3).prop_map(|(r, c, seed, deficiency)| {
            let mut m = random_matrix(r, c, seed);
            // copy a few columns to create exact rank deficiency
            for k in 0..deficiency.min(c.saturating_sub(1)) {
                for i in 0..r {
                    m[(i, c - 1 - k)] = m[(i, 0)] * (k as f64 + 2.0);
                }
            }
            m
        })
    }

    proptest! {
        #[test]
        fn rank_is_transpose_invariant(m in matrix_strategy()) {
            prop_assert_eq!(rank(&m, DEFAULT_RANK_TOL).unwrap(), rank(&m.transpose(), DEFAULT_RANK_TOL).unwrap());
        }

        #[test]
        fn rank_plus_complement_is_dimension(m in matrix_strategy()) {
            let r = rank(&m, DEFAULT_RANK_TOL).unwrap();
            let c = orth_complement(&m, DEFAULT_RANK_TOL).unwrap();
            prop_assert_eq!(r + c.cols(), m.rows());
        }

        #[test]
        fn svd_reconstruction_contract(m in matrix_strategy()) {
            let f = svd(&m).unwrap();
            let resid = reconstruct(&f).sub(&m).frobenius_norm();
            prop_assert!(resid <= 1e-10 * (1.0 + m.frobenius_norm()));
            prop_assert!(orthonormality_error(&f.u) < 1e-10);
            prop_assert!(orthonormality_error(&f.v) < 1e-10);
        }

        #[test]
        fn eigenvalue_sum_is_trace(seed in any::<u64>(), n in 1usize..9) {
            let b = random_matrix(n, n, seed);
            let m = Matrix::from_fn(n, n, |i, j| b[(i, j)] + b[(j, i)]);
            let tr: f64 = (0..n).map(|i| m[(i, i)]).sum();
            let sum: f64 = sym_eig(&m).unwrap().eigenvalues.iter().sum();
            prop_assert!((sum - tr).abs() <= 1e-8 * (1.0 + tr.abs()));
        }
    }
}
