//! Small dense matrices over any [`Real`] scalar.
//!
//! Everything here is sized for chart dimensions (≤ ~30), so plain
//! Gaussian elimination is used throughout.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::smooth::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S> Index<(usize, usize)> for Mat<S> {
    type Output = S;
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.cols + j]
    }
}

impl<S> IndexMut<(usize, usize)> for Mat<S> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.cols + j]
    }
}

impl<S: Real> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = S::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Mat { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn from_cols(rows: usize, cols: &[Vec<S>]) -> Self {
        Self::from_fn(rows, cols.len(), |i, j| cols[j][i])
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Self {
        let c = rows.first().map_or(0, |r| r.len());
        Self::from_fn(rows.len(), c, |i, j| rows[i][j])
    }

    pub fn lift(m: &Mat<f64>) -> Self {
        Mat { rows: m.rows, cols: m.cols, data: m.data.iter().map(|&v| S::cst(v)).collect() }
    }

    pub fn values(&self) -> Mat<f64> {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v.value()).collect() }
    }

    pub fn col(&self, j: usize) -> Vec<S> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn row(&self, i: usize) -> Vec<S> {
        self.data[i * self.cols..(i + 1) * self.cols].to_vec()
    }

    pub fn set_col(&mut self, j: usize, v: &[S]) {
        for i in 0..self.rows {
            self[(i, j)] = v[i];
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn mul(&self, o: &Mat<S>) -> Self {
        assert_eq!(self.cols, o.rows, "matrix product shape");
        let mut out = Self::zeros(self.rows, o.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..o.cols {
                    out[(i, j)] += a * o[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[S]) -> Vec<S> {
        assert_eq!(self.cols, v.len(), "matrix-vector shape");
        (0..self.rows)
            .map(|i| {
                let mut acc = S::zero();
                for j in 0..self.cols {
                    acc += self[(i, j)] * v[j];
                }
                acc
            })
            .collect()
    }

    pub fn add(&self, o: &Mat<S>) -> Self {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&o.data).map(|(&a, &b)| a + b).collect() }
    }

    pub fn sub(&self, o: &Mat<S>) -> Self {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&o.data).map(|(&a, &b)| a - b).collect() }
    }

    pub fn scale(&self, k: S) -> Self {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&a| a * k).collect() }
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Mat<S>) {
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
    }

    pub fn vstack(&self, o: &Mat<S>) -> Self {
        assert_eq!(self.cols, o.cols);
        let mut data = self.data.clone();
        data.extend_from_slice(&o.data);
        Mat { rows: self.rows + o.rows, cols: self.cols, data }
    }

    pub fn trace(&self) -> S {
        let mut t = S::zero();
        for i in 0..self.rows.min(self.cols) {
            t += self[(i, i)];
        }
        t
    }

    /// Determinant by elimination with partial pivoting on the real part.
    pub fn det(&self) -> S {
        assert_eq!(self.rows, self.cols, "det of non-square matrix");
        let n = self.rows;
        let mut a = self.clone();
        let mut det = S::one();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[(i, k)].value().abs().total_cmp(&a[(j, k)].value().abs()))
                .unwrap();
            if a[(p, k)].value() == 0.0 {
                return S::zero();
            }
            if p != k {
                for j in 0..n {
                    a.data.swap(k * n + j, p * n + j);
                }
                det = -det;
            }
            let piv = a[(k, k)];
            det *= piv;
            for i in k + 1..n {
                let f = a[(i, k)] / piv;
                for j in k..n {
                    let v = a[(k, j)];
                    a[(i, j)] -= f * v;
                }
            }
        }
        det
    }

    /// Gauss–Jordan inverse; `None` when a pivot vanishes.
    pub fn inverse(&self) -> Option<Self> {
        assert_eq!(self.rows, self.cols, "inverse of non-square matrix");
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[(i, k)].value().abs().total_cmp(&a[(j, k)].value().abs()))
                .unwrap();
            if a[(p, k)].value().abs() < 1e-300 {
                return None;
            }
            if p != k {
                for j in 0..n {
                    a.data.swap(k * n + j, p * n + j);
                    inv.data.swap(k * n + j, p * n + j);
                }
            }
            let piv = a[(k, k)];
            for j in 0..n {
                a[(k, j)] = a[(k, j)] / piv;
                inv[(k, j)] = inv[(k, j)] / piv;
            }
            for i in 0..n {
                if i == k {
                    continue;
                }
                let f = a[(i, k)];
                if f.value() == 0.0 && f == S::zero() {
                    continue;
                }
                for j in 0..n {
                    let (akj, ikj) = (a[(k, j)], inv[(k, j)]);
                    a[(i, j)] -= f * akj;
                    inv[(i, j)] -= f * ikj;
                }
            }
        }
        Some(inv)
    }

    pub fn solve(&self, b: &[S]) -> Option<Vec<S>> {
        self.inverse().map(|inv| inv.mul_vec(b))
    }
}

impl Mat<f64> {
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, o: &Mat<f64>) -> f64 {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols), "shape mismatch in comparison");
        self.data.iter().zip(&o.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Matrix exponential by scaling and squaring with a Taylor core.
    pub fn expm(&self) -> Mat<f64> {
        let n = self.rows;
        let norm = self.max_abs() * n as f64;
        let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
        let a = self.scale(0.5f64.powi(s));
        let mut term = Mat::identity(n);
        let mut sum = Mat::identity(n);
        for k in 1..=18 {
            term = term.mul(&a).scale(1.0 / k as f64);
            sum = sum.add(&term);
        }
        for _ in 0..s {
            sum = sum.mul(&sum);
        }
        sum
    }

    /// Orthonormal basis of the null space of `self` (rows × cols).
    ///
    /// Unit vectors e_0, e_1, … are projected onto the kernel in index order
    /// and Gram–Schmidt orthonormalized; vectors whose residual norm falls
    /// below `tol` are skipped. Returns a cols × r matrix.
    pub fn null_space(&self, tol: f64) -> Mat<f64> {
        let m = self.cols;
        let rowspace = orthonormalize(&(0..self.rows).map(|i| self.row(i)).collect::<Vec<_>>(), tol);
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for j in 0..m {
            let mut v = vec![0.0; m];
            v[j] = 1.0;
            for q in rowspace.iter().chain(basis.iter()) {
                let d = dot(&v, q);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= d * qi;
                }
            }
            let nv = dot(&v, &v).sqrt();
            if nv > tol {
                basis.push(v.iter().map(|x| x / nv).collect());
            }
            if basis.len() + rowspace.len() == m {
                break;
            }
        }
        Mat::from_cols(m, &basis)
    }

    /// Least-squares solution of `self · x ≈ b` via modified Gram–Schmidt QR.
    pub fn lstsq(&self, b: &[f64]) -> Vec<f64> {
        let (m, n) = (self.rows, self.cols);
        let mut q: Vec<Vec<f64>> = (0..n).map(|j| self.col(j)).collect();
        let mut r = Mat::<f64>::zeros(n, n);
        for j in 0..n {
            for i in 0..j {
                let d = dot(&q[i], &q[j]);
                r[(i, j)] = d;
                let qi = q[i].clone();
                for (a, b) in q[j].iter_mut().zip(&qi) {
                    *a -= d * b;
                }
            }
            let nrm = dot(&q[j], &q[j]).sqrt();
            r[(j, j)] = nrm;
            if nrm > 0.0 {
                for a in q[j].iter_mut() {
                    *a /= nrm;
                }
            }
        }
        let qtb: Vec<f64> = (0..n).map(|j| dot(&q[j], &b[..m])).collect();
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = qtb[i];
            for j in i + 1..n {
                s -= r[(i, j)] * x[j];
            }
            x[i] = if r[(i, i)].abs() > 1e-14 { s / r[(i, i)] } else { 0.0 };
        }
        x
    }

    /// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
    /// Returns (eigenvalues, eigenvectors as columns).
    pub fn sym_eigen(&self) -> (Vec<f64>, Mat<f64>) {
        let n = self.rows;
        let mut a = self.clone();
        let mut v = Mat::identity(n);
        for _sweep in 0..100 {
            let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| a[(i, j)].powi(2)).sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[(k, p)], a[(k, q)]);
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        ((0..n).map(|i| a[(i, i)]).collect(), v)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "vector length mismatch in comparison");
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn orthonormalize(vs: &[Vec<f64>], tol: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for v in vs {
        let mut w = v.clone();
        for q in &out {
            let d = dot(&w, q);
            for (wi, qi) in w.iter_mut().zip(q) {
                *wi -= d * qi;
            }
        }
        let nw = dot(&w, &w).sqrt();
        if nw > tol {
            out.push(w.iter().map(|x| x / nw).collect());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip() {
        let a = Mat::from_rows(&[vec![2.0, 1.0, 0.0], vec![1.0, 3.0, 1.0], vec![0.0, 1.0, 4.0]]);
        let inv = a.inverse().unwrap();
        assert!(a.mul(&inv).max_abs_diff(&Mat::identity(3)) < 1e-14);
        assert!((a.det() - 18.0).abs() < 1e-12);
    }

    #[test]
    fn null_space_of_projection() {
        let p = Mat::from_rows(&[vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]]);
        let k = p.null_space(1e-10);
        assert_eq!(k.cols, 2);
        assert_eq!(k.col(0), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(k.col(1), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn expm_of_rotation_generator() {
        let w = Mat::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]);
        let r = w.scale(0.3).expm();
        assert!((r[(0, 0)] - 0.3f64.cos()).abs() < 1e-14);
        assert!((r[(1, 0)] - 0.3f64.sin()).abs() < 1e-14);
    }

    #[test]
    fn jacobi_eigen_reconstructs() {
        let a = Mat::from_rows(&[vec![2.0, 0.5], vec![0.5, -1.0]]);
        let (ev, v) = a.sym_eigen();
        let d = Mat::from_fn(2, 2, |i, j| if i == j { ev[i] } else { 0.0 });
        assert!(v.mul(&d).mul(&v.transpose()).max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn lstsq_exact_system() {
        let a = Mat::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]]);
        let x = a.lstsq(&[1.0, 3.0, 5.0]);
        assert!(max_abs_diff(&x, &[1.0, 2.0]) < 1e-12);
    }
}
