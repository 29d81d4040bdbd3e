//! Small dense linear algebra for the symmetric matrices that appear along an
//! orbit: the Riccati variable, its chart transforms, and Hessian blocks.
//!
//! Orders are small (N ≤ ~10), so everything is plain row-major `Vec<f64>`
//! storage with O(N³) kernels. Symmetric matrices are stored packed, so
//! symmetry is a property of the type rather than something to re-check.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatError {
    #[error("Jacobi eigen-iteration did not converge after {sweeps} sweeps (off-diagonal norm {residual:.3e})")]
    NoConvergence { sweeps: usize, residual: f64 },
    #[error("matrix is singular")]
    Singular,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
}

#[inline]
pub(crate) fn packed_index(i: usize, j: usize) -> usize {
    let (r, c) = if i >= j { (i, j) } else { (j, i) };
    r * (r + 1) / 2 + c
}

/// Real symmetric N×N matrix in packed lower-triangular storage.
#[derive(Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        assert!(n >= 1, "matrix order must be at least 1");
        Self {
            n,
            data: vec![0.0; n * (n + 1) / 2],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scalar(n, 1.0)
    }

    pub fn scalar(n: usize, value: f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, value);
        }
        m
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }

    /// Builds a matrix from `f(i, j)` evaluated on the lower triangle.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                m.data[packed_index(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Packed lower-triangular entries, row by row.
    pub fn from_packed(n: usize, data: Vec<f64>) -> Result<Self, MatError> {
        let expected = n * (n + 1) / 2;
        if n == 0 || data.len() != expected {
            return Err(MatError::Dimension {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { n, data })
    }

    /// Symmetric part ½(A + Aᵀ) of a dense square matrix.
    pub fn symmetric_part(a: &Matrix) -> Self {
        Self::from_fn(a.n, |i, j| 0.5 * (a.get(i, j) + a.get(j, i)))
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn packed(&self) -> &[f64] {
        &self.data
    }

    pub fn packed_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[packed_index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[packed_index(i, j)] = value;
    }

    pub fn to_dense(&self) -> Matrix {
        Matrix::from_fn(self.n, |i, j| self.get(i, j))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..=i {
                let v = self.get(i, j);
                s += if i == j { v * v } else { 2.0 * v * v };
            }
        }
        s.sqrt()
    }

    /// Spectral norm, max |λ|.
    pub fn spectral_norm(&self) -> Result<f64, MatError> {
        Ok(sym_eigen(self)?.values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// A·B for symmetric A and B (the product is not symmetric in general).
    pub fn mul_sym(&self, other: &SymMatrix) -> Matrix {
        self.to_dense().mul(&other.to_dense())
    }

    /// B·A·B, symmetric whenever A is.
    pub fn sandwich(&self, inner: &SymMatrix) -> SymMatrix {
        let b = self.to_dense();
        SymMatrix::symmetric_part(&b.mul(&inner.to_dense()).mul(&b))
    }

    pub fn square(&self) -> SymMatrix {
        SymMatrix::symmetric_part(&self.mul_sym(self))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    /// Inverse through the dense LU path, re-symmetrized.
    pub fn inverse(&self) -> Result<SymMatrix, MatError> {
        Ok(SymMatrix::symmetric_part(&self.to_dense().inverse()?))
    }

    /// Lower Cholesky factor of a symmetric positive-definite matrix.
    pub fn cholesky(&self) -> Result<Matrix, MatError> {
        let n = self.n;
        let mut l = Matrix::zeros(n);
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in 0..j {
                d -= l.get(j, k) * l.get(j, k);
            }
            if !(d > 0.0) {
                return Err(MatError::NotPositiveDefinite);
            }
            let d = d.sqrt();
            l.set(j, j, d);
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / d);
            }
        }
        Ok(l)
    }

    /// Inverse of a symmetric positive-definite matrix via Cholesky.
    pub fn spd_inverse(&self) -> Result<SymMatrix, MatError> {
        let n = self.n;
        let l = self.cholesky()?;
        // columns of L⁻¹ by forward substitution, then A⁻¹ = L⁻ᵀL⁻¹
        let mut linv = Matrix::zeros(n);
        for c in 0..n {
            for i in c..n {
                let mut s = if i == c { 1.0 } else { 0.0 };
                for k in c..i {
                    s -= l.get(i, k) * linv.get(k, c);
                }
                linv.set(i, c, s / l.get(i, i));
            }
        }
        Ok(SymMatrix::from_fn(n, |i, j| {
            (i.max(j)..n).map(|k| linv.get(k, i) * linv.get(k, j)).sum()
        }))
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(&self.to_dense(), f)
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        assert_eq!(self.n, rhs.n);
        SymMatrix {
            n: self.n,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        assert_eq!(self.n, rhs.n);
        SymMatrix {
            n: self.n,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Neg for &SymMatrix {
    type Output = SymMatrix;
    fn neg(self) -> SymMatrix {
        self.scale(-1.0)
    }
}

/// Dense square matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        Self::from_fn(n, |i, j| rows[i][j])
    }

    pub fn order(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.n + j] = value;
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.n, |i, j| self.get(j, i))
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            n: self.n,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn lu(&self) -> Lu {
        Lu::new(self)
    }

    pub fn inverse(&self) -> Result<Matrix, MatError> {
        self.lu().inverse()
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<&[f64]> = self.data.chunks(self.n.max(1)).collect();
        f.debug_list().entries(rows).finish()
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        Matrix {
            n: self.n,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        Matrix {
            n: self.n,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        Matrix::mul(self, rhs)
    }
}

/// LU factorization with partial pivoting, `P·A = L·U`.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    parity: f64,
    singular: bool,
}

impl Lu {
    pub fn new(a: &Matrix) -> Self {
        let n = a.n;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut parity = 1.0;
        let mut singular = false;
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for i in (k + 1)..n {
                let v = lu[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                singular = true;
                continue;
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
                parity = -parity;
            }
            let pivot = lu[k * n + k];
            for i in (k + 1)..n {
                let factor = lu[i * n + k] / pivot;
                lu[i * n + k] = factor;
                if factor != 0.0 {
                    for j in (k + 1)..n {
                        lu[i * n + j] -= factor * lu[k * n + j];
                    }
                }
            }
        }
        Self {
            n,
            lu,
            perm,
            parity,
            singular,
        }
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    /// (ln|det|, sign of det). Singular input is an error, not -inf.
    pub fn log_abs_det(&self) -> Result<(f64, f64), MatError> {
        if self.singular {
            return Err(MatError::Singular);
        }
        let mut log = 0.0;
        let mut sign = self.parity;
        for i in 0..self.n {
            let d = self.lu[i * self.n + i];
            if d < 0.0 {
                sign = -sign;
            }
            log += d.abs().ln();
        }
        Ok((log, sign))
    }

    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>, MatError> {
        if self.singular {
            return Err(MatError::Singular);
        }
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                x[i] -= self.lu[i * n + k] * x[k];
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                x[i] -= self.lu[i * n + k] * x[k];
            }
            x[i] /= self.lu[i * n + i];
        }
        Ok(x)
    }

    /// Solves A·X = B column by column.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix, MatError> {
        let n = self.n;
        let mut out = Matrix::zeros(n);
        let mut col = vec![0.0; n];
        for j in 0..n {
            for i in 0..n {
                col[i] = b.get(i, j);
            }
            let x = self.solve_vec(&col)?;
            for i in 0..n {
                out.set(i, j, x[i]);
            }
        }
        Ok(out)
    }

    pub fn inverse(&self) -> Result<Matrix, MatError> {
        self.solve(&Matrix::identity(self.n))
    }
}

/// ln|det M| through pivoted LU.
pub fn log_abs_det(m: &Matrix) -> Result<f64, MatError> {
    m.lu().log_abs_det().map(|(l, _)| l)
}

/// Eigenvalues in descending order with matching orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymEigen {
    /// Q·diag(g(λ))·Qᵀ
    pub fn reconstruct_with(&self, g: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.values.len();
        let gl: Vec<f64> = self.values.iter().map(|&l| g(l)).collect();
        SymMatrix::from_fn(n, |i, j| {
            (0..n)
                .map(|k| self.vectors.get(i, k) * gl[k] * self.vectors.get(j, k))
                .sum()
        })
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.reconstruct_with(|l| l)
    }
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigendecomposition.
pub fn sym_eigen(m: &SymMatrix) -> Result<SymEigen, MatError> {
    let n = m.n;
    let mut a = m.to_dense();
    let mut v = Matrix::identity(n);
    let scale = m.frobenius_norm();

    let off_norm = |a: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += a.get(i, j) * a.get(i, j);
            }
        }
        (2.0 * s).sqrt()
    };

    let mut converged = n == 1 || scale == 0.0;
    let mut sweeps = 0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        for p in 0..(n - 1) {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
        converged = off_norm(&a) <= f64::EPSILON * 1e-2 * scale;
    }
    if !converged {
        let residual = off_norm(&a);
        // rotations stall at roundoff level; accept anything indistinguishable from it
        if residual > 1e-14 * scale {
            return Err(MatError::NoConvergence { sweeps, residual });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let vectors = Matrix::from_fn(n, |i, k| v.get(i, order[k]));
    Ok(SymEigen { values, vectors })
}

/// (sin 2Θ, cos 2Θ) of the symplectic phase from σ = −tan Θ.
///
/// sin 2Θ = −2(I+σ²)⁻¹σ and cos 2Θ = 2(I+σ²)⁻¹ − I.
pub fn phase_functions_direct(sigma: &SymMatrix) -> (SymMatrix, SymMatrix) {
    let n = sigma.n;
    let a = (&SymMatrix::identity(n) + &sigma.square())
        .spd_inverse()
        .expect("I + σ² is positive definite");
    let sin = SymMatrix::symmetric_part(&a.mul_sym(sigma)).scale(-2.0);
    let cos = &a.scale(2.0) - &SymMatrix::identity(n);
    (sin, cos)
}

/// (sin 2Θ, cos 2Θ) from τ = σ⁻¹; regular through τ = 0.
///
/// sin 2Θ = −2(I+τ²)⁻¹τ and cos 2Θ = I − 2(I+τ²)⁻¹.
pub fn phase_functions_inverted(tau: &SymMatrix) -> (SymMatrix, SymMatrix) {
    let n = tau.n;
    let a = (&SymMatrix::identity(n) + &tau.square())
        .spd_inverse()
        .expect("I + τ² is positive definite");
    let sin = SymMatrix::symmetric_part(&a.mul_sym(tau)).scale(-2.0);
    let cos = &SymMatrix::identity(n) - &a.scale(2.0);
    (sin, cos)
}

/// Rotates (sin 2Φ, cos 2Φ) to (sin 2(Φ−α), cos 2(Φ−α)) for scalar α.
pub fn shift_phase(sin: &SymMatrix, cos: &SymMatrix, alpha: f64) -> (SymMatrix, SymMatrix) {
    let (s2, c2) = (2.0 * alpha).sin_cos();
    (&sin.scale(c2) - &cos.scale(s2), &cos.scale(c2) + &sin.scale(s2))
}
