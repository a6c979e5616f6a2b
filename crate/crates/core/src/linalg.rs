//! Small dense real linear algebra.
//!
//! Everything here works on [`DenseMatrix`], a row-major `f64` matrix that
//! refuses non-finite entries. The module carries the pieces the verifier
//! needs and nothing more: elementwise order and absolute value, products,
//! eigenvalues of small matrices, the spectral norm, Metzler and Hurwitz
//! predicates, and decay certificates for Metzler matrices.

use std::fmt;
use std::ops::{Index, IndexMut, Neg};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by the linear algebra routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix must have at least one row and one column, got {rows}x{cols}")]
    Empty { rows: usize, cols: usize },
    #[error("expected {expected} entries for a {rows}x{cols} matrix, got {got}")]
    EntryCount {
        rows: usize,
        cols: usize,
        expected: usize,
        got: usize,
    },
    #[error("row {row} has {got} entries, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite entry {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op} requires a square matrix, got {rows}x{cols}")]
    NotSquare {
        op: &'static str,
        rows: usize,
        cols: usize,
    },
    #[error("matrix order {order} exceeds configured maximum {max}")]
    TooLarge { order: usize, max: usize },
    #[error("{op} did not converge after {iterations} iterations")]
    NoConvergence {
        op: &'static str,
        iterations: usize,
        /// Eigenvalues that had already deflated when iteration stopped.
        partial: Vec<Complex>,
    },
    #[error("matrix is not Metzler")]
    NotMetzler,
    #[error("matrix is singular to working precision")]
    Singular,
}

/// A real `rows x cols` matrix stored row-major. Entries are always finite.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::Empty { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(LinalgError::EntryCount {
                rows,
                cols,
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: k / cols,
                col: k % cols,
                value: data[k],
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Ragged input is rejected.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, LinalgError> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != ncols {
                return Err(LinalgError::RaggedRow {
                    row: i,
                    expected: ncols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(nrows, ncols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix");
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

    pub fn from_diagonal(diag: &[f64]) -> Result<Self, LinalgError> {
        let n = diag.len();
        let mut data = vec![0.0; n * n];
        for (i, d) in diag.iter().enumerate() {
            data[i * n + i] = *d;
        }
        Self::new(n, n, data)
    }

    /// A column vector `n x 1`.
    pub fn column(values: &[f64]) -> Result<Self, LinalgError> {
        Self::new(values.len(), 1, values.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `|m|` taken entry by entry.
    pub fn abs(&self) -> Self {
        self.map(f64::abs)
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| k * v)
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self, LinalgError> {
        if self.cols != rhs.rows {
            return Err(LinalgError::Dimension {
                op: "matmul",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.data[k * rhs.cols + j];
                }
            }
        }
        Ok(out)
    }

    /// `self * x` for a plain vector `x`.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if x.len() != self.cols {
            return Err(LinalgError::Dimension {
                op: "mul_vec",
                left: self.shape(),
                right: (x.len(), 1),
            });
        }
        Ok(self
            .data
            .chunks(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `vᵀ * self` for a plain vector `v`.
    pub fn vec_mul(&self, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if v.len() != self.rows {
            return Err(LinalgError::Dimension {
                op: "vec_mul",
                left: (1, v.len()),
                right: self.shape(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (i, vi) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += vi * a;
            }
        }
        Ok(out)
    }

    pub fn add(&self, rhs: &Self) -> Result<Self, LinalgError> {
        if self.shape() != rhs.shape() {
            return Err(LinalgError::Dimension {
                op: "add",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|&v| v >= 0.0)
    }

    fn require_square(&self, op: &'static str) -> Result<usize, LinalgError> {
        if self.is_square() {
            Ok(self.rows)
        } else {
            Err(LinalgError::NotSquare {
                op,
                rows: self.rows,
                cols: self.cols,
            })
        }
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Neg for &DenseMatrix {
    type Output = DenseMatrix;
    fn neg(self) -> DenseMatrix {
        self.map(|v| -v)
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DenseMatrix{:?}", self.to_rows())
    }
}

impl TryFrom<Vec<Vec<f64>>> for DenseMatrix {
    type Error = LinalgError;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Self::from_rows(&rows)
    }
}

impl From<DenseMatrix> for Vec<Vec<f64>> {
    fn from(m: DenseMatrix) -> Self {
        m.to_rows()
    }
}

pub fn elementwise_abs(m: &DenseMatrix) -> DenseMatrix {
    m.abs()
}

/// `a <= b` entry by entry.
pub fn elementwise_leq(a: &DenseMatrix, b: &DenseMatrix) -> Result<bool, LinalgError> {
    if a.shape() != b.shape() {
        return Err(LinalgError::Dimension {
            op: "elementwise_leq",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(a.data.iter().zip(&b.data).all(|(x, y)| x <= y))
}

/// Off-diagonal entries all `>= -tol`. The diagonal is unconstrained.
pub fn is_metzler(m: &DenseMatrix, tol: f64) -> Result<bool, LinalgError> {
    let n = m.require_square("is_metzler")?;
    Ok((0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] >= -tol)))
}

/// A complex scalar as a `(re, im)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub fn real(re: f64) -> Self {
        Self { re, im: 0.0 }
    }

    pub fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
}

impl From<[f64; 2]> for Complex {
    fn from([re, im]: [f64; 2]) -> Self {
        Self { re, im }
    }
}

impl From<Complex> for [f64; 2] {
    fn from(c: Complex) -> Self {
        [c.re, c.im]
    }
}

/// All eigenvalues of a real square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EigenSpectrum {
    pub values: Vec<Complex>,
}

impl EigenSpectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Largest real part.
    pub fn abscissa(&self) -> f64 {
        self.values
            .iter()
            .map(|c| c.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> Complex {
        self.values.iter().fold(Complex::real(0.0), |acc, c| {
            Complex::new(acc.re + c.re, acc.im + c.im)
        })
    }

    pub fn product(&self) -> Complex {
        self.values
            .iter()
            .fold(Complex::real(1.0), |acc, c| acc.mul(*c))
    }

    /// Real parts sorted ascending; handy for comparing against reference lists.
    pub fn sorted_real_parts(&self) -> Vec<f64> {
        let mut re: Vec<f64> = self.values.iter().map(|c| c.re).collect();
        re.sort_by(f64::total_cmp);
        re
    }
}

/// Tolerances and limits shared by the iterative routines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinalgConfig {
    pub tol_metzler: f64,
    pub tol_hurwitz: f64,
    pub tol_eig: f64,
    pub max_iter: usize,
    pub max_order: usize,
}

impl Default for LinalgConfig {
    fn default() -> Self {
        Self {
            tol_metzler: 0.0,
            tol_hurwitz: 1e-9,
            tol_eig: 1e-10,
            max_iter: 10_000,
            max_order: 64,
        }
    }
}

/// Eigenvalues with the default configuration.
pub fn eigenvalues(m: &DenseMatrix) -> Result<EigenSpectrum, LinalgError> {
    eigenvalues_with(m, &LinalgConfig::default())
}

/// Eigenvalues of a square matrix.
///
/// Orders 1 and 2 are solved in closed form. Larger matrices are balanced,
/// reduced to upper Hessenberg form by Householder reflections, and then
/// deflated with Francis double-shift QR steps.
pub fn eigenvalues_with(m: &DenseMatrix, cfg: &LinalgConfig) -> Result<EigenSpectrum, LinalgError> {
    let n = m.require_square("eigenvalues")?;
    if n > cfg.max_order {
        return Err(LinalgError::TooLarge {
            order: n,
            max: cfg.max_order,
        });
    }
    let values = match n {
        1 => vec![Complex::real(m[(0, 0)])],
        2 => eig2(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]).to_vec(),
        _ => {
            let mut a = m.to_rows();
            balance(&mut a);
            hessenberg(&mut a);
            hqr(&mut a, cfg.max_iter)?
        }
    };
    Ok(EigenSpectrum { values })
}

/// Roots of `λ² - tr·λ + det` for the 2x2 matrix `[[a, b], [c, d]]`.
fn eig2(a: f64, b: f64, c: f64, d: f64) -> [Complex; 2] {
    // Centre on the mean of the diagonal so the discriminant does not cancel.
    let mean = 0.5 * (a + d);
    let half_gap = 0.5 * (a - d);
    let disc = half_gap * half_gap + b * c;
    if disc >= 0.0 {
        let r = disc.sqrt();
        [Complex::real(mean + r), Complex::real(mean - r)]
    } else {
        let r = (-disc).sqrt();
        [Complex::new(mean, r), Complex::new(mean, -r)]
    }
}

fn balance(a: &mut [Vec<f64>]) {
    const RADIX: f64 = 2.0;
    let n = a.len();
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[j][i].abs();
                    r += a[i][j].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let mut g = r / RADIX;
            let mut f = 1.0;
            let s = c + r;
            while c < g {
                f *= RADIX;
                c *= sqrdx;
            }
            g = r * RADIX;
            while c > g {
                f /= RADIX;
                c /= sqrdx;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                let g = 1.0 / f;
                for j in 0..n {
                    a[i][j] *= g;
                }
                for row in a.iter_mut() {
                    row[i] *= f;
                }
            }
        }
    }
}

fn hessenberg(a: &mut [Vec<f64>]) {
    let n = a.len();
    for k in 0..n.saturating_sub(2) {
        let norm = (k + 1..n).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if a[k + 1][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k + 1..n).map(|i| a[i][k]).collect();
        v[0] -= alpha;
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= vnorm);
        // H A
        for j in k..n {
            let s: f64 = v.iter().enumerate().map(|(t, vt)| vt * a[k + 1 + t][j]).sum();
            for (t, vt) in v.iter().enumerate() {
                a[k + 1 + t][j] -= 2.0 * vt * s;
            }
        }
        // (H A) H
        for row in a.iter_mut() {
            let s: f64 = v.iter().enumerate().map(|(t, vt)| row[k + 1 + t] * vt).sum();
            for (t, vt) in v.iter().enumerate() {
                row[k + 1 + t] -= 2.0 * s * vt;
            }
        }
        a[k + 1][k] = alpha;
        for row in a.iter_mut().skip(k + 2) {
            row[k] = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix.
fn hqr(a: &mut [Vec<f64>], max_iter: usize) -> Result<Vec<Complex>, LinalgError> {
    let n = a.len();
    let mut out = vec![Complex::real(0.0); n];
    let mut found = vec![false; n];
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[i][j].abs();
        }
    }
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    let mut its = 0usize;
    let mut total = 0usize;
    while nn >= 0 {
        let nu = nn as usize;
        let mut l = nu;
        while l >= 1 {
            let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
            if s == 0.0 {
                s = anorm;
            }
            if a[l][l - 1].abs() + s == s {
                a[l][l - 1] = 0.0;
                break;
            }
            l -= 1;
        }
        let mut x = a[nu][nu];
        if l == nu {
            out[nu] = Complex::real(x + t);
            found[nu] = true;
            nn -= 1;
            its = 0;
            continue;
        }
        let mut y = a[nu - 1][nu - 1];
        let mut w = a[nu][nu - 1] * a[nu - 1][nu];
        if l == nu - 1 {
            let p = 0.5 * (y - x);
            let q = p * p + w;
            let z = q.abs().sqrt();
            x += t;
            if q >= 0.0 {
                let z = p + sign(z, p);
                out[nu - 1] = Complex::real(x + z);
                out[nu] = Complex::real(if z != 0.0 { x - w / z } else { x + z });
            } else {
                out[nu - 1] = Complex::new(x + p, z);
                out[nu] = Complex::new(x + p, -z);
            }
            found[nu - 1] = true;
            found[nu] = true;
            nn -= 2;
            its = 0;
            continue;
        }
        if total >= max_iter {
            let partial = out
                .iter()
                .zip(&found)
                .filter_map(|(c, f)| f.then_some(*c))
                .collect();
            return Err(LinalgError::NoConvergence {
                op: "eigenvalues",
                iterations: total,
                partial,
            });
        }
        if its > 0 && its % 10 == 0 {
            // exceptional shift
            t += x;
            for (i, row) in a.iter_mut().enumerate().take(nu + 1) {
                row[i] -= x;
            }
            let s = a[nu][nu - 1].abs() + a[nu - 1][nu - 2].abs();
            x = 0.75 * s;
            y = x;
            w = -0.4375 * s * s;
        }
        its += 1;
        total += 1;

        let (mut p, mut q, mut r);
        let mut m = nu - 2;
        loop {
            let z = a[m][m];
            let rr = x - z;
            let ss = y - z;
            p = (rr * ss - w) / a[m + 1][m] + a[m][m + 1];
            q = a[m + 1][m + 1] - z - rr - ss;
            r = a[m + 2][m + 1];
            let s = p.abs() + q.abs() + r.abs();
            p /= s;
            q /= s;
            r /= s;
            if m == l {
                break;
            }
            let u = a[m][m - 1].abs() * (q.abs() + r.abs());
            let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
            if u + v == v {
                break;
            }
            m -= 1;
        }
        for i in m + 2..=nu {
            a[i][i - 2] = 0.0;
            if i != m + 2 {
                a[i][i - 3] = 0.0;
            }
        }
        let mut k = m;
        while k < nu {
            if k != m {
                p = a[k][k - 1];
                q = a[k + 1][k - 1];
                r = if k != nu - 1 { a[k + 2][k - 1] } else { 0.0 };
                x = p.abs() + q.abs() + r.abs();
                if x != 0.0 {
                    p /= x;
                    q /= x;
                    r /= x;
                }
            }
            let s = sign((p * p + q * q + r * r).sqrt(), p);
            if s != 0.0 {
                if k == m {
                    if l != m {
                        a[k][k - 1] = -a[k][k - 1];
                    }
                } else {
                    a[k][k - 1] = -s * x;
                }
                p += s;
                x = p / s;
                y = q / s;
                let z = r / s;
                q /= p;
                r /= p;
                for j in k..=nu {
                    let mut pp = a[k][j] + q * a[k + 1][j];
                    if k != nu - 1 {
                        pp += r * a[k + 2][j];
                        a[k + 2][j] -= pp * z;
                    }
                    a[k + 1][j] -= pp * y;
                    a[k][j] -= pp * x;
                }
                let mmin = if nu < k + 3 { nu } else { k + 3 };
                for row in a.iter_mut().take(mmin + 1).skip(l) {
                    let mut pp = x * row[k] + y * row[k + 1];
                    if k != nu - 1 {
                        pp += z * row[k + 2];
                        row[k + 2] -= pp * r;
                    }
                    row[k + 1] -= pp * q;
                    row[k] -= pp;
                }
            }
            k += 1;
        }
    }
    Ok(out)
}

/// Largest real part of the spectrum.
pub fn spectral_abscissa(m: &DenseMatrix, cfg: &LinalgConfig) -> Result<f64, LinalgError> {
    Ok(eigenvalues_with(m, cfg)?.abscissa())
}

/// Every eigenvalue has real part `< -tol`.
pub fn is_hurwitz(m: &DenseMatrix, tol: f64) -> Result<bool, LinalgError> {
    let cfg = LinalgConfig::default();
    Ok(spectral_abscissa(m, &cfg)? < -tol)
}

/// Hurwitz test for Metzler matrices without eigenvalues.
///
/// For a Metzler `m`, `-m` is a Z-matrix, and it is a nonsingular M-matrix
/// (equivalently `m` is Hurwitz) exactly when every leading principal minor
/// is positive. Gaussian elimination without pivoting exposes those minors as
/// ratios of successive pivots.
pub fn metzler_is_hurwitz(m: &DenseMatrix) -> Result<bool, LinalgError> {
    let n = m.require_square("metzler_is_hurwitz")?;
    if !is_metzler(m, 0.0)? {
        return Err(LinalgError::NotMetzler);
    }
    let mut a: Vec<Vec<f64>> = (-m).to_rows();
    for k in 0..n {
        let pivot = a[k][k];
        if pivot <= 0.0 {
            return Ok(false);
        }
        for i in k + 1..n {
            let f = a[i][k] / pivot;
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
        }
    }
    Ok(true)
}

/// Solves `m x = b` by Gaussian elimination with partial pivoting.
pub fn solve(m: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let n = m.require_square("solve")?;
    if b.len() != n {
        return Err(LinalgError::Dimension {
            op: "solve",
            left: m.shape(),
            right: (b.len(), 1),
        });
    }
    let mut a = m.to_rows();
    let mut x = b.to_vec();
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
            .unwrap_or(k);
        if a[piv][k].abs() <= scale * 1e-300 {
            return Err(LinalgError::Singular);
        }
        a.swap(k, piv);
        x.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            x[i] -= f * x[k];
        }
    }
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (x[k] - s) / a[k][k];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::Singular);
    }
    Ok(x)
}

/// Largest singular value.
///
/// Computed as the square root of the largest eigenvalue of the smaller of
/// `mᵀm` and `mmᵀ`, with cyclic Jacobi rotations on that symmetric matrix.
pub fn spectral_norm(m: &DenseMatrix) -> Result<f64, LinalgError> {
    spectral_norm_with(m, &LinalgConfig::default())
}

pub fn spectral_norm_with(m: &DenseMatrix, cfg: &LinalgConfig) -> Result<f64, LinalgError> {
    let gram = if m.rows() <= m.cols() {
        m.matmul(&m.transpose())?
    } else {
        m.transpose().matmul(m)?
    };
    let eig = symmetric_eigenvalues(&gram, cfg)?;
    let top = eig.into_iter().fold(0.0, f64::max);
    Ok(top.max(0.0).sqrt())
}

fn symmetric_eigenvalues(s: &DenseMatrix, cfg: &LinalgConfig) -> Result<Vec<f64>, LinalgError> {
    let n = s.rows();
    let mut a = s.to_rows();
    let total: f64 = a.iter().flatten().map(|v| v * v).sum();
    if total == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let max_sweeps = cfg.max_iter.clamp(1, 100);
    for sweep in 0..=max_sweeps {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off <= (cfg.tol_eig * cfg.tol_eig * 1e-4) * total || off == 0.0 {
            return Ok((0..n).map(|i| a[i][i]).collect());
        }
        if sweep == max_sweeps {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = sign(1.0, theta) / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - sn * akq;
                    row[q] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - sn * aqk;
                    a[q][k] = sn * apk + c * aqk;
                }
            }
        }
    }
    Err(LinalgError::NoConvergence {
        op: "spectral_norm",
        iterations: max_sweeps,
        partial: Vec::new(),
    })
}

/// A decay witness `(v, ε)` for a Metzler matrix `M`: `v > 0` and
/// `vᵀM ≤ -ε vᵀ` entry by entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityCertificate {
    pub v: Vec<f64>,
    pub epsilon: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl PositivityCertificate {
    /// Builds a certificate from `v` and `ε`, filling in the extremes of `v`.
    pub fn new(v: Vec<f64>, epsilon: f64) -> Self {
        let v_min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let v_max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            v,
            epsilon,
            v_min,
            v_max,
        }
    }

    /// Largest entry of `vᵀM + εvᵀ`. The certificate holds iff this is `<= 0`.
    pub fn residual(&self, m: &DenseMatrix) -> Result<f64, LinalgError> {
        let vm = m.vec_mul(&self.v)?;
        Ok(vm
            .iter()
            .zip(&self.v)
            .map(|(a, vi)| a + self.epsilon * vi)
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// Recomputes every defining inequality against `m` by direct arithmetic.
    pub fn verify(&self, m: &DenseMatrix) -> bool {
        self.v.len() == m.rows()
            && self.v.iter().all(|&x| x > 0.0 && x.is_finite())
            && self.epsilon > 0.0
            && self.epsilon.is_finite()
            && self.v_min == self.v.iter().copied().fold(f64::INFINITY, f64::min)
            && self.v_max == self.v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            && self.residual(m).is_ok_and(|r| r <= 0.0)
    }

    /// `v_max / v_min`, the constant in front of the exponential envelope.
    pub fn condition(&self) -> f64 {
        self.v_max / self.v_min
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertificateError {
    #[error("matrix is not Metzler")]
    NotMetzler,
    #[error("matrix is not Hurwitz (spectral abscissa {abscissa}); no certificate exists")]
    NotHurwitz { abscissa: f64 },
    #[error("no candidate vector passed verification")]
    Numerical,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Relative amount shaved off the best rate for the chosen `v`.
const EPSILON_MARGIN: f64 = 1e-6;
/// All-ones perturbation used when the Perron vector has zero entries.
const REDUCIBLE_SHIFT: f64 = 1e-12;

/// Decay certificate for a Metzler Hurwitz matrix.
///
/// `v` is taken as the left Perron vector of `m`, found by inverse iteration
/// just to the right of the spectral abscissa. If that vector is not strictly
/// positive (reducible `m`), `m + δ·11ᵀ` is iterated instead. A second
/// candidate, `v = (-mᵀ)⁻¹ 1`, is always formed; it is strictly positive for
/// any Metzler Hurwitz matrix. Each candidate is checked against the
/// unperturbed `m` and the one with the larger rate wins. `ε` is the largest
/// feasible rate for `v`, less a relative margin of `1e-6`.
pub fn metzler_hurwitz_certificate(m: &DenseMatrix) -> Result<PositivityCertificate, CertificateError> {
    metzler_hurwitz_certificate_with(m, &LinalgConfig::default())
}

pub fn metzler_hurwitz_certificate_with(
    m: &DenseMatrix,
    cfg: &LinalgConfig,
) -> Result<PositivityCertificate, CertificateError> {
    if !is_metzler(m, cfg.tol_metzler)? {
        return Err(CertificateError::NotMetzler);
    }
    let abscissa = spectral_abscissa(m, cfg)?;
    if abscissa >= -cfg.tol_hurwitz {
        return Err(CertificateError::NotHurwitz { abscissa });
    }

    let mut candidates = Vec::new();
    if let Some(v) = left_perron_vector(m, abscissa, cfg) {
        candidates.push(v);
    }
    let n = m.rows();
    if let Ok(v) = solve(&(-&m.transpose()), &vec![1.0; n]) {
        candidates.push(v);
    }

    candidates
        .into_iter()
        .filter_map(|v| certificate_for(m, v))
        .max_by(|a, b| a.epsilon.total_cmp(&b.epsilon))
        .ok_or(CertificateError::Numerical)
}

fn left_perron_vector(m: &DenseMatrix, abscissa: f64, cfg: &LinalgConfig) -> Option<Vec<f64>> {
    let v = inverse_iteration(&m.transpose(), abscissa, cfg)?;
    if v.iter().all(|&x| x > 1e-14) {
        return Some(v);
    }
    let n = m.rows();
    let perturbed = m.map(|x| x + REDUCIBLE_SHIFT);
    let shifted_abscissa = spectral_abscissa(&perturbed, cfg).ok()?;
    debug_assert_eq!(perturbed.rows(), n);
    inverse_iteration(&perturbed.transpose(), shifted_abscissa, cfg)
}

/// Dominant eigenvector of a Metzler `mt` near the real eigenvalue `lambda`,
/// normalised so its largest entry is one.
fn inverse_iteration(mt: &DenseMatrix, lambda: f64, cfg: &LinalgConfig) -> Option<Vec<f64>> {
    let n = mt.rows();
    let diag = (0..n).map(|i| mt[(i, i)].abs()).fold(0.0, f64::max);
    let sigma = lambda + 1e-7 * (1.0 + lambda.abs() + diag);
    let mut shifted = -mt;
    for i in 0..n {
        shifted[(i, i)] += sigma;
    }
    let mut w = vec![1.0; n];
    for _ in 0..cfg.max_iter.min(200) {
        let mut next = solve(&shifted, &w).ok()?;
        let top = next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(top > 0.0) {
            return None;
        }
        next.iter_mut().for_each(|x| *x = (*x / top).max(0.0));
        let change = next
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        w = next;
        if change < 1e-15 {
            break;
        }
    }
    Some(w)
}

fn certificate_for(m: &DenseMatrix, v: Vec<f64>) -> Option<PositivityCertificate> {
    if v.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return None;
    }
    let top = v.iter().copied().fold(0.0, f64::max);
    let v: Vec<f64> = v.iter().map(|x| x / top).collect();
    let vm = m.vec_mul(&v).ok()?;
    let best = vm
        .iter()
        .zip(&v)
        .map(|(a, vi)| -a / vi)
        .fold(f64::INFINITY, f64::min);
    if !(best > 0.0) || !best.is_finite() {
        return None;
    }
    let cert = PositivityCertificate::new(v, best * (1.0 - EPSILON_MARGIN));
    cert.verify(m).then_some(cert)
}
