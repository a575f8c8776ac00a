//! Dense linear algebra on truncated Hilbert spaces.
//!
//! Composite spaces are always ordered photon ⊗ phonon: the photon factor is
//! the left `kron` argument, so basis index `(n, p)` maps to `n * n_phonon + p`.

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::specfun::{self, FranckCondonTable};

/// Largest total dimension an [`Operator`] may take (dim² entries are stored).
pub const MAX_DIM: usize = 4096;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    dim: usize,
    data: Vec<C64>,
}

impl Operator {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut op = Self::zeros(dim);
        for i in 0..dim {
            op.data[i * dim + i] = ONE;
        }
        op
    }

    pub fn from_diag(diag: &[C64]) -> Self {
        let mut op = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            op.data[i * diag.len() + i] = d;
        }
        op
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let diag: Vec<C64> = diag.iter().map(|&d| C64::new(d, 0.0)).collect();
        Self::from_diag(&diag)
    }

    /// Builds an operator from row-major entries; `data.len()` must be a square.
    pub fn from_row_major(dim: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        Self { dim, data }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: C64) {
        self.data[i * self.dim + j] = value;
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self.get(j, i).conj())
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entrywise `|self - other|`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        check_dims(self.dim, other.dim)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    /// Largest entrywise `|M - M^†|`.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in i..d {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        check_dims(self.dim, rhs.dim)?;
        let d = self.dim;
        let mut out = vec![ZERO; d * d];
        for i in 0..d {
            let row = &mut out[i * d..(i + 1) * d];
            for k in 0..d {
                let a = self.data[i * d + k];
                if a == ZERO {
                    continue;
                }
                for (o, &b) in row.iter_mut().zip(&rhs.data[k * d..(k + 1) * d]) {
                    *o += a * b;
                }
            }
        }
        Ok(Self { dim: d, data: out })
    }

    pub fn try_add(&self, rhs: &Self) -> Result<Self> {
        check_dims(self.dim, rhs.dim)?;
        Ok(Self {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn try_sub(&self, rhs: &Self) -> Result<Self> {
        check_dims(self.dim, rhs.dim)?;
        Ok(Self {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    /// `[self, rhs] = self·rhs − rhs·self`.
    pub fn commutator(&self, rhs: &Self) -> Result<Self> {
        self.matmul(rhs)?.try_sub(&rhs.matmul(self)?)
    }

    pub fn apply(&self, ket: &Ket) -> Result<Ket> {
        check_dims(self.dim, ket.dim())?;
        let d = self.dim;
        let amps = (0..d)
            .map(|i| {
                self.data[i * d..(i + 1) * d]
                    .iter()
                    .zip(ket.amplitudes())
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        Ok(Ket::new(amps))
    }

    pub fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    /// Eigenvalues of the Hermitian part `(M + M^†)/2`, ascending.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let m = self.to_nalgebra();
        let herm = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        let mut vals: Vec<f64> = SymmetricEigen::new(herm)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        vals.sort_by(f64::total_cmp);
        vals
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        self.try_add(rhs).expect("operator dimensions must match")
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        self.try_sub(rhs).expect("operator dimensions must match")
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        self.matmul(rhs).expect("operator dimensions must match")
    }
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        Err(Error::DimensionMismatch { expected, found })
    } else {
        Ok(())
    }
}

/// Pure state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Ket {
    amplitudes: Vec<C64>,
}

impl Ket {
    pub fn new(amplitudes: Vec<C64>) -> Self {
        Self { amplitudes }
    }

    pub fn from_real(amplitudes: &[f64]) -> Self {
        Self::new(amplitudes.iter().map(|&a| C64::new(a, 0.0)).collect())
    }

    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::Range {
                index,
                max: dim.saturating_sub(1),
            });
        }
        let mut amps = vec![ZERO; dim];
        amps[index] = ONE;
        Ok(Self::new(amps))
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes
            .iter()
            .map(|a| a.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::invalid("cannot normalize a zero or non-finite ket"));
        }
        Ok(Self::new(self.amplitudes.iter().map(|a| a / n).collect()))
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &Ket) -> Result<C64> {
        check_dims(self.dim(), other.dim())?;
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn kron(&self, other: &Ket) -> Ket {
        let mut amps = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.amplitudes {
            for b in &other.amplitudes {
                amps.push(a * b);
            }
        }
        Ket::new(amps)
    }

    /// `|self><self|` as an operator.
    pub fn projector(&self) -> Operator {
        Operator::from_fn(self.dim(), |i, j| {
            self.amplitudes[i] * self.amplitudes[j].conj()
        })
    }
}

/// Density matrix. Construction checks Hermiticity (1e-10) and unit trace (1e-8).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    op: Operator,
}

impl DensityMatrix {
    pub const HERMITICITY_TOL: f64 = 1e-10;
    pub const TRACE_TOL: f64 = 1e-8;
    pub const POSITIVITY_TOL: f64 = 1e-6;

    pub fn new(op: Operator) -> Result<Self> {
        let herm = op.hermiticity_error();
        if herm > Self::HERMITICITY_TOL {
            return Err(Error::invalid(format!(
                "density matrix not Hermitian (max |rho - rho^dag| = {herm:e})"
            )));
        }
        let tr = op.trace();
        if (tr - ONE).norm() > Self::TRACE_TOL {
            return Err(Error::invalid(format!("density matrix trace {tr} != 1")));
        }
        Ok(Self { op })
    }

    pub fn from_ket(ket: &Ket) -> Result<Self> {
        Self::new(ket.normalized()?.projector())
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            op: Operator::identity(dim).scale(C64::new(1.0 / dim as f64, 0.0)),
        }
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn as_operator(&self) -> &Operator {
        &self.op
    }

    pub fn into_operator(self) -> Operator {
        self.op
    }

    pub fn trace_error(&self) -> f64 {
        (self.op.trace() - ONE).norm()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.op.hermitian_eigenvalues()[0]
    }

    pub fn is_positive(&self) -> bool {
        self.min_eigenvalue() >= -Self::POSITIVITY_TOL
    }
}

/// Truncated Fock annihilation operator: `<n-1|a|n> = sqrt(n)`.
pub fn fock_annihilation(dim: usize) -> Result<Operator> {
    if dim < 2 {
        return Err(Error::invalid(format!(
            "Fock space needs dim >= 2, got {dim}"
        )));
    }
    let mut op = Operator::zeros(dim);
    for n in 1..dim {
        op.set(n - 1, n, C64::new((n as f64).sqrt(), 0.0));
    }
    Ok(op)
}

/// `a^† a = diag(0, 1, .., dim-1)`.
pub fn fock_number(dim: usize) -> Result<Operator> {
    if dim < 2 {
        return Err(Error::invalid(format!(
            "Fock space needs dim >= 2, got {dim}"
        )));
    }
    let diag: Vec<f64> = (0..dim).map(|n| n as f64).collect();
    Ok(Operator::from_real_diag(&diag))
}

/// Kronecker product, `a` being the left (outer) factor.
pub fn kron(a: &Operator, b: &Operator) -> Result<Operator> {
    let dim = a
        .dim()
        .checked_mul(b.dim())
        .filter(|&d| d <= MAX_DIM)
        .ok_or_else(|| {
            Error::invalid(format!(
                "kron dimension {} x {} exceeds limit {MAX_DIM}",
                a.dim(),
                b.dim()
            ))
        })?;
    let (da, db) = (a.dim(), b.dim());
    let mut out = Operator::zeros(dim);
    for i in 0..da {
        for j in 0..da {
            let s = a.get(i, j);
            if s == ZERO {
                continue;
            }
            for k in 0..db {
                for l in 0..db {
                    out.set(i * db + k, j * db + l, s * b.get(k, l));
                }
            }
        }
    }
    Ok(out)
}

/// Truncated displacement operator `D(xi)` with entries taken from the
/// Franck–Condon overlaps (not by exponentiating the truncated generator).
pub fn displacement_operator(dim: usize, xi: f64) -> Result<Operator> {
    if dim < 2 {
        return Err(Error::invalid(format!(
            "Fock space needs dim >= 2, got {dim}"
        )));
    }
    if dim - 1 > specfun::MAX_INDEX {
        return Err(Error::Range {
            index: dim - 1,
            max: specfun::MAX_INDEX,
        });
    }
    let table = FranckCondonTable::new(xi, dim)?;
    Ok(Operator::from_fn(dim, |i, j| {
        C64::new(table.get(i, j), 0.0)
    }))
}

/// `Tr(rho · obs)`.
pub fn expectation(rho: &DensityMatrix, obs: &Operator) -> Result<C64> {
    check_dims(rho.dim(), obs.dim())?;
    let d = obs.dim();
    let r = rho.as_operator();
    let mut acc = ZERO;
    for i in 0..d {
        for k in 0..d {
            acc += r.get(i, k) * obs.get(k, i);
        }
    }
    Ok(acc)
}

/// Compressed-row form of an [`Operator`], used by the integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseOperator {
    pub fn from_dense(op: &Operator) -> Self {
        let d = op.dim();
        let mut row_ptr = Vec::with_capacity(d + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..d {
            for j in 0..d {
                let v = op.get(i, j);
                if v != ZERO {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            dim: d,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn to_dense(&self) -> Operator {
        let mut op = Operator::zeros(self.dim);
        for i in 0..self.dim {
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                op.set(i, self.cols[idx], self.vals[idx]);
            }
        }
        op
    }

    /// `out += coeff · self · m`, with `m` and `out` row-major `dim × dim`.
    pub fn mul_dense_acc(&self, coeff: C64, m: &[C64], out: &mut [C64]) {
        let d = self.dim;
        debug_assert_eq!(m.len(), d * d);
        debug_assert_eq!(out.len(), d * d);
        for i in 0..d {
            let out_row = &mut out[i * d..(i + 1) * d];
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                let s = coeff * self.vals[idx];
                let k = self.cols[idx];
                axpy(s, &m[k * d..(k + 1) * d], out_row);
            }
        }
    }
}

#[inline]
pub(crate) fn axpy(s: C64, x: &[C64], y: &mut [C64]) {
    if s.im == 0.0 {
        let re = s.re;
        for (yi, xi) in y.iter_mut().zip(x) {
            yi.re += re * xi.re;
            yi.im += re * xi.im;
        }
    } else {
        for (yi, xi) in y.iter_mut().zip(x) {
            yi.re += s.re * xi.re - s.im * xi.im;
            yi.im += s.re * xi.im + s.im * xi.re;
        }
    }
}
