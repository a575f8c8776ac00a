//! Special functions for displaced-oscillator matrix elements.
//!
//! The central quantity is the Franck–Condon overlap `W[p][q] = <p|D(xi)|q>`
//! between Fock states of an oscillator displaced by the real amount `xi`:
//!
//! ```text
//! p <= q:  sqrt(p!/q!) e^{-xi^2/2} (-xi)^{q-p} L_p^{q-p}(xi^2)
//! p >  q:  sqrt(q!/p!) e^{-xi^2/2} ( xi)^{p-q} L_q^{p-q}(xi^2)
//! ```
//!
//! Both branches share one magnitude evaluation, so the sign relation
//! `W[q][p] = (-1)^(p-q) W[p][q]` holds bit-for-bit.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Largest Fock index accepted by the matrix-element routines.
pub const MAX_INDEX: usize = 512;

/// Associated Laguerre polynomial `L_n^k(x)` by upward recurrence in `n`.
pub fn laguerre(n: usize, k: usize, x: f64) -> f64 {
    let k = k as f64;
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 1.0 + k - x;
    for m in 1..n {
        let m = m as f64;
        let next = ((2.0 * m + 1.0 + k - x) * cur - (m + k) * prev) / (m + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

fn log_factorial_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = Vec::with_capacity(MAX_INDEX + 1);
        let mut acc = 0.0f64;
        table.push(0.0);
        for i in 1..=MAX_INDEX {
            acc += (i as f64).ln();
            table.push(acc);
        }
        table
    })
}

/// `ln(n!)`. Tabulated up to [`MAX_INDEX`], summed beyond.
pub fn log_factorial(n: usize) -> f64 {
    let table = log_factorial_table();
    if n < table.len() {
        return table[n];
    }
    let mut acc = table[MAX_INDEX];
    for i in (MAX_INDEX + 1)..=n {
        acc += (i as f64).ln();
    }
    acc
}

fn check_index(i: usize) -> Result<()> {
    if i > MAX_INDEX {
        Err(Error::Range {
            index: i,
            max: MAX_INDEX,
        })
    } else {
        Ok(())
    }
}

/// `<p|D(xi)|p2>` for real `xi`, with `D(xi) = exp(xi (b^† - b))`.
pub fn displacement_element(p: usize, p2: usize, xi: f64) -> Result<f64> {
    check_index(p)?;
    check_index(p2)?;
    if !xi.is_finite() {
        return Err(Error::invalid(format!(
            "displacement must be finite, got {xi}"
        )));
    }
    Ok(displacement_element_unchecked(p, p2, xi))
}

pub(crate) fn displacement_element_unchecked(p: usize, p2: usize, xi: f64) -> f64 {
    let (lo, hi) = if p <= p2 { (p, p2) } else { (p2, p) };
    let gap = hi - lo;
    if xi == 0.0 {
        return if gap == 0 { 1.0 } else { 0.0 };
    }
    let x = xi * xi;
    let log_mag =
        0.5 * (log_factorial(lo) - log_factorial(hi)) - 0.5 * x + gap as f64 * xi.abs().ln();
    let magnitude = log_mag.exp() * laguerre(lo, gap, x);

    // xi^gap carries sign(xi)^gap; the p < p2 branch uses (-xi)^gap.
    let mut negative = xi < 0.0 && gap % 2 == 1;
    if p < p2 && gap % 2 == 1 {
        negative = !negative;
    }
    if negative {
        -magnitude
    } else {
        magnitude
    }
}

/// `A^{(n)}_{p,p2} = sqrt(n) <p|D(xi)|p2>`, the amplitude of `a` between the
/// `n`-photon and `(n-1)`-photon displaced manifolds.
pub fn coupling_coefficient(n: usize, p: usize, p2: usize, xi: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid(
            "coupling coefficient requires n >= 1 (a annihilates the vacuum manifold)",
        ));
    }
    Ok((n as f64).sqrt() * displacement_element(p, p2, xi)?)
}

/// Dense table of `<p|D(xi)|p2>` for `p, p2 < dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct FranckCondonTable {
    xi: f64,
    dim: usize,
    entries: Vec<f64>,
}

impl FranckCondonTable {
    pub fn new(xi: f64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("Franck-Condon table needs dim >= 1"));
        }
        check_index(dim - 1)?;
        if !xi.is_finite() {
            return Err(Error::invalid(format!(
                "displacement must be finite, got {xi}"
            )));
        }
        let mut entries = Vec::with_capacity(dim * dim);
        for p in 0..dim {
            for q in 0..dim {
                entries.push(displacement_element_unchecked(p, q, xi));
            }
        }
        Ok(Self { xi, dim, entries })
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.entries[p * self.dim + q]
    }

    /// Row-major view of the table.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// `sum_p W[p][q]^2`; approaches 1 from below as `dim` grows.
    pub fn column_norm_sq(&self, q: usize) -> f64 {
        (0..self.dim).map(|p| self.get(p, q).powi(2)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn laguerre_small_cases() {
        assert_eq!(laguerre(0, 5, 7.3), 1.0);
        assert_eq!(laguerre(1, 0, 1.0), 0.0);
        assert!(laguerre(2, 0, 2.0 - 2f64.sqrt()).abs() < 1e-12);
        assert_relative_eq!(laguerre(3, 2, 0.0), 10.0, max_relative = 1e-15);
    }

    #[test]
    fn laguerre_at_origin_is_binomial() {
        // L_n^k(0) = C(n+k, n)
        let binom =
            |n: u64, k: u64| -> f64 { (1..=n).fold(1.0, |acc, i| acc * (k + i) as f64 / i as f64) };
        for n in 0..20 {
            for k in 0..6 {
                assert_relative_eq!(
                    laguerre(n, k, 0.0),
                    binom(n as u64, k as u64),
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn log_factorial_values() {
        assert_eq!(log_factorial(0), 0.0);
        assert_eq!(log_factorial(1), 0.0);
        assert_relative_eq!(log_factorial(10), 3628800f64.ln(), max_relative = 1e-14);
        assert_relative_eq!(log_factorial(10), 15.104412573, epsilon = 1e-9);
        // beyond the table
        let direct: f64 = (1..=600).map(|i| (i as f64).ln()).sum();
        assert_relative_eq!(log_factorial(600), direct, max_relative = 1e-13);
    }

    #[test]
    fn displacement_closed_forms() {
        for &xi in &[0.1, 0.37, 0.7653, 1.3] {
            let e = (-xi * xi / 2.0f64).exp();
            assert_relative_eq!(
                displacement_element(0, 0, xi).unwrap(),
                e,
                max_relative = 1e-15
            );
            assert_relative_eq!(
                displacement_element(0, 1, xi).unwrap(),
                -xi * e,
                max_relative = 1e-14
            );
            assert_relative_eq!(
                displacement_element(1, 0, xi).unwrap(),
                xi * e,
                max_relative = 1e-14
            );
        }
        for p in 0..6 {
            for q in 0..6 {
                let expect = if p == q { 1.0 } else { 0.0 };
                assert_eq!(displacement_element(p, q, 0.0).unwrap(), expect);
            }
        }
    }

    #[test]
    fn coherent_state_column() {
        let xi = 0.6;
        let e = (-xi * xi / 2.0f64).exp();
        for p in 0..12 {
            let expect = e * xi.powi(p as i32) / log_factorial(p).exp().sqrt();
            assert_relative_eq!(
                displacement_element(p, 0, xi).unwrap(),
                expect,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn sign_relation_is_exact() {
        let table = FranckCondonTable::new(0.8, 30).unwrap();
        for p in 0..30 {
            for q in 0..30 {
                let sign = if (p + q) % 2 == 0 { 1.0 } else { -1.0 };
                assert_eq!(table.get(q, p), sign * table.get(p, q));
            }
        }
        assert_eq!(table.get(0, 0), (-0.8f64 * 0.8 / 2.0).exp());
    }

    #[test]
    fn range_errors() {
        assert!(matches!(
            displacement_element(MAX_INDEX + 1, 0, 0.3),
            Err(Error::Range { .. })
        ));
        assert!(displacement_element(MAX_INDEX, MAX_INDEX, 0.3).is_ok());
        assert!(FranckCondonTable::new(0.3, MAX_INDEX + 2).is_err());
        assert!(displacement_element(0, 0, f64::NAN).is_err());
    }

    #[test]
    fn coupling_coefficient_scaling() {
        let xi = 0.45;
        assert!(coupling_coefficient(0, 0, 0, xi).is_err());
        assert_relative_eq!(
            coupling_coefficient(1, 0, 0, xi).unwrap(),
            (-xi * xi / 2.0f64).exp(),
            max_relative = 1e-15
        );
        for (p, q) in [(0, 0), (2, 5), (7, 3)] {
            assert_relative_eq!(
                coupling_coefficient(4, p, q, xi).unwrap(),
                2.0 * displacement_element(p, q, xi).unwrap(),
                max_relative = 1e-15
            );
        }
    }

    #[test]
    fn column_norm_converges_monotonically() {
        let xi = 0.9;
        for q in [0usize, 3, 6] {
            let mut last = f64::INFINITY;
            for dim in [q + 2, q + 5, q + 10, q + 20, q + 40] {
                let deficit = 1.0 - FranckCondonTable::new(xi, dim).unwrap().column_norm_sq(q);
                assert!(deficit >= -1e-13, "q={q} dim={dim} deficit={deficit}");
                assert!(deficit <= last, "q={q} dim={dim}");
                last = deficit;
            }
            assert!(last < 1e-10);
        }
    }
}
