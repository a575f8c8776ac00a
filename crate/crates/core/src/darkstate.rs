//! Magic couplings and the dark states of the resonant model.
//!
//! At `g = g_N` the carrier amplitude `A_{N,N} = e^{−ξ²/2} L_N(ξ²)` vanishes,
//! so the resonant model closes on phonon numbers `0..=N` and acquires a
//! zero-energy eigenvector with no photon component.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{build_effective_hamiltonian, embed_effective_state, EffectiveSpace};
use crate::operator::Ket;
use crate::specfun::{self, displacement_element, laguerre};

pub const MAX_CUTOFF: usize = 200;

/// Square of the first zero of the Bessel function J_0.
const J01_SQ: f64 = 5.783_185_962_946_784;

/// Smallest positive `g` with `L_N(g²) = 0`.
pub fn find_gn(n: usize) -> Result<f64> {
    if n == 0 || n > MAX_CUTOFF {
        return Err(Error::invalid(format!(
            "cutoff N must lie in 1..={MAX_CUTOFF}, got {n}"
        )));
    }
    let f = |x: f64| laguerre(n, 0, x);
    let step = J01_SQ / (4.0 * n as f64 + 2.0) / 20.0;

    let mut lo = 0.0;
    let mut f_lo = f(lo);
    let mut hi = step;
    let mut f_hi = f(hi);
    let mut scanned = 1;
    while f_lo.signum() == f_hi.signum() && f_hi != 0.0 {
        lo = hi;
        f_lo = f_hi;
        hi += step;
        f_hi = f(hi);
        scanned += 1;
        if scanned > 2000 {
            return Err(Error::Bracketing(n));
        }
    }
    if f_hi == 0.0 {
        return Ok(hi.sqrt());
    }

    while hi - lo > 1e-12 * hi.max(1e-3) {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }

    // Newton polish, L_N'(x) = −L_{N−1}^{(1)}(x); kept only if it stays bracketed.
    let mut x = 0.5 * (lo + hi);
    for _ in 0..3 {
        let fx = f(x);
        if fx == 0.0 {
            break;
        }
        let next = x + fx / laguerre(n - 1, 1, x);
        if !(next >= lo - 1e-12 && next <= hi + 1e-12) {
            break;
        }
        x = next;
    }
    Ok(x.sqrt())
}

/// Zero-energy eigenvector of the resonant model, restricted to the
/// photon-0 sector: `|D⟩ = C Σ_p β_p |0⟩|p⟩`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DarkState {
    pub n_max: usize,
    pub xi: f64,
    /// Ω₁/Ω₂.
    pub ratio: f64,
    pub beta: Vec<f64>,
    pub norm_c: f64,
}

/// Builds the dark state for cutoff `n_max` at displacement `xi` and drive
/// ratio `Ω₁/Ω₂`:
/// `β_{p} = (−ratio)^p Π_{i<p} A_{i,i} / A_{i+1,i}`.
pub fn dark_state(n_max: usize, xi: f64, ratio: f64) -> Result<DarkState> {
    if n_max == 0 {
        return Err(Error::invalid("phonon cutoff N must be >= 1"));
    }
    if n_max > specfun::MAX_INDEX {
        return Err(Error::Range {
            index: n_max,
            max: specfun::MAX_INDEX,
        });
    }
    if !(xi > 0.0) || !xi.is_finite() {
        return Err(Error::invalid(format!(
            "xi must be positive and finite, got {xi}"
        )));
    }
    if !(ratio >= 0.0) || !ratio.is_finite() {
        return Err(Error::invalid(format!(
            "ratio must be finite and >= 0, got {ratio}"
        )));
    }

    let mut beta = vec![0.0; n_max + 1];
    beta[0] = 1.0;
    if ratio == 0.0 {
        return Ok(DarkState {
            n_max,
            xi,
            ratio,
            beta,
            norm_c: 1.0,
        });
    }

    // log-magnitude and sign, exponentiated at the end
    let mut log_mag = vec![0.0f64; n_max + 1];
    let mut negative = vec![false; n_max + 1];
    let log_ratio = ratio.ln();
    for i in 0..n_max {
        let carrier = displacement_element(i, i, xi)?;
        let sideband = displacement_element(i + 1, i, xi)?;
        if sideband == 0.0 || !sideband.is_normal() {
            return Err(Error::Underflow { index: i });
        }
        if carrier == 0.0 {
            // exact termination: every higher amplitude vanishes
            log_mag[i + 1..].fill(f64::NEG_INFINITY);
            break;
        }
        log_mag[i + 1] = log_mag[i] + log_ratio + carrier.abs().ln() - sideband.abs().ln();
        // extra minus sign from (−ratio)
        negative[i + 1] = negative[i] ^ (carrier < 0.0) ^ (sideband < 0.0) ^ true;
    }

    let peak = log_mag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if peak > 700.0 {
        return Err(Error::invalid(format!(
            "dark-state amplitudes overflow (max log|beta| = {peak:.1}); ratio too far from 1 for N = {n_max}"
        )));
    }
    let scaled_sum: f64 = log_mag.iter().map(|&l| (2.0 * (l - peak)).exp()).sum();
    let norm_c = (-peak).exp() / scaled_sum.sqrt();
    for p in 1..=n_max {
        let mag = log_mag[p].exp();
        beta[p] = if negative[p] { -mag } else { mag };
    }
    Ok(DarkState {
        n_max,
        xi,
        ratio,
        beta,
        norm_c,
    })
}

/// Mean, variance and Fano factor of the phonon-number distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhononStatistics {
    pub mean: f64,
    pub variance: f64,
    /// `None` when the mean vanishes (below 1e-14).
    pub fano: Option<f64>,
}

impl DarkState {
    /// `P(p) = C² β_p²`.
    pub fn probabilities(&self) -> Vec<f64> {
        let c2 = self.norm_c * self.norm_c;
        self.beta.iter().map(|b| c2 * b * b).collect()
    }

    /// Normalized amplitudes `C β_p`.
    pub fn amplitudes(&self) -> Vec<f64> {
        self.beta.iter().map(|b| self.norm_c * b).collect()
    }

    /// Embeds `|D⟩` into a photon ⊗ phonon space.
    pub fn ket(&self, n_photon_levels: usize, n_phonon_levels: usize) -> Result<Ket> {
        embed_effective_state(&self.amplitudes(), n_photon_levels, n_phonon_levels)
    }

    /// `|D⟩` on the [`EffectiveSpace`] of its own cutoff.
    pub fn effective_ket(&self) -> Ket {
        let space = EffectiveSpace::new(self.n_max);
        let mut amps = vec![0.0; space.dim()];
        for (p, a) in self.amplitudes().into_iter().enumerate() {
            amps[space.ground(p)] = a;
        }
        Ket::from_real(&amps)
    }

    pub fn statistics(&self) -> PhononStatistics {
        phonon_statistics(self)
    }
}

pub fn phonon_statistics(ds: &DarkState) -> PhononStatistics {
    let probs = ds.probabilities();
    let mean: f64 = probs.iter().enumerate().map(|(p, w)| p as f64 * w).sum();
    let second: f64 = probs
        .iter()
        .enumerate()
        .map(|(p, w)| (p * p) as f64 * w)
        .sum();
    let variance = (second - mean * mean).max(0.0);
    let fano = if mean < 1e-14 {
        None
    } else {
        Some(variance / mean)
    };
    PhononStatistics {
        mean,
        variance,
        fano,
    }
}

/// `‖H_r'|D⟩‖` for the resonant Hamiltonian built from `(Ω₁, Ω₂)`.
pub fn nullity_check(ds: &DarkState, omega1_amp: f64, omega2_amp: f64) -> Result<f64> {
    let expected = ds.ratio * omega2_amp;
    if (omega1_amp - expected).abs() > 1e-12 * omega1_amp.abs().max(expected.abs()).max(1e-300) {
        return Err(Error::invalid(format!(
            "drive amplitudes {omega1_amp}/{omega2_amp} do not match dark-state ratio {}",
            ds.ratio
        )));
    }
    let h = build_effective_hamiltonian(ds.n_max, ds.xi, omega1_amp, omega2_amp)?;
    Ok(h.apply(&ds.effective_ket())?.norm())
}
