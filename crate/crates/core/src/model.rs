//! Optomechanical Hamiltonians in units of the mechanical frequency (ω_M = 1).
//!
//! Full model, in the frame rotating at the cavity frequency:
//!
//! ```text
//! H_r(t) = b†b − g a†a (b† + b) + [(Ω₁ e^{−iΔ₁t} + Ω₂ e^{−iΔ₂t}) a† + h.c.]
//! ```
//!
//! The drive-free part is diagonal in the displaced basis
//! `|ψ_{n,p}⟩ = |n⟩ ⊗ D(n g)|p⟩` with energies `ε_{n,p} = p − n² g²`.
//! The resonant (RWA) model keeps only the `|ψ_{0,p}⟩ ↔ |ψ_{1,p}⟩` and
//! `|ψ_{0,p+1}⟩ ↔ |ψ_{1,p}⟩` couplings up to a phonon cutoff `N`.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{displacement_operator, fock_annihilation, kron, Ket, Operator};
use crate::specfun::{self, displacement_element};

/// Physical configuration. Every frequency and rate is in units of ω_M.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub g: f64,
    pub omega1_amp: f64,
    pub omega2_amp: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub gamma_c: f64,
    pub gamma_m: f64,
    pub n_photon_levels: usize,
    pub n_phonon_levels: usize,
}

pub const DEFAULT_PHOTON_LEVELS: usize = 3;

/// Phonon truncation leaving headroom above the dark-state support `0..=n_max`.
pub fn default_phonon_levels(n_max: usize) -> usize {
    (n_max + 15).max(2 * n_max)
}

impl ModelParams {
    /// Resonantly driven model: detunings from [`resonance_detunings`],
    /// default truncations, no mechanical damping.
    pub fn resonant(n_max: usize, g: f64, omega1_amp: f64, omega2_amp: f64, gamma_c: f64) -> Self {
        let (delta1, delta2) = resonance_detunings(g);
        Self {
            g,
            omega1_amp,
            omega2_amp,
            delta1,
            delta2,
            gamma_c,
            gamma_m: 0.0,
            n_photon_levels: DEFAULT_PHOTON_LEVELS,
            n_phonon_levels: default_phonon_levels(n_max),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("g", self.g),
            ("omega1_amp", self.omega1_amp),
            ("omega2_amp", self.omega2_amp),
            ("delta1", self.delta1),
            ("delta2", self.delta2),
            ("gamma_c", self.gamma_c),
            ("gamma_m", self.gamma_m),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite, got {v}")));
            }
        }
        for (name, v) in [
            ("g", self.g),
            ("omega1_amp", self.omega1_amp),
            ("omega2_amp", self.omega2_amp),
            ("gamma_c", self.gamma_c),
            ("gamma_m", self.gamma_m),
        ] {
            if v < 0.0 {
                return Err(Error::invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.n_photon_levels < 2 {
            return Err(Error::invalid(format!(
                "n_photon_levels must be >= 2, got {}",
                self.n_photon_levels
            )));
        }
        if self.n_phonon_levels < 2 {
            return Err(Error::invalid(format!(
                "n_phonon_levels must be >= 2, got {}",
                self.n_phonon_levels
            )));
        }
        if self.n_phonon_levels - 1 > specfun::MAX_INDEX {
            return Err(Error::Range {
                index: self.n_phonon_levels - 1,
                max: specfun::MAX_INDEX,
            });
        }
        Ok(())
    }

    pub fn total_dim(&self) -> usize {
        self.n_photon_levels * self.n_phonon_levels
    }

    /// `Ω₁ e^{−iΔ₁t} + Ω₂ e^{−iΔ₂t}`.
    pub fn drive_amplitude(&self, t: f64) -> C64 {
        C64::from_polar(self.omega1_amp, -self.delta1 * t)
            + C64::from_polar(self.omega2_amp, -self.delta2 * t)
    }
}

/// `ε_{n,p} = p − n² g²`.
pub fn eigenenergy(n: usize, p: usize, g: f64) -> f64 {
    let n = n as f64;
    p as f64 - n * n * g * g
}

/// Detunings `(Δ₁, Δ₂) = (−g², −1 − g²)` that make the carrier and the red
/// sideband between the zero- and one-photon manifolds resonant.
pub fn resonance_detunings(g: f64) -> (f64, f64) {
    let g2 = g * g;
    (-g2, -1.0 - g2)
}

/// Detuning of the nearest 1→2 photon transition from resonance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockadeMargin {
    /// Nearest integer to `2g²`.
    pub k: i64,
    /// `|2g² − K|`; zero means the resonant model is not valid.
    pub margin: f64,
}

pub fn blockade_margin(g: f64) -> BlockadeMargin {
    let two_g2 = 2.0 * g * g;
    let k = two_g2.round();
    BlockadeMargin {
        k: k as i64,
        margin: (two_g2 - k).abs(),
    }
}

/// `a ⊗ 1` on the photon ⊗ phonon space.
pub fn photon_annihilation(params: &ModelParams) -> Result<Operator> {
    kron(
        &fock_annihilation(params.n_photon_levels)?,
        &Operator::identity(params.n_phonon_levels),
    )
}

/// `1 ⊗ b` on the photon ⊗ phonon space.
pub fn phonon_annihilation(params: &ModelParams) -> Result<Operator> {
    kron(
        &Operator::identity(params.n_photon_levels),
        &fock_annihilation(params.n_phonon_levels)?,
    )
}

pub fn photon_number(params: &ModelParams) -> Result<Operator> {
    let a = photon_annihilation(params)?;
    a.adjoint().matmul(&a)
}

pub fn phonon_number(params: &ModelParams) -> Result<Operator> {
    let b = phonon_annihilation(params)?;
    b.adjoint().matmul(&b)
}

/// Full rotating-frame Hamiltonian with its static part cached; only the
/// drive term is rebuilt per evaluation.
#[derive(Debug, Clone)]
pub struct FullHamiltonian {
    params: ModelParams,
    static_part: Operator,
    raising: Operator,
}

impl FullHamiltonian {
    pub fn new(params: ModelParams) -> Result<Self> {
        params.validate()?;
        let a = photon_annihilation(&params)?;
        let b = phonon_annihilation(&params)?;
        let n_ph = a.adjoint().matmul(&a)?;
        let n_m = b.adjoint().matmul(&b)?;
        let x = b.try_add(&b.adjoint())?;
        let static_part = n_m.try_sub(&n_ph.matmul(&x)?.scale(C64::new(params.g, 0.0)))?;
        Ok(Self {
            params,
            static_part,
            raising: a.adjoint(),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// `b†b − g a†a (b† + b)`.
    pub fn static_part(&self) -> &Operator {
        &self.static_part
    }

    /// `a†` on the full space.
    pub fn photon_raising(&self) -> &Operator {
        &self.raising
    }

    pub fn at(&self, t: f64) -> Operator {
        let f = self.params.drive_amplitude(t);
        let mut h = self.static_part.clone();
        let d = h.dim();
        for i in 0..d {
            for j in 0..d {
                let up = self.raising.get(i, j);
                if up.re != 0.0 {
                    h.set(i, j, h.get(i, j) + f * up.re);
                    h.set(j, i, h.get(j, i) + f.conj() * up.re);
                }
            }
        }
        h
    }
}

pub fn build_full_hamiltonian(params: &ModelParams, t: f64) -> Result<Operator> {
    Ok(FullHamiltonian::new(*params)?.at(t))
}

/// Basis of the resonant model: `(0,p)` for `p = 0..=N`, then `(1,p)` for `p = 0..N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EffectiveSpace {
    pub n_max: usize,
}

impl EffectiveSpace {
    pub fn new(n_max: usize) -> Self {
        Self { n_max }
    }

    pub fn dim(&self) -> usize {
        2 * self.n_max + 1
    }

    pub fn ground(&self, p: usize) -> usize {
        debug_assert!(p <= self.n_max);
        p
    }

    pub fn excited(&self, p: usize) -> usize {
        debug_assert!(p < self.n_max);
        self.n_max + 1 + p
    }
}

fn check_effective_args(n_max: usize, xi: f64) -> Result<()> {
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
    Ok(())
}

/// Carrier and sideband couplings `(A_{p,p} Ω₁, A_{p+1,p} Ω₂)` for `p < N`.
fn resonant_couplings(n_max: usize, xi: f64, omega1: f64, omega2: f64) -> Result<Vec<(f64, f64)>> {
    (0..n_max)
        .map(|p| {
            Ok((
                displacement_element(p, p, xi)? * omega1,
                displacement_element(p + 1, p, xi)? * omega2,
            ))
        })
        .collect()
}

/// Resonant Hamiltonian on the `2N+1`-dimensional [`EffectiveSpace`].
pub fn build_effective_hamiltonian(
    n_max: usize,
    xi: f64,
    omega1_amp: f64,
    omega2_amp: f64,
) -> Result<Operator> {
    check_effective_args(n_max, xi)?;
    let space = EffectiveSpace::new(n_max);
    let mut h = Operator::zeros(space.dim());
    for (p, (carrier, sideband)) in resonant_couplings(n_max, xi, omega1_amp, omega2_amp)?
        .into_iter()
        .enumerate()
    {
        let e = space.excited(p);
        for (g, v) in [(space.ground(p), carrier), (space.ground(p + 1), sideband)] {
            h.set(e, g, C64::new(v, 0.0));
            h.set(g, e, C64::new(v, 0.0));
        }
    }
    Ok(h)
}

/// The resonant Hamiltonian expressed on the full photon ⊗ phonon space,
/// with `|ψ_{1,p}⟩ = |1⟩ ⊗ D(ξ)|p⟩` taken from the truncated displacement
/// operator.
pub fn embed_effective_hamiltonian(
    n_max: usize,
    xi: f64,
    omega1_amp: f64,
    omega2_amp: f64,
    n_photon_levels: usize,
    n_phonon_levels: usize,
) -> Result<Operator> {
    check_effective_args(n_max, xi)?;
    if n_photon_levels < 2 {
        return Err(Error::invalid("embedding needs at least two photon levels"));
    }
    if n_phonon_levels < n_max + 1 {
        return Err(Error::invalid(format!(
            "phonon truncation {n_phonon_levels} cannot hold cutoff N = {n_max}"
        )));
    }
    let m = n_phonon_levels;
    let disp = displacement_operator(m, xi)?;
    let couplings = resonant_couplings(n_max, xi, omega1_amp, omega2_amp)?;

    // block (1,0) = D · T, T[p][q] = carrier δ_{pq} + sideband δ_{q,p+1}
    let mut h = Operator::zeros(n_photon_levels * m);
    for r in 0..m {
        for q in 0..=n_max {
            let mut v = 0.0;
            if q < n_max {
                v += disp.get(r, q).re * couplings[q].0;
            }
            if q >= 1 {
                v += disp.get(r, q - 1).re * couplings[q - 1].1;
            }
            if v != 0.0 {
                h.set(m + r, q, C64::new(v, 0.0));
                h.set(q, m + r, C64::new(v, 0.0));
            }
        }
    }
    Ok(h)
}

/// Places resonant-model ground-manifold amplitudes `(β_0..β_N)` into the
/// photon-0 sector of the full space; `|ψ_{0,p}⟩ = |0⟩|p⟩` needs no displacement.
pub fn embed_effective_state(
    amplitudes: &[f64],
    n_photon_levels: usize,
    n_phonon_levels: usize,
) -> Result<Ket> {
    if amplitudes.len() > n_phonon_levels {
        return Err(Error::invalid(format!(
            "phonon truncation {n_phonon_levels} cannot hold {} amplitudes",
            amplitudes.len()
        )));
    }
    let mut amps = vec![C64::new(0.0, 0.0); n_photon_levels * n_phonon_levels];
    for (p, &a) in amplitudes.iter().enumerate() {
        amps[p] = C64::new(a, 0.0);
    }
    Ok(Ket::new(amps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(g: f64, omega: f64) -> ModelParams {
        ModelParams {
            n_photon_levels: 3,
            n_phonon_levels: 12,
            ..ModelParams::resonant(3, g, omega, omega, 0.05)
        }
    }

    #[test]
    fn eigenenergies() {
        assert_eq!(eigenenergy(0, 0, 0.81), 0.0);
        assert_relative_eq!(eigenenergy(1, 0, 0.37), -0.1369, epsilon = 1e-15);
        assert_relative_eq!(eigenenergy(2, 3, 0.5), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn detunings() {
        let (d1, d2) = resonance_detunings(0.37);
        assert_relative_eq!(d1, -0.1369, epsilon = 1e-15);
        assert_relative_eq!(d2, -1.1369, epsilon = 1e-15);
        // rounded values quoted for the N = 10 pumping run
        assert!((d1 - -0.14).abs() < 0.005 && (d2 - -1.14).abs() < 0.005);
        assert_eq!(resonance_detunings(0.0), (0.0, -1.0));
        assert_eq!(resonance_detunings(1.0), (-1.0, -2.0));
        for g in [0.2, 0.37, 0.9] {
            let (d1, d2) = resonance_detunings(g);
            for p in [0usize, 3, 7] {
                assert_relative_eq!(
                    d1,
                    eigenenergy(1, p, g) - eigenenergy(0, p, g),
                    epsilon = 1e-13
                );
                assert_relative_eq!(
                    d2,
                    eigenenergy(1, p, g) - eigenenergy(0, p + 1, g),
                    epsilon = 1e-13
                );
            }
        }
    }

    #[test]
    fn blockade_margins() {
        let m = blockade_margin(0.37);
        assert_eq!(m.k, 0);
        assert_relative_eq!(m.margin, 0.2738, epsilon = 1e-12);
        let m = blockade_margin(0.765367);
        assert_eq!(m.k, 1);
        assert_relative_eq!(m.margin, 0.17157, epsilon = 1e-5);
        let m = blockade_margin(std::f64::consts::FRAC_1_SQRT_2);
        assert_eq!(m.k, 1);
        assert!(m.margin < 1e-15);
    }

    #[test]
    fn validation() {
        let mut p = params(0.4, 0.01);
        assert!(p.validate().is_ok());
        p.gamma_c = -1.0;
        assert!(p.validate().is_err());
        let mut p = params(0.4, 0.01);
        p.n_phonon_levels = 1;
        assert!(FullHamiltonian::new(p).is_err());
        let mut p = params(0.4, 0.01);
        p.g = f64::NAN;
        assert!(p.validate().is_err());
    }

    #[test]
    fn drive_free_uncoupled_is_number_operator() {
        let mut p = params(0.0, 0.0);
        p.omega1_amp = 0.0;
        p.omega2_amp = 0.0;
        let h = build_full_hamiltonian(&p, 3.7).unwrap();
        assert_eq!(h, phonon_number(&p).unwrap());
    }

    #[test]
    fn drive_block_at_t0() {
        let omega = 0.02;
        let p = params(0.5, omega);
        let full = FullHamiltonian::new(p).unwrap();
        let h = full.at(0.0);
        let m = p.n_phonon_levels;
        for q in 0..m {
            // |0,q> -> |1,q> with amplitude 2Ω, |1,q> -> |2,q> with 2Ω√2
            assert!((h.get(m + q, q) - C64::new(2.0 * omega, 0.0)).norm() < 1e-15);
            assert!(
                (h.get(2 * m + q, m + q) - C64::new(2.0 * omega * 2f64.sqrt(), 0.0)).norm() < 1e-15
            );
        }
    }

    #[test]
    fn hermitian_at_many_times() {
        let p = ModelParams {
            omega1_amp: 0.03,
            omega2_amp: 0.07,
            ..params(0.6, 0.0)
        };
        let full = FullHamiltonian::new(p).unwrap();
        let mut t: f64 = 0.0;
        for k in 0..100 {
            // deterministic spread of times over [0, 100]
            t = (t + 37.123 + k as f64 * 0.61).rem_euclid(100.0);
            assert!(full.at(t).hermiticity_error() < 1e-12);
        }
    }

    #[test]
    fn displaced_basis_diagonalizes_drive_free_part() {
        // D(nξ)† h_n D(nξ) = diag(p − n²g²) on the interior block
        let g = 0.37;
        let m = 60;
        let p = ModelParams {
            n_photon_levels: 3,
            n_phonon_levels: m,
            omega1_amp: 0.0,
            omega2_amp: 0.0,
            ..ModelParams::resonant(10, g, 0.0, 0.0, 0.0)
        };
        let h = build_full_hamiltonian(&p, 0.0).unwrap();
        for n in 0..3usize {
            let block = Operator::from_fn(m, |i, j| h.get(n * m + i, n * m + j));
            let disp = displacement_operator(m, n as f64 * g).unwrap();
            let rotated = &(&disp.adjoint() * &block) * &disp;
            for i in 0..20 {
                for j in 0..20 {
                    let expect = if i == j { eigenenergy(n, i, g) } else { 0.0 };
                    assert!(
                        (rotated.get(i, j) - C64::new(expect, 0.0)).norm() < 1e-6,
                        "n={n} ({i},{j}) {}",
                        rotated.get(i, j)
                    );
                }
            }
        }
    }

    #[test]
    fn one_photon_diagonal_elements_match_eigenenergies() {
        let g = 0.6;
        let m = 50;
        let p = ModelParams {
            n_phonon_levels: m,
            ..ModelParams::resonant(3, g, 0.0, 0.0, 0.0)
        };
        let h = build_full_hamiltonian(&p, 0.0).unwrap();
        let disp = displacement_operator(m, g).unwrap();
        for q in 0..10 {
            let col: Vec<C64> = (0..p.total_dim())
                .map(|i| {
                    if (m..2 * m).contains(&i) {
                        disp.get(i - m, q)
                    } else {
                        C64::new(0.0, 0.0)
                    }
                })
                .collect();
            let ket = Ket::new(col);
            let e = ket.inner(&h.apply(&ket).unwrap()).unwrap();
            assert!((e.re - eigenenergy(1, q, g)).abs() < 1e-8, "q={q}: {e}");
        }
    }

    #[test]
    fn effective_hamiltonian_n1() {
        let xi = 0.8;
        let (o1, o2) = (0.3, 0.7);
        let h = build_effective_hamiltonian(1, xi, o1, o2).unwrap();
        assert_eq!(h.dim(), 3);
        let e = (-xi * xi / 2.0f64).exp();
        // basis: (0,0)=0, (0,1)=1, (1,0)=2
        assert_relative_eq!(h.get(2, 0).re, o1 * e, max_relative = 1e-14);
        assert_relative_eq!(h.get(2, 1).re, o2 * xi * e, max_relative = 1e-14);
        assert_eq!(h.get(0, 1), C64::new(0.0, 0.0));
        assert!(h.hermiticity_error() == 0.0);
    }

    #[test]
    fn effective_hamiltonian_has_zero_mode() {
        for n in [1usize, 2, 5, 9] {
            let h = build_effective_hamiltonian(n, 0.45, 0.01, 0.02).unwrap();
            let evs = h.hermitian_eigenvalues();
            let zeros = evs.iter().filter(|e| e.abs() < 1e-12).count();
            assert!(zeros >= 1, "N={n}: {evs:?}");
        }
        let zero = build_effective_hamiltonian(4, 0.45, 0.0, 0.0).unwrap();
        assert_eq!(zero, Operator::zeros(9));
        assert!(build_effective_hamiltonian(0, 0.45, 0.1, 0.1).is_err());
        assert!(build_effective_hamiltonian(3, 0.0, 0.1, 0.1).is_err());
        assert!(build_effective_hamiltonian(600, 0.1, 0.1, 0.1).is_err());
    }

    #[test]
    fn embedded_effective_matches_displaced_basis() {
        let (n_max, xi, o1, o2) = (3, 0.64, 0.01, 0.03);
        let m = 30;
        let small = build_effective_hamiltonian(n_max, xi, o1, o2).unwrap();
        let big = embed_effective_hamiltonian(n_max, xi, o1, o2, 3, m).unwrap();
        let disp = displacement_operator(m, xi).unwrap();
        let space = EffectiveSpace::new(n_max);
        let ground = |p: usize| Ket::basis(3 * m, p).unwrap();
        let excited = |p: usize| {
            Ket::new(
                (0..3 * m)
                    .map(|i| {
                        if (m..2 * m).contains(&i) {
                            disp.get(i - m, p)
                        } else {
                            C64::new(0.0, 0.0)
                        }
                    })
                    .collect(),
            )
        };
        for p in 0..n_max {
            for q in 0..=n_max {
                let v = excited(p).inner(&big.apply(&ground(q)).unwrap()).unwrap();
                let expect = small.get(space.excited(p), space.ground(q));
                assert!((v - expect).norm() < 1e-12, "p={p} q={q}");
            }
        }
        assert!(big.hermiticity_error() == 0.0);
    }

    #[test]
    fn embedded_states() {
        let ket = embed_effective_state(&[1.0, 0.0, 0.0], 3, 10).unwrap();
        assert_eq!(ket, Ket::basis(30, 0).unwrap());
        let amps = [0.6, -0.8, 0.0];
        let ket = embed_effective_state(&amps, 3, 10).unwrap();
        assert_eq!(ket.norm(), 1.0);
        assert!(ket.amplitudes()[10..]
            .iter()
            .all(|a| *a == C64::new(0.0, 0.0)));
        assert!(embed_effective_state(&[1.0; 5], 3, 4).is_err());
    }
}
