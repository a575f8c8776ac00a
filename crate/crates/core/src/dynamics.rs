//! Lindblad master-equation integration and optical-pumping studies.
//!
//! ```text
//! dρ/dt = −i[H(t), ρ] − Σ_k (γ_k/2)(C_k†C_k ρ − 2 C_k ρ C_k† + ρ C_k†C_k)
//! ```
//!
//! The integrator is fixed-step RK4. The Hamiltonian and the anti-Hermitian
//! decay part are folded into `K = H − (i/2) Σ γ_k C_k†C_k`, so one
//! sparse-times-dense product `Kρ` gives the coherent part and the
//! anticommutator together: `−i(Kρ) + (−i(Kρ))†`.
//!
//! The full model is integrated in the interaction picture with respect to
//! `b†b`, where the coupling reads `−g a†a (b e^{−it} + b† e^{it})`. The dark
//! state is stationary there, and the fastest phase in the generator drops
//! from the phonon truncation `M` to order one, which keeps the RK4 error
//! small at the default step. Populations are the same in both frames.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::darkstate::{dark_state, DarkState};
use crate::error::{Error, Result};
use crate::model::{
    embed_effective_hamiltonian, phonon_annihilation, photon_annihilation, photon_number,
    resonance_detunings, FullHamiltonian, ModelParams,
};
use crate::operator::{DensityMatrix, Ket, Operator, SparseOperator};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Tolerance on the largest fidelity change in [`convergence_check`].
pub const CONVERGENCE_TOLERANCE: f64 = 5e-3;

/// Right-hand side of the master equation for a generic Hamiltonian and
/// collapse list `(C_k, γ_k)`.
pub fn lindblad_rhs(
    rho: &DensityMatrix,
    h: &Operator,
    collapse: &[(Operator, f64)],
) -> Result<Operator> {
    let r = rho.as_operator();
    let d = r.dim();
    if h.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: h.dim(),
        });
    }
    let mut out = h.commutator(r)?.scale(C64::new(0.0, -1.0));
    for (c, rate) in collapse {
        if c.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: c.dim(),
            });
        }
        if !(*rate >= 0.0) {
            return Err(Error::invalid(format!(
                "collapse rate must be >= 0, got {rate}"
            )));
        }
        let cd = c.adjoint();
        let cdc = cd.matmul(c)?;
        let jump = c.matmul(r)?.matmul(&cd)?.scale(C64::new(2.0, 0.0));
        let term = cdc.matmul(r)?.try_add(&r.matmul(&cdc)?)?.try_sub(&jump)?;
        out = out.try_sub(&term.scale(C64::new(rate / 2.0, 0.0)))?;
    }
    Ok(out)
}

/// `Re ⟨target|ρ|target⟩`.
pub fn fidelity(rho: &DensityMatrix, target: &Ket) -> Result<f64> {
    let r = rho.as_operator();
    if target.dim() != r.dim() {
        return Err(Error::DimensionMismatch {
            expected: r.dim(),
            found: target.dim(),
        });
    }
    let f = overlap(r.as_slice(), target.amplitudes(), r.dim());
    if f.im.abs() >= 1e-10 {
        return Err(Error::invalid(format!(
            "fidelity has imaginary part {:e}; density matrix not Hermitian",
            f.im
        )));
    }
    Ok(f.re)
}

fn overlap(rho: &[C64], v: &[C64], d: usize) -> C64 {
    let mut acc = ZERO;
    for i in 0..d {
        let vi = v[i];
        if vi == ZERO {
            continue;
        }
        let row = &rho[i * d..(i + 1) * d];
        let mut s = ZERO;
        for (r, vj) in row.iter().zip(v) {
            s += r * vj;
        }
        acc += vi.conj() * s;
    }
    acc
}

/// Starting state of an evolution.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    /// `|0⟩_c|0⟩_M`.
    Ground,
    Pure(Ket),
    Mixed(DensityMatrix),
}

/// One integration run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionConfig {
    pub params: ModelParams,
    pub t_final: f64,
    pub dt: f64,
    pub sample_every: usize,
    /// Integrate the resonant model instead of the full Hamiltonian.
    pub use_effective: bool,
    pub target: DarkState,
    pub initial: InitialState,
    /// Compute the smallest eigenvalue of ρ at each sample.
    pub check_positivity: bool,
    /// Abort when the population of the top two phonon levels exceeds this.
    pub leak_limit: f64,
    /// Abort when `|Tr ρ − 1|` exceeds this.
    pub trace_limit: f64,
}

pub const DEFAULT_DT: f64 = 0.02;
pub const DEFAULT_LEAK_LIMIT: f64 = 1e-3;
pub const DEFAULT_TRACE_LIMIT: f64 = 1e-6;

impl EvolutionConfig {
    pub fn new(params: ModelParams, target: DarkState, t_final: f64) -> Self {
        Self {
            params,
            t_final,
            dt: DEFAULT_DT,
            sample_every: 500,
            use_effective: false,
            target,
            initial: InitialState::Ground,
            check_positivity: true,
            leak_limit: DEFAULT_LEAK_LIMIT,
            trace_limit: DEFAULT_TRACE_LIMIT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::invalid(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_final >= self.dt) || !self.t_final.is_finite() {
            return Err(Error::invalid(format!(
                "t_final ({}) must be finite and >= dt ({})",
                self.t_final, self.dt
            )));
        }
        if self.sample_every == 0 {
            return Err(Error::invalid("sample_every must be >= 1"));
        }
        if self.target.beta.len() > self.params.n_phonon_levels {
            return Err(Error::invalid(format!(
                "phonon truncation {} cannot hold target support 0..={}",
                self.params.n_phonon_levels, self.target.n_max
            )));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

/// Observables recorded at one sampling instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub fidelity: f64,
    pub photon: f64,
    pub phonon: f64,
    pub trace_error: f64,
    /// Population of the two highest phonon levels.
    pub tail_population: f64,
    pub hermiticity_error: f64,
    pub min_eigenvalue: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub samples: Vec<Sample>,
    pub steps: usize,
}

impl TimeSeries {
    pub fn final_sample(&self) -> &Sample {
        self.samples
            .last()
            .expect("time series always holds the t = 0 sample")
    }

    pub fn final_fidelity(&self) -> f64 {
        self.final_sample().fidelity
    }

    pub fn max_trace_error(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.trace_error)
            .fold(0.0, f64::max)
    }

    pub fn max_hermiticity_error(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.hermiticity_error)
            .fold(0.0, f64::max)
    }

    /// Smallest sampled eigenvalue, if positivity was checked.
    pub fn min_eigenvalue(&self) -> Option<f64> {
        self.samples
            .iter()
            .filter_map(|s| s.min_eigenvalue)
            .reduce(f64::min)
    }

    /// Fidelity at the last sample with `t <= time`.
    pub fn fidelity_at(&self, time: f64) -> Option<f64> {
        self.samples
            .iter()
            .take_while(|s| s.t <= time + 1e-9)
            .last()
            .map(|s| s.fidelity)
    }
}

/// Frame in which the full model is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Frame {
    /// Laser rotating frame; the target rotates as `e^{−i b†b t}`.
    Rotating,
    /// Additionally rotating with `b†b`; the target is static.
    Interaction,
}

#[derive(Debug, Clone, Copy)]
enum Coefficient {
    /// `f(t) = Ω₁ e^{−iΔ₁t} + Ω₂ e^{−iΔ₂t}`
    Drive,
    DriveConj,
    /// `scale · e^{−i freq t}`
    Phase {
        scale: f64,
        freq: f64,
    },
}

/// A Hamiltonian term `c(t) O`.
#[derive(Debug, Clone)]
struct TimeTerm {
    op: SparseOperator,
    coefficient: Coefficient,
}

/// Precomputed sparse Liouvillian pieces plus scratch buffers.
#[derive(Debug, Clone)]
struct Liouvillian {
    dim: usize,
    params: ModelParams,
    k_static: SparseOperator,
    terms: Vec<TimeTerm>,
    jumps: Vec<(SparseOperator, f64)>,
    x: Vec<C64>,
    z: Vec<C64>,
}

impl Liouvillian {
    fn new(
        params: ModelParams,
        h_static: &Operator,
        terms: Vec<TimeTerm>,
        collapse: &[(Operator, f64)],
    ) -> Result<Self> {
        let d = h_static.dim();
        let mut k = h_static.clone();
        let mut jumps = Vec::new();
        for (c, rate) in collapse {
            if *rate == 0.0 {
                continue;
            }
            let cdc = c.adjoint().matmul(c)?;
            k = k.try_sub(&cdc.scale(C64::new(0.0, rate / 2.0)))?;
            jumps.push((SparseOperator::from_dense(c), *rate));
        }
        Ok(Self {
            dim: d,
            params,
            k_static: SparseOperator::from_dense(&k),
            terms,
            jumps,
            x: vec![ZERO; d * d],
            z: vec![ZERO; d * d],
        })
    }

    fn apply(&mut self, t: f64, rho: &[C64], out: &mut [C64]) {
        let d = self.dim;
        let x = &mut self.x;
        x.fill(ZERO);
        self.k_static.mul_dense_acc(C64::new(1.0, 0.0), rho, x);
        if !self.terms.is_empty() {
            let f = self.params.drive_amplitude(t);
            for term in &self.terms {
                let c = match term.coefficient {
                    Coefficient::Drive => f,
                    Coefficient::DriveConj => f.conj(),
                    Coefficient::Phase { scale, freq } => C64::from_polar(scale, -freq * t),
                };
                term.op.mul_dense_acc(c, rho, x);
            }
        }
        // out = −iX + (−iX)†
        for i in 0..d {
            for j in 0..d {
                let a = x[i * d + j];
                let b = x[j * d + i];
                out[i * d + j] = C64::new(a.im + b.im, b.re - a.re);
            }
        }
        for (c, rate) in &self.jumps {
            // C ρ C† = C (C ρ)†, ρ Hermitian
            x.fill(ZERO);
            c.mul_dense_acc(C64::new(1.0, 0.0), rho, x);
            for i in 0..d {
                for j in 0..d {
                    self.z[j * d + i] = x[i * d + j].conj();
                }
            }
            c.mul_dense_acc(C64::new(*rate, 0.0), &self.z, out);
        }
    }
}

struct Rk4 {
    k: [Vec<C64>; 4],
    tmp: Vec<C64>,
}

impl Rk4 {
    fn new(len: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![ZERO; len]),
            tmp: vec![ZERO; len],
        }
    }

    fn step(&mut self, l: &mut Liouvillian, t: f64, dt: f64, rho: &mut [C64]) {
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        l.apply(t, rho, k1);
        combine(tmp, rho, 0.5 * dt, k1);
        l.apply(t + 0.5 * dt, tmp, k2);
        combine(tmp, rho, 0.5 * dt, k2);
        l.apply(t + 0.5 * dt, tmp, k3);
        combine(tmp, rho, dt, k3);
        l.apply(t + dt, tmp, k4);
        let w = dt / 6.0;
        for (((r, a), (b, c)), e) in rho
            .iter_mut()
            .zip(k1.iter())
            .zip(k2.iter().zip(k3.iter()))
            .zip(k4.iter())
        {
            r.re += w * (a.re + 2.0 * (b.re + c.re) + e.re);
            r.im += w * (a.im + 2.0 * (b.im + c.im) + e.im);
        }
    }
}

#[inline]
fn combine(out: &mut [C64], base: &[C64], s: f64, k: &[C64]) {
    for ((o, b), kk) in out.iter_mut().zip(base).zip(k) {
        o.re = b.re + s * kk.re;
        o.im = b.im + s * kk.im;
    }
}

/// Collapse operators `(a, γ_c)` and, when nonzero, `(b, γ_M)`.
fn collapse_operators(params: &ModelParams) -> Result<Vec<(Operator, f64)>> {
    let mut out = vec![(photon_annihilation(params)?, params.gamma_c)];
    if params.gamma_m > 0.0 {
        out.push((phonon_annihilation(params)?, params.gamma_m));
    }
    Ok(out)
}

fn build_liouvillian(cfg: &EvolutionConfig, frame: Frame) -> Result<Liouvillian> {
    let p = &cfg.params;
    let collapse = collapse_operators(p)?;
    if cfg.use_effective {
        let h = embed_effective_hamiltonian(
            cfg.target.n_max,
            cfg.target.xi,
            p.omega1_amp,
            p.omega2_amp,
            p.n_photon_levels,
            p.n_phonon_levels,
        )?;
        return Liouvillian::new(*p, &h, Vec::new(), &collapse);
    }
    let full = FullHamiltonian::new(*p)?;
    let raising = full.photon_raising();
    let mut terms = vec![
        TimeTerm {
            op: SparseOperator::from_dense(raising),
            coefficient: Coefficient::Drive,
        },
        TimeTerm {
            op: SparseOperator::from_dense(&raising.adjoint()),
            coefficient: Coefficient::DriveConj,
        },
    ];
    match frame {
        Frame::Rotating => Liouvillian::new(*p, full.static_part(), terms, &collapse),
        Frame::Interaction => {
            let lower = photon_number(p)?.matmul(&phonon_annihilation(p)?)?;
            terms.push(TimeTerm {
                op: SparseOperator::from_dense(&lower.adjoint()),
                coefficient: Coefficient::Phase {
                    scale: -p.g,
                    freq: -1.0,
                },
            });
            terms.push(TimeTerm {
                op: SparseOperator::from_dense(&lower),
                coefficient: Coefficient::Phase {
                    scale: -p.g,
                    freq: 1.0,
                },
            });
            let d = p.total_dim();
            Liouvillian::new(*p, &Operator::zeros(d), terms, &collapse)
        }
    }
}

fn initial_density(cfg: &EvolutionConfig) -> Result<Vec<C64>> {
    let d = cfg.params.total_dim();
    let rho = match &cfg.initial {
        InitialState::Ground => DensityMatrix::from_ket(&Ket::basis(d, 0)?)?,
        InitialState::Pure(ket) => DensityMatrix::from_ket(ket)?,
        InitialState::Mixed(rho) => rho.clone(),
    };
    if rho.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: rho.dim(),
        });
    }
    Ok(rho.into_operator().into_vec())
}

/// Observables of the state held in a flat row-major buffer.
struct Observer {
    n_photon: usize,
    n_phonon: usize,
    target: Vec<C64>,
    /// Target rotates as `e^{−i b†b t}` in the rotating frame of the full model.
    co_rotate: bool,
    check_positivity: bool,
    rotated: Vec<C64>,
}

impl Observer {
    fn new(cfg: &EvolutionConfig, frame: Frame) -> Result<Self> {
        let p = &cfg.params;
        let target = cfg.target.ket(p.n_photon_levels, p.n_phonon_levels)?;
        Ok(Self {
            n_photon: p.n_photon_levels,
            n_phonon: p.n_phonon_levels,
            rotated: target.amplitudes().to_vec(),
            target: target.amplitudes().to_vec(),
            co_rotate: !cfg.use_effective && frame == Frame::Rotating,
            check_positivity: cfg.check_positivity,
        })
    }

    fn diagonal_checks(&self, rho: &[C64]) -> (f64, f64) {
        let d = self.n_photon * self.n_phonon;
        let mut trace = 0.0;
        let mut worst = 0.0f64;
        for i in 0..d {
            let v = rho[i * d + i];
            trace += v.re;
            if !v.re.is_finite() || !v.im.is_finite() {
                return (f64::NAN, f64::INFINITY);
            }
            worst = worst.max(v.re.abs());
        }
        ((trace - 1.0).abs(), worst)
    }

    fn sample(&mut self, t: f64, rho: &[C64]) -> Sample {
        let (m, d) = (self.n_phonon, self.n_photon * self.n_phonon);
        let mut trace = ZERO;
        let mut photon = 0.0;
        let mut phonon = 0.0;
        let mut tail = 0.0;
        for n in 0..self.n_photon {
            for p in 0..m {
                let i = n * m + p;
                let v = rho[i * d + i];
                trace += v;
                photon += n as f64 * v.re;
                phonon += p as f64 * v.re;
                if p + 2 >= m {
                    tail += v.re;
                }
            }
        }
        if self.co_rotate {
            for (i, (r, v)) in self.rotated.iter_mut().zip(&self.target).enumerate() {
                let p = (i % m) as f64;
                *r = v * C64::from_polar(1.0, -p * t);
            }
        }
        let fid = overlap(rho, &self.rotated, d);
        let mut herm = 0.0f64;
        for i in 0..d {
            for j in i..d {
                herm = herm.max((rho[i * d + j] - rho[j * d + i].conj()).norm());
            }
        }
        let min_eigenvalue = if self.check_positivity {
            let op = Operator::from_row_major(d, rho.to_vec()).expect("buffer is d x d");
            Some(op.hermitian_eigenvalues()[0])
        } else {
            None
        };
        Sample {
            t,
            fidelity: fid.re,
            photon,
            phonon,
            trace_error: (trace - C64::new(1.0, 0.0)).norm(),
            tail_population: tail,
            hermiticity_error: herm,
            min_eigenvalue,
        }
    }
}

fn check_sample(cfg: &EvolutionConfig, step: usize, s: &Sample) -> Result<()> {
    if !s.trace_error.is_finite() || !s.fidelity.is_finite() || s.trace_error > cfg.trace_limit {
        return Err(Error::Instability {
            step,
            t: s.t,
            reason: format!("trace error {:e}", s.trace_error),
        });
    }
    if s.tail_population > cfg.leak_limit {
        return Err(Error::TruncationLeak {
            step,
            t: s.t,
            tail: s.tail_population,
            limit: cfg.leak_limit,
        });
    }
    Ok(())
}

/// Integrates the master equation from the configured initial state,
/// sampling at `t = 0`, every `sample_every` steps and at the final step.
pub fn evolve(cfg: &EvolutionConfig) -> Result<TimeSeries> {
    evolve_in(cfg, Frame::Interaction)
}

fn evolve_in(cfg: &EvolutionConfig, frame: Frame) -> Result<TimeSeries> {
    cfg.validate()?;
    let mut liouvillian = build_liouvillian(cfg, frame)?;
    let mut rho = initial_density(cfg)?;
    let mut observer = Observer::new(cfg, frame)?;
    let mut rk4 = Rk4::new(rho.len());

    let n_steps = cfg.n_steps().max(1);
    let mut samples = Vec::with_capacity(n_steps / cfg.sample_every + 2);
    let first = observer.sample(0.0, &rho);
    check_sample(cfg, 0, &first)?;
    samples.push(first);

    for step in 1..=n_steps {
        let t0 = (step - 1) as f64 * cfg.dt;
        rk4.step(&mut liouvillian, t0, cfg.dt, &mut rho);
        let t = step as f64 * cfg.dt;
        if step % cfg.sample_every == 0 || step == n_steps {
            let s = observer.sample(t, &rho);
            check_sample(cfg, step, &s)?;
            samples.push(s);
        } else if step % 64 == 0 {
            let (trace_err, worst) = observer.diagonal_checks(&rho);
            if !(trace_err <= cfg.trace_limit) || worst > 1.0 + cfg.trace_limit {
                return Err(Error::Instability {
                    step,
                    t,
                    reason: format!("trace error {trace_err:e}, max population {worst:e}"),
                });
            }
        }
    }
    Ok(TimeSeries {
        samples,
        steps: n_steps,
    })
}

/// [`evolve`] with an added zero-temperature mechanical dissipator `(b, γ_M)`.
pub fn mechanical_damping_variant(cfg: &EvolutionConfig, gamma_m: f64) -> Result<TimeSeries> {
    if !(gamma_m >= 0.0) {
        return Err(Error::invalid(format!(
            "gamma_m must be >= 0, got {gamma_m}"
        )));
    }
    let mut cfg = cfg.clone();
    cfg.params.gamma_m = gamma_m;
    evolve(&cfg)
}

/// Which dark state the fidelity refers to when `g` is detuned from `g_N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DeviationTarget {
    /// Dark state recomputed at the actual coupling, support extended to the
    /// phonon truncation.
    #[default]
    Ideal,
    /// The original `g_N` dark state.
    Fixed,
}

/// Configuration for a run at `g' = g (1 + relative_deviation)`: detunings
/// follow `g'` and the target is chosen by `target`.
pub fn deviated_config(
    cfg: &EvolutionConfig,
    relative_deviation: f64,
    target: DeviationTarget,
) -> Result<EvolutionConfig> {
    if !(relative_deviation.abs() < 0.2) {
        return Err(Error::invalid(format!(
            "relative g deviation must satisfy |d| < 0.2, got {relative_deviation}"
        )));
    }
    let mut out = cfg.clone();
    if relative_deviation == 0.0 {
        return Ok(out);
    }
    let g = cfg.params.g * (1.0 + relative_deviation);
    let (d1, d2) = resonance_detunings(g);
    out.params.g = g;
    out.params.delta1 = d1;
    out.params.delta2 = d2;
    if target == DeviationTarget::Ideal {
        let support = cfg.params.n_phonon_levels - 1;
        let ds = dark_state(support, g, cfg.target.ratio)?;
        if cfg.target.ratio < 1.0 {
            let probs = ds.probabilities();
            let tail: f64 = probs[probs.len() - 2..].iter().sum();
            if tail >= 1e-8 {
                return Err(Error::invalid(format!(
                    "extended dark state not converged: top-level weight {tail:e}"
                )));
            }
        }
        out.target = ds;
    }
    Ok(out)
}

pub fn g_deviation_study(cfg: &EvolutionConfig, relative_deviation: f64) -> Result<TimeSeries> {
    g_deviation_study_with(cfg, relative_deviation, DeviationTarget::Ideal)
}

pub fn g_deviation_study_with(
    cfg: &EvolutionConfig,
    relative_deviation: f64,
    target: DeviationTarget,
) -> Result<TimeSeries> {
    evolve(&deviated_config(cfg, relative_deviation, target)?)
}

/// Largest fidelity difference between a reference run and refinements with
/// `dt/2` and with 50% more phonon levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub max_delta_f_dt: Option<f64>,
    pub max_delta_f_truncation: Option<f64>,
    pub max_delta_f: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub failures: Vec<String>,
}

fn max_fidelity_gap(a: &TimeSeries, b: &TimeSeries) -> f64 {
    let mut worst = 0.0f64;
    for s in &a.samples {
        if let Some(o) = b.samples.iter().find(|o| (o.t - s.t).abs() < 1e-9) {
            worst = worst.max((s.fidelity - o.fidelity).abs());
        }
    }
    worst
}

pub fn convergence_check(cfg: &EvolutionConfig) -> ConvergenceReport {
    let reference = evolve(cfg);
    convergence_check_against(cfg, reference.as_ref())
}

/// As [`convergence_check`], reusing an already computed reference run.
pub fn convergence_check_against(
    cfg: &EvolutionConfig,
    reference: std::result::Result<&TimeSeries, &Error>,
) -> ConvergenceReport {
    let mut failures = Vec::new();
    let reference = match reference {
        Ok(r) => Some(r),
        Err(e) => {
            failures.push(format!("reference run: {e}"));
            None
        }
    };

    let mut fine = cfg.clone();
    fine.dt = cfg.dt / 2.0;
    fine.sample_every = cfg.sample_every * 2;

    let mut wide = cfg.clone();
    wide.params.n_phonon_levels = (cfg.params.n_phonon_levels * 3).div_ceil(2);

    let mut gap = |label: &str, variant: &EvolutionConfig| -> Option<f64> {
        match (evolve(variant), reference) {
            (Ok(series), Some(r)) => Some(max_fidelity_gap(r, &series)),
            (Ok(_), None) => None,
            (Err(e), _) => {
                failures.push(format!("{label} run: {e}"));
                None
            }
        }
    };
    let max_delta_f_dt = gap("dt/2", &fine);
    let max_delta_f_truncation = gap("phonon x1.5", &wide);

    let max_delta_f = max_delta_f_dt
        .unwrap_or(f64::INFINITY)
        .max(max_delta_f_truncation.unwrap_or(f64::INFINITY));
    ConvergenceReport {
        max_delta_f_dt,
        max_delta_f_truncation,
        max_delta_f,
        tolerance: CONVERGENCE_TOLERANCE,
        passed: failures.is_empty() && max_delta_f < CONVERGENCE_TOLERANCE,
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::darkstate::find_gn;
    use crate::model::build_full_hamiltonian;
    use crate::operator::{fock_annihilation, kron};

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn small_params(n_max: usize, ratio21: f64) -> (ModelParams, DarkState) {
        let g = find_gn(n_max).unwrap();
        let omega2 = 0.01;
        let omega1 = omega2 / ratio21;
        let mut p = ModelParams::resonant(n_max, g, omega1, omega2, 0.05);
        p.n_phonon_levels = n_max + 6;
        (p, dark_state(n_max, g, 1.0 / ratio21).unwrap())
    }

    #[test]
    fn rhs_trivial_cases() {
        let d = 4;
        let rho = DensityMatrix::maximally_mixed(d);
        let out = lindblad_rhs(&rho, &Operator::zeros(d), &[]).unwrap();
        assert_eq!(out, Operator::zeros(d));

        let a = fock_annihilation(d).unwrap();
        let vac = DensityMatrix::from_ket(&Ket::basis(d, 0).unwrap()).unwrap();
        let out = lindblad_rhs(&vac, &Operator::zeros(d), &[(a.clone(), 0.3)]).unwrap();
        assert!(out.frobenius_norm() < 1e-15);

        let one = DensityMatrix::from_ket(&Ket::basis(d, 1).unwrap()).unwrap();
        let out = lindblad_rhs(&one, &Operator::zeros(d), &[(a.clone(), 0.3)]).unwrap();
        let n = &a.adjoint() * &a;
        let rate = (&out * &n).trace();
        assert!((rate - c(-0.3)).norm() < 1e-14);

        assert!(lindblad_rhs(&one, &Operator::zeros(3), &[]).is_err());
        assert!(lindblad_rhs(&one, &Operator::zeros(d), &[(a, -1.0)]).is_err());
    }

    #[test]
    fn rhs_traceless_and_hermitian() {
        let (p, ds) = small_params(2, 2.0);
        let h = build_full_hamiltonian(&p, 1.3).unwrap();
        let ket = ds.ket(p.n_photon_levels, p.n_phonon_levels).unwrap();
        let mixed = Ket::new(
            (0..p.total_dim())
                .map(|i| C64::new(1.0 / (1.0 + i as f64), 0.1 * i as f64))
                .collect(),
        );
        let rho = DensityMatrix::new(
            ket.projector()
                .scale(c(0.5))
                .try_add(&mixed.normalized().unwrap().projector().scale(c(0.5)))
                .unwrap(),
        )
        .unwrap();
        let collapse = collapse_operators(&ModelParams { gamma_m: 0.01, ..p }).unwrap();
        let out = lindblad_rhs(&rho, &h, &collapse).unwrap();
        assert!(out.trace().norm() < 1e-12);
        assert!(out.hermiticity_error() < 1e-12);
    }

    #[test]
    fn sparse_liouvillian_matches_dense_rhs() {
        let (mut p, ds) = small_params(3, 3.0);
        p.gamma_m = 0.02;
        let mut cfg = EvolutionConfig::new(p, ds.clone(), 1.0);
        let ket = Ket::new(
            (0..p.total_dim())
                .map(|i| C64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
                .collect(),
        )
        .normalized()
        .unwrap();
        let rho = DensityMatrix::from_ket(&ket).unwrap();
        let t = 17.3;
        let a = photon_annihilation(&p).unwrap();
        let b = phonon_annihilation(&p).unwrap();
        let n_ph = &a.adjoint() * &a;
        let phase = C64::from_polar(1.0, -t);
        let coupling = (&n_ph * &b).scale(phase);
        let drive = p.drive_amplitude(t);
        let h_interaction = (&coupling + &coupling.adjoint())
            .scale(c(-p.g))
            .try_add(&(&a.adjoint().scale(drive) + &a.scale(drive.conj())))
            .unwrap();
        let cases = [
            (
                false,
                Frame::Rotating,
                build_full_hamiltonian(&p, t).unwrap(),
            ),
            (false, Frame::Interaction, h_interaction),
            (
                true,
                Frame::Interaction,
                embed_effective_hamiltonian(
                    3,
                    ds.xi,
                    p.omega1_amp,
                    p.omega2_amp,
                    3,
                    p.n_phonon_levels,
                )
                .unwrap(),
            ),
        ];
        for (use_effective, frame, h) in cases {
            cfg.use_effective = use_effective;
            let mut l = build_liouvillian(&cfg, frame).unwrap();
            let mut out = vec![ZERO; rho.dim() * rho.dim()];
            l.apply(t, rho.as_operator().as_slice(), &mut out);
            let dense = lindblad_rhs(&rho, &h, &collapse_operators(&p).unwrap()).unwrap();
            let fast = Operator::from_row_major(rho.dim(), out).unwrap();
            assert!(fast.max_abs_diff(&dense).unwrap() < 1e-14, "{frame:?}");
        }
    }

    #[test]
    fn frames_agree() {
        let (mut p, ds) = small_params(2, 2.0);
        p.omega2_amp = 0.05;
        p.omega1_amp = 0.025;
        p.gamma_m = 1e-3;
        p.n_phonon_levels = 14;
        let mut cfg = EvolutionConfig::new(p, ds, 60.0);
        cfg.dt = 0.005;
        cfg.sample_every = 1000;
        let rotating = evolve_in(&cfg, Frame::Rotating).unwrap();
        let interaction = evolve_in(&cfg, Frame::Interaction).unwrap();
        assert_eq!(rotating.samples.len(), interaction.samples.len());
        for (r, i) in rotating.samples.iter().zip(&interaction.samples) {
            assert!((r.fidelity - i.fidelity).abs() < 1e-7, "{r:?} {i:?}");
            assert!((r.photon - i.photon).abs() < 1e-7);
            assert!((r.phonon - i.phonon).abs() < 1e-7);
        }
        // both frames converge to the same limit
        let mut fine = cfg.clone();
        fine.dt /= 4.0;
        fine.sample_every *= 4;
        let r = evolve_in(&fine, Frame::Rotating).unwrap();
        let i = evolve_in(&fine, Frame::Interaction).unwrap();
        let (r, i) = (r.final_sample(), i.final_sample());
        assert!((r.phonon - i.phonon).abs() < 1e-9);
        assert!((r.fidelity - i.fidelity).abs() < 1e-9);
        assert!(interaction.final_sample().photon > 1e-4);
    }

    #[test]
    fn fidelity_examples() {
        let (p, ds) = small_params(3, 2.0);
        let d = p.total_dim();
        let ket = ds.ket(p.n_photon_levels, p.n_phonon_levels).unwrap();
        let rho = DensityMatrix::from_ket(&ket).unwrap();
        assert!((fidelity(&rho, &ket).unwrap() - 1.0).abs() < 1e-14);
        let orth = DensityMatrix::from_ket(&Ket::basis(d, d - 1).unwrap()).unwrap();
        assert_eq!(fidelity(&orth, &ket).unwrap(), 0.0);
        let ground = DensityMatrix::from_ket(&Ket::basis(d, 0).unwrap()).unwrap();
        let c2 = ds.norm_c * ds.norm_c;
        assert!((fidelity(&ground, &ket).unwrap() - c2).abs() < 1e-15);
        assert!(fidelity(&ground, &Ket::basis(3, 0).unwrap()).is_err());
    }

    #[test]
    fn drive_free_ground_state_is_stationary() {
        let (mut p, ds) = small_params(2, 2.0);
        p.omega1_amp = 0.0;
        p.omega2_amp = 0.0;
        let mut cfg = EvolutionConfig::new(p, ds.clone(), 20.0);
        cfg.sample_every = 100;
        let series = evolve(&cfg).unwrap();
        let c2 = ds.norm_c * ds.norm_c;
        for s in &series.samples {
            assert_eq!(s.fidelity, c2);
            assert_eq!(s.photon, 0.0);
        }
        assert_eq!(series.samples.len(), 11);
        let report = convergence_check(&cfg);
        assert!(report.passed);
        assert_eq!(report.max_delta_f, 0.0);
    }

    #[test]
    fn zero_mechanical_damping_is_bitwise_identical() {
        let (p, ds) = small_params(2, 2.0);
        let mut cfg = EvolutionConfig::new(p, ds, 10.0);
        cfg.sample_every = 50;
        let a = evolve(&cfg).unwrap();
        let b = mechanical_damping_variant(&cfg, 0.0).unwrap();
        assert_eq!(a, b);
        let c_ = g_deviation_study(&cfg, 0.0).unwrap();
        assert_eq!(a, c_);
        assert!(g_deviation_study(&cfg, 0.25).is_err());
        assert!(mechanical_damping_variant(&cfg, -1e-3).is_err());
    }

    #[test]
    fn coarse_step_is_flagged() {
        let (p, ds) = small_params(2, 2.0);
        let mut cfg = EvolutionConfig::new(p, ds, 400.0);
        cfg.dt = 0.5;
        cfg.sample_every = 40;
        cfg.check_positivity = false;
        let report = convergence_check(&cfg);
        assert!(!report.passed, "{report:?}");
    }

    #[test]
    fn photon_decay_from_one_photon_state() {
        let (mut p, ds) = small_params(2, 2.0);
        p.omega1_amp = 0.0;
        p.omega2_amp = 0.0;
        // the photon displaces the mirror by up to 2g, so give the phonons room
        p.n_phonon_levels = 16;
        let m = p.n_phonon_levels;
        let mut cfg = EvolutionConfig::new(p, ds, 40.0);
        cfg.sample_every = 250;
        cfg.initial = InitialState::Pure(Ket::basis(p.total_dim(), m).unwrap());
        let series = evolve(&cfg).unwrap();
        for s in &series.samples {
            let expect = (-p.gamma_c * s.t).exp();
            assert!(
                (s.photon - expect).abs() <= 1e-6 * expect,
                "t={} {}",
                s.t,
                s.photon
            );
        }
    }

    #[test]
    fn phonon_decay_from_fock_state() {
        let (mut p, ds) = small_params(2, 2.0);
        p.omega1_amp = 0.0;
        p.omega2_amp = 0.0;
        p.gamma_m = 0.02;
        let mut cfg = EvolutionConfig::new(p, ds, 40.0);
        cfg.sample_every = 250;
        cfg.initial = InitialState::Pure(Ket::basis(p.total_dim(), 3).unwrap());
        let series = evolve(&cfg).unwrap();
        for s in &series.samples {
            let expect = 3.0 * (-p.gamma_m * s.t).exp();
            assert!(
                (s.phonon - expect).abs() <= 1e-6 * expect,
                "t={} {}",
                s.t,
                s.phonon
            );
            assert_eq!(s.photon, 0.0);
        }
    }

    #[test]
    fn kron_ordering_of_collapse_operators() {
        let p = ModelParams {
            n_photon_levels: 2,
            n_phonon_levels: 3,
            ..ModelParams::resonant(1, 1.0, 0.0, 0.0, 0.1)
        };
        let a = photon_annihilation(&p).unwrap();
        let expect = kron(&fock_annihilation(2).unwrap(), &Operator::identity(3)).unwrap();
        assert_eq!(a, expect);
        // a lowers the photon index by one block of n_phonon
        assert_eq!(a.get(0, 3), c(1.0));
    }
}
