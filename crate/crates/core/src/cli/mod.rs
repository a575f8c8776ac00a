//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration or usage error,
//! 3 physics-validity failure (`validate`), 4 numerical abort.

pub mod config;
pub mod output;
pub mod sweep;

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::darkstate::{dark_state, find_gn, MAX_CUTOFF};
use crate::dynamics::{convergence_check_against, deviated_config, evolve};
use crate::model::blockade_margin;

use self::config::{ConfigError, RatioConvention, RunConfig};
use self::output::{fmt12, write_atomic, TIMESERIES_HEADER, TIMESERIES_SCHEMA};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PHYSICS: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("numerical abort: {0}")]
    Numerical(crate::Error),
    #[error("{0}")]
    Model(crate::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::Model(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        if e.is_numerical_abort() {
            CliError::Numerical(e)
        } else {
            CliError::Model(e)
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "darkmirror",
    version,
    about = "Dark states of a two-tone driven optomechanical cavity"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Spacing {
    Linear,
    Log,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Magic couplings g_N (smallest root of L_N(g^2)).
    Gn {
        #[arg(long, conflicts_with = "max_n", required_unless_present = "max_n")]
        n: Option<usize>,
        /// Emit every N from 1 to this value.
        #[arg(long)]
        max_n: Option<usize>,
    },
    /// Phonon distribution of a dark state.
    Darkstate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        ratio: f64,
        /// "1/2" for ratio = Omega1/Omega2, "2/1" for Omega2/Omega1.
        #[arg(long)]
        ratio_convention: String,
        /// Coupling in units of omega_M; defaults to g_N.
        #[arg(long)]
        g: Option<f64>,
    },
    /// Fano factor against Omega1/Omega2.
    FanoSweep {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        ratio_min: f64,
        #[arg(long)]
        ratio_max: f64,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, value_enum, default_value_t = Spacing::Linear)]
        spacing: Spacing,
        #[arg(long)]
        g: Option<f64>,
    },
    /// Integrate the master equation for one configuration.
    Evolve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        gamma_m: Option<f64>,
        #[arg(long)]
        g_deviation: Option<f64>,
        /// Overrides output.csv (the sidecar follows unless set explicitly).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_convergence_check: bool,
    },
    /// Check resonance conditions, blockade margin and truncation headroom.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        max_drive_ratio: f64,
        #[arg(long, default_value_t = 5e-3)]
        resonance_tol: f64,
    },
    /// Cartesian parameter sweep, e.g. --grid "ratio=2,3;gamma_m=0,1e-5".
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: String,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Parses `std::env::args` and runs; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match execute(cli.command, &mut out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one subcommand, writing tables and reports to `out`.
pub fn execute(command: Command, out: &mut dyn Write) -> Result<i32, CliError> {
    match command {
        Command::Gn { n, max_n } => cmd_gn(n, max_n, out),
        Command::Darkstate {
            n,
            ratio,
            ratio_convention,
            g,
        } => cmd_darkstate(n, ratio, &ratio_convention, g, out),
        Command::FanoSweep {
            n,
            ratio_min,
            ratio_max,
            steps,
            spacing,
            g,
        } => cmd_fano_sweep(n, ratio_min, ratio_max, steps, spacing, g, out),
        Command::Evolve {
            config,
            gamma_m,
            g_deviation,
            out: csv,
            no_convergence_check,
        } => cmd_evolve(
            &config,
            gamma_m,
            g_deviation,
            csv,
            no_convergence_check,
            out,
        ),
        Command::Validate {
            config,
            max_drive_ratio,
            resonance_tol,
        } => cmd_validate(&config, max_drive_ratio, resonance_tol, out),
        Command::Sweep {
            config,
            grid,
            jobs,
            out_dir,
        } => sweep::cmd_sweep(&config, &grid, jobs, &out_dir, out),
    }
}

fn cmd_gn(n: Option<usize>, max_n: Option<usize>, out: &mut dyn Write) -> Result<i32, CliError> {
    let range = match (n, max_n) {
        (Some(n), None) => n..=n,
        (None, Some(m)) => 1..=m,
        _ => return Err(CliError::Usage("give exactly one of --n or --max-n".into())),
    };
    if *range.start() == 0 || *range.end() > MAX_CUTOFF {
        return Err(CliError::Usage(format!("N must lie in 1..={MAX_CUTOFF}")));
    }
    let rows = range
        .map(|n| find_gn(n).map(|g| (n, g)))
        .collect::<Result<Vec<_>, _>>()?;
    out.write_all(output::gn_csv(&rows).as_bytes())?;
    Ok(EXIT_OK)
}

fn cmd_darkstate(
    n: usize,
    ratio: f64,
    convention: &str,
    g: Option<f64>,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let convention: RatioConvention = convention.parse().map_err(CliError::Usage)?;
    if !(ratio >= 0.0) || !ratio.is_finite() {
        return Err(CliError::Usage(format!(
            "--ratio must be finite and >= 0, got {ratio}"
        )));
    }
    let r12 = convention.to_omega1_over_omega2(ratio);
    if !r12.is_finite() {
        return Err(CliError::Usage(
            "Omega1/Omega2 is infinite (Omega2 = 0): no dark state".into(),
        ));
    }
    let g = match g {
        Some(g) => g,
        None => find_gn(n)?,
    };
    let ds = dark_state(n, g, r12)?;
    out.write_all(output::darkstate_csv(&ds).as_bytes())?;
    Ok(EXIT_OK)
}

fn cmd_fano_sweep(
    n: usize,
    a: f64,
    b: f64,
    steps: usize,
    spacing: Spacing,
    g: Option<f64>,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(CliError::Usage(format!(
            "--ratio-min ({a}) must be below --ratio-max ({b})"
        )));
    }
    if a < 0.0 {
        return Err(CliError::Usage("--ratio-min must be >= 0".into()));
    }
    if steps < 2 {
        return Err(CliError::Usage("--steps must be >= 2".into()));
    }
    if spacing == Spacing::Log && a <= 0.0 {
        return Err(CliError::Usage("log spacing needs --ratio-min > 0".into()));
    }
    let g = match g {
        Some(g) => g,
        None => find_gn(n)?,
    };
    let mut text = String::from("ratio,mean,fano\n");
    for i in 0..steps {
        let s = i as f64 / (steps - 1) as f64;
        let r = match spacing {
            Spacing::Linear => a + (b - a) * s,
            Spacing::Log => (a.ln() + (b.ln() - a.ln()) * s).exp(),
        };
        let stats = dark_state(n, g, r)?.statistics();
        text.push_str(&format!(
            "{},{},{}\n",
            fmt12(r),
            fmt12(stats.mean),
            stats.fano.map(fmt12).unwrap_or_default()
        ));
    }
    out.write_all(text.as_bytes())?;
    Ok(EXIT_OK)
}

fn cmd_evolve(
    path: &std::path::Path,
    gamma_m: Option<f64>,
    g_deviation: Option<f64>,
    csv: Option<PathBuf>,
    no_convergence_check: bool,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let mut config = RunConfig::load(path)?;
    if let Some(gm) = gamma_m {
        config.model.gamma_m_wm = gm;
    }
    if let Some(d) = g_deviation {
        config.evolution.g_deviation = d;
    }
    if let Some(csv) = csv {
        config.output.csv = csv;
        config.output.metadata = None;
    }
    if no_convergence_check {
        config.evolution.convergence_check = false;
    }
    let resolved = config.resolve()?;
    let ev = &resolved.config.evolution;
    let run_cfg = deviated_config(&resolved.evolution, ev.g_deviation, ev.deviation_target)?;

    let started = Instant::now();
    let series = evolve(&run_cfg)?;
    let wall_time = started.elapsed().as_secs_f64();
    let convergence = ev
        .convergence_check
        .then(|| convergence_check_against(&run_cfg, Ok(&series)));

    let csv_path = resolved.config.output.csv.clone();
    let meta_path = resolved.config.metadata_path();
    write_atomic(&csv_path, output::timeseries_csv(&series).as_bytes())?;

    let last = series.final_sample();
    let ds = &run_cfg.target;
    let sidecar = json!({
        "schema": TIMESERIES_SCHEMA,
        "csv_columns": TIMESERIES_HEADER,
        "config": resolved.config,
        "derived": {
            "g_n": resolved.g_n,
            "g_effective": run_cfg.params.g,
            "delta1": run_cfg.params.delta1,
            "delta2": run_cfg.params.delta2,
            "total_dim": run_cfg.params.total_dim(),
            "dark_state_support": ds.n_max,
            "omega1_over_omega2": ds.ratio,
            "dark_state_norm_c_sq": ds.norm_c * ds.norm_c,
        },
        "result": {
            "steps": series.steps,
            "final_t": last.t,
            "final_fidelity": last.fidelity,
            "max_trace_error": series.max_trace_error(),
            "max_hermiticity_error": series.max_hermiticity_error(),
            "min_eigenvalue": series.min_eigenvalue(),
        },
        "convergence": convergence,
        "wall_time_s": wall_time,
    });
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    write_atomic(&meta_path, text.as_bytes())?;

    writeln!(
        out,
        "final t = {}, F = {}, wrote {} and {}",
        fmt12(last.t),
        fmt12(last.fidelity),
        csv_path.display(),
        meta_path.display()
    )?;
    if let Some(report) = &convergence {
        writeln!(
            out,
            "convergence: max |dF| = {:e} (tolerance {:e}) {}",
            report.max_delta_f,
            report.tolerance,
            if report.passed { "PASS" } else { "FAIL" }
        )?;
        for f in &report.failures {
            writeln!(out, "  {f}")?;
        }
    }
    Ok(EXIT_OK)
}

/// Outcome of the static validity checks on a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidityReport {
    pub delta1_error: f64,
    pub delta2_error: f64,
    pub resonance_ok: bool,
    pub k: i64,
    pub margin: f64,
    pub drive_over_margin: f64,
    pub blockade_ok: bool,
    pub headroom: i64,
}

impl ValidityReport {
    pub fn passed(&self) -> bool {
        self.resonance_ok && self.blockade_ok
    }
}

pub fn validity_report(
    config: &RunConfig,
    max_drive_ratio: f64,
    resonance_tol: f64,
) -> Result<ValidityReport, CliError> {
    let run = config.resolve()?;
    let p = run.evolution.params;
    let (d1, d2) = crate::model::resonance_detunings(p.g);
    let delta1_error = (p.delta1 - d1).abs();
    let delta2_error = (p.delta2 - d2).abs();
    let bm = blockade_margin(p.g);
    let drive = p.omega1_amp.max(p.omega2_amp);
    // margins at rounding level count as a closed gap
    let drive_over_margin = if bm.margin > 1e-12 {
        drive / bm.margin
    } else {
        f64::INFINITY
    };
    Ok(ValidityReport {
        delta1_error,
        delta2_error,
        resonance_ok: delta1_error <= resonance_tol && delta2_error <= resonance_tol,
        k: bm.k,
        margin: bm.margin,
        drive_over_margin,
        blockade_ok: drive_over_margin <= max_drive_ratio,
        headroom: p.n_phonon_levels as i64 - (config.model.n_max as i64 + 1),
    })
}

fn cmd_validate(
    path: &std::path::Path,
    max_drive_ratio: f64,
    resonance_tol: f64,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let config = RunConfig::load(path)?;
    let r = validity_report(&config, max_drive_ratio, resonance_tol)?;
    let run = config.resolve()?;
    let p = run.evolution.params;
    let tag = |ok: bool| if ok { "ok" } else { "MISMATCH" };
    writeln!(
        out,
        "resonance: delta1 = {} (expected {}), |diff| = {:.3e} [{}]",
        fmt12(p.delta1),
        fmt12(-p.g * p.g),
        r.delta1_error,
        tag(r.delta1_error <= resonance_tol)
    )?;
    writeln!(
        out,
        "resonance: delta2 = {} (expected {}), |diff| = {:.3e} [{}]",
        fmt12(p.delta2),
        fmt12(-1.0 - p.g * p.g),
        r.delta2_error,
        tag(r.delta2_error <= resonance_tol)
    )?;
    writeln!(
        out,
        "blockade: K = {}, margin = {:.4}, max drive = {}, drive/margin = {:.4} (limit {}) [{}]",
        r.k,
        r.margin,
        fmt12(p.omega1_amp.max(p.omega2_amp)),
        r.drive_over_margin,
        max_drive_ratio,
        if r.blockade_ok { "ok" } else { "FAIL" }
    )?;
    writeln!(
        out,
        "truncation: {} phonon levels, dark-state support 0..={}, headroom {} levels",
        p.n_phonon_levels, config.model.n_max, r.headroom
    )?;
    if r.passed() {
        writeln!(out, "result: PASS")?;
        Ok(EXIT_OK)
    } else {
        writeln!(out, "result: FAIL")?;
        Ok(EXIT_PHYSICS)
    }
}
