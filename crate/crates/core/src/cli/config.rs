//! Run configuration: TOML with `[model]`, `[evolution]` and `[output]`
//! sections. Frequencies carry the suffix `_wm` (units of ω_M), times the
//! suffix `_inv_wm` (units of 1/ω_M). Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::darkstate::{dark_state, find_gn, DarkState};
use crate::dynamics::{
    DeviationTarget, EvolutionConfig, InitialState, DEFAULT_DT, DEFAULT_LEAK_LIMIT,
    DEFAULT_TRACE_LIMIT,
};
use crate::model::{
    default_phonon_levels, resonance_detunings, ModelParams, DEFAULT_PHOTON_LEVELS,
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Meaning of a drive-ratio value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RatioConvention {
    /// ratio = Ω₁/Ω₂
    #[serde(rename = "1/2")]
    OneOverTwo,
    /// ratio = Ω₂/Ω₁
    #[serde(rename = "2/1")]
    TwoOverOne,
}

impl RatioConvention {
    /// Converts a ratio in this convention to Ω₁/Ω₂.
    pub fn to_omega1_over_omega2(self, ratio: f64) -> f64 {
        match self {
            RatioConvention::OneOverTwo => ratio,
            RatioConvention::TwoOverOne => {
                if ratio == 0.0 {
                    f64::INFINITY
                } else {
                    1.0 / ratio
                }
            }
        }
    }
}

impl FromStr for RatioConvention {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1/2" => Ok(RatioConvention::OneOverTwo),
            "2/1" => Ok(RatioConvention::TwoOverOne),
            other => Err(format!(
                "ratio convention must be \"1/2\" or \"2/1\", got {other:?}"
            )),
        }
    }
}

impl fmt::Display for RatioConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RatioConvention::OneOverTwo => "1/2",
            RatioConvention::TwoOverOne => "2/1",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Dark-state phonon cutoff N.
    pub n_max: usize,
    /// Defaults to g_N.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_wm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega1_wm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega2_wm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio_convention: Option<RatioConvention>,
    /// Defaults to −g².
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta1_wm: Option<f64>,
    /// Defaults to −1 − g².
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta2_wm: Option<f64>,
    pub gamma_c_wm: f64,
    #[serde(default)]
    pub gamma_m_wm: f64,
    #[serde(default = "default_photon_levels")]
    pub n_photon_levels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_phonon_levels: Option<usize>,
}

fn default_photon_levels() -> usize {
    DEFAULT_PHOTON_LEVELS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSection {
    pub t_final_inv_wm: f64,
    #[serde(default = "default_dt")]
    pub dt_inv_wm: f64,
    #[serde(default = "default_sample_every")]
    pub sample_every: usize,
    #[serde(default)]
    pub use_effective: bool,
    /// Relative deviation of g from the configured value.
    #[serde(default)]
    pub g_deviation: f64,
    #[serde(default)]
    pub deviation_target: DeviationTarget,
    #[serde(default = "default_true")]
    pub convergence_check: bool,
    #[serde(default = "default_true")]
    pub check_positivity: bool,
    #[serde(default = "default_leak_limit")]
    pub leak_limit: f64,
    #[serde(default = "default_trace_limit")]
    pub trace_limit: f64,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_sample_every() -> usize {
    500
}
fn default_true() -> bool {
    true
}
fn default_leak_limit() -> f64 {
    DEFAULT_LEAK_LIMIT
}
fn default_trace_limit() -> f64 {
    DEFAULT_TRACE_LIMIT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_csv")]
    pub csv: PathBuf,
    /// Defaults to the CSV path with a `.json` extension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<PathBuf>,
}

fn default_csv() -> PathBuf {
    PathBuf::from("timeseries.csv")
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            csv: default_csv(),
            metadata: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub evolution: EvolutionSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Sidecar layout: only `config` is needed to reproduce a run.
#[derive(Debug, Deserialize)]
struct SidecarView {
    config: RunConfig,
}

impl RunConfig {
    /// Reads a TOML config, or the `config` entry of a JSON metadata sidecar.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        if is_json {
            serde_json::from_str::<SidecarView>(&text)
                .map(|s| s.config)
                .map_err(|e| ConfigError::Parse {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })
        } else {
            Self::from_toml_str(&text).map_err(|message| ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            })
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn metadata_path(&self) -> PathBuf {
        self.output
            .metadata
            .clone()
            .unwrap_or_else(|| self.output.csv.with_extension("json"))
    }

    /// Fills every default and derived value, so that the result re-runs
    /// identically without consulting any default.
    pub fn resolve(&self) -> Result<ResolvedRun, ConfigError> {
        let m = &self.model;
        if m.n_max == 0 {
            return Err(ConfigError::Invalid("model.n_max must be >= 1".into()));
        }
        let g_n = find_gn(m.n_max).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let g = m.g_wm.unwrap_or(g_n);
        let (omega1, omega2) = resolve_drives(m)?;
        let (d1, d2) = resonance_detunings(g);
        let params = ModelParams {
            g,
            omega1_amp: omega1,
            omega2_amp: omega2,
            delta1: m.delta1_wm.unwrap_or(d1),
            delta2: m.delta2_wm.unwrap_or(d2),
            gamma_c: m.gamma_c_wm,
            gamma_m: m.gamma_m_wm,
            n_photon_levels: m.n_photon_levels,
            n_phonon_levels: m
                .n_phonon_levels
                .unwrap_or_else(|| default_phonon_levels(m.n_max)),
        };
        params
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if omega2 == 0.0 && omega1 > 0.0 {
            return Err(ConfigError::Invalid(
                "omega2 = 0 with omega1 > 0 has no dark state".into(),
            ));
        }
        let ratio = if omega2 == 0.0 { 0.0 } else { omega1 / omega2 };
        let target =
            dark_state(m.n_max, g, ratio).map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let ev = &self.evolution;
        let evolution = EvolutionConfig {
            params,
            t_final: ev.t_final_inv_wm,
            dt: ev.dt_inv_wm,
            sample_every: ev.sample_every,
            use_effective: ev.use_effective,
            target,
            initial: InitialState::Ground,
            check_positivity: ev.check_positivity,
            leak_limit: ev.leak_limit,
            trace_limit: ev.trace_limit,
        };
        evolution
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(ev.g_deviation.abs() < 0.2) {
            return Err(ConfigError::Invalid(format!(
                "evolution.g_deviation must satisfy |d| < 0.2, got {}",
                ev.g_deviation
            )));
        }

        let resolved_config = RunConfig {
            model: ModelSection {
                n_max: m.n_max,
                g_wm: Some(g),
                omega1_wm: Some(omega1),
                omega2_wm: Some(omega2),
                ratio: None,
                ratio_convention: None,
                delta1_wm: Some(params.delta1),
                delta2_wm: Some(params.delta2),
                gamma_c_wm: params.gamma_c,
                gamma_m_wm: params.gamma_m,
                n_photon_levels: params.n_photon_levels,
                n_phonon_levels: Some(params.n_phonon_levels),
            },
            evolution: ev.clone(),
            output: OutputSection {
                csv: self.output.csv.clone(),
                metadata: Some(self.metadata_path()),
            },
        };
        Ok(ResolvedRun {
            config: resolved_config,
            evolution,
            g_n,
        })
    }
}

fn resolve_drives(m: &ModelSection) -> Result<(f64, f64), ConfigError> {
    match (m.omega1_wm, m.omega2_wm, m.ratio) {
        (Some(o1), Some(o2), None) => Ok((o1, o2)),
        (o1, o2, Some(ratio)) if o1.is_some() != o2.is_some() => {
            let convention = m.ratio_convention.ok_or_else(|| {
                ConfigError::Invalid("model.ratio requires model.ratio_convention".into())
            })?;
            if !(ratio >= 0.0) || !ratio.is_finite() {
                return Err(ConfigError::Invalid(format!("model.ratio must be >= 0, got {ratio}")));
            }
            let r12 = convention.to_omega1_over_omega2(ratio);
            match (o1, o2) {
                (None, Some(o2)) => Ok((o2 * r12, o2)),
                (Some(o1), None) if r12 > 0.0 => Ok((o1, o1 / r12)),
                _ => Err(ConfigError::Invalid(
                    "ratio 0 in this convention leaves Omega2 undetermined".into(),
                )),
            }
        }
        _ => Err(ConfigError::Invalid(
            "give either omega1_wm and omega2_wm, or exactly one of them plus ratio and ratio_convention"
                .into(),
        )),
    }
}

/// A configuration with all defaults applied.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub config: RunConfig,
    pub evolution: EvolutionConfig,
    pub g_n: f64,
}

impl ResolvedRun {
    pub fn dark_state(&self) -> &DarkState {
        &self.evolution.target
    }
}
