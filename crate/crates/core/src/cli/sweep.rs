//! Cartesian parameter sweeps over independent `evolve` runs.
//!
//! Output names derive from grid coordinates only, and the index is written
//! in grid order, so the files do not depend on the worker count.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use super::config::{RatioConvention, RunConfig};
use super::output::{fmt12, timeseries_csv, write_atomic};
use super::{CliError, EXIT_OK};
use crate::dynamics::{deviated_config, evolve};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Drive ratio in the config's convention (Ω₂/Ω₁ if unset).
    Ratio,
    GDeviation,
    GammaM,
    GammaC,
}

impl Axis {
    fn parse(name: &str) -> Result<Self, String> {
        match name {
            "ratio" => Ok(Axis::Ratio),
            "g_deviation" => Ok(Axis::GDeviation),
            "gamma_m" => Ok(Axis::GammaM),
            "gamma_c" => Ok(Axis::GammaC),
            other => Err(format!(
                "unknown sweep axis {other:?} (expected ratio, g_deviation, gamma_m, gamma_c)"
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Ratio => "ratio",
            Axis::GDeviation => "g_deviation",
            Axis::GammaM => "gamma_m",
            Axis::GammaC => "gamma_c",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub axes: Vec<(Axis, Vec<f64>)>,
}

impl Grid {
    /// Parses `axis=v1,v2;axis=v3`.
    pub fn parse(spec: &str) -> Result<Self, String> {
        let mut axes: Vec<(Axis, Vec<f64>)> = Vec::new();
        for part in spec.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let (name, values) = part
                .split_once('=')
                .ok_or_else(|| format!("grid axis {part:?} lacks '='"))?;
            let axis = Axis::parse(name.trim())?;
            if axes.iter().any(|(a, _)| *a == axis) {
                return Err(format!("axis {} given twice", axis.name()));
            }
            let values = values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| format!("axis {}: bad value {v:?}: {e}", axis.name()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if values.is_empty() {
                return Err(format!("axis {} has no values", axis.name()));
            }
            axes.push((axis, values));
        }
        if axes.is_empty() {
            return Err("empty grid".into());
        }
        Ok(Self { axes })
    }

    /// Grid points in row-major order (first axis slowest).
    pub fn points(&self) -> Vec<Vec<(Axis, f64)>> {
        let mut points = vec![Vec::new()];
        for (axis, values) in &self.axes {
            points = points
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |&v| {
                        let mut p = prefix.clone();
                        p.push((*axis, v));
                        p
                    })
                })
                .collect();
        }
        points
    }
}

pub fn point_file_name(point: &[(Axis, f64)]) -> String {
    let parts: Vec<String> = point
        .iter()
        .map(|(a, v)| format!("{}={v}", a.name()))
        .collect();
    format!("{}.csv", parts.join("__"))
}

fn apply_point(base: &RunConfig, point: &[(Axis, f64)]) -> RunConfig {
    let mut cfg = base.clone();
    for &(axis, v) in point {
        match axis {
            Axis::Ratio => {
                let m = &mut cfg.model;
                if m.omega1_wm.is_some() && m.omega2_wm.is_some() {
                    m.omega1_wm = None;
                }
                m.ratio_convention
                    .get_or_insert(RatioConvention::TwoOverOne);
                m.ratio = Some(v);
            }
            Axis::GDeviation => cfg.evolution.g_deviation = v,
            Axis::GammaM => cfg.model.gamma_m_wm = v,
            Axis::GammaC => cfg.model.gamma_c_wm = v,
        }
    }
    cfg
}

/// Result of one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointOutcome {
    pub file: String,
    pub status: Result<f64, String>,
}

fn run_point(base: &RunConfig, point: &[(Axis, f64)], out_dir: &Path) -> PointOutcome {
    let file = point_file_name(point);
    let status = (|| -> Result<f64, String> {
        let cfg = apply_point(base, point);
        let run = cfg.resolve().map_err(|e| e.to_string())?;
        let ev = &run.config.evolution;
        let evo = deviated_config(&run.evolution, ev.g_deviation, ev.deviation_target)
            .map_err(|e| e.to_string())?;
        let series = evolve(&evo).map_err(|e| e.to_string())?;
        write_atomic(&out_dir.join(&file), timeseries_csv(&series).as_bytes())
            .map_err(|e| e.to_string())?;
        Ok(series.final_fidelity())
    })();
    PointOutcome { file, status }
}

/// Runs every grid point on a pool of `jobs` workers and writes `index.csv`.
pub fn run_sweep(
    base: &RunConfig,
    grid: &Grid,
    jobs: usize,
    out_dir: &Path,
) -> Result<Vec<PointOutcome>, CliError> {
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be >= 1".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let points = grid.points();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let outcomes: Vec<PointOutcome> = pool.install(|| {
        points
            .par_iter()
            .map(|p| run_point(base, p, out_dir))
            .collect()
    });

    let mut index = String::from("point");
    for (axis, _) in &grid.axes {
        index.push(',');
        index.push_str(axis.name());
    }
    index.push_str(",path,status,final_fidelity\n");
    for (i, (point, outcome)) in points.iter().zip(&outcomes).enumerate() {
        index.push_str(&i.to_string());
        for (_, v) in point {
            index.push(',');
            index.push_str(&v.to_string());
        }
        let (status, fid) = match &outcome.status {
            Ok(f) => ("ok".to_string(), fmt12(*f)),
            Err(e) => (
                format!("error: {}", e.replace([',', '\n'], ";")),
                String::new(),
            ),
        };
        index.push_str(&format!(",{},{status},{fid}\n", outcome.file));
    }
    write_atomic(&out_dir.join("index.csv"), index.as_bytes())?;
    Ok(outcomes)
}

pub fn cmd_sweep(
    config: &Path,
    grid: &str,
    jobs: usize,
    out_dir: &Path,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let base = RunConfig::load(config)?;
    let grid = Grid::parse(grid).map_err(CliError::Usage)?;
    let outcomes = run_sweep(&base, &grid, jobs, out_dir)?;
    let failed = outcomes.iter().filter(|o| o.status.is_err()).count();
    writeln!(
        out,
        "sweep: {} points, {} failed, index at {}",
        outcomes.len(),
        failed,
        out_dir.join("index.csv").display()
    )?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing_and_order() {
        let g = Grid::parse("ratio=2,3; gamma_m=0,1e-5,1e-4").unwrap();
        let pts = g.points();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0], vec![(Axis::Ratio, 2.0), (Axis::GammaM, 0.0)]);
        assert_eq!(pts[1], vec![(Axis::Ratio, 2.0), (Axis::GammaM, 1e-5)]);
        assert_eq!(pts[5], vec![(Axis::Ratio, 3.0), (Axis::GammaM, 1e-4)]);
        assert_eq!(point_file_name(&pts[1]), "ratio=2__gamma_m=0.00001.csv");
    }

    #[test]
    fn grid_errors() {
        assert!(Grid::parse("").is_err());
        assert!(Grid::parse("omega=1").is_err());
        assert!(Grid::parse("ratio=1,x").is_err());
        assert!(Grid::parse("ratio=1;ratio=2").is_err());
        assert!(Grid::parse("ratio").is_err());
    }
}
