//! One-axis experiment sweeps with repeats and median aggregation.

use std::fmt;
use std::str::FromStr;

use hcebnn::reference::SensorScheme;
use hcebnn::IdentifiedBoundary;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::experiment::{invert_boundaries, run, RunMetrics};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    ObservationCount,
    Placement,
    CollocationCount,
    Noise,
}

impl FromStr for SweepAxis {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "observation_count" => Ok(SweepAxis::ObservationCount),
            "placement" => Ok(SweepAxis::Placement),
            "collocation_count" => Ok(SweepAxis::CollocationCount),
            "noise" => Ok(SweepAxis::Noise),
            other => Err(CliError::Config(format!(
                "unknown sweep axis {other:?} (observation_count, placement, collocation_count, noise)"
            ))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::ObservationCount => "observation_count",
            SweepAxis::Placement => "placement",
            SweepAxis::CollocationCount => "collocation_count",
            SweepAxis::Noise => "noise",
        })
    }
}

fn parse<T: FromStr>(axis: SweepAxis, value: &str) -> Result<T, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("bad {axis} value {value:?}")))
}

/// `cfg` with one axis set to `value`.
pub fn apply(cfg: &RunConfig, axis: SweepAxis, value: &str) -> Result<RunConfig, CliError> {
    let mut c = cfg.clone();
    match axis {
        SweepAxis::ObservationCount => c.data.sensors = parse(axis, value)?,
        SweepAxis::Placement => c.data.scheme = SensorScheme::from_str(value.trim())?,
        SweepAxis::CollocationCount => c.training.collocation = parse(axis, value)?,
        SweepAxis::Noise => c.data.noise = parse(axis, value)?,
    }
    c.validate()?;
    Ok(c)
}

/// Seeds for repeat `r`: both the data and training seeds advance by `r`.
/// Every cell reuses the same seeds, so cells differ only along the axis.
pub fn repeat_config(cfg: &RunConfig, r: usize) -> RunConfig {
    let mut c = cfg.clone();
    c.data.seed = cfg.data.seed.wrapping_add(r as u64);
    c.training.seed = cfg.training.seed.wrapping_add(r as u64);
    c
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub metrics: RunMetrics,
    pub boundaries: Vec<IdentifiedBoundary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRun {
    pub value: String,
    pub repeat: usize,
    pub data_seed: u64,
    pub training_seed: u64,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
}

/// Trains, evaluates and runs any configured boundary identification.
pub fn run_summary(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let out = run(cfg)?;
    let boundaries = invert_boundaries(cfg, out.prepared.architecture(), &out.prepared.scaling, &out.trace.posterior)?;
    Ok(RunSummary {
        metrics: out.metrics,
        boundaries,
    })
}

/// Runs every (value, repeat) cell. Cells run concurrently; a failing cell
/// is recorded and does not stop the others.
pub fn sweep(cfg: &RunConfig, axis: SweepAxis, values: &[String], repeats: usize) -> Result<Vec<CellRun>, CliError> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    if repeats == 0 {
        return Err(CliError::Config("sweep needs at least one repeat".into()));
    }
    let cells = values
        .iter()
        .map(|v| apply(cfg, axis, v))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|i| (0..repeats).map(move |r| (i, r)))
        .collect();
    Ok(jobs
        .par_iter()
        .map(|&(i, r)| {
            let c = repeat_config(&cells[i], r);
            let result = run_summary(&c);
            CellRun {
                value: values[i].clone(),
                repeat: r,
                data_seed: c.data.seed,
                training_seed: c.training.seed,
                error: result.as_ref().err().map(|e| e.to_string()),
                summary: result.ok(),
            }
        })
        .collect())
}

/// Median of the finite values; `None` if there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub value: String,
    pub runs: usize,
    pub failures: usize,
    pub median_rmse: Option<f64>,
    pub median_r_squared: Option<f64>,
    pub median_coverage: Option<f64>,
    /// Per boundary target, in configuration order.
    pub median_boundary_error: Vec<Option<f64>>,
    pub median_alpha_error: Option<f64>,
}

pub fn aggregate(values: &[String], runs: &[CellRun]) -> Vec<TrendRow> {
    values
        .iter()
        .map(|v| {
            let cell: Vec<&CellRun> = runs.iter().filter(|r| &r.value == v).collect();
            let ok: Vec<&RunSummary> = cell.iter().filter_map(|r| r.summary.as_ref()).collect();
            let pick = |f: &dyn Fn(&RunSummary) -> Option<f64>| median(&ok.iter().filter_map(|s| f(s)).collect::<Vec<_>>());
            let n_targets = ok.iter().map(|s| s.boundaries.len()).max().unwrap_or(0);
            TrendRow {
                value: v.clone(),
                runs: cell.len(),
                failures: cell.len() - ok.len(),
                median_rmse: pick(&|s| Some(s.metrics.metrics.rmse)),
                median_r_squared: pick(&|s| Some(s.metrics.metrics.r_squared)),
                median_coverage: pick(&|s| Some(s.metrics.coverage_2sigma)),
                median_boundary_error: (0..n_targets)
                    .map(|j| pick(&|s| s.boundaries.get(j).and_then(|b| b.relative_error)))
                    .collect(),
                median_alpha_error: pick(&|s| s.metrics.alpha.and_then(|a| a.relative_error)),
            }
        })
        .collect()
}
