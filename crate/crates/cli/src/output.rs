//! Run artifacts: posterior file, trace, prediction and JSON reports.

use std::path::Path;

use hcebnn::inference::{FieldPrediction, SortedRow};
use hcebnn::trainer::EpochRecord;
use hcebnn::{Architecture, GaussianVariationalPosterior, NormalizationMap, TrainingTrace};
use serde::{Deserialize, Serialize};

use crate::dataset::{read_csv, write_csv, PREDICTION_HEADER, SORTED_HEADER, TRACE_HEADER};
use crate::error::CliError;

pub const POSTERIOR_FORMAT: &str = "hcebnn-posterior-v1";

pub const POSTERIOR_FILE: &str = "posterior.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const PREDICTION_FILE: &str = "prediction.csv";
pub const SORTED_FILE: &str = "sorted.csv";
pub const IDENTIFICATION_FILE: &str = "identification.json";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaState {
    pub alpha_tilde: f64,
    pub scale: f64,
}

/// A trained posterior with everything needed to evaluate it in physical
/// units. Stored as JSON; floats are written in shortest round-trip form,
/// so load followed by save reproduces the file byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorFile {
    pub format: String,
    pub architecture: Architecture,
    pub normalization: NormalizationMap,
    pub posterior: GaussianVariationalPosterior,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<AlphaState>,
}

impl PosteriorFile {
    pub fn new(architecture: Architecture, normalization: NormalizationMap, trace: &TrainingTrace) -> Self {
        let alpha = match (trace.alpha_tilde, trace.alpha_scale) {
            (Some(alpha_tilde), Some(scale)) => Some(AlphaState { alpha_tilde, scale }),
            _ => None,
        };
        Self {
            format: POSTERIOR_FORMAT.into(),
            architecture,
            normalization,
            posterior: trace.posterior.clone(),
            alpha,
        }
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let f: PosteriorFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if f.format != POSTERIOR_FORMAT {
            return Err(format!("unsupported format {:?}", f.format));
        }
        if f.posterior.len() != f.architecture.num_params() {
            return Err(format!(
                "posterior has {} parameters but the architecture needs {}",
                f.posterior.len(),
                f.architecture.num_params()
            ));
        }
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_json()?).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|m| CliError::parse(path, m))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| CliError::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Columns: epoch, data_term, pde_term, total, alpha_tilde, alpha (m²/s).
/// The diffusivity columns are empty when it was not trained.
pub fn write_trace(path: &Path, trace: &TrainingTrace) -> Result<(), CliError> {
    let header: Vec<String> = ["epoch", "data_term", "pde_term", "total", "alpha_tilde", "alpha"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = trace
        .records
        .iter()
        .map(|r| {
            vec![
                r.epoch.to_string(),
                r.data_term.to_string(),
                r.pde_term.to_string(),
                r.total.to_string(),
                opt(r.alpha_tilde),
                opt(r.alpha_tilde.zip(trace.alpha_scale).map(|(a, s)| a * s)),
            ]
        })
        .collect();
    write_csv(path, TRACE_HEADER, &header, &rows)
}

/// Epoch records and per-epoch diffusivity (m²/s, `None` where absent).
pub fn read_trace(path: &Path) -> Result<(Vec<EpochRecord>, Vec<Option<f64>>), CliError> {
    let (header, rows) = read_csv(path, TRACE_HEADER)?;
    if header != ["epoch", "data_term", "pde_term", "total", "alpha_tilde", "alpha"] {
        return Err(CliError::parse(path, format!("unexpected trace columns {header:?}")));
    }
    let num = |i: usize, s: &str| -> Result<Option<f64>, CliError> {
        if s.is_empty() {
            return Ok(None);
        }
        s.parse()
            .map(Some)
            .map_err(|_| CliError::parse(path, format!("row {}: {s:?} is not a number", i + 1)))
    };
    let mut records = Vec::with_capacity(rows.len());
    let mut alpha = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let need = |s: &str| num(i, s)?.ok_or_else(|| CliError::parse(path, format!("row {}: missing value", i + 1)));
        records.push(EpochRecord {
            epoch: r[0]
                .parse()
                .map_err(|_| CliError::parse(path, format!("row {}: bad epoch {:?}", i + 1, r[0])))?,
            data_term: need(&r[1])?,
            pde_term: need(&r[2])?,
            total: need(&r[3])?,
            alpha_tilde: num(i, &r[4])?,
        });
        alpha.push(num(i, &r[5])?);
    }
    Ok((records, alpha))
}

const AXES: [&str; 3] = ["x", "y", "z"];

/// Columns: coordinates, optional t, mean (K), std (K).
pub fn write_prediction(path: &Path, pred: &FieldPrediction) -> Result<(), CliError> {
    let dims = pred.coords.first().map_or(1, Vec::len);
    let has_time = pred.time.first().is_some_and(Option::is_some);
    let mut header: Vec<String> = AXES[..dims].iter().map(|s| s.to_string()).collect();
    if has_time {
        header.push("t".into());
    }
    header.extend(["mean".to_string(), "std".to_string()]);
    let rows: Vec<Vec<String>> = (0..pred.mean.len())
        .map(|i| {
            let mut r: Vec<String> = pred.coords[i].iter().map(|v| v.to_string()).collect();
            if let Some(t) = pred.time[i] {
                r.push(t.to_string());
            }
            r.push(pred.mean[i].to_string());
            r.push(pred.std[i].to_string());
            r
        })
        .collect();
    write_csv(path, PREDICTION_HEADER, &header, &rows)
}

/// Columns: rank, truth, mean, std; rows sorted by truth.
pub fn write_sorted(path: &Path, rows: &[SortedRow]) -> Result<(), CliError> {
    let header: Vec<String> = ["rank", "truth", "mean", "std"].iter().map(|s| s.to_string()).collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.rank.to_string(), r.truth.to_string(), r.mean.to_string(), r.std.to_string()])
        .collect();
    write_csv(path, SORTED_HEADER, &header, &body)
}
