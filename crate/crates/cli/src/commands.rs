//! The five subcommands, as library functions.

use std::path::{Path, PathBuf};

use hcebnn::inference::{coverage, metrics, predict_field, sorted_truth_table, summarize_alpha_values};
use hcebnn::{AlphaSummary, IdentifiedBoundary, MetricReport, SpaceTimePoint};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{evaluation_locations, generate, read_dataset, read_truth, write_csv, write_dataset, Location};
use crate::error::CliError;
use crate::experiment::{evaluate, invert_boundaries, prepare, summarize, train, ALPHA_TAIL};
use crate::output::{
    read_trace, write_json, write_prediction, write_sorted, write_trace, PosteriorFile, IDENTIFICATION_FILE,
    METRICS_FILE, POSTERIOR_FILE, PREDICTION_FILE, SORTED_FILE, TRACE_FILE,
};
use crate::sweep::{aggregate, sweep, SweepAxis};

pub const DATA_DIR: &str = "data";
pub const CONFIG_COPY: &str = "config.toml";
pub const ABORT_FILE: &str = "abort.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_RUNS_FILE: &str = "sweep_runs.json";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn save_config(dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let p = dir.join(CONFIG_COPY);
    std::fs::write(&p, cfg.to_toml()?).map_err(|e| CliError::io(&p, e))
}

/// Writes observations, collocation and truth CSVs under `out/data`.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<PathBuf, CliError> {
    let data = generate(cfg)?;
    let dir = out.join(DATA_DIR);
    write_dataset(&dir, cfg, &data)?;
    save_config(out, cfg)?;
    Ok(dir)
}

#[derive(Serialize)]
struct Abort<'a> {
    status: &'a str,
    error: String,
}

/// Trains on the data set in `data_dir` (generated in place when absent)
/// and writes the posterior, trace and metrics into `out`.
pub fn cmd_train(cfg: &RunConfig, data_dir: Option<&Path>, out: &Path) -> Result<crate::experiment::RunMetrics, CliError> {
    create_dir(out)?;
    let data = match data_dir {
        Some(d) => read_dataset(d)?,
        None => {
            let d = cmd_generate(cfg, out)?;
            read_dataset(&d)?
        }
    };
    save_config(out, cfg)?;
    let prep = prepare(cfg, &data)?;
    let trace = match train(&prep) {
        Ok(t) => t,
        Err(e) => {
            write_json(&out.join(ABORT_FILE), &Abort {
                status: "aborted",
                error: e.to_string(),
            })?;
            return Err(e);
        }
    };
    PosteriorFile::new(prep.architecture().clone(), prep.scaling.clone(), &trace).save(&out.join(POSTERIOR_FILE))?;
    write_trace(&out.join(TRACE_FILE), &trace)?;
    let eval = evaluate(&prep, &trace.posterior, cfg.evaluation.samples, cfg.evaluation.seed)?;
    let m = summarize(cfg, &prep, &trace, &eval)?;
    write_json(&out.join(METRICS_FILE), &m)?;
    if cfg.output.write_prediction {
        write_prediction(&out.join(PREDICTION_FILE), &eval.prediction)?;
    }
    if cfg.output.write_sorted {
        let rows = sorted_truth_table(&eval.prediction.mean, &eval.prediction.std, &prep.truth)?;
        write_sorted(&out.join(SORTED_FILE), &rows)?;
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionMetrics {
    pub metrics: MetricReport,
    pub coverage_2sigma: f64,
    pub samples: usize,
}

/// Predictive mean and std on the configured evaluation grid, or on the
/// locations of `truth` when given (then metrics are written as well).
pub fn cmd_predict(
    cfg: &RunConfig,
    posterior: &Path,
    truth: Option<&Path>,
    samples: usize,
    out: &Path,
) -> Result<Option<PredictionMetrics>, CliError> {
    let post = PosteriorFile::load(posterior)?;
    let table = truth.map(read_truth).transpose()?;
    let locations: Vec<Location> = match &table {
        Some(t) => t.locations.clone(),
        None => evaluation_locations(cfg)?,
    };
    if locations.first().map(|l| l.coords.len() + usize::from(l.time.is_some())) != Some(post.architecture.input_dim()) {
        return Err(CliError::Config(format!(
            "grid dimension does not match the posterior's {} inputs",
            post.architecture.input_dim()
        )));
    }
    let points = locations
        .iter()
        .map(|l| post.normalization.normalize_point(&l.coords, l.time))
        .collect::<hcebnn::Result<Vec<SpaceTimePoint>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.evaluation.seed);
    let pred = predict_field(&post.posterior, &post.architecture, &post.normalization, &points, samples, &mut rng)?;
    create_dir(out)?;
    write_prediction(&out.join(PREDICTION_FILE), &pred)?;
    let Some(t) = table else { return Ok(None) };
    let m = PredictionMetrics {
        metrics: metrics(&pred.mean, &t.values)?,
        coverage_2sigma: coverage(&pred.mean, &pred.std, &t.values, 2.0)?,
        samples,
    };
    write_json(&out.join(METRICS_FILE), &m)?;
    write_sorted(&out.join(SORTED_FILE), &sorted_truth_table(&pred.mean, &pred.std, &t.values)?)?;
    Ok(Some(m))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub boundaries: Vec<IdentifiedBoundary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<AlphaSummary>,
}

/// Boundary identification from a posterior and/or diffusivity summary
/// from a trace CSV.
pub fn cmd_invert(
    cfg: &RunConfig,
    posterior: Option<&Path>,
    trace: Option<&Path>,
    out: &Path,
) -> Result<Identification, CliError> {
    if posterior.is_none() && trace.is_none() {
        return Err(CliError::Config("invert needs --posterior and/or --trace".into()));
    }
    let mut id = Identification {
        boundaries: Vec::new(),
        alpha: None,
    };
    if let Some(p) = posterior {
        if cfg.inversion.targets.is_empty() {
            return Err(CliError::Config("no [[inversion.targets]] in the config".into()));
        }
        let post = PosteriorFile::load(p)?;
        id.boundaries = invert_boundaries(cfg, &post.architecture, &post.normalization, &post.posterior)?;
    }
    if let Some(t) = trace {
        let (_, alpha) = read_trace(t)?;
        let values: Vec<f64> = alpha
            .into_iter()
            .collect::<Option<_>>()
            .ok_or_else(|| CliError::parse(t, "trace has no diffusivity column values"))?;
        id.alpha = Some(summarize_alpha_values(
            &values,
            cfg.inversion.tail_fraction.unwrap_or(ALPHA_TAIL),
            cfg.inversion.alpha_truth,
        )?);
    }
    create_dir(out)?;
    write_json(&out.join(IDENTIFICATION_FILE), &id)?;
    Ok(id)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Runs the sweep and writes the trend table and per-run details.
pub fn cmd_sweep(
    cfg: &RunConfig,
    axis: SweepAxis,
    values: &[String],
    repeats: usize,
    out: &Path,
) -> Result<Vec<crate::sweep::TrendRow>, CliError> {
    let runs = sweep(cfg, axis, values, repeats)?;
    let rows = aggregate(values, &runs);
    create_dir(out)?;
    save_config(out, cfg)?;
    let mut header: Vec<String> = [axis.to_string().as_str(), "runs", "failures", "median_rmse", "median_r_squared", "median_coverage"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for t in &cfg.inversion.targets {
        let facet = match t {
            crate::config::InversionTarget::Neumann { facet, .. } | crate::config::InversionTarget::Robin { facet, .. } => facet,
        };
        header.push(format!("median_{facet}_error"));
    }
    header.push("median_alpha_error".into());
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![
                r.value.clone(),
                r.runs.to_string(),
                r.failures.to_string(),
                cell(r.median_rmse),
                cell(r.median_r_squared),
                cell(r.median_coverage),
            ];
            for j in 0..cfg.inversion.targets.len() {
                v.push(cell(r.median_boundary_error.get(j).copied().flatten()));
            }
            v.push(cell(r.median_alpha_error));
            v
        })
        .collect();
    write_csv(&out.join(SWEEP_FILE), crate::dataset::SWEEP_HEADER, &header, &body)?;
    write_json(&out.join(SWEEP_RUNS_FILE), &runs)?;
    Ok(rows)
}
