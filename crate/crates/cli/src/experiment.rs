//! The train-and-evaluate pipeline behind `train`, `sweep` and the
//! acceptance suite.

use hcebnn::inference::{
    coverage, facet_points, identify_neumann, identify_robin, metrics, predict_field,
    summarize_alpha_trace, FieldPrediction,
};
use hcebnn::trainer::{mean_sigma, train_with_collocation, EpochRecord, TrainingConfig};
use hcebnn::{
    AlphaMode, AlphaSummary, Architecture, Diffusivity, GaussianVariationalPosterior,
    IdentifiedBoundary, MetricReport, NormalizationMap, Observation, PdeSpec, PointSet, SpaceTimePoint, TrainingTrace,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{InversionTarget, RunConfig};
use crate::dataset::{generate, Dataset, Location};
use crate::error::CliError;

/// Everything the trainer needs, in normalized units.
pub struct Prepared {
    pub scaling: NormalizationMap,
    pub observations: Vec<Observation>,
    pub collocation: PointSet,
    pub pde: PdeSpec,
    pub training: TrainingConfig,
    pub eval_points: Vec<SpaceTimePoint>,
    pub truth: Vec<f64>,
}

impl Prepared {
    pub fn architecture(&self) -> &Architecture {
        &self.training.architecture
    }
}

fn normalize(scaling: &NormalizationMap, l: &Location) -> hcebnn::Result<SpaceTimePoint> {
    scaling.normalize_point(&l.coords, l.time)
}

/// Temperature reference and scale: configured, or the observed range.
pub fn temperature_map(cfg: &RunConfig, data: &Dataset) -> Result<(f64, f64), CliError> {
    let (lo, hi) = data
        .observations
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| {
            (lo.min(m.temperature), hi.max(m.temperature))
        });
    let t_ref = cfg.problem.t_ref.unwrap_or(lo);
    let t_scale = match cfg.problem.t_scale {
        Some(s) => s,
        None if hi > lo => hi - lo,
        None => 1.0,
    };
    Ok((t_ref, t_scale))
}

pub fn prepare(cfg: &RunConfig, data: &Dataset) -> Result<Prepared, CliError> {
    let domain = &cfg.problem.domain;
    let (t_ref, t_scale) = temperature_map(cfg, data)?;
    let scaling = NormalizationMap::for_box(&domain.extents, domain.time_horizon, t_ref, t_scale)?;
    let observations = data
        .observations
        .iter()
        .map(|m| {
            Observation::new(
                scaling.normalize_point(&m.coords, m.time)?,
                scaling.normalize_temperature(m.temperature),
                m.tag,
            )
        })
        .collect::<hcebnn::Result<Vec<_>>>()?;
    let colloc_pts = data
        .collocation
        .iter()
        .map(|l| normalize(&scaling, l))
        .collect::<hcebnn::Result<Vec<_>>>()?;
    let collocation = if colloc_pts.is_empty() {
        PointSet::empty(domain.spatial_dims(), domain.time_horizon.is_some())
    } else {
        PointSet::new(&colloc_pts)?
    };
    let pde = match domain.time_horizon {
        None => PdeSpec::laplace(scaling.clone()),
        Some(_) => {
            let alpha = match cfg.training.alpha_mode {
                AlphaMode::Fixed => Diffusivity::Fixed(domain.material.alpha()),
                AlphaMode::Trainable { .. } => Diffusivity::Trainable,
            };
            PdeSpec::diffusion(alpha, scaling.clone())?
        }
    }
    .with_source(domain.source_over_k);

    let (lo, hi) = data
        .observations
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| {
            (lo.min(m.temperature), hi.max(m.temperature))
        });
    let data_noise = cfg.data.noise * (hi - lo).max(0.0) / t_scale.abs();
    let training = cfg
        .training
        .to_training_config(domain.spatial_dims(), domain.time_horizon.is_some(), data_noise)?;

    let eval_points = data
        .truth
        .locations
        .iter()
        .map(|l| normalize(&scaling, l))
        .collect::<hcebnn::Result<Vec<_>>>()?;
    Ok(Prepared {
        scaling,
        observations,
        collocation,
        pde,
        training,
        eval_points,
        truth: data.truth.values.clone(),
    })
}

pub fn train(prep: &Prepared) -> Result<TrainingTrace, CliError> {
    Ok(train_with_collocation(
        &prep.training,
        &prep.observations,
        &prep.pde,
        &prep.collocation,
    )?)
}

/// Metrics written to `metrics.json`; contains nothing time-dependent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub metrics: MetricReport,
    /// Fraction of truth values inside mean ± 2 std.
    pub coverage_2sigma: f64,
    pub mean_predictive_std: f64,
    pub final_epoch: Option<EpochRecord>,
    pub mean_posterior_sigma: f64,
    pub alpha: Option<AlphaSummary>,
    pub n_observations: usize,
    pub n_collocation: usize,
    pub iterations: usize,
    pub t_ref: f64,
    pub t_scale: f64,
}

pub struct Evaluation {
    pub prediction: FieldPrediction,
    pub metrics: MetricReport,
    pub coverage: f64,
}

pub fn evaluate(
    prep: &Prepared,
    post: &GaussianVariationalPosterior,
    samples: usize,
    seed: u64,
) -> Result<Evaluation, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prediction = predict_field(post, prep.architecture(), &prep.scaling, &prep.eval_points, samples, &mut rng)?;
    let metrics = metrics(&prediction.mean, &prep.truth)?;
    let coverage = coverage(&prediction.mean, &prediction.std, &prep.truth, 2.0)?;
    Ok(Evaluation {
        prediction,
        metrics,
        coverage,
    })
}

pub struct RunOutcome {
    pub prepared: Prepared,
    pub trace: TrainingTrace,
    pub evaluation: Evaluation,
    pub metrics: RunMetrics,
}

/// Default tail fraction for diffusivity summaries.
pub const ALPHA_TAIL: f64 = 0.2;

pub fn summarize(cfg: &RunConfig, prep: &Prepared, trace: &TrainingTrace, eval: &Evaluation) -> Result<RunMetrics, CliError> {
    let alpha = match trace.alpha_scale {
        Some(_) if !trace.records.is_empty() => Some(summarize_alpha_trace(
            trace,
            cfg.inversion.tail_fraction.unwrap_or(ALPHA_TAIL),
            cfg.inversion.alpha_truth,
        )?),
        _ => None,
    };
    let n = eval.prediction.std.len().max(1) as f64;
    Ok(RunMetrics {
        metrics: eval.metrics,
        coverage_2sigma: eval.coverage,
        mean_predictive_std: eval.prediction.std.iter().sum::<f64>() / n,
        final_epoch: trace.records.last().copied(),
        mean_posterior_sigma: mean_sigma(&trace.posterior),
        alpha,
        n_observations: prep.observations.len(),
        n_collocation: prep.collocation.len(),
        iterations: trace.iterations,
        t_ref: prep.scaling.temperature.origin,
        t_scale: prep.scaling.temperature.scale,
    })
}

/// Generates data, trains and evaluates, all in memory.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let data = generate(cfg)?;
    run_on(cfg, &data)
}

pub fn run_on(cfg: &RunConfig, data: &Dataset) -> Result<RunOutcome, CliError> {
    let prepared = prepare(cfg, data)?;
    let trace = train(&prepared)?;
    let evaluation = evaluate(&prepared, &trace.posterior, cfg.evaluation.samples, cfg.evaluation.seed)?;
    let metrics = summarize(cfg, &prepared, &trace, &evaluation)?;
    Ok(RunOutcome {
        prepared,
        trace,
        evaluation,
        metrics,
    })
}

/// Facet points per boundary target when the config gives none.
pub const DEFAULT_TEST_POINTS: usize = 400;

/// Identifies every configured boundary target from a trained posterior.
/// Transient problems are probed at the final time.
pub fn invert_boundaries(
    cfg: &RunConfig,
    arch: &Architecture,
    scaling: &NormalizationMap,
    post: &GaussianVariationalPosterior,
) -> Result<Vec<IdentifiedBoundary>, CliError> {
    let domain = &cfg.problem.domain;
    let n = cfg.inversion.test_points.unwrap_or(DEFAULT_TEST_POINTS);
    let samples = cfg.inversion.samples.unwrap_or(cfg.evaluation.samples);
    let time = domain.time_horizon.map(|_| 1.0);
    let k = domain.material.k;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.evaluation.seed);
    let mut out = Vec::with_capacity(cfg.inversion.targets.len());
    for target in &cfg.inversion.targets {
        let id = match *target {
            InversionTarget::Neumann { facet, truth } => {
                let pts = facet_points(domain.spatial_dims(), facet, n, time)?;
                identify_neumann(post, arch, scaling, &pts, facet, k, samples, truth, &mut rng)?
            }
            InversionTarget::Robin { facet, t_inf, truth } => {
                let pts = facet_points(domain.spatial_dims(), facet, n, time)?;
                identify_robin(post, arch, scaling, &pts, facet, k, t_inf, samples, truth, &mut rng)?
            }
        };
        out.push(id);
    }
    Ok(out)
}
