//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use hcebnn::bayes::{KlMode, KlWeight, PriorSpec};
use hcebnn::reference::{FdConfig, SensorScheme};
use hcebnn::trainer::{AdamConfig, AlphaMode, TrainingConfig};
use hcebnn::{Activation, AnalyticCase, Architecture, DomainSpec, Facet};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub inversion: InversionConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.problem.domain.validate()?;
        if let Truth::Analytic { case } = &self.problem.truth {
            let ext = case.extents();
            let same = ext.len() == self.problem.domain.extents.len()
                && ext
                    .iter()
                    .zip(&self.problem.domain.extents)
                    .all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs());
            if !same {
                return Err(CliError::Config(format!(
                    "problem.extents {:?} do not match the analytic case extents {ext:?}",
                    self.problem.domain.extents
                )));
            }
            if let AnalyticCase::Transient1dMode { alpha, .. } = case {
                let a = self.problem.domain.material.alpha();
                if (alpha - a).abs() > 1e-9 * a {
                    return Err(CliError::Config(format!(
                        "analytic alpha {alpha} differs from the material diffusivity {a}"
                    )));
                }
            }
            if case.is_transient() != self.problem.domain.time_horizon.is_some() {
                return Err(CliError::Config(
                    "problem.time_horizon must be set exactly for transient cases".into(),
                ));
            }
        }
        if let Truth::FiniteDifference { initial_bump: Some(a), .. } = self.problem.truth {
            let d = &self.problem.domain;
            if !a.is_finite() || d.time_horizon.is_none() || d.initial_temperature.is_none() {
                return Err(CliError::Config(
                    "initial_bump needs a finite amplitude, time_horizon and initial_temperature".into(),
                ));
            }
        }
        if self.data.sensors == 0 && self.data.initial_nodes.is_none() {
            return Err(CliError::Config("data: no observations requested".into()));
        }
        if !(self.data.noise >= 0.0) {
            return Err(CliError::Config("data.noise must be >= 0".into()));
        }
        if self.evaluation.samples < 2 {
            return Err(CliError::Config("evaluation.samples must be at least 2".into()));
        }
        self.training
            .to_training_config(self.problem.domain.spatial_dims(), self.problem.domain.time_horizon.is_some(), 0.01)?
            .validate()?;
        Ok(())
    }

    pub fn is_transient(&self) -> bool {
        self.problem.domain.time_horizon.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    #[serde(flatten)]
    pub domain: DomainSpec,
    pub truth: Truth,
    /// Temperature normalization; derived from the observations when absent.
    #[serde(default)]
    pub t_ref: Option<f64>,
    #[serde(default)]
    pub t_scale: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Truth {
    Analytic {
        #[serde(flatten)]
        case: AnalyticCase,
    },
    FiniteDifference {
        #[serde(flatten)]
        solver: FdConfig,
        /// Transient runs: amplitude in K of a smooth bump added to the
        /// uniform initial temperature (see [`crate::dataset::bump`]).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial_bump: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub scheme: SensorScheme,
    pub sensors: usize,
    /// Noise std as a fraction of the clean temperature range.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    /// Snap sensors to the nodes of a grid with these node counts.
    #[serde(default)]
    pub snap: Option<Vec<usize>>,
    /// Transient problems: readings per sensor, evenly spaced over the horizon.
    #[serde(default)]
    pub time_samples: Option<usize>,
    /// Transient problems: initial snapshot on a uniform grid with these node counts.
    #[serde(default)]
    pub initial_nodes: Option<Vec<usize>>,
    #[serde(default = "default_collocation_seed")]
    pub collocation_seed: u64,
}

fn default_collocation_seed() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lambda: f64,
    pub iterations: usize,
    pub mc_samples: usize,
    pub kl_mode: KlMode,
    pub kl_weight: KlWeight,
    pub prior_std: f64,
    /// Likelihood noise in normalized units; defaults to the data noise level.
    pub noise_std: Option<f64>,
    pub optimizer: AdamConfig,
    pub collocation: usize,
    pub seed: u64,
    pub init_sigma: f64,
    pub alpha_mode: AlphaMode,
    pub trace_stride: usize,
    pub clip_norm: Option<f64>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            hidden: vec![20, 20, 20],
            activation: Activation::Sigmoid,
            lambda: 0.001,
            iterations: 50_000,
            mc_samples: 1,
            kl_mode: KlMode::ClosedKl,
            kl_weight: KlWeight::PerObservation,
            prior_std: 1.0,
            noise_std: None,
            optimizer: AdamConfig::default(),
            collocation: 5000,
            seed: 0,
            init_sigma: 0.05,
            alpha_mode: AlphaMode::Fixed,
            trace_stride: 100,
            clip_norm: Some(100.0),
        }
    }
}

/// Likelihood noise used when neither the data nor the config give one.
pub const NOISE_FLOOR: f64 = 1e-3;

impl TrainingSection {
    pub fn architecture(&self, spatial_dims: usize, has_time: bool) -> Result<Architecture, CliError> {
        let mut sizes = vec![spatial_dims + usize::from(has_time)];
        sizes.extend(&self.hidden);
        sizes.push(1);
        Ok(Architecture::new(sizes, self.activation)?)
    }

    /// `data_noise` is the normalized noise level of the data set.
    pub fn to_training_config(
        &self,
        spatial_dims: usize,
        has_time: bool,
        data_noise: f64,
    ) -> Result<TrainingConfig, CliError> {
        let mut c = TrainingConfig::new(self.architecture(spatial_dims, has_time)?);
        c.lambda = self.lambda;
        c.iterations = self.iterations;
        c.mc_samples = self.mc_samples;
        c.kl_mode = self.kl_mode;
        c.kl_weight = self.kl_weight;
        c.prior = PriorSpec::new(self.prior_std)?;
        c.noise_std = self.noise_std.unwrap_or(data_noise.max(NOISE_FLOOR));
        c.optimizer = self.optimizer;
        c.collocation = self.collocation;
        c.seed = self.seed;
        c.init_sigma = self.init_sigma;
        c.alpha_mode = self.alpha_mode;
        c.trace_stride = self.trace_stride;
        c.clip_norm = self.clip_norm;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Nodes per spatial axis of the truth grid.
    pub nodes: Vec<usize>,
    /// Cell-centred nodes strictly inside the domain instead of a grid
    /// that includes the boundary.
    pub interior: bool,
    /// Transient problems: evenly spaced evaluation times including both ends.
    pub times: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            nodes: vec![32, 32],
            interior: true,
            times: 21,
            samples: 100,
            seed: 0,
        }
    }
}

/// Boundary identification targets for `invert`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    pub targets: Vec<InversionTarget>,
    pub test_points: Option<usize>,
    pub samples: Option<usize>,
    /// Fraction of trailing epochs summarized in diffusivity mode.
    pub tail_fraction: Option<f64>,
    /// Known diffusivity for error reporting.
    pub alpha_truth: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InversionTarget {
    Neumann {
        facet: Facet,
        #[serde(default)]
        truth: Option<f64>,
    },
    Robin {
        facet: Facet,
        t_inf: f64,
        #[serde(default)]
        truth: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub write_prediction: bool,
    pub write_sorted: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
            write_prediction: true,
            write_sorted: true,
        }
    }
}
