//! Adam and the variational training loop with the heat-equation penalty.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bayes::{
    draw_noise, elbo_mc_terms, kl_closed_form, kl_closed_form_grad, mc_kl_grad,
    observation_points, reparam_gradient, softplus, GaussianVariationalPosterior, KlMode,
    KlWeight, LikelihoodSpec, Observation, PriorSpec, WeightSample,
};
use crate::error::{ensure_len, Error, Result};
use crate::physics::{Diffusivity, LossBreakdown, PdeKind, PdeSpec, ResidualOperator};
use crate::reference::lhs_sample;
use crate::surrogate::{
    loss_parameter_gradient_with_aux, Architecture, EvalSensitivity, PointSet, SpaceTimePoint,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.99,
            beta2: 0.99,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        })
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        ensure_len("adam parameters", self.m.len(), params.len())?;
        ensure_len("adam gradient", self.m.len(), grads.len())?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericalFailure("non-finite gradient passed to Adam".into()));
        }
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        self.t += 1;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(state: &AdamState, params: &[f64], grads: &[f64]) -> Result<(AdamState, Vec<f64>)> {
    let mut s = state.clone();
    let mut p = params.to_vec();
    s.step(&mut p, grads)?;
    Ok((s, p))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AlphaMode {
    Fixed,
    /// `alpha = alpha_tilde * scale`, with `alpha_tilde` starting at `init`.
    /// A scale of 1 trains the raw diffusivity.
    Trainable { init: f64, scale: f64 },
}

impl AlphaMode {
    pub fn scale(&self) -> Option<f64> {
        match *self {
            AlphaMode::Fixed => None,
            AlphaMode::Trainable { scale, .. } => Some(scale),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub architecture: Architecture,
    pub lambda: f64,
    pub iterations: usize,
    pub mc_samples: usize,
    pub kl_mode: KlMode,
    pub kl_weight: KlWeight,
    pub prior: PriorSpec,
    /// Likelihood noise in normalized temperature units.
    pub noise_std: f64,
    pub optimizer: AdamConfig,
    /// Number of Latin hypercube collocation points, `N_f`.
    pub collocation: usize,
    pub collocation_seed: u64,
    pub seed: u64,
    pub init_sigma: f64,
    pub alpha_mode: AlphaMode,
    /// Iterations per recorded epoch.
    pub trace_stride: usize,
    /// L2 bound on the concatenated gradient; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl TrainingConfig {
    pub fn new(architecture: Architecture) -> Self {
        Self {
            architecture,
            lambda: 0.001,
            iterations: 50_000,
            mc_samples: 1,
            kl_mode: KlMode::ClosedKl,
            kl_weight: KlWeight::PerObservation,
            prior: PriorSpec::default(),
            noise_std: 0.005,
            optimizer: AdamConfig::default(),
            collocation: 5000,
            collocation_seed: 1,
            seed: 0,
            init_sigma: 0.05,
            alpha_mode: AlphaMode::Fixed,
            trace_stride: 100,
            clip_norm: Some(100.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.mc_samples == 0 {
            return bad("need at least one weight sample per step".into());
        }
        if self.trace_stride == 0 {
            return bad("trace stride must be at least 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("pde weight must be nonnegative, got {}", self.lambda));
        }
        if !(self.init_sigma > 0.0) {
            return bad("initial sigma must be positive".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad("clip norm must be positive".into());
            }
        }
        if let KlWeight::Fixed(w) = self.kl_weight {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("kl weight must be nonnegative, got {w}"));
            }
        }
        if let AlphaMode::Trainable { init, scale } = self.alpha_mode {
            if !(init.is_finite() && init != 0.0 && scale > 0.0 && scale.is_finite()) {
                return bad(format!("invalid trainable diffusivity init {init}, scale {scale}"));
            }
        }
        LikelihoodSpec::new(self.noise_std)?;
        PriorSpec::new(self.prior.std)?;
        self.optimizer.validate()
    }
}

/// Loss statistics averaged over one epoch of `trace_stride` iterations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub data_term: f64,
    pub pde_term: f64,
    pub total: f64,
    /// Value at the end of the epoch.
    pub alpha_tilde: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub records: Vec<EpochRecord>,
    pub posterior: GaussianVariationalPosterior,
    pub alpha_tilde: Option<f64>,
    pub alpha_scale: Option<f64>,
    pub iterations: usize,
    pub wall_clock_seconds: f64,
}

impl TrainingTrace {
    /// Identified diffusivity at the end of training.
    pub fn alpha(&self) -> Option<f64> {
        Some(self.alpha_tilde? * self.alpha_scale?)
    }
}

/// Value and gradient of the composite loss at a fixed set of noise draws.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveValue {
    pub breakdown: LossBreakdown,
    /// Over `mu ⧺ rho ⧺ [alpha_tilde]`.
    pub gradient: Vec<f64>,
}

/// The composite training loss on a fixed data set and collocation set.
///
/// Each noise draw gives weights `w = mu + softplus(rho) * eps`; the free
/// energy and the residual penalty are evaluated at the same `w`, and the
/// value is averaged over draws.
pub struct Objective<'a> {
    arch: &'a Architecture,
    obs: &'a [Observation],
    points: PointSet,
    n_pde: usize,
    pde: &'a PdeSpec,
    lambda: f64,
    likelihood: LikelihoodSpec,
    prior: PriorSpec,
    kl_mode: KlMode,
    kl_weight: f64,
    alpha_scale: Option<f64>,
}

impl<'a> Objective<'a> {
    pub fn new(
        config: &'a TrainingConfig,
        obs: &'a [Observation],
        pde: &'a PdeSpec,
        collocation: &PointSet,
    ) -> Result<Self> {
        config.validate()?;
        pde.validate()?;
        if obs.is_empty() {
            return Err(Error::InvalidArgument("training needs observations".into()));
        }
        let arch = &config.architecture;
        let obs_points = observation_points(obs)?;
        let has_time = pde.kind == PdeKind::Diffusion;
        if obs_points.has_time() != has_time || obs_points.spatial_dims() != pde.scaling.spatial_dims() {
            return Err(Error::InvalidArgument(
                "observation coordinates do not match the equation".into(),
            ));
        }
        ensure_len("network input", obs_points.input_dim(), arch.input_dim())?;
        match (config.alpha_mode, pde.alpha, pde.kind) {
            (AlphaMode::Trainable { .. }, _, PdeKind::Laplace) => {
                return Err(Error::InvalidArgument(
                    "a trainable diffusivity needs the diffusion equation".into(),
                ))
            }
            (AlphaMode::Fixed, Diffusivity::Trainable, PdeKind::Diffusion) => {
                return Err(Error::InvalidArgument(
                    "equation marks the diffusivity trainable but the config fixes it".into(),
                ))
            }
            _ => {}
        }
        let use_pde = config.lambda > 0.0;
        let points = if use_pde && !collocation.is_empty() {
            obs_points.concat(collocation)?
        } else {
            obs_points
        };
        let n_pde = if use_pde { points.len() } else { 0 };
        let alpha_scale = match pde.kind {
            PdeKind::Diffusion => config.alpha_mode.scale(),
            PdeKind::Laplace => None,
        };
        Ok(Self {
            arch,
            obs,
            points,
            n_pde,
            pde,
            lambda: config.lambda,
            likelihood: LikelihoodSpec::new(config.noise_std)?,
            prior: config.prior,
            kl_mode: config.kl_mode,
            kl_weight: config.kl_weight.resolve(obs.len()),
            alpha_scale,
        })
    }

    pub fn num_params(&self) -> usize {
        self.arch.num_params()
    }

    /// Length of the trainable vector.
    pub fn dim(&self) -> usize {
        2 * self.num_params() + usize::from(self.alpha_scale.is_some())
    }

    pub fn initial_theta(&self, post: &GaussianVariationalPosterior, alpha_tilde: Option<f64>) -> Vec<f64> {
        let mut theta = post.mu().to_vec();
        theta.extend_from_slice(post.rho());
        if self.alpha_scale.is_some() {
            theta.push(alpha_tilde.expect("trainable diffusivity needs an initial value"));
        }
        theta
    }

    pub fn split(&self, theta: &[f64]) -> Result<(GaussianVariationalPosterior, Option<f64>)> {
        ensure_len("trainable vector", self.dim(), theta.len())?;
        let n = self.num_params();
        let post = GaussianVariationalPosterior::new(theta[..n].to_vec(), theta[n..2 * n].to_vec())?;
        let alpha = self.alpha_scale.map(|_| theta[2 * n]);
        Ok((post, alpha))
    }

    fn operator(&self, alpha_tilde: Option<f64>) -> Result<ResidualOperator> {
        let alpha = match (alpha_tilde, self.alpha_scale) {
            (Some(a), Some(s)) => Some(a * s),
            _ => None,
        };
        self.pde.operator(alpha)
    }

    pub fn evaluate(&self, theta: &[f64], noise: &[Vec<f64>]) -> Result<ObjectiveValue> {
        if noise.is_empty() {
            return Err(Error::InvalidArgument("need at least one noise draw".into()));
        }
        let (post, alpha_tilde) = self.split(theta)?;
        let n = self.num_params();
        let n_obs = self.obs.len();
        let op = if self.n_pde > 0 {
            Some(self.operator(alpha_tilde)?)
        } else {
            None
        };
        let var = self.likelihood.noise_std * self.likelihood.noise_std;
        let norm = 0.5 * (2.0 * std::f64::consts::PI * var).ln();
        let c = if self.n_pde > 0 {
            self.lambda / self.n_pde as f64
        } else {
            0.0
        };
        let alpha_coupling = match (&op, alpha_tilde) {
            (Some(op), Some(a)) => op.time_coef.map(|ct| ct / a),
            _ => None,
        };
        let ds = self.points.spatial_dims();

        let mut grad = vec![0.0; self.dim()];
        let mut kl_sum = 0.0;
        let mut nll_sum = 0.0;
        let mut pde_sum = 0.0;
        for eps in noise {
            let sample = WeightSample {
                weights: crate::bayes::weights_from_noise(&post, eps)?,
                noise: eps.clone(),
            };
            let lg = loss_parameter_gradient_with_aux(
                &sample.weights,
                self.arch,
                &self.points,
                3,
                |i, e, aux| {
                    let mut sens = EvalSensitivity::zeros(ds);
                    let mut l = 0.0;
                    if i < n_obs {
                        let r = e.value - self.obs[i].temperature;
                        let nll = norm + 0.5 * r * r / var;
                        l += nll;
                        aux[0] += nll;
                        sens.value = r / var;
                    }
                    if let Some(op) = &op {
                        let p = op.apply(e).expect("evaluation shape checked against the operator");
                        l += c * p * p;
                        aux[1] += p * p;
                        op.add_sensitivity(2.0 * c * p, &mut sens);
                        if let (Some(k), Some(gt)) = (alpha_coupling, e.grad_time) {
                            aux[2] += 2.0 * c * p * k * gt;
                        }
                    }
                    (l, sens)
                },
            )?;
            let (g_mu, g_rho) = reparam_gradient(&post, &sample.noise, &lg.gradient);
            let (kl, k_mu, k_rho) = match self.kl_mode {
                KlMode::ClosedKl => {
                    let (a, b) = kl_closed_form_grad(&post, &self.prior);
                    (kl_closed_form(&post, &self.prior), a, b)
                }
                KlMode::FullMc => {
                    let (lq, lp) = elbo_mc_terms(&post, &self.prior, &sample.weights)?;
                    let (a, b) = mc_kl_grad(&post, &self.prior, &sample);
                    (lq - lp, a, b)
                }
            };
            for i in 0..n {
                grad[i] += g_mu[i] + self.kl_weight * k_mu[i];
                grad[n + i] += g_rho[i] + self.kl_weight * k_rho[i];
            }
            if alpha_tilde.is_some() {
                grad[2 * n] += lg.aux[2];
            }
            kl_sum += kl;
            nll_sum += lg.aux[0];
            pde_sum += lg.aux[1];
        }
        let s = noise.len() as f64;
        let mut data_term = self.kl_weight * kl_sum / s + nll_sum / s;
        if let Some(a) = alpha_tilde {
            // standard Gaussian prior on the normalized diffusivity
            data_term += self.kl_weight * 0.5 * a * a;
            grad[2 * n] = grad[2 * n] / s + self.kl_weight * a;
        }
        for g in grad[..2 * n].iter_mut() {
            *g /= s;
        }
        let pde_term = if self.n_pde > 0 {
            pde_sum / s / self.n_pde as f64
        } else {
            0.0
        };
        let breakdown = LossBreakdown {
            data_term,
            pde_term,
            lambda: self.lambda,
            total: data_term + self.lambda * pde_term,
        };
        if !breakdown.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericalFailure("non-finite training loss".into()));
        }
        Ok(ObjectiveValue {
            breakdown,
            gradient: grad,
        })
    }
}

/// Collocation points on the unit box of the network input space.
pub fn unit_collocation(arch: &Architecture, has_time: bool, n: usize, seed: u64) -> Result<PointSet> {
    let dim = arch.input_dim();
    let ds = dim - usize::from(has_time);
    if n == 0 {
        return Ok(PointSet::empty(ds, has_time));
    }
    let pts: Vec<SpaceTimePoint> = lhs_sample(n, &vec![(0.0, 1.0); dim], seed)?
        .into_iter()
        .map(|mut p| {
            if has_time {
                let t = p.pop().expect("time axis");
                SpaceTimePoint::with_time(p, t)
            } else {
                SpaceTimePoint::spatial(p)
            }
        })
        .collect();
    PointSet::new(&pts)
}

/// Trains with `config.collocation` Latin hypercube points on the unit box.
pub fn train(config: &TrainingConfig, obs: &[Observation], pde: &PdeSpec) -> Result<TrainingTrace> {
    let colloc = unit_collocation(
        &config.architecture,
        pde.kind == PdeKind::Diffusion,
        config.collocation,
        config.collocation_seed,
    )?;
    train_with_collocation(config, obs, pde, &colloc)
}

/// Joint training of the network and the normalized diffusivity.
pub fn train_with_unknown_alpha(
    config: &TrainingConfig,
    obs: &[Observation],
    pde: &PdeSpec,
) -> Result<TrainingTrace> {
    if pde.kind != PdeKind::Diffusion || !matches!(config.alpha_mode, AlphaMode::Trainable { .. }) {
        return Err(Error::InvalidArgument(
            "diffusivity identification needs the diffusion equation and a trainable alpha".into(),
        ));
    }
    train(config, obs, pde)
}

pub fn train_with_collocation(
    config: &TrainingConfig,
    obs: &[Observation],
    pde: &PdeSpec,
    collocation: &PointSet,
) -> Result<TrainingTrace> {
    let start = Instant::now();
    let objective = Objective::new(config, obs, pde, collocation)?;
    let post = GaussianVariationalPosterior::initialize(&config.architecture, config.seed, config.init_sigma)?;
    let alpha_init = match config.alpha_mode {
        AlphaMode::Trainable { init, .. } => Some(init),
        AlphaMode::Fixed => None,
    };
    let mut theta = objective.initial_theta(&post, alpha_init);
    let mut adam = AdamState::new(theta.len(), config.optimizer)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let n = objective.num_params();

    let mut records = Vec::with_capacity(config.iterations / config.trace_stride + 1);
    let mut acc = [0.0f64; 3];
    let mut in_epoch = 0usize;
    for it in 0..config.iterations {
        let epoch = records.len();
        let abort = |reason: String| Error::TrainingAborted {
            iteration: it,
            epoch,
            reason,
        };
        let noise: Vec<Vec<f64>> = (0..config.mc_samples).map(|_| draw_noise(n, &mut rng)).collect();
        let value = objective.evaluate(&theta, &noise).map_err(|e| abort(e.to_string()))?;
        let mut grad = value.gradient;
        if let Some(limit) = config.clip_norm {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > limit {
                let f = limit / norm;
                grad.iter_mut().for_each(|g| *g *= f);
            }
        }
        adam.step(&mut theta, &grad).map_err(|e| abort(e.to_string()))?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(abort("trainable parameters became non-finite".into()));
        }
        acc[0] += value.breakdown.data_term;
        acc[1] += value.breakdown.pde_term;
        acc[2] += value.breakdown.total;
        in_epoch += 1;
        if in_epoch == config.trace_stride || it + 1 == config.iterations {
            let k = in_epoch as f64;
            records.push(EpochRecord {
                epoch,
                data_term: acc[0] / k,
                pde_term: acc[1] / k,
                total: acc[2] / k,
                alpha_tilde: objective.alpha_scale.map(|_| theta[2 * n]),
            });
            acc = [0.0; 3];
            in_epoch = 0;
        }
    }
    let (posterior, alpha_tilde) = objective.split(&theta)?;
    Ok(TrainingTrace {
        records,
        posterior,
        alpha_tilde,
        alpha_scale: objective.alpha_scale,
        iterations: config.iterations,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Mean sigma of a posterior; a cheap training diagnostic.
pub fn mean_sigma(post: &GaussianVariationalPosterior) -> f64 {
    post.rho().iter().map(|&r| softplus(r)).sum::<f64>() / post.len().max(1) as f64
}
