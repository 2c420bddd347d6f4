//! Mean-field Gaussian posterior over network parameters.
//!
//! Each parameter carries an independent Gaussian `N(mu, sigma^2)` with
//! `sigma = softplus(rho)`, so `(mu, rho)` are unconstrained. Weight samples
//! are drawn by reparameterization, `w = mu + sigma * eps`, which keeps the
//! noise `eps` available for pushing gradients back onto `(mu, rho)`.
//!
//! The data term of the training objective is the variational free energy
//! `kl_weight * KL(q || prior) - E_q[log p(D | w)]`, with the KL either in
//! closed form or estimated from the same weight samples.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::surrogate::{
    forward_batch, init_parameters, sigmoid, Architecture, PointSet, SpaceTimePoint,
};

/// `ln(1 + e^x)`, stable for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp()).ln_1p()
}

/// Variational posterior `q(w | mu, rho)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianVariationalPosterior {
    mu: Vec<f64>,
    rho: Vec<f64>,
}

impl GaussianVariationalPosterior {
    pub fn new(mu: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        ensure_len("posterior rho", mu.len(), rho.len())?;
        Ok(Self { mu, rho })
    }

    /// Means from the deterministic initializer, all sigmas equal to `sigma0`.
    pub fn initialize(arch: &Architecture, seed: u64, sigma0: f64) -> Result<Self> {
        if !(sigma0 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "initial sigma must be positive, got {sigma0}"
            )));
        }
        let mu = init_parameters(arch, seed).into_inner();
        let rho = vec![softplus_inverse(sigma0); mu.len()];
        Ok(Self { mu, rho })
    }

    /// Posterior with (numerically) zero variance at `mu`.
    pub fn delta(mu: Vec<f64>) -> Self {
        let rho = vec![-1000.0; mu.len()];
        Self { mu, rho }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }

    /// Same means, every sigma multiplied by `factor`.
    pub fn with_scaled_sigma(&self, factor: f64) -> Self {
        Self {
            mu: self.mu.clone(),
            rho: self
                .rho
                .iter()
                .map(|&r| softplus_inverse(softplus(r) * factor))
                .collect(),
        }
    }
}

/// Independent Gaussian prior `N(0, std^2)` on every parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub std: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { std: 1.0 }
    }
}

impl PriorSpec {
    pub fn new(std: f64) -> Result<Self> {
        if !(std > 0.0 && std.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "prior std must be positive, got {std}"
            )));
        }
        Ok(Self { std })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationTag {
    Boundary,
    Interior,
    Initial,
}

impl ObservationTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            ObservationTag::Boundary => "boundary",
            ObservationTag::Interior => "interior",
            ObservationTag::Initial => "initial",
        }
    }
}

impl std::str::FromStr for ObservationTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boundary" => Ok(Self::Boundary),
            "interior" => Ok(Self::Interior),
            "initial" => Ok(Self::Initial),
            other => Err(Error::InvalidArgument(format!("unknown observation tag {other:?}"))),
        }
    }
}

/// A measured temperature at a normalized space-time point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub point: SpaceTimePoint,
    pub temperature: f64,
    pub tag: ObservationTag,
}

impl Observation {
    pub fn new(point: SpaceTimePoint, temperature: f64, tag: ObservationTag) -> Result<Self> {
        if !temperature.is_finite() {
            return Err(Error::InvalidArgument("observation temperature not finite".into()));
        }
        Ok(Self {
            point,
            temperature,
            tag,
        })
    }
}

/// Gaussian observation noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodSpec {
    pub noise_std: f64,
}

impl LikelihoodSpec {
    pub fn new(noise_std: f64) -> Result<Self> {
        if !(noise_std > 0.0 && noise_std.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "likelihood noise std must be positive, got {noise_std}"
            )));
        }
        Ok(Self { noise_std })
    }
}

/// How the KL term of the free energy is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlMode {
    ClosedKl,
    FullMc,
}

/// Multiplier on the KL term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlWeight {
    /// `1 / N_d`.
    PerObservation,
    Fixed(f64),
}

impl KlWeight {
    pub fn resolve(&self, n_observations: usize) -> f64 {
        match *self {
            KlWeight::PerObservation => 1.0 / n_observations.max(1) as f64,
            KlWeight::Fixed(w) => w,
        }
    }
}

/// A reparameterized draw `w = mu + sigma * noise`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSample {
    pub weights: Vec<f64>,
    pub noise: Vec<f64>,
}

pub fn draw_noise<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Weights for a given noise vector.
pub fn weights_from_noise(post: &GaussianVariationalPosterior, noise: &[f64]) -> Result<Vec<f64>> {
    ensure_len("noise vector", post.len(), noise.len())?;
    Ok(post
        .mu
        .iter()
        .zip(&post.rho)
        .zip(noise)
        .map(|((&m, &r), &e)| m + softplus(r) * e)
        .collect())
}

pub fn sample_weights<R: Rng + ?Sized>(
    post: &GaussianVariationalPosterior,
    rng: &mut R,
) -> WeightSample {
    let noise = draw_noise(post.len(), rng);
    let weights = weights_from_noise(post, &noise).expect("noise sized to posterior");
    WeightSample { weights, noise }
}

/// `KL(q || prior)` summed over parameters.
pub fn kl_closed_form(post: &GaussianVariationalPosterior, prior: &PriorSpec) -> f64 {
    let sp2 = prior.std * prior.std;
    post.mu
        .iter()
        .zip(&post.rho)
        .map(|(&m, &r)| {
            let s = softplus(r);
            (prior.std / s).ln() + (s * s + m * m) / (2.0 * sp2) - 0.5
        })
        .sum()
}

/// Gradient of [`kl_closed_form`] with respect to `(mu, rho)`.
pub fn kl_closed_form_grad(
    post: &GaussianVariationalPosterior,
    prior: &PriorSpec,
) -> (Vec<f64>, Vec<f64>) {
    let sp2 = prior.std * prior.std;
    let g_mu = post.mu.iter().map(|&m| m / sp2).collect();
    let g_rho = post
        .rho
        .iter()
        .map(|&r| {
            let s = softplus(r);
            (-1.0 / s + s / sp2) * sigmoid(r)
        })
        .collect();
    (g_mu, g_rho)
}

/// Exact Gaussian log-densities `(log q(w), log prior(w))`.
pub fn elbo_mc_terms(
    post: &GaussianVariationalPosterior,
    prior: &PriorSpec,
    w: &[f64],
) -> Result<(f64, f64)> {
    ensure_len("weight vector", post.len(), w.len())?;
    let half_ln_2pi = 0.5 * (2.0 * PI).ln();
    let mut log_q = 0.0;
    let mut log_p = 0.0;
    for ((&m, &r), &wi) in post.mu.iter().zip(&post.rho).zip(w) {
        let s = softplus(r);
        let z = (wi - m) / s;
        log_q += -half_ln_2pi - s.ln() - 0.5 * z * z;
        let zp = wi / prior.std;
        log_p += -half_ln_2pi - prior.std.ln() - 0.5 * zp * zp;
    }
    Ok((log_q, log_p))
}

/// Gradient of `log q(w) - log prior(w)` along the reparameterization path,
/// with the noise held fixed.
pub fn mc_kl_grad(
    post: &GaussianVariationalPosterior,
    prior: &PriorSpec,
    sample: &WeightSample,
) -> (Vec<f64>, Vec<f64>) {
    let sp2 = prior.std * prior.std;
    let mut g_mu = Vec::with_capacity(post.len());
    let mut g_rho = Vec::with_capacity(post.len());
    for i in 0..post.len() {
        let r = post.rho[i];
        let s = softplus(r);
        let w = sample.weights[i];
        g_mu.push(w / sp2);
        g_rho.push((-1.0 / s + w * sample.noise[i] / sp2) * sigmoid(r));
    }
    (g_mu, g_rho)
}

/// Pushes a gradient with respect to sampled weights onto `(mu, rho)`.
pub fn reparam_gradient(
    post: &GaussianVariationalPosterior,
    noise: &[f64],
    grad_w: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let g_rho = grad_w
        .iter()
        .zip(noise)
        .zip(&post.rho)
        .map(|((&g, &e), &r)| g * e * sigmoid(r))
        .collect();
    (grad_w.to_vec(), g_rho)
}

pub fn gaussian_log_likelihood(
    predictions: &[f64],
    obs: &[Observation],
    lik: &LikelihoodSpec,
) -> Result<f64> {
    ensure_len("predictions", obs.len(), predictions.len())?;
    let var = lik.noise_std * lik.noise_std;
    let norm = -0.5 * (2.0 * PI * var).ln();
    Ok(predictions
        .iter()
        .zip(obs)
        .map(|(&p, o)| {
            let r = p - o.temperature;
            norm - r * r / (2.0 * var)
        })
        .sum())
}

/// Everything the free energy needs besides the posterior and the data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergySpec {
    pub prior: PriorSpec,
    pub likelihood: LikelihoodSpec,
    pub kl_mode: KlMode,
    pub kl_weight: KlWeight,
}

pub(crate) fn observation_points(obs: &[Observation]) -> Result<PointSet> {
    let pts: Vec<SpaceTimePoint> = obs.iter().map(|o| o.point.clone()).collect();
    PointSet::new(&pts)
}

/// Monte Carlo estimate of the free energy with `samples` weight draws.
pub fn data_loss<R: Rng + ?Sized>(
    post: &GaussianVariationalPosterior,
    arch: &Architecture,
    obs: &[Observation],
    spec: &FreeEnergySpec,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::InvalidArgument("data_loss needs at least one sample".into()));
    }
    ensure_len("posterior", arch.num_params(), post.len())?;
    let kl_weight = spec.kl_weight.resolve(obs.len());
    let points = observation_points(obs)?;
    let mut kl_acc = 0.0;
    let mut lik_acc = 0.0;
    for _ in 0..samples {
        let s = sample_weights(post, rng);
        if spec.kl_mode == KlMode::FullMc {
            let (lq, lp) = elbo_mc_terms(post, &spec.prior, &s.weights)?;
            kl_acc += lq - lp;
        }
        if !obs.is_empty() {
            let preds = forward_batch(&s.weights, arch, &points)?;
            lik_acc += gaussian_log_likelihood(&preds, obs, &spec.likelihood)?;
        }
    }
    let n = samples as f64;
    let kl = match spec.kl_mode {
        KlMode::ClosedKl => kl_closed_form(post, &spec.prior),
        KlMode::FullMc => kl_acc / n,
    };
    let loss = kl_weight * kl - lik_acc / n;
    if !loss.is_finite() {
        return Err(Error::NumericalFailure("non-finite free energy".into()));
    }
    Ok(loss)
}

/// Per-point mean and standard deviation of the network output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predictive {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Ensemble statistics over `samples` weight draws (unbiased std).
pub fn posterior_predictive<R: Rng + ?Sized>(
    post: &GaussianVariationalPosterior,
    arch: &Architecture,
    points: &PointSet,
    samples: usize,
    rng: &mut R,
) -> Result<Predictive> {
    if samples < 2 {
        return Err(Error::InvalidArgument(format!(
            "posterior predictive needs at least 2 samples, got {samples}"
        )));
    }
    ensure_len("posterior", arch.num_params(), post.len())?;
    let n = points.len();
    let mut mean = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    for k in 1..=samples {
        let s = sample_weights(post, rng);
        let preds = forward_batch(&s.weights, arch, points)?;
        for i in 0..n {
            let delta = preds[i] - mean[i];
            mean[i] += delta / k as f64;
            m2[i] += delta * (preds[i] - mean[i]);
        }
    }
    let std = m2
        .iter()
        .map(|&v| (v / (samples - 1) as f64).max(0.0).sqrt())
        .collect();
    Ok(Predictive { mean, std })
}
