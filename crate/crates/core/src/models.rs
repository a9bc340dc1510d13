//! Generative models with known pre/post-change conditional densities.
//!
//! Every variant here has Gaussian conditionals that differ only in their
//! mean, so the one-step likelihood ratio is log-normal under the null. The
//! detector sees the true parameters but never the latent factor or the
//! change points.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{SensorId, SensorSet};

/// Default Monte-Carlo budget for [`NullLrLaw::Empirical`].
pub const DEFAULT_EMPIRICAL_BUDGET: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("observation {x} for sensor {sensor} is outside the pre-change support")]
    SupportViolation { sensor: SensorId, x: f64 },
    #[error("sensor {sensor} was active at t-1 but its lagged observation is missing")]
    MissingHistory { sensor: SensorId },
    #[error("sensor {sensor} is outside the model's pool of {pool} sensors")]
    UnknownSensor { sensor: SensorId, pool: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Pre,
    Post,
}

/// Declarative model description, as read from configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ModelSpec {
    /// `X = eps` before the change, `mu + eps` after, `eps ~ N(0, sigma^2)`.
    IidMeanShift { mu: f64, sigma: f64 },
    /// `X = a_k Z_t + mu 1(post) + eps` with a common factor `Z_t`.
    /// Loadings are drawn uniformly from `loading_range` unless given.
    SharedFactor {
        mu: f64,
        sigma_z: f64,
        sigma_eps: f64,
        loading_range: (f64, f64),
        #[serde(default, skip_serializing_if = "Option::is_none")]
        loadings: Option<Vec<f64>>,
    },
    /// `X = a_{regime} 1(k in A_{t-1}) X_{k,t-1} + eps`, with noise
    /// correlated across the pool as `Cov(eps_i, eps_j) = sigma^2 rho^|i-j|`.
    WithinSensorAr {
        ar_pre: f64,
        ar_post: f64,
        sigma: f64,
        noise_rho: f64,
    },
    /// `X = sum_l a_l X_{l,t-1} + mu 1(post) + eps` on a fixed network.
    FixedNetworkVar {
        coef: f64,
        mu: f64,
        sigma: f64,
        noise_rho: f64,
    },
}

impl ModelSpec {
    /// Instantiates the model for a pool of `pool_size` sensors, drawing any
    /// randomized per-sensor parameters from `rng`.
    pub fn build<R: Rng + ?Sized>(
        &self,
        pool_size: usize,
        rng: &mut R,
    ) -> Result<LikelihoodModel, ModelError> {
        let params = match self {
            ModelSpec::IidMeanShift { .. } | ModelSpec::WithinSensorAr { .. } => SensorParams::None,
            ModelSpec::SharedFactor {
                loading_range: (lo, hi),
                loadings,
                ..
            } => match loadings {
                Some(given) => {
                    if given.len() < pool_size {
                        return Err(invalid(
                            "loadings",
                            format!("{} loadings for a pool of {pool_size}", given.len()),
                        ));
                    }
                    SensorParams::Loadings(given[..pool_size].to_vec())
                }
                None => {
                    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                        return Err(invalid(
                            "factor_loading_range",
                            format!("need lo < hi, got ({lo}, {hi})"),
                        ));
                    }
                    let dist = Uniform::new(*lo, *hi).expect("checked range");
                    SensorParams::Loadings((0..pool_size).map(|_| dist.sample(rng)).collect())
                }
            },
            ModelSpec::FixedNetworkVar { .. } => SensorParams::None,
        };
        LikelihoodModel::new(self.clone(), pool_size, params)
    }
}

fn invalid(name: &'static str, reason: String) -> ModelError {
    ModelError::InvalidParameter { name, reason }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum SensorParams {
    None,
    Loadings(Vec<f64>),
}

/// Gaussian conditional density `N(mean, var)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub mean: f64,
    pub var: f64,
}

impl Gaussian {
    pub fn log_pdf(&self, x: f64) -> f64 {
        let d = x - self.mean;
        -0.5 * (2.0 * PI * self.var).ln() - d * d / (2.0 * self.var)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        crate::special::std_normal_cdf((x - self.mean) / self.var.sqrt())
    }
}

/// Observations of the previous tick. Only sensors in `prev_active` carry a
/// lagged value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub prev_active: SensorSet,
    pub prev_obs: BTreeMap<SensorId, f64>,
}

impl History {
    pub fn new(prev_active: SensorSet, prev_obs: BTreeMap<SensorId, f64>) -> Self {
        Self {
            prev_active,
            prev_obs,
        }
    }

    /// `1(k in A_{t-1}) x_{k,t-1}`.
    fn gated_lag(&self, k: SensorId) -> Result<f64, ModelError> {
        if !self.prev_active.contains(&k) {
            return Ok(0.0);
        }
        self.prev_obs
            .get(&k)
            .copied()
            .ok_or(ModelError::MissingHistory { sensor: k })
    }
}

/// One tick's worth of shared randomness: the common factor and a noise
/// value for every pool member. Drawing the whole pool keeps the active set
/// independent of the current observations.
#[derive(Debug, Clone, PartialEq)]
pub struct TickNoise {
    pub factor: f64,
    pub eps: Vec<f64>,
}

/// Law of the one-step likelihood ratio under the pre-change density,
/// conditional on the past and the current active set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NullLrLaw {
    /// `ln L ~ N(m, v)`.
    LogNormal { m: f64, v: f64 },
    PointMass { value: f64 },
    /// Draws of `L` under the null.
    Empirical { samples: Arc<[f64]> },
}

impl NullLrLaw {
    /// Unit-mean log-normal law with log-variance `v`.
    pub fn unit_lognormal(v: f64) -> Self {
        NullLrLaw::LogNormal { m: -v / 2.0, v }
    }

    pub fn lognormal(m: f64, v: f64) -> Result<Self, ModelError> {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid("v", format!("log-variance must be positive, got {v}")));
        }
        if (m + v / 2.0).abs() > 1e-9 {
            return Err(invalid("m", format!("m + v/2 = {} is not 0", m + v / 2.0)));
        }
        Ok(NullLrLaw::LogNormal { m, v })
    }

    pub fn point_mass(value: f64) -> Result<Self, ModelError> {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(invalid("value", format!("point mass must be >= 0, got {value}")));
        }
        Ok(NullLrLaw::PointMass { value })
    }

    /// Collects `budget` draws from `sampler`.
    pub fn empirical<R: Rng + ?Sized>(
        budget: usize,
        rng: &mut R,
        mut sampler: impl FnMut(&mut R) -> f64,
    ) -> Result<Self, ModelError> {
        if budget == 0 {
            return Err(invalid("budget", "empirical law needs at least one draw".into()));
        }
        let samples: Vec<f64> = (0..budget).map(|_| sampler(rng)).collect();
        if let Some(bad) = samples.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(invalid("samples", format!("likelihood ratio draw {bad} is not >= 0")));
        }
        Ok(NullLrLaw::Empirical {
            samples: samples.into(),
        })
    }

    pub fn mean(&self) -> f64 {
        match self {
            NullLrLaw::LogNormal { m, v } => (m + v / 2.0).exp(),
            NullLrLaw::PointMass { value } => *value,
            NullLrLaw::Empirical { samples } => {
                samples.iter().sum::<f64>() / samples.len() as f64
            }
        }
    }
}

/// A model instantiated for a pool, with its per-sensor parameter table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodModel {
    spec: ModelSpec,
    pool_size: usize,
    params: SensorParams,
}

impl LikelihoodModel {
    fn new(spec: ModelSpec, pool_size: usize, params: SensorParams) -> Result<Self, ModelError> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("must be positive, got {v}")))
            }
        };
        let stable = |name: &'static str, v: f64| {
            if v.abs() < 1.0 {
                Ok(())
            } else {
                Err(invalid(name, format!("|{v}| must be < 1")))
            }
        };
        let correlation = |v: f64| {
            if v.abs() < 1.0 {
                Ok(())
            } else {
                Err(invalid("noise_rho", format!("|{v}| must be < 1")))
            }
        };
        let finite = |name: &'static str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("must be finite, got {v}")))
            }
        };
        match &spec {
            ModelSpec::IidMeanShift { mu, sigma } => {
                finite("mu", *mu)?;
                positive("sigma", *sigma)?;
            }
            ModelSpec::SharedFactor {
                mu,
                sigma_z,
                sigma_eps,
                ..
            } => {
                finite("mu", *mu)?;
                positive("sigma_z", *sigma_z)?;
                positive("sigma_eps", *sigma_eps)?;
            }
            ModelSpec::WithinSensorAr {
                ar_pre,
                ar_post,
                sigma,
                noise_rho,
            } => {
                stable("ar_pre", *ar_pre)?;
                stable("ar_post", *ar_post)?;
                positive("sigma", *sigma)?;
                correlation(*noise_rho)?;
            }
            ModelSpec::FixedNetworkVar {
                coef,
                mu,
                sigma,
                noise_rho,
            } => {
                stable("coef", *coef)?;
                finite("mu", *mu)?;
                positive("sigma", *sigma)?;
                correlation(*noise_rho)?;
            }
        }
        if let SensorParams::Loadings(l) = &params {
            if let Some(bad) = l.iter().find(|a| !a.is_finite()) {
                return Err(invalid("loadings", format!("non-finite loading {bad}")));
            }
        }
        if pool_size == 0 {
            return Err(invalid("pool_size", "pool must contain a sensor".into()));
        }
        Ok(Self {
            spec,
            pool_size,
            params,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn pool_size(&self) -> usize {
        self.pool_size
    }

    /// Per-sensor factor loadings, when the model has them.
    pub fn loadings(&self) -> Option<&[f64]> {
        match &self.params {
            SensorParams::Loadings(l) => Some(l),
            SensorParams::None => None,
        }
    }

    /// The spec with randomized parameters pinned to their drawn values, so
    /// rebuilding from it reproduces this exact model.
    pub fn resolved_spec(&self) -> ModelSpec {
        match (&self.spec, &self.params) {
            (ModelSpec::SharedFactor { mu, sigma_z, sigma_eps, loading_range, .. }, SensorParams::Loadings(l)) => {
                ModelSpec::SharedFactor {
                    mu: *mu,
                    sigma_z: *sigma_z,
                    sigma_eps: *sigma_eps,
                    loading_range: *loading_range,
                    loadings: Some(l.clone()),
                }
            }
            (spec, _) => spec.clone(),
        }
    }

    fn check_sensor(&self, k: SensorId) -> Result<(), ModelError> {
        if k.index() < self.pool_size {
            Ok(())
        } else {
            Err(ModelError::UnknownSensor {
                sensor: k,
                pool: self.pool_size,
            })
        }
    }

    fn loading(&self, k: SensorId) -> f64 {
        match &self.params {
            SensorParams::Loadings(l) => l[k.index()],
            SensorParams::None => 0.0,
        }
    }

    /// Conditional density of `X_{k,t}` given the past, under `regime`.
    pub fn conditional(
        &self,
        k: SensorId,
        regime: Regime,
        history: &History,
    ) -> Result<Gaussian, ModelError> {
        self.check_sensor(k)?;
        let post = regime == Regime::Post;
        Ok(match &self.spec {
            ModelSpec::IidMeanShift { mu, sigma } => Gaussian {
                mean: if post { *mu } else { 0.0 },
                var: sigma * sigma,
            },
            ModelSpec::SharedFactor {
                mu,
                sigma_z,
                sigma_eps,
                ..
            } => {
                let a = self.loading(k);
                Gaussian {
                    mean: if post { *mu } else { 0.0 },
                    var: a * a * sigma_z * sigma_z + sigma_eps * sigma_eps,
                }
            }
            ModelSpec::WithinSensorAr {
                ar_pre,
                ar_post,
                sigma,
                ..
            } => {
                let coef = if post { *ar_post } else { *ar_pre };
                Gaussian {
                    mean: coef * history.gated_lag(k)?,
                    var: sigma * sigma,
                }
            }
            ModelSpec::FixedNetworkVar { coef, mu, sigma, .. } => {
                let mut drift = 0.0;
                for l in &history.prev_active {
                    let x = history
                        .prev_obs
                        .get(l)
                        .ok_or(ModelError::MissingHistory { sensor: *l })?;
                    drift += coef * x;
                }
                Gaussian {
                    mean: drift + if post { *mu } else { 0.0 },
                    var: sigma * sigma,
                }
            }
        })
    }

    /// `log f1(x) - log f0(x)` for sensor `k` given the past.
    pub fn log_likelihood_ratio(
        &self,
        k: SensorId,
        x: f64,
        history: &History,
    ) -> Result<f64, ModelError> {
        if !x.is_finite() {
            return Err(ModelError::SupportViolation { sensor: k, x });
        }
        let f0 = self.conditional(k, Regime::Pre, history)?;
        let f1 = self.conditional(k, Regime::Post, history)?;
        if f0.var == f1.var {
            let shift = f1.mean - f0.mean;
            Ok(shift * (x - 0.5 * (f0.mean + f1.mean)) / f0.var)
        } else {
            Ok(f1.log_pdf(x) - f0.log_pdf(x))
        }
    }

    pub fn likelihood_ratio(&self, k: SensorId, x: f64, history: &History) -> Result<f64, ModelError> {
        self.log_likelihood_ratio(k, x, history).map(f64::exp)
    }

    /// Draws the shared randomness for one tick.
    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> TickNoise {
        let mut gauss = || -> f64 { StandardNormal.sample(rng) };
        match &self.spec {
            ModelSpec::IidMeanShift { sigma, .. } => TickNoise {
                factor: 0.0,
                eps: (0..self.pool_size).map(|_| sigma * gauss()).collect(),
            },
            ModelSpec::SharedFactor {
                sigma_z, sigma_eps, ..
            } => {
                let factor = sigma_z * gauss();
                TickNoise {
                    factor,
                    eps: (0..self.pool_size).map(|_| sigma_eps * gauss()).collect(),
                }
            }
            ModelSpec::WithinSensorAr {
                sigma, noise_rho, ..
            }
            | ModelSpec::FixedNetworkVar {
                sigma, noise_rho, ..
            } => {
                // Index-wise AR(1) recursion gives Cov(eps_i, eps_j) = sigma^2 rho^|i-j|.
                let innov = (1.0 - noise_rho * noise_rho).sqrt();
                let mut eps = Vec::with_capacity(self.pool_size);
                let mut prev = gauss();
                eps.push(sigma * prev);
                for _ in 1..self.pool_size {
                    prev = noise_rho * prev + innov * gauss();
                    eps.push(sigma * prev);
                }
                TickNoise { factor: 0.0, eps }
            }
        }
    }

    /// One observation of sensor `k` under `regime`, built from the tick's
    /// shared noise.
    pub fn sample_observation(
        &self,
        k: SensorId,
        regime: Regime,
        history: &History,
        noise: &TickNoise,
    ) -> Result<f64, ModelError> {
        self.check_sensor(k)?;
        let eps = noise.eps[k.index()];
        Ok(match &self.spec {
            ModelSpec::SharedFactor { mu, .. } => {
                let shift = if regime == Regime::Post { *mu } else { 0.0 };
                self.loading(k) * noise.factor + shift + eps
            }
            _ => self.conditional(k, regime, history)?.mean + eps,
        })
    }

    /// Law of `L~_{k,t}` under the pre-change density at this history.
    pub fn null_lr_law(&self, k: SensorId, history: &History) -> Result<NullLrLaw, ModelError> {
        let f0 = self.conditional(k, Regime::Pre, history)?;
        let f1 = self.conditional(k, Regime::Post, history)?;
        if f0.var == f1.var {
            let shift = f1.mean - f0.mean;
            if shift == 0.0 {
                return Ok(NullLrLaw::PointMass { value: 1.0 });
            }
            let v = shift * shift / f0.var;
            return Ok(NullLrLaw::unit_lognormal(v));
        }
        // Unequal variances have no closed form here.
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(
            k.get() as u64,
        );
        NullLrLaw::empirical(DEFAULT_EMPIRICAL_BUDGET, &mut rng, |r| {
            let z: f64 = StandardNormal.sample(r);
            let x = f0.mean + f0.var.sqrt() * z;
            (f1.log_pdf(x) - f0.log_pdf(x)).exp()
        })
    }
}
