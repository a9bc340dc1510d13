//! Scenario configuration shared by the simulator and the CLI.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boosting::{BoostMethod, DEFAULT_TOL};
use crate::models::ModelSpec;
use crate::sim::policy::PolicySpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "SHEREF")]
    Sheref,
    #[serde(rename = "SHEREF-GD")]
    SherefGd,
    #[serde(rename = "SHEREF-TIPD")]
    SherefTipd,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Sheref, Method::SherefGd, Method::SherefTipd];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sheref => "SHEREF",
            Method::SherefGd => "SHEREF-GD",
            Method::SherefTipd => "SHEREF-TIPD",
        }
    }

    pub fn boost(self) -> Option<BoostMethod> {
        match self {
            Method::Sheref => None,
            Method::SherefGd => Some(BoostMethod::Gd),
            Method::SherefTipd => Some(BoostMethod::Tipd),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown method `{0}` (expected SHEREF, SHEREF-GD or SHEREF-TIPD)")]
pub struct UnknownMethod(pub String);

impl FromStr for Method {
    type Err = UnknownMethod;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().replace('_', "-").as_str() {
            "SHEREF" => Ok(Method::Sheref),
            "SHEREF-GD" | "GD" => Ok(Method::SherefGd),
            "SHEREF-TIPD" | "TIPD" => Ok(Method::SherefTipd),
            _ => Err(UnknownMethod(s.to_string())),
        }
    }
}

/// Ground-truth change-point law for the pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChangeSpec {
    /// `P(tau = t) = (1 - p)^t p` on `{0, 1, 2, ...}`.
    Geometric { p: f64 },
    /// Every sensor stays pre-change.
    Never,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("`{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

fn bad(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        reason: reason.into(),
    }
}

/// Everything needed to run one `(method, alpha)` Monte-Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Cap `K` on the active-set size.
    pub cap: usize,
    /// Deadline `T_bar`; decisions are made at `t = 1..T_bar-1`.
    pub deadline: u32,
    pub alpha: f64,
    pub method: Method,
    pub model: ModelSpec,
    pub policy: PolicySpec,
    pub pool_size: usize,
    /// Size of the initial active set `{1, ..., n}`.
    pub initial_active: usize,
    pub change: ChangeSpec,
    pub replications: usize,
    pub seed: u64,
    /// Bisection width for boosting factors.
    pub boost_tol: f64,
}

impl ScenarioConfig {
    /// The simulation protocol behind the published tables: `K = 100`, a pool
    /// of 1000, `T_bar = 30`, geometric change points with `p = 0.1` and
    /// 500 replications with detected sensors replaced from the pool.
    pub fn table_protocol(model: ModelSpec, method: Method, alpha: f64, seed: u64) -> Self {
        Self {
            cap: 100,
            deadline: 30,
            alpha,
            method,
            model,
            policy: PolicySpec::ReplaceFromPool,
            pool_size: 1000,
            initial_active: 100,
            change: ChangeSpec::Geometric { p: 0.1 },
            replications: 500,
            seed,
            boost_tol: DEFAULT_TOL,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.cap == 0 {
            return Err(bad("run.cap", "must be positive"));
        }
        if self.deadline < 2 {
            return Err(bad("run.deadline", format!("must be >= 2, got {}", self.deadline)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(bad("run.alpha", format!("must lie in (0,1), got {}", self.alpha)));
        }
        if self.pool_size == 0 {
            return Err(bad("run.pool_size", "must be positive"));
        }
        if self.initial_active > self.pool_size {
            return Err(bad(
                "policy.initial_active",
                format!("{} exceeds the pool size {}", self.initial_active, self.pool_size),
            ));
        }
        if self.initial_active > self.cap {
            return Err(bad(
                "policy.initial_active",
                format!("{} exceeds the cap {}", self.initial_active, self.cap),
            ));
        }
        if let ChangeSpec::Geometric { p } = self.change {
            if !(p > 0.0 && p <= 1.0) {
                return Err(bad("run.change_p", format!("must lie in (0,1], got {p}")));
            }
        }
        if self.replications == 0 {
            return Err(bad("run.reps", "must be positive"));
        }
        if !(self.boost_tol > 0.0) {
            return Err(bad("boost.tol", "must be positive"));
        }
        if let PolicySpec::Bernoulli { q } = self.policy {
            if !(0.0..=1.0).contains(&q) {
                return Err(bad("policy.q", format!("must lie in [0,1], got {q}")));
            }
            if self.pool_size > self.cap {
                return Err(bad(
                    "policy.kind",
                    "bernoulli activation needs pool_size <= cap",
                ));
            }
        }
        if matches!(self.model, ModelSpec::FixedNetworkVar { .. })
            && self.policy != PolicySpec::FixedAll
        {
            return Err(bad("policy.kind", "fixed_network_var requires the fixed_all policy"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model1() -> ModelSpec {
        ModelSpec::SharedFactor {
            mu: 3.0,
            sigma_z: 1.0,
            sigma_eps: 1.0,
            loading_range: (0.0, 0.5),
            loadings: None,
        }
    }

    #[test]
    fn protocol_is_valid() {
        let cfg = ScenarioConfig::table_protocol(model1(), Method::Sheref, 0.1, 1);
        cfg.validate().unwrap();
        assert_eq!(cfg.cap, 100);
    }

    #[test]
    fn validation_names_keys() {
        let mut cfg = ScenarioConfig::table_protocol(model1(), Method::Sheref, 0.1, 1);
        cfg.deadline = 1;
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid { key: "run.deadline", .. })));
        let mut cfg = ScenarioConfig::table_protocol(model1(), Method::Sheref, 1.0, 1);
        assert!(cfg.validate().is_err());
        cfg.alpha = 0.05;
        cfg.initial_active = 2000;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("tipd".parse::<Method>().unwrap(), Method::SherefTipd);
        assert!("avp".parse::<Method>().is_err());
    }
}
