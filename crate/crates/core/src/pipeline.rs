//! One detection step per tick: likelihood ratios, e-values, optional
//! boosting and e-BH selection. Shared by the simulator and streaming
//! detection; it never sees ground truth.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boosting::{boosted_evalues, BoostError, BoostQuery};
use crate::config::Method;
use crate::detector::{ebh_select, DetectionReport, DetectorError};
use crate::evalue::{EValueEngine, EValueError, EValueVector};
use crate::models::{History, LikelihoodModel, ModelError};
use crate::types::{ActiveSetLedger, LedgerError, SensorId, SensorSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    EValue(#[from] EValueError),
    #[error(transparent)]
    Boost(#[from] BoostError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error("no observation for active sensor {sensor} at t={t}")]
    MissingObservation { sensor: SensorId, t: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub cap: usize,
    pub alpha: f64,
    pub method: Method,
    pub boost_tol: f64,
}

/// Result of one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickOutcome {
    pub evalues: EValueVector,
    /// The statistics fed to e-BH: raw or boosted e-values.
    pub statistics: BTreeMap<SensorId, f64>,
    pub report: DetectionReport,
}

/// Resumable detector state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionPipeline {
    settings: PipelineSettings,
    model: LikelihoodModel,
    engine: EValueEngine,
    ledger: ActiveSetLedger,
    history: History,
}

impl DetectionPipeline {
    pub fn new(settings: PipelineSettings, model: LikelihoodModel) -> Self {
        Self {
            ledger: ActiveSetLedger::new(settings.cap),
            settings,
            model,
            engine: EValueEngine::new(),
            history: History::default(),
        }
    }

    pub fn settings(&self) -> &PipelineSettings {
        &self.settings
    }

    pub fn model(&self) -> &LikelihoodModel {
        &self.model
    }

    pub fn engine(&self) -> &EValueEngine {
        &self.engine
    }

    pub fn ledger(&self) -> &ActiveSetLedger {
        &self.ledger
    }

    /// Time of the last processed tick.
    pub fn time(&self) -> u32 {
        self.engine.time()
    }

    /// Processes tick `t` with the observations of the sensors in `active`.
    /// Extra observations (for inactive sensors) are ignored.
    pub fn step(
        &mut self,
        t: u32,
        active: &SensorSet,
        observations: &BTreeMap<SensorId, f64>,
    ) -> Result<TickOutcome, PipelineError> {
        let expected = self.time() + 1;
        if t != expected {
            return Err(EValueError::NonContiguousTime { expected, got: t }.into());
        }
        if active.len() > self.settings.cap {
            return Err(LedgerError::CapExceeded {
                t,
                size: active.len(),
                cap: self.settings.cap,
            }
            .into());
        }

        let mut obs = BTreeMap::new();
        let mut lrs = BTreeMap::new();
        for &k in active {
            let x = *observations
                .get(&k)
                .ok_or(PipelineError::MissingObservation { sensor: k, t })?;
            lrs.insert(k, self.model.likelihood_ratio(k, x, &self.history)?);
            obs.insert(k, x);
        }

        let queries = match self.settings.method.boost() {
            Some(_) => Some(
                active
                    .iter()
                    .map(|&k| {
                        let law = self.model.null_lr_law(k, &self.history)?;
                        let q = BoostQuery::new(
                            law,
                            self.engine.next_scale(k),
                            self.settings.alpha,
                            self.settings.cap,
                        )?;
                        Ok((k, q))
                    })
                    .collect::<Result<BTreeMap<_, _>, PipelineError>>()?,
            ),
            None => None,
        };

        let evalues = self.engine.tick(t, active, &lrs)?;
        let statistics = match (self.settings.method.boost(), queries) {
            (Some(method), Some(queries)) => {
                boosted_evalues(&evalues, &queries, method, None, self.settings.boost_tol)?
            }
            _ => evalues.entries.clone(),
        };
        let report = ebh_select(t, &statistics, self.settings.cap, self.settings.alpha)?;

        self.ledger.append_active_set(t, active.clone())?;
        self.ledger.record_detection(t + 1, report.selected.clone())?;
        self.history = History::new(active.clone(), obs);

        Ok(TickOutcome {
            evalues,
            statistics,
            report,
        })
    }
}
