//! A single replication of the monitoring loop, and its trace format.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::models::{ModelSpec, Regime};
use crate::pipeline::{DetectionPipeline, PipelineSettings};
use crate::sim::policy::{initial_active_set, sample_change_points, step_policy, PolicySpec, PoolState};
use crate::sim::SimError;
use crate::types::{ChangePoint, SensorId, SensorSet};

/// One decision epoch: `A_t`, `D_{t+1}` and optional diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: u32,
    pub active: SensorSet,
    pub detected: SensorSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Raw e-values `E_{k,t}` of the active sensors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evalues: Option<BTreeMap<SensorId, f64>>,
    /// Statistics used for selection (boosted e-values for boosted methods).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statistics: Option<BTreeMap<SensorId, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observations: Option<BTreeMap<SensorId, f64>>,
    /// `S_{k,t}` for every sensor seen so far, active or not.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_values: Option<BTreeMap<SensorId, f64>>,
}

/// Ground-truth-annotated trajectory of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub deadline: u32,
    pub replication: usize,
    /// The model with any randomized parameters pinned.
    pub model: ModelSpec,
    /// `tau_k` for every sensor that was ever active.
    pub change_points: BTreeMap<SensorId, ChangePoint>,
    pub ticks: Vec<TickRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TraceLine<'a> {
    Header {
        deadline: u32,
        replication: usize,
        model: std::borrow::Cow<'a, ModelSpec>,
        change_points: std::borrow::Cow<'a, BTreeMap<SensorId, ChangePoint>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<serde_json::Value>,
    },
    Tick(std::borrow::Cow<'a, TickRecord>),
}

impl RunTrace {
    /// Writes the trace as JSON lines: a header record followed by one
    /// record per tick. `config` is echoed into the header.
    pub fn write_jsonl<W: Write>(&self, mut out: W, config: Option<serde_json::Value>) -> std::io::Result<()> {
        let header = TraceLine::Header {
            deadline: self.deadline,
            replication: self.replication,
            model: std::borrow::Cow::Borrowed(&self.model),
            change_points: std::borrow::Cow::Borrowed(&self.change_points),
            config,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for tick in &self.ticks {
            serde_json::to_writer(&mut out, &TraceLine::Tick(std::borrow::Cow::Borrowed(tick)))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads a trace written by [`RunTrace::write_jsonl`], returning the
    /// echoed configuration alongside.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<(Self, Option<serde_json::Value>), TraceReadError> {
        let mut trace: Option<(RunTrace, Option<serde_json::Value>)> = None;
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| TraceReadError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TraceLine<'static> = serde_json::from_str(&line)
                .map_err(|e| TraceReadError::Malformed { line: i + 1, reason: e.to_string() })?;
            match (parsed, trace.as_mut()) {
                (
                    TraceLine::Header {
                        deadline,
                        replication,
                        model,
                        change_points,
                        config,
                    },
                    None,
                ) => {
                    trace = Some((
                        RunTrace {
                            deadline,
                            replication,
                            model: model.into_owned(),
                            change_points: change_points.into_owned(),
                            ticks: Vec::new(),
                        },
                        config,
                    ))
                }
                (TraceLine::Tick(tick), Some((t, _))) => t.ticks.push(tick.into_owned()),
                (TraceLine::Header { .. }, Some(_)) => {
                    return Err(TraceReadError::Malformed {
                        line: i + 1,
                        reason: "second header".into(),
                    })
                }
                (TraceLine::Tick(_), None) => {
                    return Err(TraceReadError::Malformed {
                        line: i + 1,
                        reason: "tick before header".into(),
                    })
                }
            }
        }
        trace.ok_or(TraceReadError::Malformed {
            line: 0,
            reason: "empty trace".into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TraceReadError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("malformed trace at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Random streams of one replication, split so that methods run on the same
/// seed share change points, parameters and noise.
struct RunStreams {
    setup: ChaCha8Rng,
    noise: ChaCha8Rng,
    policy: ChaCha8Rng,
}

impl RunStreams {
    fn derive<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            setup: ChaCha8Rng::seed_from_u64(rng.random()),
            noise: ChaCha8Rng::seed_from_u64(rng.random()),
            policy: ChaCha8Rng::seed_from_u64(rng.random()),
        }
    }
}

/// Runs one replication. With `detail` set, each tick record carries
/// observations, e-values and the full `S` table.
pub fn simulate_run<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    replication: usize,
    rng: &mut R,
    detail: bool,
) -> Result<RunTrace, SimError> {
    config.validate()?;
    let mut streams = RunStreams::derive(rng);

    let taus = sample_change_points(config.pool_size, config.change, &mut streams.setup);
    let model = config.model.build(config.pool_size, &mut streams.setup)?;
    let resolved = model.resolved_spec();
    let mut pipeline = DetectionPipeline::new(
        PipelineSettings {
            cap: config.cap,
            alpha: config.alpha,
            method: config.method,
            boost_tol: config.boost_tol,
        },
        model,
    );
    let mut pool = PoolState::new(config.pool_size, config.initial_active);
    let mut active = initial_active_set(config.policy, &pool, config.initial_active, &mut streams.policy);

    let mut change_points = BTreeMap::new();
    let mut ticks = Vec::with_capacity(config.deadline as usize);
    let mut history = crate::models::History::default();

    // An empty set is absorbing unless activation ignores the past.
    let stops_when_empty = !matches!(config.policy, PolicySpec::Bernoulli { .. });
    for t in 1..config.deadline {
        if active.is_empty() && stops_when_empty {
            break;
        }
        let noise = pipeline.model().draw_noise(&mut streams.noise);
        let mut obs = BTreeMap::new();
        for &k in &active {
            let tau = taus[k.index()];
            change_points.insert(k, tau);
            let regime = if tau.is_post_change_at(t) {
                Regime::Post
            } else {
                Regime::Pre
            };
            obs.insert(k, pipeline.model().sample_observation(k, regime, &history, &noise)?);
        }

        let outcome = pipeline.step(t, &active, &obs)?;
        let detected = outcome.report.selected.clone();
        ticks.push(TickRecord {
            t,
            active: active.clone(),
            detected: detected.clone(),
            threshold: outcome.report.threshold,
            evalues: detail.then(|| outcome.evalues.entries.clone()),
            statistics: detail.then(|| outcome.statistics.clone()),
            observations: detail.then(|| obs.clone()),
            s_values: detail.then(|| {
                pipeline
                    .engine()
                    .states()
                    .map(|s| (s.sensor, s.s_value))
                    .collect()
            }),
        });

        history = crate::models::History::new(active.clone(), obs);
        active = step_policy(config.policy, &active, &detected, &mut pool, &mut streams.policy);
    }

    Ok(RunTrace {
        deadline: config.deadline,
        replication,
        model: resolved,
        change_points,
        ticks,
    })
}
