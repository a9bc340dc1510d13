//! Streaming detection: one JSON record per tick in, one decision per tick
//! out. The detector state can be saved and resumed at any tick boundary.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sheref_core::models::ModelSpec;
use sheref_core::pipeline::{DetectionPipeline, PipelineError, PipelineSettings};
use sheref_core::sim::montecarlo::replication_rng;
use sheref_core::sim::SimError;
use sheref_core::types::{SensorId, SensorSet};
use toml::Table;

use crate::config::{load_table, simulate_config, Overrides, SimulateConfig};
use crate::error::CliError;
use crate::open_output;

pub struct DetectRequest<'a> {
    pub input: &'a Path,
    pub config: Option<&'a Path>,
    pub overrides: &'a Overrides,
    pub state_in: Option<&'a Path>,
    pub state_out: Option<&'a Path>,
    pub out: Option<&'a Path>,
}

#[derive(Debug, Deserialize)]
struct TickInput {
    t: u32,
    active: SensorSet,
    #[serde(default)]
    observations: Option<BTreeMap<SensorId, f64>>,
}

#[derive(Debug, Serialize)]
struct TickOutput<'a> {
    t: u32,
    r: usize,
    selected: &'a SensorSet,
    threshold: Option<f64>,
}

/// Where the detector comes from, in order of precedence: saved state, the
/// config file, the config echoed into a trace header.
enum Source {
    State(Box<DetectionPipeline>),
    Config(Box<SimulateConfig>),
    Pending,
}

fn single_scenario(cfg: &SimulateConfig) -> Result<(), CliError> {
    if cfg.methods.len() != 1 {
        return Err(CliError::config("run.method", "detect needs exactly one method (use --method)"));
    }
    if cfg.alphas.len() != 1 {
        return Err(CliError::config("run.alpha", "detect needs exactly one alpha (use --alpha)"));
    }
    Ok(())
}

fn build_pipeline(cfg: &SimulateConfig, model: Option<ModelSpec>) -> Result<DetectionPipeline, CliError> {
    single_scenario(cfg)?;
    let b = &cfg.base;
    let spec = model.unwrap_or_else(|| b.model.clone());
    let model = spec
        .build(b.pool_size, &mut replication_rng(b.seed, 0))
        .map_err(|e| CliError::from(SimError::Model(e)))?;
    Ok(DetectionPipeline::new(
        PipelineSettings {
            cap: b.cap,
            alpha: cfg.alphas[0],
            method: cfg.methods[0],
            boost_tol: b.boost_tol,
        },
        model,
    ))
}

fn stream_error(line: usize, e: PipelineError) -> CliError {
    CliError::Stream {
        line,
        reason: e.to_string(),
    }
}

pub fn run(req: DetectRequest<'_>) -> Result<(), CliError> {
    let ov = req.overrides;
    let mut source = match (req.state_in, req.config) {
        (Some(path), _) => {
            if ov.alpha.is_some() || ov.method.is_some() {
                return Err(CliError::config("--state-in", "settings come from the saved state; drop --alpha/--method"));
            }
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let p: DetectionPipeline =
                serde_json::from_str(&text).map_err(|e| CliError::config("--state-in", e.to_string()))?;
            Source::State(Box::new(p))
        }
        (None, Some(path)) => Source::Config(Box::new(simulate_config(&load_table(path)?, ov)?)),
        (None, None) => Source::Pending,
    };
    if let Source::Config(cfg) = &source {
        single_scenario(cfg)?;
    }

    let file = std::fs::File::open(req.input).map_err(|e| CliError::io(req.input, e))?;
    let mut out = open_output(req.out)?;
    let out_path = req.out.unwrap_or(Path::new("<stdout>"));
    let mut pipeline: Option<DetectionPipeline> = None;
    let mut header_model: Option<ModelSpec> = None;

    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| CliError::io(req.input, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| CliError::Stream {
            line: lineno,
            reason: e.to_string(),
        })?;
        if value.get("kind").and_then(|k| k.as_str()) == Some("header") {
            if pipeline.is_some() {
                return Err(CliError::Stream {
                    line: lineno,
                    reason: "header after the first tick".into(),
                });
            }
            header_model = match value.get("model") {
                Some(m) => Some(serde_json::from_value(m.clone()).map_err(|e| CliError::Stream {
                    line: lineno,
                    reason: format!("header model: {e}"),
                })?),
                None => None,
            };
            if let (Source::Pending, Some(cfg)) = (&source, value.get("config")) {
                let table: Table = serde_json::from_value(cfg.clone()).map_err(|e| CliError::Stream {
                    line: lineno,
                    reason: format!("header config: {e}"),
                })?;
                source = Source::Config(Box::new(simulate_config(&table, ov)?));
            }
            continue;
        }

        let rec: TickInput = serde_json::from_value(value).map_err(|e| CliError::Stream {
            line: lineno,
            reason: e.to_string(),
        })?;
        if rec.active.is_empty() {
            break;
        }
        let p = match pipeline.as_mut() {
            Some(p) => p,
            None => {
                let built = match &source {
                    Source::State(p) => (**p).clone(),
                    Source::Config(cfg) => build_pipeline(cfg, header_model.take())?,
                    Source::Pending => {
                        return Err(CliError::config("--config", "no config given and the input has no header"))
                    }
                };
                pipeline.insert(built)
            }
        };
        let obs = rec.observations.ok_or_else(|| CliError::Stream {
            line: lineno,
            reason: "missing `observations`".into(),
        })?;
        let outcome = p.step(rec.t, &rec.active, &obs).map_err(|e| stream_error(lineno, e))?;
        let report = &outcome.report;
        let line = serde_json::to_string(&TickOutput {
            t: rec.t,
            r: report.r_count,
            selected: &report.selected,
            threshold: report.threshold,
        })
        .expect("plain values serialize");
        writeln!(out, "{line}").map_err(|e| CliError::io(out_path, e))?;
    }
    out.flush().map_err(|e| CliError::io(out_path, e))?;

    if let Some(path) = req.state_out {
        let state = match (pipeline, source) {
            (Some(p), _) => p,
            (None, Source::State(p)) => *p,
            (None, Source::Config(cfg)) => build_pipeline(&cfg, header_model)?,
            (None, Source::Pending) => {
                return Err(CliError::config("--config", "nothing to save: no config and no input"))
            }
        };
        let text = serde_json::to_string(&state).expect("detector state serializes");
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}
