use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sheref_core::config::ScenarioConfig;
use sheref_core::sim::metrics::MetricsSummary;
use sheref_core::sim::montecarlo::{monte_carlo_with_threads, run_replications, MonteCarloOutput};
use toml::Value;

use crate::config::{comment_block, load_table, simulate_config, Overrides, SimulateConfig};
use crate::error::CliError;
use crate::open_output;

pub const CSV_HEADER: &str =
    "method,alpha,afnr,afnr_se,tadd,tadd_se,max_fdr,max_fdr_se,rejections,rejections_se,reps,seed";

pub fn csv_row(sc: &ScenarioConfig, m: &MetricsSummary) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        sc.method,
        sc.alpha,
        m.afnr,
        m.afnr_se,
        m.tadd,
        m.tadd_se,
        m.max_fdr,
        m.max_fdr_se,
        m.rejections,
        m.rejections_se,
        m.replications,
        sc.seed
    )
}

/// Echo for the traces of a single (method, alpha) scenario.
fn scenario_echo(cfg: &SimulateConfig, sc: &ScenarioConfig) -> serde_json::Value {
    let mut single = cfg.clone();
    single.methods = vec![sc.method];
    single.alphas = vec![sc.alpha];
    serde_json::to_value(single.echo()).expect("toml tables convert to json")
}

fn run_one(cfg: &SimulateConfig, sc: &ScenarioConfig, traces: bool) -> Result<MonteCarloOutput, CliError> {
    let out = match cfg.threads {
        Some(n) => monte_carlo_with_threads(sc, n, traces, traces)?,
        None => run_replications(sc, traces, traces)?,
    };
    Ok(out)
}

fn write_traces(dir: &Path, cfg: &SimulateConfig, sc: &ScenarioConfig, out: &MonteCarloOutput) -> Result<(), CliError> {
    let sub = dir.join(format!("{}_alpha{}", sc.method, sc.alpha));
    std::fs::create_dir_all(&sub).map_err(|e| CliError::io(&sub, e))?;
    let echo = scenario_echo(cfg, sc);
    for trace in out.traces.iter().flatten() {
        let path = sub.join(format!("rep_{:05}.jsonl", trace.replication));
        let file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = std::io::BufWriter::new(file);
        trace
            .write_jsonl(&mut w, Some(echo.clone()))
            .and_then(|_| w.flush())
            .map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

pub fn run(
    config: &Path,
    ov: &Overrides,
    out: Option<&Path>,
    traces: bool,
    trace_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    let cfg = simulate_config(&load_table(config)?, ov)?;
    let trace_dir = traces.then(|| {
        trace_dir.unwrap_or_else(|| match out {
            Some(p) => PathBuf::from(format!("{}.traces", p.display())),
            None => PathBuf::from("traces"),
        })
    });

    let mut echo = cfg.echo();
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    if let Some(Value::Table(meta)) = echo.get_mut("meta") {
        meta.insert("generated_at_unix".into(), Value::Integer(stamp as i64));
    }
    let mut text = comment_block(&echo);
    text.push_str(CSV_HEADER);
    text.push('\n');

    for sc in cfg.scenarios() {
        let result = run_one(&cfg, &sc, traces)?;
        let m = &result.summary;
        eprintln!(
            "{} alpha={}: afnr {:.4} tadd {:.3} max_fdr {:.4} rejections {:.3} ({} reps)",
            sc.method, sc.alpha, m.afnr, m.tadd, m.max_fdr, m.rejections, m.replications
        );
        writeln!(text, "{}", csv_row(&sc, m)).expect("writing to a string");
        if let Some(dir) = &trace_dir {
            write_traces(dir, &cfg, &sc, &result)?;
        }
    }

    let target = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("<stdout>"));
    let mut w = open_output(out)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(&target, e))
}

