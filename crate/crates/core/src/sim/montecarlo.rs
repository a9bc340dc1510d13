//! Parallel replications with results independent of the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::ScenarioConfig;
use crate::sim::metrics::{MetricsAccumulator, MetricsSummary, RunStats};
use crate::sim::run::{simulate_run, RunTrace};
use crate::sim::SimError;

/// Random stream of replication `rep`. Independent of method and alpha, so
/// runs sharing a seed see the same change points, parameters and noise.
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloOutput {
    pub summary: MetricsSummary,
    /// Present when traces were requested, in replication order.
    pub traces: Option<Vec<RunTrace>>,
}

/// Runs `config.replications` replications on the global rayon pool.
pub fn monte_carlo(config: &ScenarioConfig) -> Result<MetricsSummary, SimError> {
    Ok(run_replications(config, false, false)?.summary)
}

/// Like [`monte_carlo`] but on a dedicated pool with `threads` workers.
pub fn monte_carlo_with_threads(
    config: &ScenarioConfig,
    threads: usize,
    keep_traces: bool,
    detail: bool,
) -> Result<MonteCarloOutput, SimError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| SimError::ThreadPool(e.to_string()))?;
    pool.install(|| run_replications(config, keep_traces, detail))
}

/// Runs all replications; metrics are folded in replication order so the
/// floating-point sums do not depend on scheduling.
pub fn run_replications(
    config: &ScenarioConfig,
    keep_traces: bool,
    detail: bool,
) -> Result<MonteCarloOutput, SimError> {
    config.validate()?;
    let results: Vec<(RunStats, Option<RunTrace>)> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replication_rng(config.seed, rep);
            let trace = simulate_run(config, rep, &mut rng, detail)?;
            let stats = RunStats::from_trace(&trace);
            Ok((stats, keep_traces.then_some(trace)))
        })
        .collect::<Result<_, SimError>>()?;

    let mut acc = MetricsAccumulator::new(config.deadline.saturating_sub(1) as usize);
    let mut traces = keep_traces.then(|| Vec::with_capacity(results.len()));
    for (stats, trace) in results {
        acc.push(&stats);
        if let (Some(all), Some(tr)) = (traces.as_mut(), trace) {
            all.push(tr);
        }
    }
    Ok(MonteCarloOutput {
        summary: acc.finish(),
        traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Method;
    use crate::models::ModelSpec;
    use crate::sim::metrics::compute_metrics;

    fn cfg(method: Method) -> ScenarioConfig {
        let mut c = ScenarioConfig::table_protocol(
            ModelSpec::WithinSensorAr {
                ar_pre: -0.8,
                ar_post: 0.8,
                sigma: 1.0,
                noise_rho: -0.8,
            },
            method,
            0.1,
            7,
        );
        c.cap = 8;
        c.initial_active = 8;
        c.pool_size = 40;
        c.deadline = 10;
        c.replications = 12;
        c
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let c = cfg(Method::SherefGd);
        let one = monte_carlo_with_threads(&c, 1, false, false).unwrap();
        let four = monte_carlo_with_threads(&c, 4, false, false).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn summary_matches_metrics_of_kept_traces() {
        let c = cfg(Method::Sheref);
        let out = monte_carlo_with_threads(&c, 2, true, false).unwrap();
        let traces = out.traces.unwrap();
        assert_eq!(traces.len(), 12);
        assert!(traces.iter().enumerate().all(|(i, t)| t.replication == i));
        assert_eq!(compute_metrics(&traces, c.deadline).unwrap(), out.summary);
    }

    #[test]
    fn methods_share_ground_truth() {
        let a = monte_carlo_with_threads(&cfg(Method::Sheref), 1, true, false).unwrap();
        let b = monte_carlo_with_threads(&cfg(Method::SherefTipd), 1, true, false).unwrap();
        for (x, y) in a.traces.unwrap().iter().zip(b.traces.unwrap().iter()) {
            assert_eq!(x.ticks[0].active, y.ticks[0].active);
            let common: Vec<_> = x.change_points.keys().filter(|k| y.change_points.contains_key(k)).collect();
            for k in common {
                assert_eq!(x.change_points[k], y.change_points[k]);
            }
        }
    }
}
