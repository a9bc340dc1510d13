//! FDR, AFNR, TADD and rejection counts over Monte-Carlo traces.

use serde::{Deserialize, Serialize};

use crate::sim::run::RunTrace;
use crate::sim::SimError;
use crate::types::ChangePoint;

/// Per-replication quantities; the Monte-Carlo estimates are their means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    /// FDR ratio at `t = 1..T_bar-1` (0 for ticks after an early stop).
    pub fdr: Vec<f64>,
    pub afnr: f64,
    pub tadd: f64,
    pub rejections: f64,
    pub false_detections: u64,
    pub true_detections: u64,
    pub false_non_detections: u64,
    pub true_non_detections: u64,
}

impl RunStats {
    pub fn from_trace(trace: &RunTrace) -> Self {
        let epochs = trace.deadline.saturating_sub(1) as usize;
        let mut fdr = vec![0.0; epochs];
        let (mut fd, mut td, mut fnd, mut tnd) = (0u64, 0u64, 0u64, 0u64);
        for tick in &trace.ticks {
            let tau = |k| {
                trace
                    .change_points
                    .get(k)
                    .copied()
                    .unwrap_or(ChangePoint::Infinite)
            };
            let mut tick_false = 0u64;
            for k in &tick.active {
                let pre = tau(k).is_pre_change_at(tick.t);
                match (tick.detected.contains(k), pre) {
                    (true, true) => tick_false += 1,
                    (true, false) => td += 1,
                    (false, false) => fnd += 1,
                    (false, true) => tnd += 1,
                }
            }
            fd += tick_false;
            let idx = (tick.t - 1) as usize;
            if idx < epochs {
                fdr[idx] = tick_false as f64 / (tick.detected.len().max(1)) as f64;
            }
        }
        let non_detections = fnd + tnd;
        Self {
            fdr,
            afnr: fnd as f64 / non_detections.max(1) as f64,
            tadd: fnd as f64,
            rejections: (fd + td) as f64,
            false_detections: fd,
            true_detections: td,
            false_non_detections: fnd,
            true_non_detections: tnd,
        }
    }
}

/// Running sums for mean and standard error.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, other: &Moments) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }

    /// Standard error of the mean (sample variance with `n - 1`).
    pub fn std_error(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let var = ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

/// Accumulates [`RunStats`]. Merging is a commutative monoid on sums.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsAccumulator {
    fdr: Vec<Moments>,
    afnr: Moments,
    tadd: Moments,
    rejections: Moments,
}

impl MetricsAccumulator {
    pub fn new(epochs: usize) -> Self {
        Self {
            fdr: vec![Moments::default(); epochs],
            ..Self::default()
        }
    }

    pub fn push(&mut self, stats: &RunStats) {
        if self.fdr.len() < stats.fdr.len() {
            self.fdr.resize(stats.fdr.len(), Moments::default());
        }
        for (m, &x) in self.fdr.iter_mut().zip(&stats.fdr) {
            m.push(x);
        }
        self.afnr.push(stats.afnr);
        self.tadd.push(stats.tadd);
        self.rejections.push(stats.rejections);
    }

    pub fn merge(&mut self, other: &MetricsAccumulator) {
        if self.fdr.len() < other.fdr.len() {
            self.fdr.resize(other.fdr.len(), Moments::default());
        }
        for (m, o) in self.fdr.iter_mut().zip(&other.fdr) {
            m.merge(o);
        }
        self.afnr.merge(&other.afnr);
        self.tadd.merge(&other.tadd);
        self.rejections.merge(&other.rejections);
    }

    pub fn finish(&self) -> MetricsSummary {
        let fdr_path: Vec<f64> = self.fdr.iter().map(Moments::mean).collect();
        let fdr_path_se: Vec<f64> = self.fdr.iter().map(Moments::std_error).collect();
        let (argmax, max_fdr) = fdr_path
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, v)| if v > best.1 { (i, v) } else { best });
        MetricsSummary {
            max_fdr,
            max_fdr_se: fdr_path_se.get(argmax).copied().unwrap_or(0.0),
            fdr_path,
            fdr_path_se,
            afnr: self.afnr.mean(),
            afnr_se: self.afnr.std_error(),
            tadd: self.tadd.mean(),
            tadd_se: self.tadd.std_error(),
            rejections: self.rejections.mean(),
            rejections_se: self.rejections.std_error(),
            replications: self.afnr.n as usize,
        }
    }
}

/// Monte-Carlo estimates of the detection metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    /// Mean FDR ratio at each `t = 1..T_bar-1`.
    pub fdr_path: Vec<f64>,
    pub fdr_path_se: Vec<f64>,
    pub max_fdr: f64,
    /// Standard error of the path at its maximizing `t`.
    pub max_fdr_se: f64,
    pub afnr: f64,
    pub afnr_se: f64,
    pub tadd: f64,
    pub tadd_se: f64,
    /// Mean total number of detections over all ticks.
    pub rejections: f64,
    pub rejections_se: f64,
    pub replications: usize,
}

/// Aggregates traces that share the deadline `deadline`.
pub fn compute_metrics(traces: &[RunTrace], deadline: u32) -> Result<MetricsSummary, SimError> {
    if traces.is_empty() {
        return Err(SimError::EmptyTraceList);
    }
    if let Some(t) = traces.iter().find(|t| t.deadline != deadline) {
        return Err(SimError::MismatchedHorizons {
            expected: deadline,
            got: t.deadline,
        });
    }
    let mut acc = MetricsAccumulator::new(deadline.saturating_sub(1) as usize);
    for trace in traces {
        acc.push(&RunStats::from_trace(trace));
    }
    Ok(acc.finish())
}
