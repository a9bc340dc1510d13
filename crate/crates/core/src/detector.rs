//! e-BH selection over the active set.
//!
//! With cap `K` and level `alpha`, the procedure rejects the `R` largest
//! e-values where `R = max{r : r-th largest e-value >= K / (alpha r)}`.
//! Equivalently, every sensor whose e-value clears the threshold
//! `u = inf{u : u Q(u) >= K / alpha}` is selected, where
//! `Q(u) = |{E >= u}| ∨ 1`. The threshold form is what runs here; it needs no
//! tie-breaking because selection is by set membership.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{SensorId, SensorSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectorError {
    #[error("{count} e-values supplied but the cap is {cap}")]
    CapViolation { count: usize, cap: usize },
    #[error("e-value {value} for sensor {sensor} is negative or not finite")]
    NonFiniteInput { sensor: SensorId, value: f64 },
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("cap must be positive")]
    ZeroCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub t: u32,
    /// Input e-values ranked largest first; equal values by ascending id.
    pub evalues: Vec<(SensorId, f64)>,
    pub cap: usize,
    pub alpha: f64,
    pub r_count: usize,
    /// `K / (alpha R)` when something was selected.
    pub threshold: Option<f64>,
    pub selected: SensorSet,
}

/// Selection threshold `u` and the count `Q(u)` at it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub u: f64,
    pub q_count: usize,
}

fn validate(
    evalues: &BTreeMap<SensorId, f64>,
    cap: usize,
    alpha: f64,
) -> Result<Vec<f64>, DetectorError> {
    if cap == 0 {
        return Err(DetectorError::ZeroCap);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DetectorError::InvalidAlpha(alpha));
    }
    if evalues.len() > cap {
        return Err(DetectorError::CapViolation {
            count: evalues.len(),
            cap,
        });
    }
    if let Some((&sensor, &value)) = evalues.iter().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
        return Err(DetectorError::NonFiniteInput { sensor, value });
    }
    let mut sorted: Vec<f64> = evalues.values().copied().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    Ok(sorted)
}

/// The e-BH rejection level for `r` rejections.
fn level(cap: usize, alpha: f64, r: usize) -> f64 {
    cap as f64 / (alpha * r as f64)
}

/// Computes `u = inf{u >= 0 : u Q(u) >= K / alpha}` and `Q(u)`.
pub fn ebh_threshold(
    evalues: &BTreeMap<SensorId, f64>,
    cap: usize,
    alpha: f64,
) -> Result<Threshold, DetectorError> {
    let desc = validate(evalues, cap, alpha)?;
    // Q only changes at the candidate levels K/(alpha r); the infimum sits at
    // the largest r whose level is cleared by at least r e-values.
    let clears = |u: f64| desc.partition_point(|&e| e >= u);
    let r = (1..=desc.len())
        .rev()
        .find(|&r| clears(level(cap, alpha, r)) >= r)
        .unwrap_or(1);
    let u = level(cap, alpha, r);
    Ok(Threshold {
        u,
        q_count: clears(u).max(1),
    })
}

/// Selects `D_{t+1}` from the e-values of the sensors active at `t`.
pub fn ebh_select(
    t: u32,
    evalues: &BTreeMap<SensorId, f64>,
    cap: usize,
    alpha: f64,
) -> Result<DetectionReport, DetectorError> {
    let Threshold { u, .. } = ebh_threshold(evalues, cap, alpha)?;
    let selected: SensorSet = evalues
        .iter()
        .filter(|(_, &e)| e >= u)
        .map(|(&k, _)| k)
        .collect();
    let r_count = selected.len();
    let mut ranked: Vec<(SensorId, f64)> = evalues.iter().map(|(&k, &e)| (k, e)).collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    Ok(DetectionReport {
        t,
        evalues: ranked,
        cap,
        alpha,
        r_count,
        threshold: (r_count > 0).then(|| level(cap, alpha, r_count)),
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn evs(values: &[f64]) -> BTreeMap<SensorId, f64> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| (SensorId::new(i as u32 + 1).unwrap(), v))
            .collect()
    }

    /// Sorted-rank rule: largest r with r * E_(r) / K >= 1 / alpha.
    fn rank_rule(values: &[f64], cap: usize, alpha: f64) -> usize {
        let mut desc = values.to_vec();
        desc.sort_by(|a, b| b.partial_cmp(a).unwrap());
        (1..=desc.len())
            .filter(|&r| r as f64 * desc[r - 1] / cap as f64 >= 1.0 / alpha)
            .max()
            .unwrap_or(0)
    }

    #[test]
    fn single_strong_sensor() {
        let report = ebh_select(1, &evs(&[10.0, 3.0, 2.0, 1.0]), 4, 0.5).unwrap();
        assert_eq!(report.r_count, 1);
        assert_eq!(report.selected, evs(&[10.0]).keys().copied().collect());
        assert_eq!(report.threshold, Some(8.0));
        let th = ebh_threshold(&evs(&[10.0, 3.0, 2.0, 1.0]), 4, 0.5).unwrap();
        assert_eq!(th, Threshold { u: 8.0, q_count: 1 });
    }

    #[test]
    fn empty_input_selects_nothing() {
        let report = ebh_select(1, &BTreeMap::new(), 4, 0.5).unwrap();
        assert_eq!(report.r_count, 0);
        assert!(report.selected.is_empty());
        assert_eq!(report.threshold, None);
    }

    #[test]
    fn boundary_selects_everything() {
        let values = vec![2.0; 10];
        let report = ebh_select(1, &evs(&values), 10, 0.5).unwrap();
        assert_eq!(report.r_count, 10);
        let th = ebh_threshold(&evs(&values), 10, 0.5).unwrap();
        assert_eq!(th, Threshold { u: 2.0, q_count: 10 });
    }

    #[test]
    fn all_zero_floors_q_at_one() {
        let th = ebh_threshold(&evs(&[0.0; 4]), 4, 0.5).unwrap();
        assert_eq!(th, Threshold { u: 8.0, q_count: 1 });
        assert!(ebh_select(1, &evs(&[0.0; 4]), 4, 0.5).unwrap().selected.is_empty());
    }

    #[test]
    fn cap_is_used_even_when_fewer_sensors_are_active() {
        // one e-value of 5: K=1 -> 5 >= 1/0.5; K=4 -> 5 < 8
        assert_eq!(ebh_select(1, &evs(&[5.0]), 1, 0.5).unwrap().r_count, 1);
        assert_eq!(ebh_select(1, &evs(&[5.0]), 4, 0.5).unwrap().r_count, 0);
    }

    #[test]
    fn input_errors() {
        assert!(matches!(
            ebh_select(1, &evs(&[1.0, 2.0, 3.0]), 2, 0.1),
            Err(DetectorError::CapViolation { count: 3, cap: 2 })
        ));
        assert!(matches!(
            ebh_select(1, &evs(&[1.0, f64::INFINITY]), 2, 0.1),
            Err(DetectorError::NonFiniteInput { .. })
        ));
        assert!(matches!(
            ebh_select(1, &evs(&[-1.0]), 2, 0.1),
            Err(DetectorError::NonFiniteInput { .. })
        ));
        assert!(ebh_select(1, &evs(&[1.0]), 2, 1.0).is_err());
    }

    #[test]
    fn ranking_breaks_ties_by_id() {
        let report = ebh_select(1, &evs(&[1.0, 3.0, 1.0, 3.0]), 4, 0.1).unwrap();
        let ids: Vec<u32> = report.evalues.iter().map(|(k, _)| k.get()).collect();
        assert_eq!(ids, vec![2, 4, 1, 3]);
    }

    fn scenario() -> impl Strategy<Value = (Vec<f64>, usize, f64)> {
        (0usize..=12).prop_flat_map(|n| {
            (
                prop::collection::vec(
                    prop_oneof![0.0f64..5.0, 0.0f64..200.0, Just(0.0), Just(20.0)],
                    n,
                ),
                n.max(1)..=24,
                prop_oneof![Just(0.1), Just(0.05), 0.01f64..0.99],
            )
        })
    }

    proptest! {
        #[test]
        fn threshold_matches_rank_rule((values, cap, alpha) in scenario()) {
            let report = ebh_select(1, &evs(&values), cap, alpha).unwrap();
            let r = rank_rule(&values, cap, alpha);
            prop_assert_eq!(report.r_count, r);
            let th = ebh_threshold(&evs(&values), cap, alpha).unwrap();
            prop_assert_eq!(th.q_count, r.max(1));
            prop_assert!((th.u * th.q_count as f64 - cap as f64 / alpha).abs() <= 1e-9 * cap as f64 / alpha);
            if r > 0 {
                let u = report.threshold.unwrap();
                for (k, e) in &report.evalues {
                    prop_assert_eq!(report.selected.contains(k), *e >= u);
                }
            }
        }

        #[test]
        fn raising_one_value_never_shrinks_selection(
            (values, cap, alpha) in scenario(),
            idx in any::<prop::sample::Index>(),
            bump in 0.0f64..100.0,
        ) {
            prop_assume!(!values.is_empty());
            let before = ebh_select(1, &evs(&values), cap, alpha).unwrap().selected;
            let mut raised = values.clone();
            let i = idx.index(raised.len());
            raised[i] += bump;
            let after = ebh_select(1, &evs(&raised), cap, alpha).unwrap().selected;
            prop_assert!(before.is_subset(&after));
        }

        #[test]
        fn scaling_up_never_shrinks_selection((values, cap, alpha) in scenario(), c in 1.0f64..10.0) {
            let before = ebh_select(1, &evs(&values), cap, alpha).unwrap().selected;
            let scaled: Vec<f64> = values.iter().map(|v| v * c).collect();
            let after = ebh_select(1, &evs(&scaled), cap, alpha).unwrap().selected;
            prop_assert!(before.is_subset(&after));
        }
    }
}
