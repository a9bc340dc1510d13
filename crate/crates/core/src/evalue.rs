//! Shiryaev-Roberts e-values for a reconfigurable network.
//!
//! The running statistic follows
//!
//! ```text
//! S_{k,t} = L_{k,t} (1 + S_{k,t-1})   if k in A_t
//! S_{k,t} = S_{k,t-1}                 otherwise,   S_{k,0} = 0
//! ```
//!
//! and the e-value is `E_{k,t} = S_{k,t} / t` on the global clock. While a
//! sensor is inactive its statistic is frozen, so `E[S_{k,t}]` under the null
//! equals the expected number of ticks the sensor was active.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{ActiveSetLedger, SensorId, SensorSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EValueError {
    #[error("no likelihood ratio supplied for active sensor {0}")]
    MissingLr(SensorId),
    #[error("likelihood ratio {value} for sensor {sensor} is negative or not finite")]
    NegativeLr { sensor: SensorId, value: f64 },
    #[error("expected tick {expected}, got {got}")]
    NonContiguousTime { expected: u32, got: u32 },
    #[error("no likelihood ratio recorded for sensor {sensor} at active time {t}")]
    MissingHistory { sensor: SensorId, t: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorState {
    pub sensor: SensorId,
    pub s_value: f64,
    pub last_updated: u32,
    pub activation_time: u32,
}

/// E-values of the active sensors at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EValueVector {
    pub t: u32,
    pub entries: BTreeMap<SensorId, f64>,
}

/// Per-sensor statistics for one run. Deactivated sensors keep their state so
/// a later re-activation continues from the frozen value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EValueEngine {
    t: u32,
    states: BTreeMap<SensorId, SensorState>,
}

impl EValueEngine {
    pub fn new() -> Self {
        Self::default()
    }

    /// Time of the last completed tick (0 before the first).
    pub fn time(&self) -> u32 {
        self.t
    }

    /// Current `S_k`, 0 for sensors never seen.
    pub fn s_value(&self, k: SensorId) -> f64 {
        self.states.get(&k).map_or(0.0, |s| s.s_value)
    }

    pub fn state(&self, k: SensorId) -> Option<&SensorState> {
        self.states.get(&k)
    }

    pub fn states(&self) -> impl Iterator<Item = &SensorState> {
        self.states.values()
    }

    /// Scale `c = (1 + S_{k,t-1}) / t` linking the next e-value to the next
    /// likelihood ratio: `E_{k,t} = c L_{k,t}` when `k` is active at `t`.
    pub fn next_scale(&self, k: SensorId) -> f64 {
        (1.0 + self.s_value(k)) / (self.t + 1) as f64
    }

    /// Advances the clock to `t`. All inputs are validated before any state
    /// changes.
    pub fn tick(
        &mut self,
        t: u32,
        active: &SensorSet,
        lr: &BTreeMap<SensorId, f64>,
    ) -> Result<EValueVector, EValueError> {
        let expected = self.t + 1;
        if t != expected {
            return Err(EValueError::NonContiguousTime { expected, got: t });
        }
        for &k in active {
            let value = *lr.get(&k).ok_or(EValueError::MissingLr(k))?;
            if !(value >= 0.0 && value.is_finite()) {
                return Err(EValueError::NegativeLr { sensor: k, value });
            }
        }

        self.t = t;
        let mut entries = BTreeMap::new();
        for &k in active {
            let state = self.states.entry(k).or_insert(SensorState {
                sensor: k,
                s_value: 0.0,
                last_updated: t - 1,
                activation_time: t,
            });
            state.s_value = lr[&k] * (1.0 + state.s_value);
            entries.insert(k, state.s_value / t as f64);
        }
        for state in self.states.values_mut() {
            state.last_updated = t;
        }
        Ok(EValueVector { t, entries })
    }
}

/// Evaluates `E_{k,t}` from scratch as a sum over the sensor's active start
/// times `s` of the product of its likelihood ratios over `[s, t] ∩ C_{k,t}`.
///
/// Used as an independent check on [`EValueEngine::tick`].
pub fn evalue_direct(
    lrs: &BTreeMap<(SensorId, u32), f64>,
    ledger: &ActiveSetLedger,
    k: SensorId,
    t: u32,
) -> Result<f64, EValueError> {
    let times = ledger.active_times(k, t);
    let mut total = 0.0;
    for (start_pos, _) in times.iter().enumerate() {
        let mut prod = 1.0;
        for &i in &times[start_pos..] {
            let l = lrs
                .get(&(k, i))
                .ok_or(EValueError::MissingHistory { sensor: k, t: i })?;
            prod *= l;
        }
        total += prod;
    }
    Ok(total / t as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::sensor_range;
    use proptest::prelude::*;

    fn sid(k: u32) -> SensorId {
        SensorId::new(k).unwrap()
    }

    fn lr_map(pairs: &[(u32, f64)]) -> BTreeMap<SensorId, f64> {
        pairs.iter().map(|&(k, v)| (sid(k), v)).collect()
    }

    #[test]
    fn recursion_on_three_ticks() {
        let mut engine = EValueEngine::new();
        let active = sensor_range(1, 1);
        let mut last = None;
        for (t, l) in [(1, 2.0), (2, 0.5), (3, 3.0)] {
            last = Some(engine.tick(t, &active, &lr_map(&[(1, l)])).unwrap());
            let expected_s = [2.0, 1.5, 7.5][t as usize - 1];
            assert_eq!(engine.s_value(sid(1)), expected_s);
        }
        assert_eq!(last.unwrap().entries[&sid(1)], 2.5);
    }

    #[test]
    fn inactive_sensor_is_frozen_and_not_emitted() {
        let mut engine = EValueEngine::new();
        engine.tick(1, &sensor_range(1, 1), &lr_map(&[(1, 2.0)])).unwrap();
        let e = engine.tick(2, &SensorSet::new(), &BTreeMap::new()).unwrap();
        assert!(e.entries.is_empty());
        assert_eq!(engine.s_value(sid(1)), 2.0);
        assert_eq!(engine.state(sid(1)).unwrap().last_updated, 2);
    }

    #[test]
    fn unit_lrs_are_a_fixed_point() {
        let mut engine = EValueEngine::new();
        let active = sensor_range(1, 3);
        let ones = lr_map(&[(1, 1.0), (2, 1.0), (3, 1.0)]);
        for t in 1..=40 {
            let e = engine.tick(t, &active, &ones).unwrap();
            assert!(e.entries.values().all(|&v| v == 1.0));
            assert_eq!(engine.s_value(sid(2)), t as f64);
        }
    }

    #[test]
    fn tick_errors_leave_state_untouched() {
        let mut engine = EValueEngine::new();
        let active = sensor_range(1, 2);
        assert_eq!(
            engine.tick(1, &active, &lr_map(&[(1, 1.0)])),
            Err(EValueError::MissingLr(sid(2)))
        );
        assert!(matches!(
            engine.tick(1, &active, &lr_map(&[(1, 1.0), (2, -0.1)])),
            Err(EValueError::NegativeLr { .. })
        ));
        assert_eq!(
            engine.tick(2, &active, &lr_map(&[(1, 1.0), (2, 1.0)])),
            Err(EValueError::NonContiguousTime { expected: 1, got: 2 })
        );
        assert_eq!(engine, EValueEngine::new());
        // zero is a legal ratio
        engine.tick(1, &active, &lr_map(&[(1, 0.0), (2, 1.0)])).unwrap();
        assert_eq!(engine.s_value(sid(1)), 0.0);
    }

    #[test]
    fn late_activation_uses_global_clock() {
        let mut engine = EValueEngine::new();
        engine.tick(1, &sensor_range(1, 1), &lr_map(&[(1, 1.0)])).unwrap();
        engine.tick(2, &sensor_range(1, 1), &lr_map(&[(1, 1.0)])).unwrap();
        assert_eq!(engine.next_scale(sid(5)), 1.0 / 3.0);
        let e = engine.tick(3, &sensor_range(5, 5), &lr_map(&[(5, 6.0)])).unwrap();
        assert_eq!(e.entries[&sid(5)], 2.0);
        assert_eq!(engine.state(sid(5)).unwrap().activation_time, 3);
    }

    #[test]
    fn direct_formula_examples() {
        let mut ledger = ActiveSetLedger::new(1);
        let mut lrs = BTreeMap::new();
        for (t, l) in [(1, 2.0), (2, 0.5), (3, 3.0)] {
            ledger.append_active_set(t, sensor_range(1, 1)).unwrap();
            lrs.insert((sid(1), t), l);
        }
        assert_eq!(evalue_direct(&lrs, &ledger, sid(1), 3).unwrap(), 2.5);
        assert_eq!(evalue_direct(&lrs, &ledger, sid(1), 1).unwrap(), 2.0);
        assert_eq!(evalue_direct(&lrs, &ledger, sid(7), 3).unwrap(), 0.0);
        lrs.remove(&(sid(1), 2));
        assert!(matches!(
            evalue_direct(&lrs, &ledger, sid(1), 3),
            Err(EValueError::MissingHistory { t: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn nonnegative_for_any_valid_input(
            lrs in prop::collection::vec(prop::collection::vec(0.0f64..20.0, 3), 1..30),
            mask in prop::collection::vec(prop::collection::vec(any::<bool>(), 3), 30),
        ) {
            let mut engine = EValueEngine::new();
            for (i, row) in lrs.iter().enumerate() {
                let active: SensorSet = (0..3)
                    .filter(|&j| mask[i][j])
                    .map(|j| sid(j as u32 + 1))
                    .collect();
                let map = active.iter().map(|&k| (k, row[k.index()])).collect();
                let e = engine.tick(i as u32 + 1, &active, &map).unwrap();
                prop_assert!(e.entries.values().all(|v| *v >= 0.0));
                prop_assert_eq!(e.entries.keys().copied().collect::<SensorSet>(), active);
                prop_assert!(engine.states().all(|s| s.s_value >= 0.0));
            }
        }
    }
}
