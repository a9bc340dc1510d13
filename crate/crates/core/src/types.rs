//! Shared vocabulary: sensor ids, change points and the active-set ledger.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 1-based sensor index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(into = "u32")]
pub struct SensorId(u32);

// Accepts integers and integer strings: JSON map keys arrive as strings.
impl<'de> Deserialize<'de> for SensorId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct IdVisitor;

        impl serde::de::Visitor<'_> for IdVisitor {
            type Value = SensorId;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a positive sensor id")
            }

            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<SensorId, E> {
                let v = u32::try_from(v).map_err(E::custom)?;
                SensorId::new(v).map_err(E::custom)
            }

            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<SensorId, E> {
                let v = u64::try_from(v).map_err(E::custom)?;
                self.visit_u64(v)
            }

            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<SensorId, E> {
                let v: u64 = v.trim().parse().map_err(E::custom)?;
                self.visit_u64(v)
            }
        }

        d.deserialize_any(IdVisitor)
    }
}

impl SensorId {
    pub fn new(id: u32) -> Result<Self, LedgerError> {
        if id == 0 {
            return Err(LedgerError::ZeroSensorId);
        }
        Ok(Self(id))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// Zero-based position, convenient for indexing pool-sized tables.
    pub fn index(self) -> usize {
        (self.0 - 1) as usize
    }

    pub(crate) fn from_index(idx: usize) -> Self {
        Self(idx as u32 + 1)
    }
}

impl TryFrom<u32> for SensorId {
    type Error = LedgerError;

    fn try_from(value: u32) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<SensorId> for u32 {
    fn from(id: SensorId) -> u32 {
        id.0
    }
}

impl fmt::Display for SensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub type SensorSet = BTreeSet<SensorId>;

/// Builds the set `{lo, ..., hi}` of sensor ids.
pub fn sensor_range(lo: u32, hi: u32) -> SensorSet {
    (lo.max(1)..=hi).map(SensorId).collect()
}

/// Last pre-change time of a sensor. The sensor is post-change at every
/// `t > tau`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChangePoint {
    Zero,
    Finite(u32),
    Infinite,
}

impl ChangePoint {
    /// Maps a nonnegative draw to a change point (0 becomes `Zero`).
    pub fn from_count(t: u64) -> Self {
        match t {
            0 => ChangePoint::Zero,
            t if t >= u32::MAX as u64 => ChangePoint::Infinite,
            t => ChangePoint::Finite(t as u32),
        }
    }

    /// True when the sensor is in its post-change regime at time `t`.
    pub fn is_post_change_at(self, t: u32) -> bool {
        match self {
            ChangePoint::Zero => true,
            ChangePoint::Finite(tau) => t > tau,
            ChangePoint::Infinite => false,
        }
    }

    /// `tau >= t`, i.e. the null hypothesis holds at time `t`.
    pub fn is_pre_change_at(self, t: u32) -> bool {
        !self.is_post_change_at(t)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("sensor ids are 1-based; got 0")]
    ZeroSensorId,
    #[error("active set of size {size} exceeds cap {cap} at t={t}")]
    CapExceeded { t: u32, size: usize, cap: usize },
    #[error("expected time {expected}, got {got}")]
    NonContiguousTime { expected: u32, got: u32 },
    #[error("detection at t={t} includes sensor {sensor} which was not active at t-1")]
    NotPreviouslyActive { t: u32, sensor: SensorId },
    #[error("no active set recorded for t={0}")]
    MissingActiveSet(u32),
    #[error("detection for t={0} already recorded")]
    DuplicateDetection(u32),
}

/// Full history of active sets `(A_s)` and detection sets `(D_s)`.
///
/// Time is a dense 1-based clock; the active set for `t` lives at
/// `history[t - 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSetLedger {
    cap: usize,
    history: Vec<SensorSet>,
    detections: Vec<(u32, SensorSet)>,
}

impl ActiveSetLedger {
    pub fn new(cap: usize) -> Self {
        Self {
            cap,
            history: Vec::new(),
            detections: Vec::new(),
        }
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    /// Last recorded time, 0 when empty.
    pub fn last_time(&self) -> u32 {
        self.history.len() as u32
    }

    pub fn append_active_set(&mut self, t: u32, active: SensorSet) -> Result<(), LedgerError> {
        let expected = self.last_time() + 1;
        if t != expected {
            return Err(LedgerError::NonContiguousTime { expected, got: t });
        }
        if active.len() > self.cap {
            return Err(LedgerError::CapExceeded {
                t,
                size: active.len(),
                cap: self.cap,
            });
        }
        self.history.push(active);
        Ok(())
    }

    /// Records `D_t`, which must be a subset of `A_{t-1}`.
    pub fn record_detection(&mut self, t: u32, detected: SensorSet) -> Result<(), LedgerError> {
        if t < 2 {
            return Err(LedgerError::MissingActiveSet(t.saturating_sub(1)));
        }
        let prev = self
            .active_at(t - 1)
            .ok_or(LedgerError::MissingActiveSet(t - 1))?;
        if let Some(&sensor) = detected.iter().find(|k| !prev.contains(k)) {
            return Err(LedgerError::NotPreviouslyActive { t, sensor });
        }
        if self.detections.iter().any(|(s, _)| *s == t) {
            return Err(LedgerError::DuplicateDetection(t));
        }
        self.detections.push((t, detected));
        Ok(())
    }

    pub fn active_at(&self, t: u32) -> Option<&SensorSet> {
        if t == 0 {
            return None;
        }
        self.history.get((t - 1) as usize)
    }

    pub fn detection_at(&self, t: u32) -> Option<&SensorSet> {
        self.detections
            .iter()
            .find(|(s, _)| *s == t)
            .map(|(_, d)| d)
    }

    pub fn history(&self) -> impl Iterator<Item = (u32, &SensorSet)> {
        self.history
            .iter()
            .enumerate()
            .map(|(i, a)| (i as u32 + 1, a))
    }

    pub fn detections(&self) -> impl Iterator<Item = (u32, &SensorSet)> {
        self.detections.iter().map(|(t, d)| (*t, d))
    }

    /// `C_{k,t}`: times `s <= t` at which `k` was active.
    pub fn active_times(&self, k: SensorId, t: u32) -> Vec<u32> {
        self.history()
            .take_while(|(s, _)| *s <= t)
            .filter(|(_, a)| a.contains(&k))
            .map(|(s, _)| s)
            .collect()
    }

    pub fn max_active_size(&self) -> usize {
        self.history.iter().map(BTreeSet::len).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(v: &[u32]) -> SensorSet {
        v.iter().map(|&i| SensorId::new(i).unwrap()).collect()
    }

    #[test]
    fn full_initial_set_fits_cap() {
        let mut ledger = ActiveSetLedger::new(100);
        ledger.append_active_set(1, sensor_range(1, 100)).unwrap();
        assert_eq!(ledger.active_at(1).unwrap().len(), 100);
    }

    #[test]
    fn repeated_time_is_rejected() {
        let mut ledger = ActiveSetLedger::new(4);
        ledger.append_active_set(1, ids(&[1])).unwrap();
        assert_eq!(
            ledger.append_active_set(1, ids(&[1])),
            Err(LedgerError::NonContiguousTime {
                expected: 2,
                got: 1
            })
        );
        assert!(matches!(
            ledger.append_active_set(3, ids(&[1])),
            Err(LedgerError::NonContiguousTime { .. })
        ));
    }

    #[test]
    fn cap_violation() {
        let mut ledger = ActiveSetLedger::new(2);
        assert!(matches!(
            ledger.append_active_set(1, ids(&[1, 2, 3])),
            Err(LedgerError::CapExceeded { size: 3, cap: 2, .. })
        ));
    }

    #[test]
    fn detections_must_come_from_previous_active_set() {
        let mut ledger = ActiveSetLedger::new(2);
        ledger.append_active_set(1, ids(&[1, 2])).unwrap();
        ledger.record_detection(2, ids(&[2])).unwrap();

        let mut other = ActiveSetLedger::new(2);
        other.append_active_set(1, ids(&[1, 2])).unwrap();
        assert!(matches!(
            other.record_detection(2, ids(&[3])),
            Err(LedgerError::NotPreviouslyActive { .. })
        ));
        other.record_detection(2, SensorSet::new()).unwrap();
        assert!(matches!(
            other.record_detection(4, SensorSet::new()),
            Err(LedgerError::MissingActiveSet(3))
        ));
    }

    #[test]
    fn zero_sensor_id_rejected() {
        assert_eq!(SensorId::new(0), Err(LedgerError::ZeroSensorId));
        assert!(serde_json::from_str::<SensorId>("0").is_err());
        assert_eq!(serde_json::from_str::<SensorId>("7").unwrap().get(), 7);
    }

    #[test]
    fn change_point_regimes() {
        assert!(ChangePoint::Zero.is_post_change_at(1));
        assert!(!ChangePoint::Finite(3).is_post_change_at(3));
        assert!(ChangePoint::Finite(3).is_post_change_at(4));
        assert!(ChangePoint::Infinite.is_pre_change_at(u32::MAX));
    }

    proptest! {
        #[test]
        fn ledger_roundtrips_active_times(
            cap in 1usize..6,
            sets in prop::collection::vec(prop::collection::btree_set(1u32..9, 0..8), 1..20),
        ) {
            let mut ledger = ActiveSetLedger::new(cap);
            let mut accepted: Vec<SensorSet> = Vec::new();
            for set in sets {
                let set = ids(&set.into_iter().collect::<Vec<_>>());
                let t = ledger.last_time() + 1;
                match ledger.append_active_set(t, set.clone()) {
                    Ok(()) => accepted.push(set),
                    Err(LedgerError::CapExceeded { .. }) => prop_assert!(set.len() > cap),
                    Err(e) => prop_assert!(false, "unexpected {e}"),
                }
            }
            prop_assert!(ledger.max_active_size() <= cap);
            let horizon = ledger.last_time();
            for k in 1..9u32 {
                let k = SensorId::new(k).unwrap();
                let expected: Vec<u32> = accepted
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| a.contains(&k))
                    .map(|(i, _)| i as u32 + 1)
                    .collect();
                prop_assert_eq!(ledger.active_times(k, horizon), expected.clone());
                // C_{k,t} grows with t
                for t in 1..=horizon {
                    let c = ledger.active_times(k, t);
                    prop_assert!(c.iter().all(|s| expected.contains(s)));
                    prop_assert!(c.len() <= ledger.active_times(k, horizon).len());
                }
            }
        }
    }
}
