//! Active-set policies and ground-truth change points.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::config::ChangeSpec;
use crate::types::{ChangePoint, SensorId, SensorSet};

/// How the controller picks `A_{t+1}` from `A_t` and `D_{t+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    /// `A_t` never changes.
    FixedAll,
    /// `A_{t+1} = A_t \ D_{t+1}`.
    DeactivateOnly,
    /// Detected sensors are dropped and replaced by never-used pool members
    /// drawn uniformly without replacement. Once the pool runs dry the active
    /// set shrinks.
    ReplaceFromPool,
    /// Every pool member is active independently with probability `q` at
    /// each tick, regardless of data or detections.
    Bernoulli { q: f64 },
}

/// Pool members that have never been active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolState {
    pool_size: usize,
    unused: Vec<SensorId>,
}

impl PoolState {
    /// A pool of `pool_size` sensors whose first `initial_active` members
    /// start out active.
    pub fn new(pool_size: usize, initial_active: usize) -> Self {
        Self {
            pool_size,
            unused: (initial_active..pool_size).map(SensorId::from_index).collect(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.unused.len()
    }

    pub fn pool_size(&self) -> usize {
        self.pool_size
    }

    fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<SensorId> {
        if self.unused.is_empty() {
            return None;
        }
        let i = rng.random_range(0..self.unused.len());
        Some(self.unused.swap_remove(i))
    }
}

/// Initial active set `A_1`.
pub fn initial_active_set<R: Rng + ?Sized>(
    policy: PolicySpec,
    pool: &PoolState,
    initial_active: usize,
    rng: &mut R,
) -> SensorSet {
    match policy {
        PolicySpec::Bernoulli { q } => bernoulli_draw(q, pool.pool_size, rng),
        _ => (0..initial_active).map(SensorId::from_index).collect(),
    }
}

fn bernoulli_draw<R: Rng + ?Sized>(q: f64, pool_size: usize, rng: &mut R) -> SensorSet {
    let coin = Bernoulli::new(q).expect("q validated in config");
    (0..pool_size)
        .filter(|_| coin.sample(rng))
        .map(SensorId::from_index)
        .collect()
}

/// Next active set. `detected` must be a subset of `prev_active`.
pub fn step_policy<R: Rng + ?Sized>(
    policy: PolicySpec,
    prev_active: &SensorSet,
    detected: &SensorSet,
    pool: &mut PoolState,
    rng: &mut R,
) -> SensorSet {
    debug_assert!(detected.is_subset(prev_active));
    match policy {
        PolicySpec::FixedAll => prev_active.clone(),
        PolicySpec::DeactivateOnly => prev_active.difference(detected).copied().collect(),
        PolicySpec::ReplaceFromPool => {
            let mut next: SensorSet = prev_active.difference(detected).copied().collect();
            for _ in 0..detected.len() {
                match pool.draw(rng) {
                    Some(k) => {
                        next.insert(k);
                    }
                    None => break,
                }
            }
            next
        }
        PolicySpec::Bernoulli { q } => bernoulli_draw(q, pool.pool_size, rng),
    }
}

/// `n` independent change points.
pub fn sample_change_points<R: Rng + ?Sized>(n: usize, spec: ChangeSpec, rng: &mut R) -> Vec<ChangePoint> {
    match spec {
        ChangeSpec::Never => vec![ChangePoint::Infinite; n],
        ChangeSpec::Geometric { p } => {
            let geo = Geometric::new(p).expect("p validated in config");
            (0..n).map(|_| ChangePoint::from_count(geo.sample(rng))).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::sensor_range;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn degenerate_geometric() {
        let taus = sample_change_points(50, ChangeSpec::Geometric { p: 1.0 }, &mut rng(1));
        assert!(taus.iter().all(|&t| t == ChangePoint::Zero));
    }

    #[test]
    fn geometric_mean_matches_law() {
        let n = 100_000;
        let p = 0.1;
        let taus = sample_change_points(n, ChangeSpec::Geometric { p }, &mut rng(2));
        let values: Vec<f64> = taus
            .iter()
            .map(|t| match t {
                ChangePoint::Zero => 0.0,
                ChangePoint::Finite(v) => *v as f64,
                ChangePoint::Infinite => panic!("geometric draw is finite"),
            })
            .collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        // Var = (1-p)/p^2
        let se = ((1.0 - p) / (p * p) / n as f64).sqrt();
        assert!((mean - 9.0).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn change_points_are_reproducible() {
        let a = sample_change_points(100, ChangeSpec::Geometric { p: 0.1 }, &mut rng(5));
        let b = sample_change_points(100, ChangeSpec::Geometric { p: 0.1 }, &mut rng(5));
        assert_eq!(a, b);
    }

    #[test]
    fn fixed_all_ignores_detections() {
        let prev = sensor_range(1, 5);
        let mut pool = PoolState::new(10, 5);
        let next = step_policy(PolicySpec::FixedAll, &prev, &sensor_range(2, 3), &mut pool, &mut rng(0));
        assert_eq!(next, prev);
    }

    #[test]
    fn replacement_keeps_size_with_fresh_members() {
        let prev = sensor_range(1, 100);
        let detected = sensor_range(5, 5);
        let mut pool = PoolState::new(1000, 100);
        let next = step_policy(PolicySpec::ReplaceFromPool, &prev, &detected, &mut pool, &mut rng(3));
        assert_eq!(next.len(), 100);
        let kept: SensorSet = prev.difference(&detected).copied().collect();
        assert!(kept.is_subset(&next));
        let fresh: Vec<_> = next.difference(&kept).collect();
        assert_eq!(fresh.len(), 1);
        assert!((101..=1000).contains(&fresh[0].get()));
        assert_eq!(pool.remaining(), 899);
    }

    #[test]
    fn replacement_never_reuses_and_shrinks_when_dry() {
        let mut pool = PoolState::new(6, 3);
        let mut active = sensor_range(1, 3);
        let mut seen = active.clone();
        let mut r = rng(4);
        for _ in 0..4 {
            let detected = active.clone();
            active = step_policy(PolicySpec::ReplaceFromPool, &active, &detected, &mut pool, &mut r);
            assert!(active.is_disjoint(&detected));
            assert!(active.iter().all(|k| !seen.contains(k)) || active.is_empty());
            seen.extend(active.iter().copied());
        }
        assert!(active.is_empty());
        assert_eq!(seen.len(), 6);
    }

    #[test]
    fn deactivate_only_can_empty_the_network() {
        let prev = sensor_range(1, 3);
        let mut pool = PoolState::new(3, 3);
        let next = step_policy(PolicySpec::DeactivateOnly, &prev, &prev, &mut pool, &mut rng(0));
        assert!(next.is_empty());
    }
}
