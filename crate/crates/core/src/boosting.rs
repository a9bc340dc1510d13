//! Boosting factors for e-values.
//!
//! Given the past and the current active set, the next e-value of an active
//! sensor is `E = c L` where `c = (1 + S_{k,t-1}) / t` is known and `L` is the
//! one-step likelihood ratio with a known null law. A factor `b >= 1` may
//! multiply `E` as long as it stays in
//!
//! ```text
//! B1 = { b : E[b E 1(alpha b E >= 1)] <= E[E] }                   (any dependence)
//! B2 = { b : max_{y = 1..K} y P(b E >= y / alpha) <= alpha E[E] }  (TIPD)
//! ```
//!
//! Both conditions are monotone in `b`, so the largest feasible factor is
//! found by bisection that keeps its lower endpoint feasible.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalue::EValueVector;
use crate::models::NullLrLaw;
use crate::special::{std_normal_cdf, std_normal_sf};
use crate::types::SensorId;

/// Default bisection width on `b`.
pub const DEFAULT_TOL: f64 = 1e-6;

/// Upper limit for automatic ceiling expansion.
const MAX_AUTO_CEILING: f64 = 1e15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoostMethod {
    /// General dependence, set `B1`.
    Gd,
    /// Time-independent positive dependence, set `B2`.
    Tipd,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoostError {
    #[error("invalid boost query: {0}")]
    InvalidQuery(String),
    #[error("search ceiling {ceiling} is itself feasible; raise b_max")]
    CeilingReached { ceiling: f64 },
    #[error("no boost query for active sensor {0}")]
    MissingQuery(SensorId),
}

/// One sensor's boosting problem at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostQuery {
    pub law: NullLrLaw,
    /// `c` in `E = c L`.
    pub scale: f64,
    pub alpha: f64,
    pub cap: usize,
    /// Conditional null mean of `E`, i.e. `c E[L]`.
    pub mean_bound: f64,
}

impl BoostQuery {
    pub fn new(law: NullLrLaw, scale: f64, alpha: f64, cap: usize) -> Result<Self, BoostError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(BoostError::InvalidQuery(format!("scale must be positive, got {scale}")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(BoostError::InvalidQuery(format!("alpha must be in (0,1), got {alpha}")));
        }
        if cap == 0 {
            return Err(BoostError::InvalidQuery("cap must be positive".into()));
        }
        let mean_bound = scale * law.mean();
        Ok(Self {
            law,
            scale,
            alpha,
            cap,
            mean_bound,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostResult {
    pub factor: f64,
    pub method: BoostMethod,
    pub certified: bool,
}

/// `E[b E 1(alpha b E >= 1)] / c`.
fn b1_lhs(q: &BoostQuery, b: f64) -> f64 {
    let bc = b * q.scale;
    match &q.law {
        NullLrLaw::LogNormal { m, v } => {
            // Under the size-biased law ln L ~ N(m + v, v).
            let ln_theta = -(q.alpha * bc).ln();
            b * std_normal_cdf((m + v - ln_theta) / v.sqrt())
        }
        NullLrLaw::PointMass { value } => {
            if q.alpha * bc * value >= 1.0 {
                b * value
            } else {
                0.0
            }
        }
        NullLrLaw::Empirical { samples } => {
            let n = samples.len() as f64;
            samples
                .iter()
                .filter(|&&l| q.alpha * bc * l >= 1.0)
                .map(|&l| b * l)
                .sum::<f64>()
                / n
        }
    }
}

/// `B1` membership. `slack` is an absolute allowance on the inequality
/// normalized by `c`.
pub fn in_b1(q: &BoostQuery, b: f64, slack: f64) -> bool {
    if b < 1.0 {
        return false;
    }
    match &q.law {
        // Paired against the in-sample mean so that b = 1 always passes.
        NullLrLaw::Empirical { samples } => {
            let bc = b * q.scale;
            let diff: f64 = samples
                .iter()
                .map(|&l| {
                    let boosted = if q.alpha * bc * l >= 1.0 { b * l } else { 0.0 };
                    boosted - l
                })
                .sum::<f64>()
                / samples.len() as f64;
            diff <= slack
        }
        law => b1_lhs(q, b) <= law.mean() + slack,
    }
}

/// `P(b E >= x)`.
fn tail(q: &BoostQuery, b: f64, x: f64) -> f64 {
    let bc = b * q.scale;
    match &q.law {
        NullLrLaw::LogNormal { m, v } => std_normal_sf(((x / bc).ln() - m) / v.sqrt()),
        NullLrLaw::PointMass { value } => {
            if bc * value >= x {
                1.0
            } else {
                0.0
            }
        }
        NullLrLaw::Empirical { samples } => {
            samples.iter().filter(|&&l| bc * l >= x).count() as f64 / samples.len() as f64
        }
    }
}

fn b2_term(q: &BoostQuery, b: f64, y: usize) -> f64 {
    y as f64 * tail(q, b, y as f64 / q.alpha)
}

/// `max_{y = 1..K} y P(b E >= y / alpha)` by direct enumeration.
pub fn b2_lhs_enumerated(q: &BoostQuery, b: f64) -> f64 {
    (1..=q.cap).map(|y| b2_term(q, b, y)).fold(0.0, f64::max)
}

/// Same maximum, exploiting the structure of each law.
pub fn b2_lhs(q: &BoostQuery, b: f64) -> f64 {
    match &q.law {
        // y * sf((ln y - mu) / sigma) is log-concave in ln y, hence unimodal
        // over the integers: search for the first y with g(y) >= g(y + 1).
        NullLrLaw::LogNormal { .. } => {
            let (mut lo, mut hi) = (1usize, q.cap);
            while lo < hi {
                let mid = lo + (hi - lo) / 2;
                if b2_term(q, b, mid) >= b2_term(q, b, mid + 1) {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            b2_term(q, b, lo)
        }
        NullLrLaw::PointMass { value } => {
            // y contributes y exactly when y <= alpha b c value.
            let reach = q.alpha * b * q.scale * value;
            let top = (q.cap as f64).min(reach.floor());
            let mut y = top.max(0.0) as usize;
            // guard the floor against rounding at the boundary
            while y >= 1 && b2_term(q, b, y) == 0.0 {
                y -= 1;
            }
            if y + 1 <= q.cap && b2_term(q, b, y + 1) > 0.0 {
                y += 1;
            }
            y as f64
        }
        NullLrLaw::Empirical { samples } => {
            let bc = b * q.scale;
            let mut scaled: Vec<f64> = samples.iter().map(|&l| bc * l).collect();
            scaled.sort_by(|a, b| a.total_cmp(b));
            let n = scaled.len() as f64;
            (1..=q.cap)
                .map(|y| {
                    let x = y as f64 / q.alpha;
                    let below = scaled.partition_point(|&e| e < x);
                    y as f64 * (scaled.len() - below) as f64 / n
                })
                .fold(0.0, f64::max)
        }
    }
}

/// `B2` membership. `slack` is an absolute allowance on the inequality
/// normalized by `c`.
pub fn in_b2(q: &BoostQuery, b: f64, slack: f64) -> bool {
    if b < 1.0 {
        return false;
    }
    b2_lhs(q, b) <= q.alpha * q.scale * q.law.mean() + slack * q.scale
}

/// `B2` holds for every `b >= 1` once `alpha c E[L] >= K`, since its left
/// side never reaches `K`. `B1` is always bounded.
pub fn tipd_unbounded(q: &BoostQuery) -> bool {
    q.cap as f64 <= q.alpha * q.scale * q.law.mean()
}

fn unbounded_tipd() -> BoostResult {
    BoostResult {
        factor: f64::INFINITY,
        method: BoostMethod::Tipd,
        certified: true,
    }
}

fn member(q: &BoostQuery, method: BoostMethod, b: f64) -> bool {
    match method {
        BoostMethod::Gd => in_b1(q, b, 0.0),
        BoostMethod::Tipd => in_b2(q, b, 0.0),
    }
}

/// Largest `b` in `[lo, b_max]` with `member(b)`, assuming `member(lo)`.
fn bisect(q: &BoostQuery, method: BoostMethod, lo: f64, b_max: f64, tol: f64) -> Result<f64, BoostError> {
    if member(q, method, b_max) {
        return Err(BoostError::CeilingReached { ceiling: b_max });
    }
    let (mut lo, mut hi) = (lo, b_max);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if member(q, method, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

fn check_search(b_max: f64, tol: f64) -> Result<(), BoostError> {
    if !(b_max >= 1.0 && b_max.is_finite()) {
        return Err(BoostError::InvalidQuery(format!("b_max must be >= 1, got {b_max}")));
    }
    if !(tol > 0.0) {
        return Err(BoostError::InvalidQuery(format!("tol must be positive, got {tol}")));
    }
    Ok(())
}

/// Boosting factors for both methods. The TIPD search starts from the GD
/// factor, which lies in `B1 ⊆ B2`, so `b_GD <= b_TIPD` holds exactly.
pub fn boost_pair(q: &BoostQuery, b_max: f64, tol: f64) -> Result<(BoostResult, BoostResult), BoostError> {
    check_search(b_max, tol)?;
    let gd = bisect(q, BoostMethod::Gd, 1.0, b_max, tol)?;
    let gd = BoostResult {
        factor: gd,
        method: BoostMethod::Gd,
        certified: in_b1(q, gd, 0.0),
    };
    if tipd_unbounded(q) {
        return Ok((gd, unbounded_tipd()));
    }
    let tipd = bisect(q, BoostMethod::Tipd, gd.factor, b_max, tol)?;
    Ok((
        gd,
        BoostResult {
            factor: tipd,
            method: BoostMethod::Tipd,
            certified: in_b2(q, tipd, 0.0),
        },
    ))
}

/// Largest certified factor in `[1, b_max]` to within `tol`. An unbounded
/// TIPD problem yields an infinite factor.
pub fn boost_factor(
    q: &BoostQuery,
    method: BoostMethod,
    b_max: f64,
    tol: f64,
) -> Result<BoostResult, BoostError> {
    match method {
        BoostMethod::Gd => {
            check_search(b_max, tol)?;
            let factor = bisect(q, method, 1.0, b_max, tol)?;
            Ok(BoostResult {
                factor,
                method,
                certified: in_b1(q, factor, 0.0),
            })
        }
        BoostMethod::Tipd => boost_pair(q, b_max, tol).map(|(_, tipd)| tipd),
    }
}

/// Default ceiling `10 / alpha`.
pub fn default_ceiling(alpha: f64) -> f64 {
    10.0 / alpha
}

/// [`boost_factor`] starting from the default ceiling and doubling it until
/// the frontier is bracketed.
pub fn boost_factor_auto(q: &BoostQuery, method: BoostMethod, tol: f64) -> Result<BoostResult, BoostError> {
    let mut ceiling = default_ceiling(q.alpha);
    loop {
        match boost_factor(q, method, ceiling, tol) {
            Err(BoostError::CeilingReached { .. }) if ceiling < MAX_AUTO_CEILING => ceiling *= 2.0,
            other => return other,
        }
    }
}

/// `E^b_k = b_k E_k` for every active sensor. `b_max = None` expands the
/// ceiling automatically. With an infinite factor any `b` is admissible, so
/// the statistic becomes `max(E, K / alpha)`, enough for selection.
pub fn boosted_evalues(
    evalues: &EValueVector,
    queries: &BTreeMap<SensorId, BoostQuery>,
    method: BoostMethod,
    b_max: Option<f64>,
    tol: f64,
) -> Result<BTreeMap<SensorId, f64>, BoostError> {
    evalues
        .entries
        .iter()
        .map(|(&k, &e)| {
            let q = queries.get(&k).ok_or(BoostError::MissingQuery(k))?;
            let res = match b_max {
                Some(ceiling) => boost_factor(q, method, ceiling, tol)?,
                None => boost_factor_auto(q, method, tol)?,
            };
            let boosted = if res.factor.is_infinite() {
                if e > 0.0 {
                    e.max(q.cap as f64 / q.alpha)
                } else {
                    e
                }
            } else {
                res.factor * e
            };
            Ok((k, boosted))
        })
        .collect()
}
