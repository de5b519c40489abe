//! Renewal-reward rate bounds and the high/low capacity decision.
//!
//! A cycle runs from `S0` back to `S0`: `2n + 1` transit steps, then a dwell in
//! the good state (mean `1/p`, one noiseless bit per step) with probability
//! `1 - beta`, or in the bad state (mean `1/q`, no information) with
//! probability `beta`.
//!
//! * lower bound: `good_dwell / e_cycle`, achieved by relaying one message bit
//!   per good-resident step.
//! * upper bound: `(good_dwell + log2(6mn + 3)) / e_cycle`, crediting every pass
//!   with the full transit allowance. This is per-pass information accounting
//!   instantiated at finite size, not a finite-blocklength converse.
//!
//! All comparisons against the thresholds are exact; the logarithm enters as a
//! rational rounded up.

use num_bigint::BigInt;
use num_traits::{One, Zero};
use serde_json::{json, Value};
use thiserror::Error;

use crate::policy::{optimal_bad_probability, DecisionPolicy, PolicyError};
use crate::rational::{fraction_string, integer, log2_upper, ratio, to_f64, Prob};
use crate::reduction::{ChannelParams, ChannelSpec};

pub const GAP_SCHEMA: &str = "qbfchan/gap-decision/v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("rate analysis does not support the good-to-bad leak")]
    LeakUnsupported,
    #[error("beta must lie in [0, 1]")]
    BetaOutOfRange,
    #[error("thresholds must satisfy 0 <= low < high <= 1")]
    Thresholds,
    #[error(
        "indeterminate: lower {lower:.6} <= high threshold and upper {upper:.6} >= low threshold; \
         try --a-exp {} --b-exp {}",
        recommended.0, recommended.1
    )]
    Indeterminate { lower: f64, upper: f64, recommended: (u32, u32), bounds: Box<RateBounds> },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CycleStats {
    pub n: usize,
    pub m: usize,
    pub beta: Prob,
    pub p: Prob,
    pub q: Prob,
    /// Expected steps per `S0`-to-`S0` cycle.
    pub e_cycle: Prob,
    /// Expected good-resident steps per cycle.
    pub good_dwell: Prob,
}

impl CycleStats {
    /// Long-run fraction of steps spent in the good state.
    pub fn good_occupancy(&self) -> Prob {
        &self.good_dwell / &self.e_cycle
    }

    /// Long-run fraction of steps spent in the bad state.
    pub fn bad_occupancy(&self) -> Prob {
        &self.beta / &self.q / &self.e_cycle
    }
}

pub fn cycle_stats(n: usize, m: usize, beta: &Prob, params: &ChannelParams) -> Result<CycleStats, AnalysisError> {
    if params.leak_exp().is_some() {
        return Err(AnalysisError::LeakUnsupported);
    }
    if *beta < Prob::zero() || *beta > Prob::one() {
        return Err(AnalysisError::BetaOutOfRange);
    }
    let (p, q) = (params.p(), params.q());
    let good_dwell = (Prob::one() - beta) / &p;
    let e_cycle = integer(2 * n as u64 + 1) + &good_dwell + beta / &q;
    Ok(CycleStats { n, m, beta: beta.clone(), p, q, e_cycle, good_dwell })
}

pub fn rate_lower_bound(stats: &CycleStats) -> Prob {
    stats.good_occupancy()
}

/// `6mn + 3`, the transit alphabet size used in the upper bound.
pub fn transit_alphabet(n: usize, m: usize) -> u64 {
    6 * (n as u64) * (m as u64) + 3
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateBounds {
    pub lower: Prob,
    /// Uses `transit_bits_upper`, so it is a valid exact upper bound.
    pub upper: Prob,
    pub transit_bits: f64,
    /// `log2(6mn + 3)` rounded up to a dyadic rational.
    pub transit_bits_upper: Prob,
    pub stats: CycleStats,
}

/// Upper bound from stats computed at the optimal `beta`.
pub fn rate_upper_bound(stats: &CycleStats) -> (Prob, f64) {
    let alphabet = transit_alphabet(stats.n, stats.m);
    let upper = (&stats.good_dwell + log2_upper(alphabet)) / &stats.e_cycle;
    (upper, (alphabet as f64).log2())
}

pub fn rate_bounds(stats: CycleStats) -> RateBounds {
    let (upper, transit_bits) = rate_upper_bound(&stats);
    RateBounds {
        lower: rate_lower_bound(&stats),
        upper,
        transit_bits,
        transit_bits_upper: log2_upper(transit_alphabet(stats.n, stats.m)),
        stats,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GapThresholds {
    pub low: Prob,
    pub high: Prob,
}

impl Default for GapThresholds {
    fn default() -> Self {
        GapThresholds { low: ratio(1, 5), high: ratio(4, 5) }
    }
}

impl GapThresholds {
    pub fn new(low: Prob, high: Prob) -> Result<Self, AnalysisError> {
        if low < Prob::zero() || high > Prob::one() || low >= high {
            return Err(AnalysisError::Thresholds);
        }
        Ok(GapThresholds { low, high })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    HighCapacity,
    LowCapacity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapDecision {
    pub verdict: Verdict,
    pub bounds: RateBounds,
    pub beta_min: Prob,
    pub policy: DecisionPolicy,
    pub params: ChannelParams,
    pub thresholds: GapThresholds,
}

pub fn decide_gap(spec: &ChannelSpec, thresholds: &GapThresholds) -> Result<GapDecision, AnalysisError> {
    if spec.params().leak_exp().is_some() {
        return Err(AnalysisError::LeakUnsupported);
    }
    let (beta_min, policy) = optimal_bad_probability(spec)?;
    let stats = cycle_stats(spec.n(), spec.m(), &beta_min, spec.params())?;
    let bounds = rate_bounds(stats);
    let verdict = if bounds.lower > thresholds.high {
        Verdict::HighCapacity
    } else if bounds.upper < thresholds.low {
        Verdict::LowCapacity
    } else {
        return Err(AnalysisError::Indeterminate {
            lower: to_f64(&bounds.lower),
            upper: to_f64(&bounds.upper),
            recommended: recommended_exponents(spec.n(), spec.m()),
            bounds: Box::new(bounds),
        });
    };
    Ok(GapDecision { verdict, bounds, beta_min, policy, params: *spec.params(), thresholds: thresholds.clone() })
}

fn ceil_log2(v: &BigInt) -> u32 {
    if *v <= BigInt::one() {
        0
    } else {
        (v - BigInt::one()).bits() as u32
    }
}

/// Do `(a_exp, b_exp)` separate true from false formulas of this size at the
/// default thresholds? True formulas have `beta = 0`; false ones have
/// `beta >= 2^-n / m`, and both bounds decrease in `beta`.
pub fn exponents_separate(n: usize, m: usize, a_exp: u32, b_exp: u32) -> bool {
    let Ok(params) = ChannelParams::new(a_exp, b_exp, None) else { return false };
    let t = GapThresholds::default();
    let high = cycle_stats(n, m, &Prob::zero(), &params).map(|s| rate_lower_bound(&s) > t.high);
    let worst_false = ratio(1, m as i64) / integer(1u64 << n.min(62));
    let low = cycle_stats(n, m, &worst_false, &params).map(|s| rate_upper_bound(&s).0 < t.low);
    matches!((high, low), (Ok(true), Ok(true)))
}

/// Smallest exponents with one bit of margin over `2^a >= 20(2n+1)` and
/// `2^(b-a) >= 20 m 2^n`, re-checked against the exact bounds.
pub fn recommended_exponents(n: usize, m: usize) -> (u32, u32) {
    let n = n.clamp(1, 60);
    let m = m.max(1);
    let mut a = ceil_log2(&BigInt::from(20 * (2 * n as u64 + 1))) + 1;
    let mut gap = ceil_log2(&(BigInt::from(20 * m as u64) << n)) + 1;
    while !exponents_separate(n, m, a, a + gap) {
        a += 1;
        gap += 1;
    }
    (a, a + gap)
}

fn rational_json(r: &Prob) -> Value {
    json!({"fraction": fraction_string(r), "decimal": to_f64(r)})
}

impl GapDecision {
    pub fn to_json(&self) -> Value {
        let witness: Vec<Value> = self
            .policy
            .table()
            .map(|t| t.iter().map(|(h, d)| json!({"history": h, "decision": d.to_string()})).collect())
            .unwrap_or_default();
        let s = &self.bounds.stats;
        json!({
            "schema": GAP_SCHEMA,
            "verdict": match self.verdict {
                Verdict::HighCapacity => "HighCapacity",
                Verdict::LowCapacity => "LowCapacity",
            },
            "lower": rational_json(&self.bounds.lower),
            "upper": rational_json(&self.bounds.upper),
            "beta_min": fraction_string(&self.beta_min),
            "transit_bits": self.bounds.transit_bits,
            "transit_bits_upper": fraction_string(&self.bounds.transit_bits_upper),
            "e_cycle": fraction_string(&s.e_cycle),
            "good_dwell": fraction_string(&s.good_dwell),
            "n": s.n,
            "m": s.m,
            "a_exp": self.params.a_exp(),
            "b_exp": self.params.b_exp(),
            "thresholds": {
                "low": fraction_string(&self.thresholds.low),
                "high": fraction_string(&self.thresholds.high),
            },
            "witness_policy": {"name": self.policy.name(), "default": "D1", "table": witness},
            "upper_bound_note": "per-pass information accounting (one bit per good step, none in the bad state, log2(6mn+3) per transit); not a finite-blocklength converse",
        })
    }
}
