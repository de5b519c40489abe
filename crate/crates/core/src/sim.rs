//! Monte Carlo runs of the channel under a policy, and the bit-relay scheme.
//!
//! The encoder sees only channel outputs and message bits. Its pass history
//! restarts whenever the output label is `S0`. Occupancy is counted on
//! post-transition states, which matches the renewal-reward accounting.

use serde::Serialize;
use thiserror::Error;

use crate::analysis::cycle_stats;
use crate::channel::{ChannelInput, ChannelSim};
use crate::policy::{pass_bad_probability, DecisionPolicy, History, PolicyError};
use crate::rational::to_f64;
use crate::reduction::{ChannelSpec, Decision, ObservationLabel, StateId};

pub const MONTE_CARLO_SCHEMA: &str = "qbfchan/monte-carlo/v1";
pub const RELAY_SCHEMA: &str = "qbfchan/relay/v1";

/// Two-sided 99% normal quantile.
const Z99: f64 = 2.575_829_303_548_901;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("bitstream must not be empty")]
    EmptyBitstream,
    #[error("at least one replica is required")]
    NoReplicas,
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Feedback encoder: chooses decisions from the labels seen in the current pass.
struct Encoder<'p> {
    policy: &'p DecisionPolicy,
    history: History,
    in_pass: bool,
}

impl<'p> Encoder<'p> {
    fn new(policy: &'p DecisionPolicy) -> Self {
        Encoder { policy, history: vec![ObservationLabel::S0], in_pass: true }
    }

    fn decision(&self, spec: &ChannelSpec) -> Result<Decision, PolicyError> {
        let last = *self.history.last().unwrap();
        if self.in_pass && spec.is_decision_label(last) {
            self.policy.decide(&self.history)
        } else {
            Ok(Decision::D1)
        }
    }

    /// Returns the terminal label when this output ends a pass.
    fn feedback(&mut self, label: ObservationLabel) -> Option<ObservationLabel> {
        if label == ObservationLabel::S0 {
            self.history.clear();
            self.history.push(label);
            self.in_pass = true;
            return None;
        }
        if !self.in_pass {
            return None;
        }
        self.history.push(label);
        if label.is_terminal() {
            self.in_pass = false;
            return Some(label);
        }
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PassOutcome {
    Good,
    Bad,
}

/// One completed `S0`-to-`S0` cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CycleRecord {
    pub index: u64,
    pub length: u64,
    pub good_dwell: u64,
    pub outcome: PassOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub schema: &'static str,
    pub steps: u64,
    pub good_steps: u64,
    pub bad_steps: u64,
    pub good_frequency: f64,
    pub bad_frequency: f64,
    pub passes: u64,
    pub bad_passes: u64,
    pub bad_pass_fraction: f64,
    pub completed_cycles: u64,
    pub seed: u64,
    pub replicas: u64,
    /// 99% regenerative half-width on `good_frequency`; absent below two cycles.
    pub confidence_halfwidth: Option<f64>,
    #[serde(skip)]
    pub cycles: Vec<CycleRecord>,
}

impl MonteCarloReport {
    #[allow(clippy::too_many_arguments)]
    fn from_counts(
        seed: u64,
        replicas: u64,
        steps: u64,
        good_steps: u64,
        bad_steps: u64,
        passes: u64,
        bad_passes: u64,
        cycles: Vec<CycleRecord>,
    ) -> Self {
        let frac = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        MonteCarloReport {
            schema: MONTE_CARLO_SCHEMA,
            steps,
            good_steps,
            bad_steps,
            good_frequency: frac(good_steps, steps),
            bad_frequency: frac(bad_steps, steps),
            passes,
            bad_passes,
            bad_pass_fraction: frac(bad_passes, passes),
            completed_cycles: cycles.len() as u64,
            seed,
            replicas,
            confidence_halfwidth: regenerative_halfwidth(&cycles),
            cycles,
        }
    }

    /// `cycle,length,good_dwell,outcome` rows.
    pub fn cycles_csv(&self) -> String {
        let mut out = String::from("cycle,length,good_dwell,outcome\n");
        for c in &self.cycles {
            out.push_str(&format!("{},{},{},{:?}\n", c.index, c.length, c.good_dwell, c.outcome));
        }
        out
    }

    /// Pools replicas; frequencies become step-weighted averages.
    pub fn merge(reports: &[MonteCarloReport]) -> Option<MonteCarloReport> {
        let first = reports.first()?;
        let sum = |f: fn(&MonteCarloReport) -> u64| reports.iter().map(f).sum::<u64>();
        let cycles = reports
            .iter()
            .flat_map(|r| r.cycles.iter())
            .enumerate()
            .map(|(k, c)| CycleRecord { index: k as u64, ..*c })
            .collect();
        Some(MonteCarloReport::from_counts(
            first.seed,
            sum(|r| r.replicas),
            sum(|r| r.steps),
            sum(|r| r.good_steps),
            sum(|r| r.bad_steps),
            sum(|r| r.passes),
            sum(|r| r.bad_passes),
            cycles,
        ))
    }
}

/// Ratio-estimator half-width over i.i.d. cycles: `z * s / (mean_len * sqrt(N))`
/// with `s^2` the sample variance of `good_dwell - r * length`.
fn regenerative_halfwidth(cycles: &[CycleRecord]) -> Option<f64> {
    if cycles.len() < 2 {
        return None;
    }
    let n = cycles.len() as f64;
    let total_len: f64 = cycles.iter().map(|c| c.length as f64).sum();
    let total_good: f64 = cycles.iter().map(|c| c.good_dwell as f64).sum();
    let r = total_good / total_len;
    let var = cycles
        .iter()
        .map(|c| {
            let z = c.good_dwell as f64 - r * c.length as f64;
            z * z
        })
        .sum::<f64>()
        / (n - 1.0);
    Some(Z99 * var.sqrt() / (total_len / n * n.sqrt()))
}

fn warn_if_short(spec: &ChannelSpec, policy: &DecisionPolicy, steps: u64) {
    if spec.params().leak_exp().is_some() {
        return;
    }
    let Ok(analysis) = pass_bad_probability(spec, policy) else { return };
    let Ok(stats) = cycle_stats(spec.n(), spec.m(), &analysis.beta, spec.params()) else { return };
    let expected = to_f64(&stats.e_cycle);
    if (steps as f64) < 10.0 * expected {
        log::warn!("{steps} steps cover fewer than 10 expected cycles of {expected:.1} steps");
    }
}

fn run_replica(
    spec: &ChannelSpec,
    policy: &DecisionPolicy,
    steps: u64,
    seed: u64,
    stream: u64,
) -> Result<MonteCarloReport, PolicyError> {
    let mut sim = ChannelSim::with_stream(spec, seed, stream);
    let mut enc = Encoder::new(policy);
    let (mut good, mut bad, mut passes, mut bad_passes) = (0u64, 0u64, 0u64, 0u64);
    let mut cycles = Vec::new();
    let (mut cycle_len, mut cycle_good) = (0u64, 0u64);
    let mut outcome = None;
    for _ in 0..steps {
        let decision = enc.decision(spec)?;
        let out = sim.step(ChannelInput { decision, bit: false });
        cycle_len += 1;
        match sim.state() {
            StateId::AGood => {
                good += 1;
                cycle_good += 1;
            }
            StateId::ABad => bad += 1,
            _ => {}
        }
        if let Some(end) = enc.feedback(out.label) {
            passes += 1;
            let o = if end == ObservationLabel::Bad {
                bad_passes += 1;
                PassOutcome::Bad
            } else {
                PassOutcome::Good
            };
            outcome = Some(o);
        }
        if out.label == ObservationLabel::S0 {
            if let Some(o) = outcome.take() {
                cycles.push(CycleRecord {
                    index: cycles.len() as u64,
                    length: cycle_len,
                    good_dwell: cycle_good,
                    outcome: o,
                });
            }
            cycle_len = 0;
            cycle_good = 0;
        }
    }
    Ok(MonteCarloReport::from_counts(seed, 1, steps, good, bad, passes, bad_passes, cycles))
}

/// Runs `steps` channel uses from `S0` under `policy`.
pub fn monte_carlo(
    spec: &ChannelSpec,
    policy: &DecisionPolicy,
    steps: u64,
    seed: u64,
) -> Result<MonteCarloReport, PolicyError> {
    warn_if_short(spec, policy, steps);
    run_replica(spec, policy, steps, seed, 0)
}

/// Independent replicas on separate generator streams, one thread each.
pub fn monte_carlo_replicas(
    spec: &ChannelSpec,
    policy: &DecisionPolicy,
    steps_per_replica: u64,
    seed: u64,
    replicas: u64,
) -> Result<MonteCarloReport, SimError> {
    if replicas == 0 {
        return Err(SimError::NoReplicas);
    }
    warn_if_short(spec, policy, steps_per_replica);
    let reports = std::thread::scope(|scope| {
        let handles: Vec<_> =
            (0..replicas).map(|k| scope.spawn(move || run_replica(spec, policy, steps_per_replica, seed, k))).collect();
        handles.into_iter().map(|h| h.join().expect("replica panicked")).collect::<Result<Vec<_>, _>>()
    })?;
    Ok(MonteCarloReport::merge(&reports).expect("non-empty"))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelayReport {
    pub schema: &'static str,
    pub steps: u64,
    /// Channel uses that carried a message bit on the input.
    pub bits_offered: u64,
    pub bits_delivered: u64,
    pub bit_errors: u64,
    /// Steps whose post-transition state was the good state.
    pub good_steps: u64,
    pub empirical_rate: f64,
    pub seed: u64,
}

/// Sends the message (the bitstream, repeated) by putting the oldest
/// undelivered bit on the input every step. A bit counts as delivered when the
/// output label is `Good`; the decoder appends the output bit at those steps.
pub fn relay_bits(
    spec: &ChannelSpec,
    policy: &DecisionPolicy,
    bitstream: &[bool],
    steps: u64,
    seed: u64,
) -> Result<RelayReport, SimError> {
    if bitstream.is_empty() {
        return Err(SimError::EmptyBitstream);
    }
    let message = |k: u64| bitstream[(k % bitstream.len() as u64) as usize];
    let mut sim = ChannelSim::new(spec, seed);
    let mut enc = Encoder::new(policy);
    let mut next = 0u64;
    let mut decoded: Vec<bool> = Vec::new();
    let mut good_steps = 0u64;
    for _ in 0..steps {
        let decision = enc.decision(spec)?;
        let out = sim.step(ChannelInput { decision, bit: message(next) });
        if sim.state() == StateId::AGood {
            good_steps += 1;
        }
        if out.label == ObservationLabel::Good {
            decoded.push(out.bit);
            next += 1;
        }
        enc.feedback(out.label);
    }
    let bit_errors = decoded.iter().enumerate().filter(|(k, &b)| b != message(*k as u64)).count() as u64;
    Ok(RelayReport {
        schema: RELAY_SCHEMA,
        steps,
        bits_offered: steps,
        bits_delivered: decoded.len() as u64,
        bit_errors,
        good_steps,
        empirical_rate: if steps == 0 { 0.0 } else { decoded.len() as f64 / steps as f64 },
        seed,
    })
}
