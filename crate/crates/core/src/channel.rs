//! Stepped execution of a compiled channel with perfect (causal) feedback.
//!
//! The output of step `t` is available to the encoder before it chooses the
//! input of step `t + 1`. The output bit copies the input bit exactly when the
//! post-transition state is the good state, and is `0` otherwise.

use std::fmt;
use std::io::{self, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::policy::{DecisionPolicy, History, PolicyError};
use crate::reduction::{ChannelSpec, Decision, Law, ObservationLabel, StateId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ChannelInput {
    pub decision: Decision,
    pub bit: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ChannelOutput {
    pub label: ObservationLabel,
    pub bit: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChannelError {
    #[error("a pass must start at S0, channel is in {0}")]
    NotAtStart(StateId),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Seeded channel instance. Replaying the same seed, stream and inputs
/// reproduces the same trajectory.
#[derive(Clone, Debug)]
pub struct ChannelSim<'a> {
    spec: &'a ChannelSpec,
    state: StateId,
    step_count: u64,
    rng: ChaCha8Rng,
}

impl<'a> ChannelSim<'a> {
    pub fn new(spec: &'a ChannelSpec, seed: u64) -> Self {
        Self::with_stream(spec, seed, 0)
    }

    /// Independent replica `stream` of the generator seeded by `seed`.
    pub fn with_stream(spec: &'a ChannelSpec, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        ChannelSim { spec, state: StateId::S0, step_count: 0, rng }
    }

    pub fn spec(&self) -> &'a ChannelSpec {
        self.spec
    }

    pub fn state(&self) -> StateId {
        self.state
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Back to `S0` with the step counter cleared. The generator keeps its position.
    pub fn reset(&mut self) {
        self.state = StateId::S0;
        self.step_count = 0;
    }

    /// Places the channel in `state`; panics if the state is not part of the gadget.
    pub fn set_state(&mut self, state: StateId) {
        assert!(self.spec.contains(state), "state {state} outside the gadget");
        self.state = state;
    }

    pub fn step(&mut self, input: ChannelInput) -> ChannelOutput {
        let next = sample(&mut self.rng, self.spec.law(self.state, input.decision));
        self.state = next;
        self.step_count += 1;
        ChannelOutput { label: self.spec.observe(next), bit: input.bit && next == StateId::AGood }
    }

    /// Steps from `S0` until the first absorbing state, consulting `policy` at
    /// decision points. Input bits are `0`.
    pub fn run_pass(&mut self, policy: &DecisionPolicy) -> Result<PassRecord, ChannelError> {
        if self.state != StateId::S0 {
            return Err(ChannelError::NotAtStart(self.state));
        }
        let mut history: History = vec![ObservationLabel::S0];
        let mut steps = Vec::with_capacity(self.spec.pass_length());
        loop {
            let label = *history.last().unwrap();
            let decision = if self.spec.is_decision_label(label) { policy.decide(&history)? } else { Decision::D1 };
            let out = self.step(ChannelInput { decision, bit: false });
            history.push(out.label);
            steps.push(PassStep { state: self.state, label: out.label, decision });
            if self.state.is_absorbing() {
                return Ok(PassRecord { steps });
            }
        }
    }
}

fn sample(rng: &mut ChaCha8Rng, law: Law) -> StateId {
    match law {
        Law::Certain(s) => s,
        Law::Uniform(states) => states[rng.random_range(0..states.len())],
        Law::Dwell { stay, reset_exp, leak: None } => {
            if dyadic_event(rng, reset_exp) {
                StateId::S0
            } else {
                stay
            }
        }
        Law::Dwell { stay, reset_exp, leak: Some((to, leak_exp)) } => {
            // U uniform on [0,1): reset on [0, 2^-a), leak on [2^-a, 2^-a + 2^-l)
            match leading_bits(rng, reset_exp) {
                Leading::AllZero => StateId::S0,
                Leading::OnlyLastSet if dyadic_event(rng, leak_exp - reset_exp) => to,
                _ => stay,
            }
        }
    }
}

/// True with probability exactly `2^-exp`: the next `exp` random bits are all zero.
fn dyadic_event(rng: &mut impl RngCore, exp: u32) -> bool {
    let mut remaining = exp;
    while remaining > 0 {
        let take = remaining.min(64);
        if rng.next_u64() >> (64 - take) != 0 {
            return false;
        }
        remaining -= take;
    }
    true
}

enum Leading {
    AllZero,
    OnlyLastSet,
    Other,
}

/// Classifies the next `width` random bits.
fn leading_bits(rng: &mut impl RngCore, width: u32) -> Leading {
    let mut remaining = width;
    while remaining > 64 {
        if rng.next_u64() != 0 {
            return Leading::Other;
        }
        remaining -= 64;
    }
    match rng.next_u64() >> (64 - remaining) {
        0 => Leading::AllZero,
        1 => Leading::OnlyLastSet,
        _ => Leading::Other,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PassStep {
    /// Post-transition state.
    pub state: StateId,
    pub label: ObservationLabel,
    pub decision: Decision,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PassRecord {
    pub steps: Vec<PassStep>,
}

impl PassRecord {
    pub fn final_state(&self) -> StateId {
        self.steps.last().map(|s| s.state).unwrap_or(StateId::S0)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// One line of a trajectory dump.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceRow {
    pub step: u64,
    /// Post-transition state.
    pub state: StateId,
    pub decision: Decision,
    pub bit_in: bool,
    pub label: ObservationLabel,
    pub bit_out: bool,
}

impl fmt::Display for TraceRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.step, self.state, self.decision, self.bit_in as u8, self.label, self.bit_out as u8
        )
    }
}

/// Tab-separated `step, state, decision, bit_in, label, bit_out`, one line per step.
pub fn write_trace(rows: &[TraceRow], out: &mut impl Write) -> io::Result<()> {
    for r in rows {
        writeln!(out, "{r}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::strategy_policy;
    use crate::qbf::{evaluate_qbf, ExistentialStrategy, QbfFormula};
    use crate::reduction::{build_channel, ChannelParams};

    fn q1_spec(a: u32, b: u32) -> ChannelSpec {
        let f = QbfFormula::from_dimacs("ea", &[&[1, 2], &[1, -2]]).unwrap();
        build_channel(&f, ChannelParams::new(a, b, None).unwrap())
    }

    #[test]
    fn fresh_and_reset() {
        let spec = q1_spec(6, 12);
        let mut sim = ChannelSim::new(&spec, 1);
        assert_eq!(sim.state(), StateId::S0);
        for _ in 0..50 {
            sim.step(ChannelInput { decision: Decision::D1, bit: true });
        }
        sim.reset();
        assert_eq!((sim.state(), sim.step_count()), (StateId::S0, 0));
        sim.reset();
        assert_eq!((sim.state(), sim.step_count()), (StateId::S0, 0));
    }

    #[test]
    fn good_relays_bad_blocks() {
        // a = 40: the self-loop is taken with overwhelming probability
        let spec = q1_spec(40, 50);
        let mut sim = ChannelSim::new(&spec, 3);
        sim.set_state(StateId::AGood);
        let out = sim.step(ChannelInput { decision: Decision::D1, bit: true });
        assert_eq!(out, ChannelOutput { label: ObservationLabel::Good, bit: true });
        sim.set_state(StateId::ABad);
        let out = sim.step(ChannelInput { decision: Decision::D1, bit: true });
        assert_eq!(out, ChannelOutput { label: ObservationLabel::Bad, bit: false });
    }

    #[test]
    fn existential_branch_is_deterministic() {
        let spec = q1_spec(6, 12);
        for seed in 0..20 {
            let mut sim = ChannelSim::new(&spec, seed);
            sim.set_state(StateId::Ap(1, 1));
            let out = sim.step(ChannelInput { decision: Decision::D2, bit: false });
            assert_eq!(sim.state(), StateId::Fp(1, 1));
            assert_eq!(out, ChannelOutput { label: ObservationLabel::SetFp(1), bit: false });
        }
    }

    #[test]
    fn passes_have_fixed_length() {
        let spec = q1_spec(6, 12);
        let f = QbfFormula::from_dimacs("ea", &[&[1, 2], &[1, -2]]).unwrap();
        let pol = strategy_policy(&evaluate_qbf(&f).unwrap().strategy.unwrap());
        let mut sim = ChannelSim::new(&spec, 9);
        for _ in 0..200 {
            let rec = sim.run_pass(&pol).unwrap();
            assert_eq!(rec.len(), 5);
            assert_eq!(rec.final_state(), StateId::AGood);
            sim.reset();
        }
    }

    #[test]
    fn q2_bad_pass_trace() {
        let f = QbfFormula::from_dimacs("ea", &[&[1, 2], &[-1, 2]]).unwrap();
        let spec = build_channel(&f, ChannelParams::new(6, 12, None).unwrap());
        let pol = strategy_policy(&ExistentialStrategy::from_fn(f.quants(), |_, _| true));
        let mut sim = ChannelSim::new(&spec, 11);
        let mut saw_bad = false;
        for _ in 0..200 {
            let rec = sim.run_pass(&pol).unwrap();
            let states: Vec<StateId> = rec.steps.iter().map(|s| s.state).collect();
            if rec.final_state() == StateId::ABad {
                saw_bad = true;
                assert_eq!(
                    states,
                    vec![StateId::Ap(2, 1), StateId::Tp(2, 1), StateId::Ap(2, 2), StateId::Fp(2, 2), StateId::ABad]
                );
            }
            sim.reset();
        }
        assert!(saw_bad);
    }

    #[test]
    fn run_pass_requires_start() {
        let spec = q1_spec(6, 12);
        let mut sim = ChannelSim::new(&spec, 0);
        sim.set_state(StateId::AGood);
        let pol = DecisionPolicy::from_table("empty", Default::default());
        assert_eq!(sim.run_pass(&pol).unwrap_err(), ChannelError::NotAtStart(StateId::AGood));
    }

    #[test]
    fn dyadic_event_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hits = (0..1 << 16).filter(|_| dyadic_event(&mut rng, 4)).count() as f64;
        let expected = 65536.0 / 16.0;
        assert!((hits - expected).abs() < 4.0 * (expected * 15.0 / 16.0).sqrt());
        assert!(dyadic_event(&mut rng, 0));
    }

    #[test]
    fn trace_format() {
        let row = TraceRow {
            step: 3,
            state: StateId::Tp(1, 2),
            decision: Decision::D2,
            bit_in: true,
            label: ObservationLabel::SetTp(2),
            bit_out: false,
        };
        let mut buf = Vec::new();
        write_trace(&[row], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "3\tTp(1,2)\tD2\t1\tSetTp(2)\t0\n");
    }
}
