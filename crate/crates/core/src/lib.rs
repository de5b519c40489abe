//! Reduction from quantified Boolean formulas to finite-state Markov channels
//! with perfect feedback, with exact tools to certify the resulting capacity gap.
//!
//! Pipeline: [`qbf::parse_qdimacs`] → [`reduction::build_channel`] →
//! [`policy::optimal_bad_probability`] → [`analysis::decide_gap`], plus
//! [`sim`] for Monte Carlo cross-checks and the bit-relay scheme.

pub mod analysis;
pub mod channel;
pub mod policy;
pub mod qbf;
pub mod rational;
pub mod reduction;
pub mod sim;

pub use analysis::{decide_gap, GapDecision, GapThresholds, RateBounds, Verdict};
pub use channel::{ChannelInput, ChannelOutput, ChannelSim};
pub use policy::{optimal_bad_probability, pass_bad_probability, DecisionPolicy, PassAnalysis};
pub use qbf::{evaluate_qbf, parse_qdimacs, serialize_qdimacs, QbfFormula};
pub use reduction::{build_channel, ChannelParams, ChannelSpec, Decision, ObservationLabel, StateId};
