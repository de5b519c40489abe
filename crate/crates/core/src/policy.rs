//! Within-pass decision policies and their exact bad-absorption probabilities.
//!
//! A policy sees the labels emitted since the pass began (`S0` first) and is
//! consulted only where the current label is an `A`/`A'` set of an existential
//! column. Everything the encoder observes is a label; the hidden clause row is
//! the only unknown, and universal coin flips are revealed by the `T`/`F` label
//! that follows them.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::{One, Zero};
use thiserror::Error;

use crate::qbf::{ExistentialStrategy, Quantifier, StrategyError, StrategyNode};
use crate::rational::{fraction_string, inv_pow2, ratio, Prob};
use crate::reduction::{ChannelSpec, Decision, Law, ObservationLabel, StateId};

/// `m * 2^u` scenarios at most.
pub const MAX_SCENARIOS: u64 = 1 << 22;
/// Decision-point histories at most, for [`enumerate_policies`].
pub const MAX_ENUM_HISTORIES: usize = 1 << 14;
/// Policies at most, for [`enumerate_policies`].
pub const MAX_ENUM_POLICIES: usize = 1 << 16;
/// Belief-tree nodes at most, for [`optimal_bad_probability`].
pub const MAX_BELIEF_NODES: usize = 1 << 22;

pub type History = Vec<ObservationLabel>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("history inconsistent with the gadget at position {position}: {reason}")]
    Structural { position: usize, reason: String },
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error("{what} = {value} exceeds the limit {limit}")]
    TooLarge { what: &'static str, value: u64, limit: u64 },
    #[error("pass analysis does not support the good-to-bad leak")]
    LeakUnsupported,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Rule {
    Strategy {
        quants: Vec<Quantifier>,
        strategy: ExistentialStrategy,
    },
    /// Missing histories answer `D1`.
    Table(BTreeMap<History, Decision>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecisionPolicy {
    name: String,
    rule: Rule,
}

impl DecisionPolicy {
    pub fn from_table(name: impl Into<String>, table: BTreeMap<History, Decision>) -> Self {
        DecisionPolicy { name: name.into(), rule: Rule::Table(table) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Explicit table, when the policy is table-driven.
    pub fn table(&self) -> Option<&BTreeMap<History, Decision>> {
        match &self.rule {
            Rule::Table(t) => Some(t),
            Rule::Strategy { .. } => None,
        }
    }

    pub fn decide(&self, history: &[ObservationLabel]) -> Result<Decision, PolicyError> {
        match &self.rule {
            Rule::Table(t) => Ok(t.get(history).copied().unwrap_or(Decision::D1)),
            Rule::Strategy { quants, strategy } => {
                validate_history(quants.len(), history)?;
                let Some(&last) = history.last() else { return Ok(Decision::D1) };
                match last {
                    ObservationLabel::SetA(j) | ObservationLabel::SetAp(j)
                        if quants[j - 1] == Quantifier::Existential =>
                    {
                        // x_k is revealed by the T/F label at position 2k
                        let value = strategy.value_for(quants, j, |k| history.get(2 * k)?.branch_value())?;
                        Ok(Decision::from_value(value))
                    }
                    _ => Ok(Decision::D1),
                }
            }
        }
    }
}

/// Checks the column progression `S0, A(1), T/F(1), A(2), ..., Good|Bad` and the
/// primed/unprimed consistency of each step.
pub fn validate_history(n: usize, history: &[ObservationLabel]) -> Result<(), PolicyError> {
    let fail = |position: usize, reason: String| Err(PolicyError::Structural { position, reason });
    if history.first() != Some(&ObservationLabel::S0) {
        return fail(0, "history must start at S0".into());
    }
    if history.len() > 2 * n + 2 {
        return fail(history.len() - 1, "history longer than a pass".into());
    }
    let mut primed = true;
    for (pos, &label) in history.iter().enumerate().skip(1) {
        let expect_col = pos.div_ceil(2);
        if pos == 2 * n + 1 {
            match label {
                ObservationLabel::Good => {}
                ObservationLabel::Bad if primed => {}
                ObservationLabel::Bad => return fail(pos, "Bad reached from an unprimed row".into()),
                _ => return fail(pos, format!("expected Good or Bad, found {label}")),
            }
            continue;
        }
        if label.column() != Some(expect_col) {
            return fail(pos, format!("expected a column-{expect_col} label, found {label}"));
        }
        if pos % 2 == 1 {
            let now_primed = match label {
                ObservationLabel::SetA(_) => false,
                ObservationLabel::SetAp(_) => true,
                _ => return fail(pos, format!("expected an A-family label, found {label}")),
            };
            if now_primed && !primed {
                return fail(pos, "unprimed row cannot become primed".into());
            }
            if pos == 1 && !now_primed {
                return fail(pos, "a pass must enter column 1 primed".into());
            }
            primed = now_primed;
        } else {
            let ok = match label {
                ObservationLabel::SetT(_) | ObservationLabel::SetF(_) => !primed,
                ObservationLabel::SetTp(_) | ObservationLabel::SetFp(_) => primed,
                _ => false,
            };
            if !ok {
                return fail(pos, format!("{label} does not follow the previous A-family label"));
            }
        }
    }
    Ok(())
}

/// Policy that plays an existential strategy, reading universal values off the
/// `T`/`F` labels. The strategy is not checked for the witness property.
pub fn strategy_policy(s: &ExistentialStrategy) -> DecisionPolicy {
    let mut quants = Vec::new();
    let mut node = s.root();
    loop {
        match node {
            StrategyNode::Done => break,
            StrategyNode::Exists { next, .. } => {
                quants.push(Quantifier::Existential);
                node = next;
            }
            StrategyNode::Forall { if_true, .. } => {
                quants.push(Quantifier::Universal);
                node = if_true;
            }
        }
    }
    DecisionPolicy { name: "strategy".into(), rule: Rule::Strategy { quants, strategy: s.clone() } }
}

/// Deterministic walk of one scenario.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioTrace {
    /// Post-transition states, `2n + 1` of them.
    pub states: Vec<StateId>,
    /// `S0` followed by the label of each post-transition state.
    pub labels: History,
    /// Decision fed at each step.
    pub decisions: Vec<Decision>,
}

impl ScenarioTrace {
    pub fn final_state(&self) -> StateId {
        *self.states.last().expect("non-empty trace")
    }
}

/// Walks row `row` with universal coins `universals` (in column order), asking
/// `decide` at decision points and feeding `D1` elsewhere.
pub fn trace_scenario<E>(
    spec: &ChannelSpec,
    row: usize,
    universals: &[bool],
    mut decide: impl FnMut(&[ObservationLabel]) -> Result<Decision, E>,
) -> Result<ScenarioTrace, E> {
    let mut state = StateId::S0;
    let mut labels = vec![ObservationLabel::S0];
    let mut states = Vec::with_capacity(spec.pass_length());
    let mut decisions = Vec::with_capacity(spec.pass_length());
    let mut coins = universals.iter();
    while !state.is_absorbing() {
        let label = *labels.last().unwrap();
        let d = if spec.is_decision_label(label) { decide(&labels)? } else { Decision::D1 };
        state = match spec.law(state, d) {
            Law::Certain(t) => t,
            Law::Uniform(ts) if state == StateId::S0 => ts[row - 1],
            Law::Uniform(ts) => {
                let v = *coins.next().expect("one coin per universal column");
                ts[if v { 0 } else { 1 }]
            }
            Law::Dwell { .. } => unreachable!("pass ends at the first absorbing state"),
        };
        decisions.push(d);
        states.push(state);
        labels.push(spec.observe(state));
    }
    Ok(ScenarioTrace { states, labels, decisions })
}

fn check_scenario_guard(spec: &ChannelSpec) -> Result<(), PolicyError> {
    if spec.params().leak_exp().is_some() {
        return Err(PolicyError::LeakUnsupported);
    }
    let u = spec.universal_count() as u32;
    let count = if u >= 40 { u64::MAX } else { (spec.m() as u64).saturating_mul(1u64 << u) };
    if count > MAX_SCENARIOS {
        return Err(PolicyError::TooLarge { what: "m*2^u", value: count, limit: MAX_SCENARIOS });
    }
    Ok(())
}

/// All `(row, universal coins)` pairs in a fixed order.
fn scenarios(spec: &ChannelSpec) -> impl Iterator<Item = (usize, Vec<bool>)> + '_ {
    let u = spec.universal_count();
    (1..=spec.m()).flat_map(move |row| {
        (0u64..1 << u).map(move |bits| (row, (0..u).map(|k| bits >> (u - 1 - k) & 1 == 1).collect()))
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioOutcome {
    pub row: usize,
    pub universals: Vec<bool>,
    pub final_state: StateId,
    pub probability: Prob,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PassAnalysis {
    /// Probability that a pass ends in the bad state.
    pub beta: Prob,
    pub scenarios: Vec<ScenarioOutcome>,
    pub policy: String,
}

impl PassAnalysis {
    /// `# policy=... beta=num/den` then one row per scenario.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# policy={} beta={}\n", self.policy, fraction_string(&self.beta));
        out.push_str("clause_row,universal_assignment,final_state,probability\n");
        for s in &self.scenarios {
            let u: String = if s.universals.is_empty() {
                "-".into()
            } else {
                s.universals.iter().map(|&b| if b { '1' } else { '0' }).collect()
            };
            out.push_str(&format!("{},{},{},{}\n", s.row, u, s.final_state, fraction_string(&s.probability)));
        }
        out
    }
}

/// Exact bad-absorption probability of `pol`, summed over every scenario.
pub fn pass_bad_probability(spec: &ChannelSpec, pol: &DecisionPolicy) -> Result<PassAnalysis, PolicyError> {
    check_scenario_guard(spec)?;
    let weight = ratio(1, spec.m() as i64) * inv_pow2(spec.universal_count() as u32);
    let mut beta = Prob::zero();
    let mut table = Vec::new();
    for (row, universals) in scenarios(spec) {
        let trace = trace_scenario(spec, row, &universals, |h| pol.decide(h))?;
        let final_state = trace.final_state();
        if final_state == StateId::ABad {
            beta += &weight;
        }
        table.push(ScenarioOutcome { row, universals, final_state, probability: weight.clone() });
    }
    Ok(PassAnalysis { beta, scenarios: table, policy: pol.name().to_string() })
}

/// Minimum bad-absorption probability over all history-dependent policies, by
/// backward induction on the tree of label histories. Ties go to `D1`.
pub fn optimal_bad_probability(spec: &ChannelSpec) -> Result<(Prob, DecisionPolicy), PolicyError> {
    check_scenario_guard(spec)?;
    let mut solver = BeliefSolver { spec, table: BTreeMap::new(), nodes: 0 };
    let mut history = vec![ObservationLabel::S0];
    let mut root = BTreeMap::new();
    root.insert(StateId::S0, Prob::one());
    let beta = solver.value(&mut history, &root)?;
    Ok((beta, DecisionPolicy::from_table("optimal", solver.table)))
}

struct BeliefSolver<'a> {
    spec: &'a ChannelSpec,
    table: BTreeMap<History, Decision>,
    nodes: usize,
}

impl BeliefSolver<'_> {
    /// Unnormalized: the returned value is the joint probability of reaching
    /// this history and then ending bad.
    fn value(&mut self, history: &mut History, belief: &BTreeMap<StateId, Prob>) -> Result<Prob, PolicyError> {
        self.nodes += 1;
        if self.nodes > MAX_BELIEF_NODES {
            return Err(PolicyError::TooLarge {
                what: "belief nodes",
                value: self.nodes as u64,
                limit: MAX_BELIEF_NODES as u64,
            });
        }
        let label = *history.last().unwrap();
        if label.is_terminal() {
            return Ok(belief.get(&StateId::ABad).cloned().unwrap_or_else(Prob::zero));
        }
        let choices: &[Decision] = if self.spec.is_decision_label(label) { &Decision::BOTH } else { &[Decision::D1] };
        let mut best: Option<(Decision, Prob)> = None;
        for &d in choices {
            let mut children: BTreeMap<ObservationLabel, BTreeMap<StateId, Prob>> = BTreeMap::new();
            for (s, w) in belief {
                for (t, p) in self.spec.transition(*s, d).outcomes() {
                    *children.entry(self.spec.observe(*t)).or_default().entry(*t).or_insert_with(Prob::zero) += w * p;
                }
            }
            let mut v = Prob::zero();
            for (child_label, child_belief) in &children {
                history.push(*child_label);
                v += self.value(history, child_belief)?;
                history.pop();
            }
            if best.as_ref().is_none_or(|(_, b)| v < *b) {
                best = Some((d, v));
            }
        }
        let (d, v) = best.expect("at least one decision");
        if choices.len() == 2 {
            self.table.insert(history.clone(), d);
        }
        Ok(v)
    }
}

/// Every decision-point history reachable under some policy.
pub fn reachable_decision_histories(spec: &ChannelSpec) -> Result<BTreeSet<History>, PolicyError> {
    check_scenario_guard(spec)?;
    let n = spec.n() as u32;
    if (spec.m() as u64) << n > MAX_SCENARIOS {
        return Err(PolicyError::TooLarge { what: "m*2^n", value: (spec.m() as u64) << n, limit: MAX_SCENARIOS });
    }
    let mut out = BTreeSet::new();
    // Any policy and scenario realize some full assignment, so forcing every
    // column's value covers all histories.
    for row in 1..=spec.m() {
        for bits in 0u64..1 << n {
            let value = |col: usize| bits >> (n as usize - col) & 1 == 1;
            let universals: Vec<bool> =
                (1..=spec.n()).filter(|&j| spec.quantifier(j) == Quantifier::Universal).map(value).collect();
            let trace = trace_scenario(spec, row, &universals, |h| {
                out.insert(h.to_vec());
                let col = h.last().unwrap().column().unwrap();
                Ok::<_, PolicyError>(Decision::from_value(value(col)))
            })?;
            debug_assert_eq!(trace.states.len(), spec.pass_length());
        }
    }
    Ok(out)
}

/// Every deterministic policy, restricted to the histories it can reach, each
/// exactly once. Policies differing only on histories they never reach are the
/// same policy.
pub fn enumerate_policies(spec: &ChannelSpec) -> Result<Vec<DecisionPolicy>, PolicyError> {
    let histories = reachable_decision_histories(spec)?;
    if histories.len() > MAX_ENUM_HISTORIES {
        return Err(PolicyError::TooLarge {
            what: "reachable decision histories",
            value: histories.len() as u64,
            limit: MAX_ENUM_HISTORIES as u64,
        });
    }
    let all: Vec<(usize, Vec<bool>)> = scenarios(spec).collect();
    let mut tables = Vec::new();
    extend_tables(spec, &all, &mut BTreeMap::new(), &mut tables)?;
    Ok(tables.into_iter().enumerate().map(|(k, t)| DecisionPolicy::from_table(format!("enumerated#{k}"), t)).collect())
}

fn extend_tables(
    spec: &ChannelSpec,
    scenarios: &[(usize, Vec<bool>)],
    table: &mut BTreeMap<History, Decision>,
    out: &mut Vec<BTreeMap<History, Decision>>,
) -> Result<(), PolicyError> {
    let missing = scenarios.iter().find_map(|(row, universals)| {
        trace_scenario(spec, *row, universals, |h| table.get(h).copied().ok_or_else(|| h.to_vec())).err()
    });
    match missing {
        None => {
            if out.len() >= MAX_ENUM_POLICIES {
                return Err(PolicyError::TooLarge {
                    what: "policies",
                    value: out.len() as u64 + 1,
                    limit: MAX_ENUM_POLICIES as u64,
                });
            }
            out.push(table.clone());
        }
        Some(history) => {
            for d in Decision::BOTH {
                table.insert(history.clone(), d);
                extend_tables(spec, scenarios, table, out)?;
            }
            table.remove(&history);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qbf::{evaluate_qbf, QbfFormula};
    use crate::reduction::{build_channel, ChannelParams};
    use ObservationLabel::*;

    fn spec(prefix: &str, clauses: &[&[i64]]) -> (QbfFormula, ChannelSpec) {
        let f = QbfFormula::from_dimacs(prefix, clauses).unwrap();
        let s = build_channel(&f, ChannelParams::default());
        (f, s)
    }

    fn x1_true(f: &QbfFormula) -> DecisionPolicy {
        strategy_policy(&ExistentialStrategy::from_fn(f.quants(), |_, _| true))
    }

    #[test]
    fn strategy_policy_answers_d1_at_first_column() {
        let (f, _) = spec("ea", &[&[1, 2], &[1, -2]]);
        let pol = x1_true(&f);
        assert_eq!(pol.decide(&[S0, SetAp(1)]), Ok(Decision::D1));
        // off-strategy but well-formed history
        assert_eq!(pol.decide(&[S0, SetAp(1), SetFp(1), SetAp(2)]), Ok(Decision::D1));
        assert!(matches!(pol.decide(&[S0, SetT(1)]), Err(PolicyError::Structural { .. })));
        assert!(matches!(pol.decide(&[SetAp(1)]), Err(PolicyError::Structural { .. })));
        assert!(matches!(pol.decide(&[S0, SetA(1)]), Err(PolicyError::Structural { .. })));
    }

    #[test]
    fn strategy_reads_universal_values() {
        // ∀x1 ∃x2: x2 := ¬x1
        let (f, sp) = spec("ae", &[&[1, 2], &[-1, -2]]);
        let s = ExistentialStrategy::from_fn(f.quants(), |_, prefix| !prefix[0]);
        let pol = strategy_policy(&s);
        assert_eq!(pol.decide(&[S0, SetAp(1), SetTp(1), SetA(2)]), Ok(Decision::D2));
        assert_eq!(pol.decide(&[S0, SetAp(1), SetFp(1), SetAp(2)]), Ok(Decision::D1));
        assert_eq!(pass_bad_probability(&sp, &pol).unwrap().beta, Prob::zero());
    }

    #[test]
    fn q1_winning_policy() {
        let (f, sp) = spec("ea", &[&[1, 2], &[1, -2]]);
        let s = evaluate_qbf(&f).unwrap().strategy.unwrap();
        let a = pass_bad_probability(&sp, &strategy_policy(&s)).unwrap();
        assert_eq!(a.beta, Prob::zero());
        assert_eq!(a.scenarios.len(), 4);
        assert!(a.scenarios.iter().all(|o| o.final_state == StateId::AGood));
    }

    #[test]
    fn q2_x1_true_policy() {
        let (f, sp) = spec("ea", &[&[1, 2], &[-1, 2]]);
        let a = pass_bad_probability(&sp, &x1_true(&f)).unwrap();
        assert_eq!(a.beta, ratio(1, 4));
        let bad: Vec<_> = a.scenarios.iter().filter(|o| o.final_state == StateId::ABad).collect();
        assert_eq!(bad.len(), 1);
        assert_eq!((bad[0].row, bad[0].universals.clone()), (2, vec![false]));
        let trace = trace_scenario(&sp, 2, &[false], |h| x1_true(&f).decide(h)).unwrap();
        assert_eq!(
            trace.states,
            vec![StateId::Ap(2, 1), StateId::Tp(2, 1), StateId::Ap(2, 2), StateId::Fp(2, 2), StateId::ABad]
        );
    }

    #[test]
    fn optimal_examples() {
        let (_, q1) = spec("ea", &[&[1, 2], &[1, -2]]);
        let (beta, pol) = optimal_bad_probability(&q1).unwrap();
        assert_eq!(beta, Prob::zero());
        assert_eq!(pass_bad_probability(&q1, &pol).unwrap().beta, Prob::zero());
        let (_, q2) = spec("ea", &[&[1, 2], &[-1, 2]]);
        let (beta, pol) = optimal_bad_probability(&q2).unwrap();
        assert_eq!(beta, ratio(1, 4));
        // tie between x1 = true and x1 = false resolves to D1
        assert_eq!(pol.decide(&[S0, SetAp(1)]), Ok(Decision::D1));
    }

    #[test]
    fn enumeration_counts() {
        let (_, q1) = spec("ea", &[&[1, 2], &[1, -2]]);
        assert_eq!(enumerate_policies(&q1).unwrap().len(), 2);
        assert_eq!(reachable_decision_histories(&q1).unwrap().len(), 1);
        let (_, q2) = spec("ea", &[&[1, 2], &[-1, 2]]);
        assert_eq!(enumerate_policies(&q2).unwrap().len(), 2);
        let (_, none) = spec("aa", &[&[1, 2]]);
        let pols = enumerate_policies(&none).unwrap();
        assert_eq!(pols.len(), 1);
        assert!(pols[0].table().unwrap().is_empty());
    }

    #[test]
    fn leak_rejected() {
        let (_, q1) = spec("ea", &[&[1, 2], &[1, -2]]);
        let leaky = q1.with_params(ChannelParams::new(4, 8, Some(9)).unwrap());
        assert_eq!(optimal_bad_probability(&leaky).unwrap_err(), PolicyError::LeakUnsupported);
    }

    #[test]
    fn scenario_guard() {
        let f = QbfFormula::from_dimacs(&"a".repeat(23), &[&[1]]).unwrap();
        let sp = build_channel(&f, ChannelParams::default());
        assert!(matches!(optimal_bad_probability(&sp), Err(PolicyError::TooLarge { .. })));
    }

    #[test]
    fn csv_export() {
        let (f, sp) = spec("ea", &[&[1, 2], &[-1, 2]]);
        let csv = pass_bad_probability(&sp, &x1_true(&f)).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# policy=strategy beta=1/4");
        assert_eq!(lines[1], "clause_row,universal_assignment,final_state,probability");
        assert_eq!(lines[2], "1,0,AGood,1/4");
        assert_eq!(lines.len(), 6);
        assert!(lines.contains(&"2,0,ABad,1/4"));
    }
}
