//! Compilation of a QBF into the feedback channel gadget.
//!
//! For clause row `i` and variable column `j` there are six states
//! `A, A', T, T', F, F'`. A pass starts at `S0`, jumps uniformly to some `A'(i,1)`
//! (the clause row is hidden), and walks the columns: at `A(i,j)` the variable
//! `x_j` is set (by the decision when existential, by a fair coin when universal),
//! which moves the walk to `T(i,j)` or `F(i,j)`. Primed rows stay primed until a
//! literal of clause `i` is made true, at which point the walk crosses over to
//! the unprimed family. After column `n` the walk lands in the lumped good state
//! `A(n+1)` or the lumped bad state `A'(n+1)`, both of which return to `S0` with
//! small probabilities `p = 2^-a_exp` and `q = 2^-b_exp`.
//!
//! Decision convention: [`Decision::D1`] takes the `T` branch, [`Decision::D2`]
//! the `F` branch. Universal columns ignore the decision.

use std::fmt;

use num_traits::{One, Zero};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::qbf::{Literal, QbfFormula, Quantifier};
use crate::rational::{fraction_string, inv_pow2, ratio, Prob};

pub const SPEC_SCHEMA: &str = "qbfchan/channel-spec/v1";
pub const TRANSITIONS_SCHEMA: &str = "qbfchan/channel-transitions/v1";

/// Channel state. Row `i` is in `1..=m`, column `j` in `1..=n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StateId {
    S0,
    A(usize, usize),
    Ap(usize, usize),
    T(usize, usize),
    Tp(usize, usize),
    F(usize, usize),
    Fp(usize, usize),
    /// Lumped `A(i, n+1)`.
    AGood,
    /// Lumped `A'(i, n+1)`.
    ABad,
}

impl StateId {
    pub fn is_absorbing(self) -> bool {
        matches!(self, StateId::AGood | StateId::ABad)
    }

    /// Unprimed `A` state at column `col`, with `n + 1` meaning the good state.
    fn a(row: usize, col: usize, n: usize) -> StateId {
        if col > n {
            StateId::AGood
        } else {
            StateId::A(row, col)
        }
    }

    fn ap(row: usize, col: usize, n: usize) -> StateId {
        if col > n {
            StateId::ABad
        } else {
            StateId::Ap(row, col)
        }
    }

    pub fn is_primed(self) -> bool {
        matches!(self, StateId::Ap(..) | StateId::Tp(..) | StateId::Fp(..) | StateId::ABad)
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            StateId::S0 => write!(f, "S0"),
            StateId::A(i, j) => write!(f, "A({i},{j})"),
            StateId::Ap(i, j) => write!(f, "Ap({i},{j})"),
            StateId::T(i, j) => write!(f, "T({i},{j})"),
            StateId::Tp(i, j) => write!(f, "Tp({i},{j})"),
            StateId::F(i, j) => write!(f, "F({i},{j})"),
            StateId::Fp(i, j) => write!(f, "Fp({i},{j})"),
            StateId::AGood => write!(f, "AGood"),
            StateId::ABad => write!(f, "ABad"),
        }
    }
}

/// Partial state information: the family and column of the state, never the row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObservationLabel {
    S0,
    SetA(usize),
    SetAp(usize),
    SetT(usize),
    SetTp(usize),
    SetF(usize),
    SetFp(usize),
    Good,
    Bad,
}

impl ObservationLabel {
    /// Column for the six set families.
    pub fn column(self) -> Option<usize> {
        match self {
            ObservationLabel::SetA(j)
            | ObservationLabel::SetAp(j)
            | ObservationLabel::SetT(j)
            | ObservationLabel::SetTp(j)
            | ObservationLabel::SetF(j)
            | ObservationLabel::SetFp(j) => Some(j),
            _ => None,
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, ObservationLabel::Good | ObservationLabel::Bad)
    }

    /// The value of `x_j` revealed by a `T`/`F` family label.
    pub fn branch_value(self) -> Option<bool> {
        match self {
            ObservationLabel::SetT(_) | ObservationLabel::SetTp(_) => Some(true),
            ObservationLabel::SetF(_) | ObservationLabel::SetFp(_) => Some(false),
            _ => None,
        }
    }

    pub fn is_assignment_point(self) -> bool {
        matches!(self, ObservationLabel::SetA(_) | ObservationLabel::SetAp(_))
    }

    /// All `6n + 3` labels of a gadget with `n` variables.
    pub fn alphabet(n: usize) -> Vec<ObservationLabel> {
        let mut out = vec![ObservationLabel::S0];
        for j in 1..=n {
            out.extend([
                ObservationLabel::SetA(j),
                ObservationLabel::SetAp(j),
                ObservationLabel::SetT(j),
                ObservationLabel::SetTp(j),
                ObservationLabel::SetF(j),
                ObservationLabel::SetFp(j),
            ]);
        }
        out.extend([ObservationLabel::Good, ObservationLabel::Bad]);
        out
    }
}

impl fmt::Display for ObservationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ObservationLabel::S0 => write!(f, "S0"),
            ObservationLabel::SetA(j) => write!(f, "SetA({j})"),
            ObservationLabel::SetAp(j) => write!(f, "SetAp({j})"),
            ObservationLabel::SetT(j) => write!(f, "SetT({j})"),
            ObservationLabel::SetTp(j) => write!(f, "SetTp({j})"),
            ObservationLabel::SetF(j) => write!(f, "SetF({j})"),
            ObservationLabel::SetFp(j) => write!(f, "SetFp({j})"),
            ObservationLabel::Good => write!(f, "Good"),
            ObservationLabel::Bad => write!(f, "Bad"),
        }
    }
}

impl Serialize for ObservationLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Decision {
    D1,
    D2,
}

impl Decision {
    pub const BOTH: [Decision; 2] = [Decision::D1, Decision::D2];

    pub fn from_value(value: bool) -> Self {
        if value {
            Decision::D1
        } else {
            Decision::D2
        }
    }

    pub fn value(self) -> bool {
        self == Decision::D1
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::D1 => "D1",
            Decision::D2 => "D2",
        })
    }
}

/// How variable `x_j` occurs in clause `C_i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Occurrence {
    None,
    Positive,
    Negative,
    Both,
}

impl Occurrence {
    /// Does `T'(i,j)` cross over to the unprimed family?
    pub fn crosses_on_true(self) -> bool {
        matches!(self, Occurrence::Positive | Occurrence::Both)
    }

    pub fn crosses_on_false(self) -> bool {
        matches!(self, Occurrence::Negative | Occurrence::Both)
    }

    pub fn crosses(self, value: bool) -> bool {
        if value {
            self.crosses_on_true()
        } else {
            self.crosses_on_false()
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParamsError {
    #[error("exponents must be positive")]
    NonPositive,
    #[error("b_exp must exceed a_exp")]
    ResetOrder,
    #[error("leak_exp must exceed b_exp")]
    LeakOrder,
}

/// Reset probabilities as powers of two: `p = 2^-a_exp`, `q = 2^-b_exp`, and an
/// optional good-to-bad leak `2^-leak_exp` honoured only by the simulator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ChannelParams {
    a_exp: u32,
    b_exp: u32,
    leak_exp: Option<u32>,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams { a_exp: 20, b_exp: 40, leak_exp: None }
    }
}

impl ChannelParams {
    pub fn new(a_exp: u32, b_exp: u32, leak_exp: Option<u32>) -> Result<Self, ParamsError> {
        if a_exp == 0 || b_exp == 0 || leak_exp == Some(0) {
            return Err(ParamsError::NonPositive);
        }
        if b_exp <= a_exp {
            return Err(ParamsError::ResetOrder);
        }
        if leak_exp.is_some_and(|l| l <= b_exp) {
            return Err(ParamsError::LeakOrder);
        }
        Ok(ChannelParams { a_exp, b_exp, leak_exp })
    }

    pub fn a_exp(&self) -> u32 {
        self.a_exp
    }

    pub fn b_exp(&self) -> u32 {
        self.b_exp
    }

    pub fn leak_exp(&self) -> Option<u32> {
        self.leak_exp
    }

    pub fn p(&self) -> Prob {
        inv_pow2(self.a_exp)
    }

    pub fn q(&self) -> Prob {
        inv_pow2(self.b_exp)
    }
}

/// One step of the transition law in structured form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Law {
    Certain(StateId),
    /// Uniform over the listed states, in a fixed order.
    Uniform(Vec<StateId>),
    /// Stay in `stay`; go to `S0` with probability `2^-reset_exp`; optionally
    /// go to `leak.0` with probability `2^-leak.1`.
    Dwell {
        stay: StateId,
        reset_exp: u32,
        leak: Option<(StateId, u32)>,
    },
}

/// Exact finite distribution over next states.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Distribution(Vec<(StateId, Prob)>);

impl Distribution {
    pub fn outcomes(&self) -> &[(StateId, Prob)] {
        &self.0
    }

    pub fn prob_of(&self, s: StateId) -> Prob {
        self.0.iter().filter(|(t, _)| *t == s).map(|(_, p)| p.clone()).sum()
    }

    pub fn total(&self) -> Prob {
        self.0.iter().map(|(_, p)| p.clone()).sum()
    }

    pub fn support(&self) -> impl Iterator<Item = StateId> + '_ {
        self.0.iter().map(|(s, _)| *s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelSpec {
    n: usize,
    m: usize,
    quants: Vec<Quantifier>,
    /// Row-major `m x n`.
    occurrence: Vec<Occurrence>,
    params: ChannelParams,
}

pub fn build_channel(f: &QbfFormula, params: ChannelParams) -> ChannelSpec {
    let (n, m) = (f.n(), f.m());
    let mut occurrence = Vec::with_capacity(m * n);
    for clause in f.clauses() {
        for j in 1..=n {
            let pos = clause.contains(Literal::pos(j));
            let neg = clause.contains(Literal::neg(j));
            occurrence.push(match (pos, neg) {
                (true, true) => Occurrence::Both,
                (true, false) => Occurrence::Positive,
                (false, true) => Occurrence::Negative,
                (false, false) => Occurrence::None,
            });
        }
    }
    ChannelSpec { n, m, quants: f.quants().to_vec(), occurrence, params }
}

impl ChannelSpec {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn quants(&self) -> &[Quantifier] {
        &self.quants
    }

    pub fn quantifier(&self, col: usize) -> Quantifier {
        self.quants[col - 1]
    }

    pub fn universal_count(&self) -> usize {
        self.quants.iter().filter(|&&q| q == Quantifier::Universal).count()
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    pub fn with_params(&self, params: ChannelParams) -> ChannelSpec {
        ChannelSpec { params, ..self.clone() }
    }

    pub fn occurrence(&self, row: usize, col: usize) -> Occurrence {
        self.occurrence[(row - 1) * self.n + col - 1]
    }

    pub fn prefix_string(&self) -> String {
        self.quants.iter().map(|q| q.symbol()).collect()
    }

    /// `6mn + 3`.
    pub fn state_count(&self) -> usize {
        6 * self.m * self.n + 3
    }

    /// Steps from `S0` to an absorbing state: `2n + 1`.
    pub fn pass_length(&self) -> usize {
        2 * self.n + 1
    }

    pub fn states(&self) -> Vec<StateId> {
        let mut out = Vec::with_capacity(self.state_count());
        out.push(StateId::S0);
        for i in 1..=self.m {
            for j in 1..=self.n {
                out.extend([
                    StateId::A(i, j),
                    StateId::Ap(i, j),
                    StateId::T(i, j),
                    StateId::Tp(i, j),
                    StateId::F(i, j),
                    StateId::Fp(i, j),
                ]);
            }
        }
        out.extend([StateId::AGood, StateId::ABad]);
        out
    }

    pub fn contains(&self, s: StateId) -> bool {
        match s {
            StateId::S0 | StateId::AGood | StateId::ABad => true,
            StateId::A(i, j)
            | StateId::Ap(i, j)
            | StateId::T(i, j)
            | StateId::Tp(i, j)
            | StateId::F(i, j)
            | StateId::Fp(i, j) => (1..=self.m).contains(&i) && (1..=self.n).contains(&j),
        }
    }

    /// Structured transition law; panics if `s` is not a state of this spec.
    pub fn law(&self, s: StateId, d: Decision) -> Law {
        assert!(self.contains(s), "state {s} outside the gadget");
        let n = self.n;
        match s {
            StateId::S0 => Law::Uniform((1..=self.m).map(|i| StateId::Ap(i, 1)).collect()),
            StateId::A(i, j) => match self.quantifier(j) {
                Quantifier::Existential => Law::Certain(match d {
                    Decision::D1 => StateId::T(i, j),
                    Decision::D2 => StateId::F(i, j),
                }),
                Quantifier::Universal => Law::Uniform(vec![StateId::T(i, j), StateId::F(i, j)]),
            },
            StateId::Ap(i, j) => match self.quantifier(j) {
                Quantifier::Existential => Law::Certain(match d {
                    Decision::D1 => StateId::Tp(i, j),
                    Decision::D2 => StateId::Fp(i, j),
                }),
                Quantifier::Universal => Law::Uniform(vec![StateId::Tp(i, j), StateId::Fp(i, j)]),
            },
            StateId::T(i, j) | StateId::F(i, j) => Law::Certain(StateId::a(i, j + 1, n)),
            StateId::Tp(i, j) => Law::Certain(if self.occurrence(i, j).crosses_on_true() {
                StateId::a(i, j + 1, n)
            } else {
                StateId::ap(i, j + 1, n)
            }),
            StateId::Fp(i, j) => Law::Certain(if self.occurrence(i, j).crosses_on_false() {
                StateId::a(i, j + 1, n)
            } else {
                StateId::ap(i, j + 1, n)
            }),
            StateId::AGood => Law::Dwell {
                stay: StateId::AGood,
                reset_exp: self.params.a_exp,
                leak: self.params.leak_exp.map(|l| (StateId::ABad, l)),
            },
            StateId::ABad => Law::Dwell { stay: StateId::ABad, reset_exp: self.params.b_exp, leak: None },
        }
    }

    /// Exact next-state distribution.
    pub fn transition(&self, s: StateId, d: Decision) -> Distribution {
        match self.law(s, d) {
            Law::Certain(t) => Distribution(vec![(t, Prob::one())]),
            Law::Uniform(ts) => {
                let p = ratio(1, ts.len() as i64);
                Distribution(ts.into_iter().map(|t| (t, p.clone())).collect())
            }
            Law::Dwell { stay, reset_exp, leak } => {
                let reset = inv_pow2(reset_exp);
                let mut out = Vec::with_capacity(3);
                let mut stay_p = Prob::one() - &reset;
                if let Some((to, exp)) = leak {
                    let lp = inv_pow2(exp);
                    stay_p -= &lp;
                    out.push((to, lp));
                }
                out.insert(0, (StateId::S0, reset));
                out.insert(0, (stay, stay_p));
                Distribution(out.into_iter().filter(|(_, p)| !p.is_zero()).collect())
            }
        }
    }

    pub fn observe(&self, s: StateId) -> ObservationLabel {
        match s {
            StateId::S0 => ObservationLabel::S0,
            StateId::A(_, j) => ObservationLabel::SetA(j),
            StateId::Ap(_, j) => ObservationLabel::SetAp(j),
            StateId::T(_, j) => ObservationLabel::SetT(j),
            StateId::Tp(_, j) => ObservationLabel::SetTp(j),
            StateId::F(_, j) => ObservationLabel::SetF(j),
            StateId::Fp(_, j) => ObservationLabel::SetFp(j),
            StateId::AGood => ObservationLabel::Good,
            StateId::ABad => ObservationLabel::Bad,
        }
    }

    /// Is the decision consulted at a state carrying this label?
    pub fn is_decision_label(&self, label: ObservationLabel) -> bool {
        match label {
            ObservationLabel::SetA(j) | ObservationLabel::SetAp(j) => {
                j <= self.n && self.quantifier(j) == Quantifier::Existential
            }
            _ => false,
        }
    }

    pub fn to_json(&self) -> Value {
        let occurrence: Vec<Vec<Occurrence>> = self.occurrence.chunks(self.n).map(|r| r.to_vec()).collect();
        let mut v = json!({
            "schema": SPEC_SCHEMA,
            "n": self.n,
            "m": self.m,
            "quantifiers": self.prefix_string(),
            "occurrence": occurrence,
            "a_exp": self.params.a_exp,
            "b_exp": self.params.b_exp,
            "state_count": self.state_count(),
            "label_count": 6 * self.n + 3,
            "decision_convention": {"D1": "T", "D2": "F"},
        });
        if let Some(l) = self.params.leak_exp {
            v["leak_exp"] = json!(l);
        }
        v
    }

    /// Every `(state, decision) -> distribution` triple.
    pub fn transitions_json(&self) -> Value {
        let mut rows = Vec::with_capacity(2 * self.state_count());
        for s in self.states() {
            for d in Decision::BOTH {
                let dist: Vec<Value> = self
                    .transition(s, d)
                    .outcomes()
                    .iter()
                    .map(|(t, p)| json!({"to": t.to_string(), "prob": fraction_string(p)}))
                    .collect();
                rows.push(json!({
                    "state": s.to_string(),
                    "label": self.observe(s).to_string(),
                    "decision": d.to_string(),
                    "next": dist,
                }));
            }
        }
        let mut spec = self.to_json();
        spec["schema"] = json!(TRANSITIONS_SCHEMA);
        spec["transitions"] = Value::Array(rows);
        spec
    }
}
