//! Quantified Boolean formulas in prenex CNF.
//!
//! The quantifier prefix always binds variables in index order `x1, x2, ..., xn`,
//! which is the column order of the channel gadget built from the formula.
//! Truth is decided by exhaustive game-tree recursion; when the formula is true
//! the recursion also yields a winning existential strategy as an explicit
//! decision tree over universal outcomes.

mod qdimacs;

pub use qdimacs::{parse_qdimacs, serialize_qdimacs, ParseError, ParseErrorKind};

use std::fmt;

use thiserror::Error;

/// Largest variable count accepted by [`evaluate_qbf`].
pub const MAX_EVAL_VARS: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quantifier {
    Existential,
    Universal,
}

impl Quantifier {
    pub fn symbol(self) -> char {
        match self {
            Quantifier::Existential => 'e',
            Quantifier::Universal => 'a',
        }
    }

    pub fn dual(self) -> Self {
        match self {
            Quantifier::Existential => Quantifier::Universal,
            Quantifier::Universal => Quantifier::Existential,
        }
    }
}

/// A literal `x_var` (positive) or `¬x_var` (negative); `var` is 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Literal {
    pub var: usize,
    pub positive: bool,
}

impl Literal {
    pub fn pos(var: usize) -> Self {
        Literal { var, positive: true }
    }

    pub fn neg(var: usize) -> Self {
        Literal { var, positive: false }
    }

    /// DIMACS integer encoding.
    pub fn to_dimacs(self) -> i64 {
        if self.positive {
            self.var as i64
        } else {
            -(self.var as i64)
        }
    }

    pub fn negated(self) -> Self {
        Literal { var: self.var, positive: !self.positive }
    }

    pub fn holds(self, value: bool) -> bool {
        value == self.positive
    }
}

/// A non-empty disjunction of literals, kept sorted and free of duplicates.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Clause {
    literals: Vec<Literal>,
}

impl Clause {
    /// Sorts and deduplicates; `None` when `literals` is empty.
    pub fn new(mut literals: Vec<Literal>) -> Option<Self> {
        if literals.is_empty() {
            return None;
        }
        // positive before negative for the same variable
        literals.sort_by_key(|l| (l.var, !l.positive));
        literals.dedup();
        Some(Clause { literals })
    }

    pub fn literals(&self) -> &[Literal] {
        &self.literals
    }

    pub fn max_var(&self) -> usize {
        self.literals.iter().map(|l| l.var).max().unwrap_or(0)
    }

    pub fn contains(&self, lit: Literal) -> bool {
        self.literals.contains(&lit)
    }

    /// True when some variable occurs with both polarities.
    pub fn is_tautology(&self) -> bool {
        self.literals.windows(2).any(|w| w[0].var == w[1].var && w[0].positive != w[1].positive)
    }

    /// Evaluates under a full assignment, `assignment[j - 1]` being `x_j`.
    pub fn satisfied_by(&self, assignment: &[bool]) -> bool {
        self.literals.iter().any(|l| l.var <= assignment.len() && l.holds(assignment[l.var - 1]))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormulaError {
    #[error("formula must have at least one variable")]
    NoVariables,
    #[error("formula must have at least one clause")]
    NoClauses,
    #[error("clause {clause} is empty")]
    EmptyClause { clause: usize },
    #[error("clause {clause} mentions x{var}, outside 1..={n}")]
    VariableOutOfRange { clause: usize, var: usize, n: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct QbfFormula {
    quants: Vec<Quantifier>,
    clauses: Vec<Clause>,
}

impl QbfFormula {
    pub fn new(quants: Vec<Quantifier>, clauses: Vec<Clause>) -> Result<Self, FormulaError> {
        if quants.is_empty() {
            return Err(FormulaError::NoVariables);
        }
        if clauses.is_empty() {
            return Err(FormulaError::NoClauses);
        }
        let n = quants.len();
        for (idx, c) in clauses.iter().enumerate() {
            if let Some(l) = c.literals().iter().find(|l| l.var == 0 || l.var > n) {
                return Err(FormulaError::VariableOutOfRange { clause: idx + 1, var: l.var, n });
            }
        }
        Ok(QbfFormula { quants, clauses })
    }

    /// Builds a formula from a prefix string such as `"ea"` and DIMACS-style clauses.
    pub fn from_dimacs(prefix: &str, clauses: &[&[i64]]) -> Result<Self, FormulaError> {
        let quants = prefix
            .chars()
            .map(|c| if c == 'a' { Quantifier::Universal } else { Quantifier::Existential })
            .collect::<Vec<_>>();
        let mut out = Vec::with_capacity(clauses.len());
        for (idx, lits) in clauses.iter().enumerate() {
            let lits =
                lits.iter().map(|&v| Literal { var: v.unsigned_abs() as usize, positive: v > 0 }).collect::<Vec<_>>();
            match Clause::new(lits) {
                Some(c) => out.push(c),
                None => return Err(FormulaError::EmptyClause { clause: idx + 1 }),
            }
        }
        QbfFormula::new(quants, out)
    }

    pub fn n(&self) -> usize {
        self.quants.len()
    }

    pub fn m(&self) -> usize {
        self.clauses.len()
    }

    pub fn quants(&self) -> &[Quantifier] {
        &self.quants
    }

    pub fn quantifier(&self, var: usize) -> Quantifier {
        self.quants[var - 1]
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    /// Prefix as a string of `e`/`a`, one character per variable.
    pub fn prefix_string(&self) -> String {
        self.quants.iter().map(|q| q.symbol()).collect()
    }

    pub fn universal_count(&self) -> usize {
        self.quants.iter().filter(|&&q| q == Quantifier::Universal).count()
    }

    /// 1-based indices of clauses containing both polarities of a variable.
    pub fn tautological_clauses(&self) -> Vec<usize> {
        self.clauses.iter().enumerate().filter(|(_, c)| c.is_tautology()).map(|(i, _)| i + 1).collect()
    }

    pub fn matrix_satisfied_by(&self, assignment: &[bool]) -> bool {
        self.clauses.iter().all(|c| c.satisfied_by(assignment))
    }

    /// Same prefix, every literal polarity flipped. Truth is preserved.
    pub fn with_flipped_polarities(&self) -> Self {
        let clauses = self
            .clauses
            .iter()
            .map(|c| Clause::new(c.literals().iter().map(|l| l.negated()).collect()).unwrap())
            .collect();
        QbfFormula { quants: self.quants.clone(), clauses }
    }
}

impl fmt::Display for QbfFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (j, q) in self.quants.iter().enumerate() {
            let sym = match q {
                Quantifier::Existential => '∃',
                Quantifier::Universal => '∀',
            };
            write!(f, "{sym}x{}", j + 1)?;
        }
        write!(f, " ")?;
        for c in &self.clauses {
            write!(f, "(")?;
            for (k, l) in c.literals().iter().enumerate() {
                if k > 0 {
                    write!(f, "∨")?;
                }
                if !l.positive {
                    write!(f, "¬")?;
                }
                write!(f, "x{}", l.var)?;
            }
            write!(f, ")")?;
        }
        Ok(())
    }
}

/// Decision tree for the existential player.
///
/// Nodes are visited in variable order. An `Exists` node fixes its variable; a
/// `Forall` node branches on the value the universal player chose.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum StrategyNode {
    Done,
    Exists { var: usize, value: bool, next: Box<StrategyNode> },
    Forall { var: usize, if_true: Box<StrategyNode>, if_false: Box<StrategyNode> },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StrategyError {
    #[error("strategy has no entry for x{var}")]
    Undefined { var: usize },
    #[error("strategy node for x{found} where x{expected} ({kind:?}) was expected")]
    Mismatch { expected: usize, found: usize, kind: Quantifier },
    #[error("value of universal x{var} not supplied")]
    MissingUniversal { var: usize },
    #[error("x{var} is not an existential variable")]
    NotExistential { var: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ExistentialStrategy {
    root: StrategyNode,
}

impl ExistentialStrategy {
    pub fn from_tree(root: StrategyNode) -> Self {
        ExistentialStrategy { root }
    }

    pub fn root(&self) -> &StrategyNode {
        &self.root
    }

    /// Builds the full tree for `quants`, asking `choose(j, prefix)` for the value
    /// of each existential `x_j` given the values of `x_1..x_{j-1}`.
    pub fn from_fn(quants: &[Quantifier], mut choose: impl FnMut(usize, &[bool]) -> bool) -> Self {
        fn build(
            quants: &[Quantifier],
            prefix: &mut Vec<bool>,
            choose: &mut dyn FnMut(usize, &[bool]) -> bool,
        ) -> StrategyNode {
            let j = prefix.len() + 1;
            if j > quants.len() {
                return StrategyNode::Done;
            }
            match quants[j - 1] {
                Quantifier::Existential => {
                    let value = choose(j, prefix);
                    prefix.push(value);
                    let next = build(quants, prefix, choose);
                    prefix.pop();
                    StrategyNode::Exists { var: j, value, next: Box::new(next) }
                }
                Quantifier::Universal => {
                    prefix.push(true);
                    let if_true = build(quants, prefix, choose);
                    prefix.pop();
                    prefix.push(false);
                    let if_false = build(quants, prefix, choose);
                    prefix.pop();
                    StrategyNode::Forall { var: j, if_true: Box::new(if_true), if_false: Box::new(if_false) }
                }
            }
        }
        let mut prefix = Vec::with_capacity(quants.len());
        ExistentialStrategy { root: build(quants, &mut prefix, &mut choose) }
    }

    /// Value the strategy assigns to existential `x_var`, given the universal values
    /// played so far (`universal(k)` for universal `k < var`).
    pub fn value_for(
        &self,
        quants: &[Quantifier],
        var: usize,
        universal: impl Fn(usize) -> Option<bool>,
    ) -> Result<bool, StrategyError> {
        if var == 0 || var > quants.len() || quants[var - 1] != Quantifier::Existential {
            return Err(StrategyError::NotExistential { var });
        }
        let mut node = &self.root;
        for k in 1..=var {
            let kind = quants[k - 1];
            node = match (node, kind) {
                (StrategyNode::Exists { var: v, value, next }, Quantifier::Existential) if *v == k => {
                    if k == var {
                        return Ok(*value);
                    }
                    next
                }
                (StrategyNode::Forall { var: v, if_true, if_false }, Quantifier::Universal) if *v == k => {
                    match universal(k) {
                        Some(true) => if_true,
                        Some(false) => if_false,
                        None => return Err(StrategyError::MissingUniversal { var: k }),
                    }
                }
                (StrategyNode::Done, _) => return Err(StrategyError::Undefined { var: k }),
                (StrategyNode::Exists { var: v, .. }, _) | (StrategyNode::Forall { var: v, .. }, _) => {
                    return Err(StrategyError::Mismatch { expected: k, found: *v, kind })
                }
            };
        }
        unreachable!("loop returns at k == var")
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QbfError {
    #[error("{n} variables exceeds the brute-force limit of {max}")]
    TooLarge { n: usize, max: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QbfOutcome {
    pub truth: bool,
    pub strategy: Option<ExistentialStrategy>,
}

/// Decides `f` by full game-tree recursion. Existential choices try `true` first,
/// so the returned strategy prefers `true` wherever both values win.
pub fn evaluate_qbf(f: &QbfFormula) -> Result<QbfOutcome, QbfError> {
    if f.n() > MAX_EVAL_VARS {
        return Err(QbfError::TooLarge { n: f.n(), max: MAX_EVAL_VARS });
    }
    let mut assignment = Vec::with_capacity(f.n());
    let strategy = solve(f, &mut assignment).map(ExistentialStrategy::from_tree);
    Ok(QbfOutcome { truth: strategy.is_some(), strategy })
}

fn solve(f: &QbfFormula, assignment: &mut Vec<bool>) -> Option<StrategyNode> {
    let j = assignment.len() + 1;
    if j > f.n() {
        return f.matrix_satisfied_by(assignment).then_some(StrategyNode::Done);
    }
    let branch = |value: bool, assignment: &mut Vec<bool>| {
        assignment.push(value);
        let r = solve(f, assignment);
        assignment.pop();
        r
    };
    match f.quantifier(j) {
        Quantifier::Existential => {
            for value in [true, false] {
                if let Some(next) = branch(value, assignment) {
                    return Some(StrategyNode::Exists { var: j, value, next: Box::new(next) });
                }
            }
            None
        }
        Quantifier::Universal => {
            let if_true = branch(true, assignment)?;
            let if_false = branch(false, assignment)?;
            Some(StrategyNode::Forall { var: j, if_true: Box::new(if_true), if_false: Box::new(if_false) })
        }
    }
}

/// True iff every play of `s` against every universal assignment satisfies all clauses.
pub fn check_strategy(f: &QbfFormula, s: &ExistentialStrategy) -> Result<bool, StrategyError> {
    let u = f.universal_count();
    for bits in 0u64..(1u64 << u) {
        let mut assignment = vec![false; f.n()];
        let mut used = 0;
        for j in 1..=f.n() {
            assignment[j - 1] = match f.quantifier(j) {
                Quantifier::Universal => {
                    let v = bits >> used & 1 == 1;
                    used += 1;
                    v
                }
                Quantifier::Existential => {
                    let prefix = &assignment[..j - 1];
                    s.value_for(f.quants(), j, |k| Some(prefix[k - 1]))?
                }
            };
        }
        if !f.matrix_satisfied_by(&assignment) {
            return Ok(false);
        }
    }
    Ok(true)
}
