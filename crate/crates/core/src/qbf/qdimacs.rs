//! QDIMACS reader and writer.
//!
//! Accepted dialect: optional `c` comment lines, one `p cnf <n> <m>` header,
//! then `e`/`a` quantifier lines, then exactly `m` clause lines. Every
//! quantifier and clause line ends with `0`, and each line holds one item.
//! Variables missing from the prefix are existential and outermost, so the
//! implied order (free variables first, then the listed prefix) must be
//! `x1, x2, ..., xn`; the gadget reads variables in index order.

use std::fmt;

use super::{Clause, Literal, QbfFormula, Quantifier};

/// Header values above this are rejected to bound allocation.
const MAX_HEADER_VARS: usize = 1 << 20;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    MissingHeader,
    MalformedHeader(String),
    DuplicateHeader,
    InvalidToken(String),
    MissingTerminator,
    TokensAfterTerminator,
    VariableOutOfRange { var: u64, n: usize },
    EmptyClause,
    EmptyQuantifierBlock,
    DuplicateQuantifier { var: usize },
    QuantifierAfterClause,
    PrefixOrder { var: usize },
    ClauseCountMismatch { expected: usize, found: usize },
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::MissingHeader => write!(f, "missing `p cnf` header"),
            ParseErrorKind::MalformedHeader(why) => write!(f, "malformed header ({why})"),
            ParseErrorKind::DuplicateHeader => write!(f, "duplicate header"),
            ParseErrorKind::InvalidToken(t) => write!(f, "invalid token `{t}`"),
            ParseErrorKind::MissingTerminator => write!(f, "line not terminated by 0"),
            ParseErrorKind::TokensAfterTerminator => write!(f, "tokens after terminating 0"),
            ParseErrorKind::VariableOutOfRange { var, n } => {
                write!(f, "variable {var} out of range 1..={n}")
            }
            ParseErrorKind::EmptyClause => write!(f, "empty clause"),
            ParseErrorKind::EmptyQuantifierBlock => write!(f, "empty quantifier block"),
            ParseErrorKind::DuplicateQuantifier { var } => write!(f, "variable {var} quantified twice"),
            ParseErrorKind::QuantifierAfterClause => write!(f, "quantifier line after first clause"),
            ParseErrorKind::PrefixOrder { var } => {
                write!(f, "variable {var} breaks index order of the quantifier prefix")
            }
            ParseErrorKind::ClauseCountMismatch { expected, found } => {
                write!(f, "clause count mismatch (header says {expected}, found {found})")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{kind} at line {line}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

fn err(line: usize, kind: ParseErrorKind) -> ParseError {
    ParseError { line, kind }
}

/// Integers on a line up to and including the terminating zero.
fn zero_terminated(line_no: usize, tokens: &[&str]) -> Result<Vec<i64>, ParseError> {
    let mut out = Vec::new();
    for (k, tok) in tokens.iter().enumerate() {
        let v: i64 = tok.parse().map_err(|_| err(line_no, ParseErrorKind::InvalidToken(tok.to_string())))?;
        if v == 0 {
            if k + 1 != tokens.len() {
                return Err(err(line_no, ParseErrorKind::TokensAfterTerminator));
            }
            return Ok(out);
        }
        out.push(v);
    }
    Err(err(line_no, ParseErrorKind::MissingTerminator))
}

fn parse_header(line_no: usize, tokens: &[&str]) -> Result<(usize, usize), ParseError> {
    let bad = |why: &str| err(line_no, ParseErrorKind::MalformedHeader(why.to_string()));
    if tokens.len() != 4 || tokens[1] != "cnf" {
        return Err(bad("expected `p cnf <n> <m>`"));
    }
    let n: usize = tokens[2].parse().map_err(|_| bad("variable count is not a number"))?;
    let m: usize = tokens[3].parse().map_err(|_| bad("clause count is not a number"))?;
    if n == 0 {
        return Err(bad("variable count must be positive"));
    }
    if m == 0 {
        return Err(bad("clause count must be positive"));
    }
    if n > MAX_HEADER_VARS {
        return Err(bad("too many variables"));
    }
    Ok((n, m))
}

pub fn parse_qdimacs(text: &str) -> Result<QbfFormula, ParseError> {
    let mut header: Option<(usize, usize)> = None;
    let mut bound: Vec<Option<Quantifier>> = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut clauses: Vec<Clause> = Vec::new();
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        let Some(&first) = tokens.first() else { continue };
        if first.starts_with('c') {
            continue;
        }
        if first == "p" {
            if header.is_some() {
                return Err(err(line_no, ParseErrorKind::DuplicateHeader));
            }
            let (n, m) = parse_header(line_no, &tokens)?;
            header = Some((n, m));
            bound = vec![None; n];
            continue;
        }
        let Some((n, m)) = header else {
            return Err(err(line_no, ParseErrorKind::MissingHeader));
        };
        let check_var = |v: i64| -> Result<usize, ParseError> {
            let var = v.unsigned_abs();
            if var as u128 > n as u128 {
                return Err(err(line_no, ParseErrorKind::VariableOutOfRange { var, n }));
            }
            Ok(var as usize)
        };
        if first == "e" || first == "a" {
            if !clauses.is_empty() {
                return Err(err(line_no, ParseErrorKind::QuantifierAfterClause));
            }
            let kind = if first == "e" { Quantifier::Existential } else { Quantifier::Universal };
            let vars = zero_terminated(line_no, &tokens[1..])?;
            if vars.is_empty() {
                return Err(err(line_no, ParseErrorKind::EmptyQuantifierBlock));
            }
            for v in vars {
                if v < 0 {
                    return Err(err(line_no, ParseErrorKind::InvalidToken(v.to_string())));
                }
                let var = check_var(v)?;
                if bound[var - 1].is_some() {
                    return Err(err(line_no, ParseErrorKind::DuplicateQuantifier { var }));
                }
                if order.last().is_some_and(|&prev| var < prev) {
                    return Err(err(line_no, ParseErrorKind::PrefixOrder { var }));
                }
                bound[var - 1] = Some(kind);
                order.push(var);
            }
            continue;
        }
        let lits = zero_terminated(line_no, &tokens)?;
        if clauses.len() == m {
            return Err(err(line_no, ParseErrorKind::ClauseCountMismatch { expected: m, found: m + 1 }));
        }
        let mut literals = Vec::with_capacity(lits.len());
        for v in lits {
            let var = check_var(v)?;
            literals.push(Literal { var, positive: v > 0 });
        }
        match Clause::new(literals) {
            Some(c) => clauses.push(c),
            None => return Err(err(line_no, ParseErrorKind::EmptyClause)),
        }
    }

    let Some((n, m)) = header else {
        return Err(err(last_line.max(1), ParseErrorKind::MissingHeader));
    };
    if clauses.len() != m {
        return Err(err(last_line, ParseErrorKind::ClauseCountMismatch { expected: m, found: clauses.len() }));
    }
    // Free variables are outermost, so they must precede every bound one.
    if let Some(&first_bound) = order.first() {
        if let Some(free) = (first_bound..=n).find(|&v| bound[v - 1].is_none()) {
            return Err(err(last_line, ParseErrorKind::PrefixOrder { var: free }));
        }
    }
    let quants = bound.into_iter().map(|q| q.unwrap_or(Quantifier::Existential)).collect();
    // Ranges were checked line by line.
    Ok(QbfFormula::new(quants, clauses).expect("validated during parsing"))
}

/// Canonical QDIMACS text: every variable quantified explicitly, consecutive
/// variables of the same kind grouped on one line.
pub fn serialize_qdimacs(f: &QbfFormula) -> String {
    let mut out = format!("p cnf {} {}\n", f.n(), f.m());
    let mut j = 1;
    while j <= f.n() {
        let kind = f.quantifier(j);
        out.push(kind.symbol());
        while j <= f.n() && f.quantifier(j) == kind {
            out.push_str(&format!(" {j}"));
            j += 1;
        }
        out.push_str(" 0\n");
    }
    for c in f.clauses() {
        for l in c.literals() {
            out.push_str(&format!("{} ", l.to_dimacs()));
        }
        out.push_str("0\n");
    }
    out
}
