#![allow(dead_code)]

use qbfchan::qbf::{Clause, Literal, QbfFormula, Quantifier};

/// Every non-empty clause over ±x1..±xn: each variable absent, positive or
/// negative. 26 of them for n = 3.
pub fn clauses_over(n: usize) -> Vec<Clause> {
    let mut out = Vec::new();
    for code in 1..3usize.pow(n as u32) {
        let mut lits = Vec::new();
        let mut c = code;
        for var in 1..=n {
            match c % 3 {
                1 => lits.push(Literal::pos(var)),
                2 => lits.push(Literal::neg(var)),
                _ => {}
            }
            c /= 3;
        }
        out.push(Clause::new(lits).unwrap());
    }
    out
}

pub fn prefixes(n: usize) -> Vec<Vec<Quantifier>> {
    (0..1u32 << n)
        .map(|bits| {
            (0..n).map(|k| if bits >> k & 1 == 1 { Quantifier::Universal } else { Quantifier::Existential }).collect()
        })
        .collect()
}

/// All formulas with n <= 3 variables, every prefix, and one clause or an
/// ordered pair of clauses drawn from the non-empty clauses over ±x1..±xn.
pub fn corpus() -> Vec<QbfFormula> {
    let mut out = Vec::new();
    for n in 1..=3 {
        let clauses = clauses_over(n);
        for quants in prefixes(n) {
            for c in &clauses {
                out.push(QbfFormula::new(quants.clone(), vec![c.clone()]).unwrap());
            }
            for c1 in &clauses {
                for c2 in &clauses {
                    out.push(QbfFormula::new(quants.clone(), vec![c1.clone(), c2.clone()]).unwrap());
                }
            }
        }
    }
    out
}

pub fn q1() -> QbfFormula {
    QbfFormula::from_dimacs("ea", &[&[1, 2], &[1, -2]]).unwrap()
}

pub fn q2() -> QbfFormula {
    QbfFormula::from_dimacs("ea", &[&[1, 2], &[-1, 2]]).unwrap()
}
