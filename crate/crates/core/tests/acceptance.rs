//! End-to-end acceptance checks over the exhaustive small corpus.
//!
//! Runs without the libtest harness so every criterion prints one status line
//! even when all of them pass. Exits non-zero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use num_traits::{One, Zero};
use qbfchan::analysis::{decide_gap, GapThresholds, Verdict};
use qbfchan::channel::ChannelInput;
use qbfchan::policy::{enumerate_policies, strategy_policy, trace_scenario, PolicyError};
use qbfchan::qbf::{ExistentialStrategy, ParseErrorKind, QbfFormula, Quantifier};
use qbfchan::rational::{integer, ratio, to_f64, Prob};
use qbfchan::sim::{monte_carlo, relay_bits};
use qbfchan::{
    build_channel, evaluate_qbf, optimal_bad_probability, parse_qdimacs, pass_bad_probability, serialize_qdimacs,
    ChannelParams, ChannelSim, ChannelSpec, Decision, DecisionPolicy, ObservationLabel, StateId,
};

use common::{corpus, q1, q2};

/// Plain recursive game evaluation, kept separate from the library solver.
fn truth(f: &QbfFormula) -> bool {
    fn go(f: &QbfFormula, assignment: &mut Vec<bool>) -> bool {
        let j = assignment.len();
        if j == f.n() {
            return f.clauses().iter().all(|c| c.literals().iter().any(|l| assignment[l.var - 1] == l.positive));
        }
        let mut branch = |v: bool| {
            assignment.push(v);
            let r = go(f, assignment);
            assignment.pop();
            r
        };
        match f.quants()[j] {
            Quantifier::Existential => branch(true) || branch(false),
            Quantifier::Universal => branch(true) && branch(false),
        }
    }
    go(f, &mut Vec::new())
}

fn clause_satisfied_by_prefix(f: &QbfFormula, row: usize, values: &[bool]) -> bool {
    f.clauses()[row - 1].literals().iter().any(|l| l.var <= values.len() && values[l.var - 1] == l.positive)
}

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

fn analysis_params() -> ChannelParams {
    ChannelParams::new(20, 40, None).unwrap()
}

fn sim_params() -> ChannelParams {
    ChannelParams::new(6, 12, None).unwrap()
}

fn criterion_1(formulas: &[QbfFormula]) -> Outcome {
    let mut mismatches = 0;
    let mut solver_disagreements = 0;
    for f in formulas {
        let t = truth(f);
        if evaluate_qbf(f).unwrap().truth != t {
            solver_disagreements += 1;
        }
        let (beta, _) = optimal_bad_probability(&build_channel(f, analysis_params())).unwrap();
        if beta.is_zero() != t {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0 && solver_disagreements == 0,
        format!(
            "{} formulas, {mismatches} beta/truth mismatches, {solver_disagreements} solver disagreements",
            formulas.len()
        ),
    )
}

fn criterion_2(formulas: &[QbfFormula]) -> Outcome {
    let mut violations = 0;
    let mut checked = 0;
    let mut tightest: Option<Prob> = None;
    for f in formulas.iter().filter(|f| !truth(f)) {
        checked += 1;
        let (beta, _) = optimal_bad_probability(&build_channel(f, analysis_params())).unwrap();
        let bound = ratio(1, f.m() as i64) / integer(1 << f.n());
        if beta < bound {
            violations += 1;
        }
        let slack = &beta / &bound;
        if tightest.as_ref().is_none_or(|s| slack < *s) {
            tightest = Some(slack);
        }
    }
    let tightest = tightest.map(|s| s.to_string()).unwrap_or_default();
    outcome(violations == 0, format!("{checked} false formulas, {violations} violations, min beta/bound = {tightest}"))
}

fn criterion_3(formulas: &[QbfFormula]) -> Outcome {
    let t = GapThresholds::default();
    let mut disagree = 0;
    for f in formulas {
        let truth = truth(f);
        match decide_gap(&build_channel(f, analysis_params()), &t) {
            Ok(d) => {
                let good = match d.verdict {
                    Verdict::HighCapacity => truth && d.bounds.lower > ratio(4, 5),
                    Verdict::LowCapacity => !truth && d.bounds.upper < ratio(1, 5),
                };
                disagree += !good as usize;
            }
            Err(_) => disagree += 1,
        }
    }
    // anchors, recomputed independently of the library formulas
    let q1d = decide_gap(&build_channel(&q1(), analysis_params()), &t).unwrap();
    let q1_lower_ok = q1d.bounds.lower == ratio(1_048_576, 1_048_581);
    let q2d = decide_gap(&build_channel(&q2(), analysis_params()), &t).unwrap();
    let p = 2f64.powi(-20);
    let q = 2f64.powi(-40);
    let e_cycle = 5.0 + 0.75 / p + 0.25 / q;
    let expected_upper = (0.75 / p + 27f64.log2()) / e_cycle;
    let q2_upper = to_f64(&q2d.bounds.upper);
    let q2_upper_ok = q2_upper >= expected_upper
        && q2_upper - expected_upper <= 2f64.powi(-12) / e_cycle + 1e-18
        && (q2_upper - 2.861e-6).abs() < 5e-10;
    outcome(
        disagree == 0 && q1_lower_ok && q2_upper_ok,
        format!(
            "{} formulas, {disagree} disagreements; Q1 lower = {}; Q2 upper = {q2_upper:.6e}",
            formulas.len(),
            q1d.bounds.lower
        ),
    )
}

fn criterion_4(formulas: &[QbfFormula]) -> Outcome {
    let mut discrepancies = 0;
    let mut compared = 0;
    let mut skipped = 0;
    let mut policies = 0usize;
    for f in formulas {
        let spec = build_channel(f, analysis_params());
        let all = match enumerate_policies(&spec) {
            Ok(all) => all,
            Err(PolicyError::TooLarge { .. }) => {
                skipped += 1;
                continue;
            }
            Err(e) => panic!("{e}"),
        };
        policies += all.len();
        let brute =
            all.iter().map(|pol| pass_bad_probability(&spec, pol).unwrap().beta).min().expect("at least one policy");
        let (beta, witness) = optimal_bad_probability(&spec).unwrap();
        let witness_beta = pass_bad_probability(&spec, &witness).unwrap().beta;
        compared += 1;
        if beta != brute || witness_beta != beta {
            discrepancies += 1;
        }
    }
    outcome(
        discrepancies == 0,
        format!("{compared} instances ({policies} policies), {skipped} over guard, {discrepancies} discrepancies"),
    )
}

fn criterion_5() -> Outcome {
    let seed = 7;
    let steps = 1_000_000;
    let start = Instant::now();
    let spec1 = build_channel(&q1(), sim_params());
    let winning = strategy_policy(&evaluate_qbf(&q1()).unwrap().strategy.unwrap());
    let r1 = monte_carlo(&spec1, &winning, steps, seed).unwrap();
    let t1 = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let spec2 = build_channel(&q2(), sim_params());
    let x1_true = strategy_policy(&ExistentialStrategy::from_fn(q2().quants(), |_, _| true));
    let r2 = monte_carlo(&spec2, &x1_true, steps, seed).unwrap();
    let t2 = start.elapsed().as_secs_f64();

    let d1 = (r1.good_frequency - 64.0 / 69.0).abs();
    let d2 = (r2.bad_pass_fraction - 0.25).abs();
    let d3 = (r2.good_frequency - 48.0 / 1077.0).abs();
    outcome(
        d1 <= 0.01 && d2 <= 0.02 && d3 <= 0.01 && t1 < 30.0 && t2 < 30.0,
        format!(
            "Q1 good {:.5} (|d| {d1:.5}); Q2 bad passes {:.4} over {} (|d| {d2:.4}), good {:.5} (|d| {d3:.5}); {t1:.1}s, {t2:.1}s",
            r1.good_frequency, r2.bad_pass_fraction, r2.passes, r2.good_frequency
        ),
    )
}

/// Replays the relay's trajectory with a separate encoder and counts good
/// post-transition states. Input bits do not influence transitions.
fn replay_good_steps(spec: &ChannelSpec, pol: &DecisionPolicy, steps: u64, seed: u64) -> u64 {
    let mut sim = ChannelSim::new(spec, seed);
    let mut history = vec![ObservationLabel::S0];
    let mut good = 0;
    for _ in 0..steps {
        let label = *history.last().unwrap();
        let decision = if spec.is_decision_label(label) { pol.decide(&history).unwrap() } else { Decision::D1 };
        let out = sim.step(ChannelInput { decision, bit: false });
        if sim.state() == StateId::AGood {
            good += 1;
        }
        if out.label == ObservationLabel::S0 {
            history = vec![ObservationLabel::S0];
        } else {
            history.push(out.label);
        }
    }
    good
}

fn criterion_6(formulas: &[QbfFormula]) -> Outcome {
    let steps = 100_000;
    let mut runs = 0;
    let mut failures = 0;
    let mut delivered = 0u64;
    for (k, f) in formulas.iter().enumerate().step_by(97) {
        let spec = build_channel(f, sim_params());
        let (_, pol) = optimal_bad_probability(&spec).unwrap();
        let seed = 1000 + k as u64;
        let bits: Vec<bool> = (0..13).map(|b| (k + b) % 3 == 0).collect();
        let r = relay_bits(&spec, &pol, &bits, steps, seed).unwrap();
        let expected = replay_good_steps(&spec, &pol, steps, seed);
        runs += 1;
        delivered += r.bits_delivered;
        if r.bit_errors != 0 || r.bits_delivered != expected || r.good_steps != expected {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("{runs} specs x {steps} steps, {delivered} bits delivered, {failures} failures"))
}

fn criterion_7(formulas: &[QbfFormula]) -> Outcome {
    let mut row_failures = 0;
    let mut length_failures = 0;
    let mut prime_failures = 0;
    let mut trajectories = 0;
    let leaky = ChannelParams::new(3, 5, Some(7)).unwrap();
    for f in formulas {
        for params in [analysis_params(), leaky] {
            let spec = build_channel(f, params);
            for s in spec.states() {
                for d in Decision::BOTH {
                    if spec.transition(s, d).total() != Prob::one() {
                        row_failures += 1;
                    }
                }
            }
        }
        let spec = build_channel(f, analysis_params());
        let n = f.n();
        for row in 1..=f.m() {
            for bits in 0u32..1 << n {
                let values: Vec<bool> = (0..n).map(|k| bits >> k & 1 == 1).collect();
                let universals: Vec<bool> =
                    (0..n).filter(|&k| f.quants()[k] == Quantifier::Universal).map(|k| values[k]).collect();
                let trace = trace_scenario(&spec, row, &universals, |h| {
                    let col = h.last().unwrap().column().unwrap();
                    Ok::<_, ()>(Decision::from_value(values[col - 1]))
                })
                .unwrap();
                trajectories += 1;
                if trace.states.len() != 2 * n + 1 {
                    length_failures += 1;
                }
                // entering column j+1 (or the end), primed iff x1..xj left the clause unsatisfied
                for (t, s) in trace.states.iter().enumerate() {
                    let assigned = match s {
                        StateId::A(_, j) | StateId::Ap(_, j) => j - 1,
                        StateId::AGood | StateId::ABad => n,
                        _ => continue,
                    };
                    debug_assert_eq!(t % 2, 0);
                    let unsatisfied = !clause_satisfied_by_prefix(f, row, &values[..assigned]);
                    if s.is_primed() != unsatisfied {
                        prime_failures += 1;
                    }
                }
            }
        }
    }
    // simulated passes under the optimal policy also have length 2n + 1
    for (k, f) in formulas.iter().enumerate().step_by(59) {
        let spec = build_channel(f, sim_params());
        let (_, pol) = optimal_bad_probability(&spec).unwrap();
        let mut sim = ChannelSim::new(&spec, k as u64);
        for _ in 0..20 {
            if sim.run_pass(&pol).unwrap().len() != 2 * f.n() + 1 {
                length_failures += 1;
            }
            sim.reset();
        }
    }
    outcome(
        row_failures + length_failures + prime_failures == 0,
        format!(
            "{trajectories} trajectories; {row_failures} bad rows, {length_failures} bad lengths, {prime_failures} prime-status violations"
        ),
    )
}

/// Name, input text, and the error class it must be rejected with.
type Adversarial = (&'static str, &'static str, fn(&ParseErrorKind) -> bool);

fn adversarial_inputs() -> Vec<Adversarial> {
    use ParseErrorKind as K;
    vec![
        ("empty input", "", |k| *k == K::MissingHeader),
        ("clause before header", "1 2 0\np cnf 2 1\n", |k| *k == K::MissingHeader),
        ("short header", "p cnf 2\n1 0\n", |k| matches!(k, K::MalformedHeader(_))),
        ("wrong format tag", "p dnf 2 1\n1 0\n", |k| matches!(k, K::MalformedHeader(_))),
        ("zero variables", "p cnf 0 1\n1 0\n", |k| matches!(k, K::MalformedHeader(_))),
        ("zero clauses", "p cnf 2 0\n", |k| matches!(k, K::MalformedHeader(_))),
        ("non-numeric count", "p cnf x 1\n1 0\n", |k| matches!(k, K::MalformedHeader(_))),
        ("oversized header", "p cnf 2000000 1\n1 0\n", |k| matches!(k, K::MalformedHeader(_))),
        ("duplicate header", "p cnf 2 1\np cnf 2 1\n1 0\n", |k| *k == K::DuplicateHeader),
        ("non-numeric literal", "p cnf 2 1\n1 x 0\n", |k| matches!(k, K::InvalidToken(_))),
        ("literal overflow", "p cnf 2 1\n1 99999999999999999999 0\n", |k| matches!(k, K::InvalidToken(_))),
        ("negative quantified variable", "p cnf 2 1\na -1 0\n1 0\n", |k| matches!(k, K::InvalidToken(_))),
        ("missing terminator", "p cnf 2 1\n1 2\n", |k| *k == K::MissingTerminator),
        ("tokens after terminator", "p cnf 2 1\n1 0 2\n", |k| *k == K::TokensAfterTerminator),
        ("variable out of range", "p cnf 2 1\n1 3 0\n", |k| *k == K::VariableOutOfRange { var: 3, n: 2 }),
        ("empty clause", "p cnf 2 1\n0\n", |k| *k == K::EmptyClause),
        ("empty quantifier block", "p cnf 2 1\ne 0\n1 0\n", |k| *k == K::EmptyQuantifierBlock),
        ("variable quantified twice", "p cnf 2 1\ne 1 0\na 1 0\n1 0\n", |k| *k == K::DuplicateQuantifier { var: 1 }),
        ("quantifier after clause", "p cnf 2 2\ne 1 0\n1 0\na 2 0\n2 0\n", |k| *k == K::QuantifierAfterClause),
        ("prefix out of index order", "p cnf 2 1\ne 2 0\na 1 0\n1 0\n", |k| *k == K::PrefixOrder { var: 1 }),
        ("free variable after bound ones", "p cnf 3 1\ne 1 0\na 2 0\n3 0\n", |k| *k == K::PrefixOrder { var: 3 }),
        ("too few clauses", "p cnf 2 2\ne 1 2 0\n1 0\n", |k| *k == K::ClauseCountMismatch { expected: 2, found: 1 }),
        ("too many clauses", "p cnf 2 1\n1 0\n2 0\n", |k| *k == K::ClauseCountMismatch { expected: 1, found: 2 }),
    ]
}

fn criterion_8(formulas: &[QbfFormula]) -> Outcome {
    let mut roundtrip_failures = 0;
    for f in formulas {
        let text = serialize_qdimacs(f);
        match parse_qdimacs(&text) {
            Ok(g) if g == *f && serialize_qdimacs(&g) == text => {}
            _ => roundtrip_failures += 1,
        }
    }
    let cases = adversarial_inputs();
    let mut rejected = 0;
    let mut wrong = Vec::new();
    for (name, text, expect) in &cases {
        match parse_qdimacs(text) {
            Err(e) if expect(&e.kind) => rejected += 1,
            other => wrong.push(format!("{name}: {other:?}")),
        }
    }
    outcome(
        roundtrip_failures == 0 && wrong.is_empty() && cases.len() >= 20,
        format!(
            "{} round trips, {roundtrip_failures} failures; {rejected}/{} adversarial inputs rejected as expected{}",
            formulas.len(),
            cases.len(),
            if wrong.is_empty() { String::new() } else { format!(" [{}]", wrong.join("; ")) }
        ),
    )
}

fn main() -> ExitCode {
    let formulas = corpus();
    type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("optimal beta is zero exactly for true formulas", Box::new(|| criterion_1(&formulas))),
        ("false formulas have beta_min >= 2^-n / m", Box::new(|| criterion_2(&formulas))),
        ("gap verdicts at a_exp=20, b_exp=40", Box::new(|| criterion_3(&formulas))),
        ("backward induction equals brute-force policy minimum", Box::new(|| criterion_4(&formulas))),
        ("Monte Carlo agrees with exact occupancy", Box::new(criterion_5)),
        ("relay is error-free and counts good steps", Box::new(|| criterion_6(&formulas))),
        ("structural invariants", Box::new(|| criterion_7(&formulas))),
        ("QDIMACS round trip and rejection", Box::new(|| criterion_8(&formulas))),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let status = if o.ok { "PASS" } else { "FAIL" };
        println!("criterion {}: {status} {name}: {} ({:.1}s)", k + 1, o.detail, start.elapsed().as_secs_f64());
        failed += !o.ok as usize;
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
