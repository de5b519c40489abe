//! `qbfchan`: compile QBF instances into feedback channels, certify the
//! capacity gap, and simulate.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 indeterminate gap.

use std::fs;
use std::io::{self, Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use qbfchan::analysis::{AnalysisError, Verdict};
use qbfchan::channel::{write_trace, ChannelInput, TraceRow};
use qbfchan::policy::strategy_policy;
use qbfchan::qbf::ExistentialStrategy;
use qbfchan::rational::{fraction_string, parse_rational};
use qbfchan::sim::{monte_carlo_replicas, relay_bits};
use qbfchan::{
    build_channel, decide_gap, evaluate_qbf, optimal_bad_probability, parse_qdimacs, pass_bad_probability,
    ChannelParams, ChannelSim, ChannelSpec, DecisionPolicy, GapThresholds, ObservationLabel, QbfFormula,
};

#[derive(Parser, Debug)]
#[command(name = "qbfchan", version, about = "QBF to Markov-channel reduction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compile a QDIMACS formula into a channel description (JSON).
    Build {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        exps: Exponents,
        /// Include every transition row.
        #[arg(long)]
        expanded: bool,
    },
    /// Certify high or low capacity from exact rate bounds.
    Decide {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        exps: Exponents,
        #[command(flatten)]
        thresholds: ThresholdArgs,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Monte Carlo occupancy estimate, or the bit relay with `--relay`.
    Simulate {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        exps: Exponents,
        #[arg(long)]
        relay: bool,
        #[arg(long, default_value_t = 1_000_000)]
        steps: u64,
        #[arg(long, env = "QBFCHAN_SEED", default_value_t = 0)]
        seed: u64,
        /// Independent replicas, one thread each (occupancy mode only).
        #[arg(long, default_value_t = 1)]
        replicas: u64,
        /// Message bits for the relay, repeated as needed.
        #[arg(long, default_value = "10110010")]
        bits: String,
        #[arg(long, value_enum, default_value_t = PolicyChoice::Optimal)]
        policy: PolicyChoice,
        /// `csv` prints one row per completed cycle.
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Exact per-scenario pass outcomes (CSV).
    Pass {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        exps: Exponents,
        #[arg(long, value_enum, default_value_t = PolicyChoice::Optimal)]
        policy: PolicyChoice,
    },
    /// Step-by-step trajectory dump (tab-separated).
    Trace {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        exps: Exponents,
        #[arg(long, default_value_t = 100)]
        steps: u64,
        #[arg(long, env = "QBFCHAN_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "10110010")]
        bits: String,
        #[arg(long, value_enum, default_value_t = PolicyChoice::Optimal)]
        policy: PolicyChoice,
    },
    /// Truth versus verdict over every formula with n <= 3 and m <= 2.
    Corpus {
        #[command(flatten)]
        exps: Exponents,
        #[command(flatten)]
        thresholds: ThresholdArgs,
    },
}

#[derive(Args, Debug)]
struct InputArgs {
    /// QDIMACS file, or `-` for stdin.
    input: String,
}

#[derive(Args, Debug)]
struct Exponents {
    /// Good-state reset probability is 2^-a_exp [default: 20, or 6 for simulate and trace].
    #[arg(long)]
    a_exp: Option<u32>,
    /// Bad-state reset probability is 2^-b_exp [default: 40, or 12 for simulate and trace].
    #[arg(long)]
    b_exp: Option<u32>,
    /// Optional good-to-bad leak 2^-leak_exp (simulation only).
    #[arg(long)]
    leak_exp: Option<u32>,
}

/// Exact analysis needs reset probabilities far below the pass length;
/// simulation needs cycles short enough to complete many times.
const ANALYSIS_EXPS: (u32, u32) = (20, 40);
const SIMULATION_EXPS: (u32, u32) = (6, 12);

impl Exponents {
    fn params(&self, default: (u32, u32)) -> anyhow::Result<ChannelParams> {
        let a = self.a_exp.unwrap_or(default.0);
        let b = self.b_exp.unwrap_or(default.1);
        Ok(ChannelParams::new(a, b, self.leak_exp)?)
    }
}

#[derive(Args, Debug)]
struct ThresholdArgs {
    #[arg(long, default_value = "0.2")]
    low: String,
    #[arg(long, default_value = "0.8")]
    high: String,
}

impl ThresholdArgs {
    fn parse(&self) -> anyhow::Result<GapThresholds> {
        let low = parse_rational(&self.low).ok_or_else(|| anyhow!("invalid --low {:?}", self.low))?;
        let high = parse_rational(&self.high).ok_or_else(|| anyhow!("invalid --high {:?}", self.high))?;
        Ok(GapThresholds::new(low, high)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PolicyChoice {
    /// Backward-induction optimum (ties to D1).
    Optimal,
    /// The QBF winning strategy; the formula must be true.
    Strategy,
    /// Every existential variable set to true.
    AllTrue,
    /// Every existential variable set to false.
    AllFalse,
}

enum Failure {
    Input(anyhow::Error),
    Indeterminate(String),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Indeterminate(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Build { input, exps, expanded } => {
            let spec = build_channel(&load(&input)?, exps.params(ANALYSIS_EXPS)?);
            let doc = if expanded { spec.transitions_json() } else { spec.to_json() };
            print_json(&mut out, &doc)?;
        }
        Command::Decide { input, exps, thresholds, format } => {
            let params = exps.params(ANALYSIS_EXPS)?;
            if params.leak_exp().is_some() {
                return Err(Failure::Input(anyhow!("decide does not support --leak-exp")));
            }
            let spec = build_channel(&load(&input)?, params);
            match decide_gap(&spec, &thresholds.parse()?) {
                Ok(d) => match format {
                    Format::Json => print_json(&mut out, &d.to_json())?,
                    Format::Text => {
                        writeln!(out, "verdict: {:?}", d.verdict)?;
                        writeln!(out, "beta_min: {}", fraction_string(&d.beta_min))?;
                        writeln!(out, "lower: {} ({:.9})", fraction_string(&d.bounds.lower), to_f64(&d.bounds.lower))?;
                        writeln!(out, "upper: {:.9}", to_f64(&d.bounds.upper))?;
                    }
                    Format::Csv => return Err(Failure::Input(anyhow!("decide supports json or text"))),
                },
                Err(e @ AnalysisError::Indeterminate { .. }) => return Err(Failure::Indeterminate(e.to_string())),
                Err(e) => return Err(e.into()),
            }
        }
        Command::Simulate { input, exps, relay, steps, seed, replicas, bits, policy, format } => {
            if steps == 0 {
                return Err(Failure::Input(anyhow!("--steps must be at least 1")));
            }
            let formula = load(&input)?;
            let spec = build_channel(&formula, exps.params(SIMULATION_EXPS)?);
            let pol = choose_policy(&formula, &spec, policy)?;
            if relay {
                let report = relay_bits(&spec, &pol, &parse_bits(&bits)?, steps, seed)?;
                print_json(&mut out, &serde_json::to_value(&report)?)?;
            } else {
                let report = monte_carlo_replicas(&spec, &pol, steps, seed, replicas)?;
                match format {
                    Format::Json => print_json(&mut out, &serde_json::to_value(&report)?)?,
                    Format::Csv => out.write_all(report.cycles_csv().as_bytes())?,
                    Format::Text => return Err(Failure::Input(anyhow!("simulate supports json or csv"))),
                }
            }
        }
        Command::Pass { input, exps, policy } => {
            let formula = load(&input)?;
            let spec = build_channel(&formula, exps.params(ANALYSIS_EXPS)?);
            let pol = choose_policy(&formula, &spec, policy)?;
            out.write_all(pass_bad_probability(&spec, &pol)?.to_csv().as_bytes())?;
        }
        Command::Trace { input, exps, steps, seed, bits, policy } => {
            let formula = load(&input)?;
            let spec = build_channel(&formula, exps.params(SIMULATION_EXPS)?);
            let pol = choose_policy(&formula, &spec, policy)?;
            let rows = trace(&spec, &pol, &parse_bits(&bits)?, steps, seed)?;
            writeln!(out, "step\tstate\tdecision\tbit_in\tlabel\tbit_out")?;
            write_trace(&rows, &mut out)?;
        }
        Command::Corpus { exps, thresholds } => corpus(&mut out, exps.params(ANALYSIS_EXPS)?, &thresholds.parse()?)?,
    }
    Ok(())
}

fn to_f64(r: &qbfchan::rational::Prob) -> f64 {
    qbfchan::rational::to_f64(r)
}

fn load(input: &InputArgs) -> anyhow::Result<QbfFormula> {
    let text = if input.input == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s).context("reading stdin")?;
        s
    } else {
        let path = PathBuf::from(&input.input);
        fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?
    };
    let f = parse_qdimacs(&text).with_context(|| format!("parsing {}", input.input))?;
    for i in f.tautological_clauses() {
        log::warn!("clause {i} contains a variable in both polarities");
    }
    Ok(f)
}

fn print_json(out: &mut impl Write, v: &serde_json::Value) -> anyhow::Result<()> {
    serde_json::to_writer_pretty(&mut *out, v)?;
    writeln!(out)?;
    Ok(())
}

fn parse_bits(bits: &str) -> anyhow::Result<Vec<bool>> {
    let v = bits
        .chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(anyhow!("--bits must contain only 0 and 1")),
        })
        .collect::<anyhow::Result<Vec<bool>>>()?;
    if v.is_empty() {
        bail!("--bits must not be empty");
    }
    Ok(v)
}

fn choose_policy(f: &QbfFormula, spec: &ChannelSpec, choice: PolicyChoice) -> anyhow::Result<DecisionPolicy> {
    Ok(match choice {
        PolicyChoice::Optimal => {
            // with a leak the pass structure is unchanged; solve the leak-free twin
            let base = ChannelParams::new(spec.params().a_exp(), spec.params().b_exp(), None)?;
            optimal_bad_probability(&spec.with_params(base))?.1
        }
        PolicyChoice::Strategy => {
            let outcome = evaluate_qbf(f)?;
            let s = outcome.strategy.ok_or_else(|| anyhow!("formula is false; no winning strategy"))?;
            strategy_policy(&s)
        }
        PolicyChoice::AllTrue | PolicyChoice::AllFalse => {
            let v = choice == PolicyChoice::AllTrue;
            strategy_policy(&ExistentialStrategy::from_fn(f.quants(), |_, _| v)).with_name(if v {
                "all-true"
            } else {
                "all-false"
            })
        }
    })
}

/// Same encoder as the relay: restart the pass history at every `S0`, feed
/// the oldest undelivered bit.
fn trace(
    spec: &ChannelSpec,
    pol: &DecisionPolicy,
    bits: &[bool],
    steps: u64,
    seed: u64,
) -> anyhow::Result<Vec<TraceRow>> {
    let mut sim = ChannelSim::new(spec, seed);
    let mut history = vec![ObservationLabel::S0];
    let mut next = 0usize;
    let mut rows = Vec::with_capacity(steps as usize);
    for step in 1..=steps {
        let label = *history.last().unwrap();
        let decision = if spec.is_decision_label(label) { pol.decide(&history)? } else { qbfchan::Decision::D1 };
        let bit_in = bits[next % bits.len()];
        let o = sim.step(ChannelInput { decision, bit: bit_in });
        if o.label == ObservationLabel::Good {
            next += 1;
        }
        if o.label == ObservationLabel::S0 {
            history = vec![ObservationLabel::S0];
        } else {
            history.push(o.label);
        }
        rows.push(TraceRow { step, state: sim.state(), decision, bit_in, label: o.label, bit_out: o.bit });
    }
    Ok(rows)
}

/// Every non-empty clause over ±x1..±xn with each variable absent, positive or negative.
fn all_clauses(n: usize) -> Vec<Vec<i64>> {
    (1..3usize.pow(n as u32))
        .map(|code| {
            let mut lits = Vec::new();
            let mut c = code;
            for v in 1..=n as i64 {
                match c % 3 {
                    1 => lits.push(v),
                    2 => lits.push(-v),
                    _ => {}
                }
                c /= 3;
            }
            lits
        })
        .collect()
}

#[derive(Default)]
struct Tally {
    formulas: u64,
    truths: u64,
    high: u64,
    low: u64,
    indeterminate: u64,
    agree: u64,
}

fn corpus(out: &mut impl Write, params: ChannelParams, thresholds: &GapThresholds) -> Result<(), Failure> {
    if params.leak_exp().is_some() {
        return Err(Failure::Input(anyhow!("corpus does not support --leak-exp")));
    }
    writeln!(out, "n\tformulas\ttrue\tfalse\thigh\tlow\tindeterminate\tagree")?;
    let mut total = Tally::default();
    let mut rows = Vec::new();
    for n in 1..=3usize {
        let clauses = all_clauses(n);
        let mut t = Tally::default();
        for bits in 0u32..1 << n {
            let prefix: String = (0..n).map(|k| if bits >> k & 1 == 1 { 'a' } else { 'e' }).collect();
            let mut sets: Vec<Vec<&[i64]>> = clauses.iter().map(|c| vec![c.as_slice()]).collect();
            for c1 in &clauses {
                for c2 in &clauses {
                    sets.push(vec![c1.as_slice(), c2.as_slice()]);
                }
            }
            for set in sets {
                let f = QbfFormula::from_dimacs(&prefix, &set)?;
                let truth = evaluate_qbf(&f)?.truth;
                let spec = build_channel(&f, params);
                t.formulas += 1;
                t.truths += truth as u64;
                match decide_gap(&spec, thresholds) {
                    Ok(d) => {
                        let high = d.verdict == Verdict::HighCapacity;
                        if high {
                            t.high += 1;
                        } else {
                            t.low += 1;
                        }
                        t.agree += (high == truth) as u64;
                    }
                    Err(AnalysisError::Indeterminate { .. }) => t.indeterminate += 1,
                    Err(e) => return Err(e.into()),
                }
            }
        }
        rows.push((n.to_string(), t));
    }
    for (_, t) in &rows {
        total.formulas += t.formulas;
        total.truths += t.truths;
        total.high += t.high;
        total.low += t.low;
        total.indeterminate += t.indeterminate;
        total.agree += t.agree;
    }
    rows.push(("all".into(), total));
    for (label, t) in &rows {
        writeln!(
            out,
            "{label}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            t.formulas,
            t.truths,
            t.formulas - t.truths,
            t.high,
            t.low,
            t.indeterminate,
            t.agree
        )?;
    }
    let t = &rows.last().unwrap().1;
    let summary = json!({"formulas": t.formulas, "agree": t.agree, "a_exp": params.a_exp(), "b_exp": params.b_exp()});
    writeln!(out, "# {summary}")?;
    if t.indeterminate > 0 {
        return Err(Failure::Indeterminate(format!("{} formulas indeterminate at these exponents", t.indeterminate)));
    }
    Ok(())
}
