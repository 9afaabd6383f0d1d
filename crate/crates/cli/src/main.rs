use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bavwm::bavwm::{self as solver, BavwmResult};
use bavwm::gap::{self, FractionalAssignment, GapInstance};
use bavwm::harness::{self, GeneratorConfig};
use bavwm::mechanism::{self, BicMode, MappingDistribution, Prior, SolverKind};
use bavwm::model::BavwmInstance;
use bavwm::{BigRational, Scalar};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

const MECHANISM_TOL: f64 = 1e-7;

#[derive(Parser)]
#[command(name = "bavwm", version, about = "Budget-feasible auction solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Maximize virtual welfare on a BAVWM instance.
    SolveBavwm {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Run in exact rational arithmetic.
        #[arg(long)]
        exact_arith: bool,
        /// Write the relaxation LP as text.
        #[arg(long)]
        dump_lp: Option<PathBuf>,
    },
    /// Round a GAP instance (solving its LP unless a fractional assignment is given).
    RoundGap {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        exact: bool,
    },
    /// Revenue-optimal mechanism for a finite prior.
    SolveMechanism {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        bic_mode: BicModeArg,
    },
    /// Run the virtual welfare mechanism on one reported profile.
    RunMechanism {
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        delta: PathBuf,
        /// Comma-separated 0-based type index per bidder.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        profile: Vec<usize>,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum)]
        solver: MethodArg,
    },
    /// Compare exact and approximate solvers on seeded random instances.
    Bench {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        n_max: usize,
        #[arg(long)]
        m_max: usize,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the invariant suites.
    Verify {
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Exact,
    Approx,
}

#[derive(Clone, Copy, ValueEnum)]
enum BicModeArg {
    Full,
    BudgetDownward,
}

impl From<BicModeArg> for BicMode {
    fn from(m: BicModeArg) -> Self {
        match m {
            BicModeArg::Full => BicMode::Full,
            BicModeArg::BudgetDownward => BicMode::BudgetDownward,
        }
    }
}

/// Outcome of a subcommand: the JSON to print plus any guarantee violations.
struct Outcome {
    output: Value,
    violations: Vec<String>,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn number<S: Scalar>(x: &S) -> Value {
    if S::EXACT {
        json!({ "value": x.to_f64(), "exact": x.to_string() })
    } else {
        json!(x.to_f64())
    }
}

fn bavwm_outcome<S: Scalar>(inst: &BavwmInstance<S>, result: &BavwmResult<S>) -> Outcome {
    let mut violations = Vec::new();
    if !result
        .prices
        .is_feasible_for(&inst.normalize(), &result.allocation)
    {
        violations.push("prices exceed budget or bundle value".to_string());
    }
    let mut output = json!({
        "method": result.method,
        "allocation": result.allocation,
        "prices": result.prices.prices.iter().map(number).collect::<Vec<_>>(),
        "objective": number(&result.objective_value),
    });
    if let Some(bound) = &result.certificate {
        output["lp_certificate"] = number(bound);
        if !result.objective_value.le_tol(bound) {
            violations.push("objective exceeds the LP upper bound".to_string());
        }
    }
    if let Some(trace) = &result.trace {
        output["rounded_split_objective"] = number(&trace.rounded_objective);
        output["selected_split_objective"] = number(&trace.selected_objective);
        let third = trace.rounded_objective.clone() / S::from_usize(3);
        if !trace.selected_objective.ge_tol(&third) {
            violations
                .push("tripartition kept less than a third of the rounded objective".to_string());
        }
        if !(trace.lp_optimum.clone() / S::from_usize(3)).le_tol(&result.objective_value) {
            violations.push("objective below a third of the LP optimum".to_string());
        }
    }
    Outcome { output, violations }
}

fn solve_bavwm_as<S: Scalar>(
    raw: &BavwmInstance<f64>,
    method: MethodArg,
    dump: Option<&Path>,
) -> Result<Outcome> {
    let inst = raw.convert::<S>();
    if let Some(path) = dump {
        let (lp, _) = solver::build_relaxation(&inst.normalize())?;
        fs::write(path, lp.to_text()).with_context(|| format!("writing {}", path.display()))?;
    }
    let result = match method {
        MethodArg::Exact => solver::solve_exact(&inst)?,
        MethodArg::Approx => solver::solve_approx(&inst)?,
    };
    Ok(bavwm_outcome(&inst, &result))
}

fn solve_bavwm(
    input: &Path,
    method: MethodArg,
    exact: bool,
    dump: Option<&Path>,
) -> Result<Outcome> {
    let raw: BavwmInstance<f64> = read_json(input)?;
    let violations = raw.validate();
    if !violations.is_empty() {
        bail!("invalid instance: {violations:?}");
    }
    if exact {
        solve_bavwm_as::<BigRational>(&raw, method, dump)
    } else {
        solve_bavwm_as::<f64>(&raw, method, dump)
    }
}

#[derive(Deserialize)]
struct GapInput {
    #[serde(flatten)]
    instance: GapInstance<f64>,
    #[serde(default)]
    fractional: Option<FractionalAssignment<f64>>,
}

fn round_gap_as<S: Scalar>(input: &GapInput) -> Result<Outcome> {
    let g = input.instance.convert::<S>();
    let frac = match &input.fractional {
        Some(f) => FractionalAssignment {
            x: f.x
                .iter()
                .map(|row| row.iter().map(|v| S::from_f64(*v)).collect())
                .collect(),
        },
        None => gap::solve_gap_lp(&g)?,
    };
    let frac_cost = g.fractional_cost(&frac);
    let rounded = gap::st_round(&g, &frac)?;
    let cost = g.cost(&rounded);
    let loads = g.loads(&rounded);
    let mut violations = Vec::new();
    let two = S::from_usize(2);
    for (i, load) in loads.iter().enumerate() {
        if !load.le_tol(&(two.clone() * g.capacities[i].clone())) {
            violations.push(format!("machine {i} load {load} above twice its capacity"));
        }
    }
    if !cost.ge_tol(&frac_cost) {
        violations.push(format!("cost {cost} below the fractional cost {frac_cost}"));
    }
    Ok(Outcome {
        output: json!({
            "assignment": rounded.machine_of,
            "cost": number(&cost),
            "fractional_cost": number(&frac_cost),
            "loads": loads.iter().map(number).collect::<Vec<_>>(),
            "capacities": g.capacities.iter().map(number).collect::<Vec<_>>(),
        }),
        violations,
    })
}

fn round_gap(input: &Path, exact: bool) -> Result<Outcome> {
    let parsed: GapInput = read_json(input)?;
    if exact {
        round_gap_as::<BigRational>(&parsed)
    } else {
        round_gap_as::<f64>(&parsed)
    }
}

fn solve_mechanism(input: &Path, mode: BicMode) -> Result<Outcome> {
    let prior: Prior = read_json(input)?;
    let sol = mechanism::solve_optimal_mechanism::<f64>(&prior, mode)?;
    let mut violations = Vec::new();
    for v in mechanism::check_bic(&sol, &prior, mode, MECHANISM_TOL) {
        violations.push(format!(
            "BIC: bidder {} type {} gains {} by reporting {}",
            v.bidder, v.true_type, v.slack, v.reported_type
        ));
    }
    for v in mechanism::check_ex_post(&sol, &prior, MECHANISM_TOL) {
        violations.push(format!("ex post: {v:?}"));
    }
    let profiles: Vec<Value> = sol
        .profiles
        .iter()
        .enumerate()
        .map(|(p, profile)| {
            let support: Vec<Value> = sol
                .support(p)
                .into_iter()
                .map(|(alloc, prob, z)| {
                    let prices: Vec<f64> = z.iter().map(|zi| zi / prob).collect();
                    json!({ "allocation": alloc, "probability": prob, "prices": prices })
                })
                .collect();
            json!({ "types": profile, "lottery": support })
        })
        .collect();
    Ok(Outcome {
        output: json!({
            "bic_mode": mode,
            "revenue": sol.revenue,
            "interim_allocation": sol.interim_allocation,
            "interim_payment": sol.interim_payment,
            "profiles": profiles,
        }),
        violations,
    })
}

fn run_mechanism(
    prior: &Path,
    delta: &Path,
    profile: &[usize],
    seed: u64,
    solver: MethodArg,
) -> Result<Outcome> {
    let prior: Prior = read_json(prior)?;
    let delta: MappingDistribution = read_json(delta)?;
    let kind = match solver {
        MethodArg::Exact => SolverKind::Exact,
        MethodArg::Approx => SolverKind::Approx,
    };
    let run = mechanism::run_virtual_welfare_mechanism(&prior, &delta, profile, seed, kind)?;
    let mut violations = Vec::new();
    for (i, price) in run.prices.prices.iter().enumerate() {
        let cap: f64 = prior.payment_cap(profile, &run.allocation, i);
        if *price < -1e-9 || *price > cap + 1e-9 {
            violations.push(format!("bidder {i} charged {price}, cap is {cap}"));
        }
    }
    Ok(Outcome {
        output: json!({
            "mapping_index": run.mapping_index,
            "allocation": run.allocation,
            "prices": run.prices.prices,
            "virtual_welfare": run.virtual_welfare,
            "revenue": run.prices.prices.iter().sum::<f64>(),
        }),
        violations,
    })
}

fn bench(
    seed: u64,
    count: usize,
    n_max: usize,
    m_max: usize,
    json_path: Option<&Path>,
) -> Result<Outcome> {
    let config = GeneratorConfig {
        seed,
        count,
        n_max,
        m_max,
        ..GeneratorConfig::default()
    };
    let instances = harness::generate_instances(&config)?;
    let report = harness::bench_ratio(&instances);
    if let Some(path) = json_path {
        write_json(path, &report)?;
    }
    let violations = report
        .entries
        .iter()
        .filter(|e| e.status != harness::EntryStatus::SizeLimit)
        .filter_map(|e| {
            e.violation
                .as_ref()
                .map(|v| format!("instance {}: {v}", e.index))
        })
        .collect();
    Ok(Outcome {
        output: json!({
            "completed": report.completed,
            "excluded": report.excluded,
            "min_ratio": report.min_ratio,
            "mean_ratio": report.mean_ratio,
            "violation_count": report.violations,
            "notes": report.notes,
        }),
        violations,
    })
}

fn verify(json_path: Option<&Path>) -> Result<Outcome> {
    let report = harness::verify_suite();
    if let Some(path) = json_path {
        write_json(path, &report)?;
    }
    let violations = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{}: {}", c.name, c.detail.as_deref().unwrap_or("failed")))
        .collect();
    Ok(Outcome {
        output: serde_json::to_value(&report)?,
        violations,
    })
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::SolveBavwm {
            input,
            method,
            exact_arith,
            dump_lp,
        } => solve_bavwm(&input, method, exact_arith, dump_lp.as_deref()),
        Command::RoundGap { input, exact } => round_gap(&input, exact),
        Command::SolveMechanism { input, bic_mode } => solve_mechanism(&input, bic_mode.into()),
        Command::RunMechanism {
            prior,
            delta,
            profile,
            seed,
            solver,
        } => run_mechanism(&prior, &delta, &profile, seed, solver),
        Command::Bench {
            seed,
            count,
            n_max,
            m_max,
            json,
        } => bench(seed, count, n_max, m_max, json.as_deref()),
        Command::Verify { json } => verify(json.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Ok(outcome) => {
            let mut output = outcome.output;
            output["violations"] = json!(outcome.violations);
            let text = serde_json::to_string_pretty(&output).expect("serializable output");
            let _ = writeln!(io::stdout().lock(), "{text}");
            if outcome.violations.is_empty() {
                ExitCode::SUCCESS
            } else {
                for v in &outcome.violations {
                    eprintln!("violation: {v}");
                }
                ExitCode::FAILURE
            }
        }
    }
}
