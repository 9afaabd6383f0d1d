//! Seeded instance generation, approximation-ratio benchmarks and the
//! invariant verification suite.

use std::time::Instant;

use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bavwm::{self, BavwmError};
use crate::gap::{self, GapInstance};
use crate::lp::{self, LpStatus};
use crate::mechanism::{self, BicMode, BidderPrior, BidderType, Prior};
use crate::model::{Allocation, BavwmInstance, SplitAllocation};
use crate::scalar::{Scalar, FLOAT_TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_min: usize,
    pub n_max: usize,
    pub m_min: usize,
    pub m_max: usize,
    /// Values are uniform on `[0, vmax]`.
    pub vmax: f64,
    /// Budgets are uniform on `[0, bmax]`.
    pub bmax: f64,
    /// Multipliers are uniform on `[-mmax, mmax]` before normalization.
    pub mmax: f64,
    /// Virtual values are uniform on `[-wmax, wmax]`.
    pub wmax: f64,
    pub count: usize,
    /// Round every draw to a multiple of this step.
    #[serde(default)]
    pub granularity: Option<f64>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 0,
            n_min: 1,
            n_max: 3,
            m_min: 1,
            m_max: 6,
            vmax: 10.0,
            bmax: 10.0,
            mmax: 2.0,
            wmax: 5.0,
            count: 100,
            granularity: None,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: &str| Err(HarnessError::InvalidConfig(msg.to_string()));
        if self.n_min > self.n_max || self.n_min == 0 {
            return bad("n range must be nonempty and start at 1 or more");
        }
        if self.m_min > self.m_max || self.m_min == 0 {
            return bad("m range must be nonempty and start at 1 or more");
        }
        if self.count == 0 {
            return bad("count must be positive");
        }
        for (name, x) in [
            ("vmax", self.vmax),
            ("bmax", self.bmax),
            ("mmax", self.mmax),
            ("wmax", self.wmax),
        ] {
            if !x.is_finite() || x < 0.0 {
                return bad(&format!("{name} must be finite and non-negative"));
            }
        }
        if let Some(g) = self.granularity {
            if !g.is_finite() || g <= 0.0 {
                return bad("granularity must be positive");
            }
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
        let x = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        match self.granularity {
            Some(g) => {
                let snapped = (x / g).round() * g;
                snapped.clamp(lo, hi) + 0.0
            }
            None => x,
        }
    }
}

/// Deterministic under `config.seed`; every instance is validated and normalized.
pub fn generate_instances(
    config: &GeneratorConfig,
) -> Result<Vec<BavwmInstance<f64>>, HarnessError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.count);
    for _ in 0..config.count {
        let n = rng.gen_range(config.n_min..=config.n_max);
        let m = rng.gen_range(config.m_min..=config.m_max);
        let values = (0..n)
            .map(|_| {
                (0..m)
                    .map(|_| config.draw(&mut rng, 0.0, config.vmax))
                    .collect()
            })
            .collect();
        let budgets = (0..n)
            .map(|_| config.draw(&mut rng, 0.0, config.bmax))
            .collect();
        let multipliers = (0..n)
            .map(|_| config.draw(&mut rng, -config.mmax, config.mmax))
            .collect();
        let virtual_values = (0..n)
            .map(|_| {
                (0..m)
                    .map(|_| config.draw(&mut rng, -config.wmax, config.wmax))
                    .collect()
            })
            .collect();
        let raw = BavwmInstance::new(values, budgets, multipliers, virtual_values);
        let inst = raw.normalize();
        debug_assert!(inst.validate().is_empty());
        out.push(inst);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryStatus {
    Ok,
    SizeLimit,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub index: usize,
    pub n: usize,
    pub m: usize,
    pub status: EntryStatus,
    pub exact_objective: Option<f64>,
    pub approx_objective: Option<f64>,
    pub lp_bound: Option<f64>,
    pub ratio: Option<f64>,
    pub wall_time_ms: f64,
    pub violation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub entries: Vec<BenchEntry>,
    pub completed: usize,
    pub excluded: usize,
    pub min_ratio: Option<f64>,
    pub mean_ratio: Option<f64>,
    pub violations: usize,
    pub notes: Vec<String>,
}

impl BenchReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    /// Copy with every timing field zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        let mut out = self.clone();
        for e in &mut out.entries {
            e.wall_time_ms = 0.0;
        }
        out
    }
}

const RATIO_FLOOR: f64 = 1.0 / 3.0 - FLOAT_TOL;

/// `approx / exact`, or 1 when `exact` is zero and `approx` is not negative.
pub fn approximation_ratio(exact: f64, approx: f64) -> f64 {
    if exact.abs() <= FLOAT_TOL {
        if approx >= -FLOAT_TOL {
            1.0
        } else {
            0.0
        }
    } else {
        approx / exact
    }
}

fn bench_one(index: usize, inst: &BavwmInstance<f64>, limit: u64) -> BenchEntry {
    let start = Instant::now();
    let mut entry = BenchEntry {
        index,
        n: inst.n,
        m: inst.m,
        status: EntryStatus::Ok,
        exact_objective: None,
        approx_objective: None,
        lp_bound: None,
        ratio: None,
        wall_time_ms: 0.0,
        violation: None,
    };
    let exact = bavwm::solve_exact_with_limit(inst, limit);
    let approx = bavwm::solve_approx(inst);
    entry.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    match (exact, approx) {
        (Err(BavwmError::SizeLimit { count, limit }), _) => {
            entry.status = EntryStatus::SizeLimit;
            entry.violation = Some(format!("{count} allocations exceed the limit {limit}"));
        }
        (Err(e), _) | (_, Err(e)) => {
            entry.status = EntryStatus::Error;
            entry.violation = Some(e.to_string());
        }
        (Ok(ex), Ok(ap)) => {
            let ratio = approximation_ratio(ex.objective_value, ap.objective_value);
            entry.exact_objective = Some(ex.objective_value);
            entry.approx_objective = Some(ap.objective_value);
            entry.lp_bound = ap.certificate;
            entry.ratio = Some(ratio);
            let mut problems = Vec::new();
            if ratio < RATIO_FLOOR {
                problems.push(format!("ratio {ratio} below 1/3"));
            }
            if ap.objective_value > ex.objective_value + FLOAT_TOL {
                problems.push("approximation beats the exhaustive optimum".to_string());
            }
            if let Some(bound) = ap.certificate {
                if ex.objective_value > bound + 1e-6 {
                    problems.push(format!("LP bound {bound} below the optimum"));
                }
            }
            if !ap.prices.is_feasible_for(inst, &ap.allocation) {
                problems.push("infeasible prices".to_string());
            }
            if !problems.is_empty() {
                entry.violation = Some(problems.join("; "));
            }
        }
    }
    entry
}

pub fn bench_ratio(instances: &[BavwmInstance<f64>]) -> BenchReport {
    bench_ratio_with_limit(instances, bavwm::DEFAULT_EXACT_LIMIT)
}

/// Runs both solvers on every instance in parallel; entries stay in input order.
pub fn bench_ratio_with_limit(instances: &[BavwmInstance<f64>], limit: u64) -> BenchReport {
    let entries: Vec<BenchEntry> = instances
        .par_iter()
        .enumerate()
        .map(|(k, inst)| bench_one(k, inst, limit))
        .collect();
    let mut notes = Vec::new();
    let mut ratios = Vec::new();
    let mut violations = 0;
    let mut excluded = 0;
    for e in &entries {
        match e.status {
            EntryStatus::SizeLimit => {
                excluded += 1;
                notes.push(format!(
                    "instance {} excluded: {}",
                    e.index,
                    e.violation.as_deref().unwrap_or("size limit")
                ));
            }
            EntryStatus::Error => violations += 1,
            EntryStatus::Ok => {
                if e.violation.is_some() {
                    violations += 1;
                }
                ratios.extend(e.ratio);
            }
        }
    }
    let min_ratio = ratios.iter().copied().reduce(f64::min);
    let mean_ratio = (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64);
    BenchReport {
        completed: ratios.len(),
        entries,
        excluded,
        min_ratio,
        mean_ratio,
        violations,
        notes,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

struct Check {
    name: &'static str,
    cases: usize,
    failure: Option<String>,
}

impl Check {
    fn new(name: &'static str) -> Self {
        Check {
            name,
            cases: 0,
            failure: None,
        }
    }

    fn record(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok && self.failure.is_none() {
            self.failure = Some(what());
        }
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name.to_string(),
            passed: self.failure.is_none(),
            cases: self.cases,
            detail: self.failure,
        }
    }
}

fn small_config(seed: u64, n_max: usize, m_max: usize, count: usize) -> GeneratorConfig {
    GeneratorConfig {
        seed,
        n_max,
        m_max,
        count,
        granularity: Some(0.5),
        ..GeneratorConfig::default()
    }
}

fn check_clamp_invariance() -> CheckResult {
    let mut check = Check::new("clamp-invariance");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..40 {
        let n = rng.gen_range(1..=2);
        let m = rng.gen_range(1..=3);
        let mut grid = |lo: i32, hi: i32| f64::from(rng.gen_range(lo..=hi)) / 2.0;
        let values: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| grid(0, 20)).collect())
            .collect();
        let budgets: Vec<f64> = (0..n).map(|_| grid(0, 10)).collect();
        let multipliers: Vec<f64> = (0..n).map(|_| grid(0, 4)).collect();
        let virt: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| grid(-6, 6)).collect())
            .collect();
        let raw = BavwmInstance::new(values, budgets, multipliers, virt);
        let norm = raw.normalize();
        for alloc in Allocation::enumerate(n, m) {
            let a = raw.truncated_objective(&alloc);
            let b = norm.objective(&alloc);
            check.record(a.is_ok() && a == b, || {
                format!(
                    "case {case}: allocation {:?} gives {a:?} raw and {b:?} clamped",
                    alloc.assignment
                )
            });
        }
    }
    check.finish()
}

fn check_rounding_bounds() -> CheckResult {
    let mut check = Check::new("rounding-bounds");
    let instances = generate_instances(&small_config(21, 3, 5, 60)).expect("valid config");
    for (k, inst) in instances.iter().enumerate() {
        let outcome = (|| -> Result<(f64, SplitAllocation), String> {
            let (relax, _) = bavwm::build_relaxation(inst).map_err(|e| e.to_string())?;
            let sol = lp::solve(&relax).map_err(|e| e.to_string())?;
            if sol.status != LpStatus::Optimal {
                return Err(format!("relaxation status {:?}", sol.status));
            }
            let split = bavwm::round_to_split(inst, &sol).map_err(|e| e.to_string())?;
            Ok((sol.objective_value, split))
        })();
        match outcome {
            Err(e) => check.record(false, || format!("instance {k}: {e}")),
            Ok((lp_value, split)) => {
                let value = inst.split_objective(&split).unwrap_or(f64::NEG_INFINITY);
                check.record(value >= lp_value - FLOAT_TOL, || {
                    format!("instance {k}: rounded {value} below LP {lp_value}")
                });
                for i in 0..inst.n {
                    let load = split.bar_load(inst, i);
                    check.record(load <= 2.0 * inst.budgets[i] + FLOAT_TOL, || {
                        format!("instance {k}: agent {i} load {load} above 2b")
                    });
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for k in 0..60 {
        let machines = rng.gen_range(1..=3);
        let jobs = rng.gen_range(1..=5);
        let g = random_gap(&mut rng, machines, jobs);
        match gap::solve_gap_lp(&g)
            .and_then(|frac| Ok((g.fractional_cost(&frac), gap::st_round(&g, &frac)?)))
        {
            Err(gap::GapError::Infeasible) => {}
            Err(e) => check.record(false, || format!("gap {k}: {e}")),
            Ok((lp_cost, rounded)) => {
                check.record(g.cost(&rounded) >= lp_cost - FLOAT_TOL, || {
                    format!("gap {k}: cost below LP {lp_cost}")
                });
                for (i, load) in g.loads(&rounded).iter().enumerate() {
                    check.record(*load <= 2.0 * g.capacities[i] + FLOAT_TOL, || {
                        format!("gap {k}: machine {i} load {load} above 2T")
                    });
                }
            }
        }
    }
    check.finish()
}

/// Random GAP on a half-integer grid with a zero-load escape machine so the LP stays feasible.
pub fn random_gap(rng: &mut ChaCha8Rng, machines: usize, jobs: usize) -> GapInstance<f64> {
    let mut capacities = vec![0.0];
    let mut processing = vec![vec![0.0; jobs]];
    let mut costs = vec![vec![0.0; jobs]];
    for _ in 0..machines {
        capacities.push(f64::from(rng.gen_range(0..=12)) / 2.0);
        processing.push(
            (0..jobs)
                .map(|_| f64::from(rng.gen_range(0..=10)) / 2.0)
                .collect(),
        );
        costs.push(
            (0..jobs)
                .map(|_| f64::from(rng.gen_range(-8..=12)) / 2.0)
                .collect(),
        );
    }
    GapInstance {
        jobs,
        capacities,
        processing,
        costs,
    }
}

fn check_tripartition<S: Scalar>(check: &mut Check, k: usize, inst: &BavwmInstance<S>) {
    let result = match bavwm::solve_approx(inst) {
        Ok(r) => r,
        Err(e) => return check.record(false, || format!("instance {k}: {e}")),
    };
    let trace = result.trace.expect("approx trace");
    for agent in &trace.bins {
        for (b, load) in agent.loads.iter().enumerate() {
            check.record(load.le_tol(&inst.budgets[agent.agent]), || {
                format!(
                    "instance {k}: agent {} bin {b} load {load} above budget",
                    agent.agent
                )
            });
        }
    }
    let third = trace.rounded_objective.clone() / S::from_usize(3);
    check.record(trace.selected_objective.ge_tol(&third), || {
        format!(
            "instance {k}: selected {} below a third of {}",
            trace.selected_objective, trace.rounded_objective
        )
    });
}

fn check_tripartition_bounds() -> CheckResult {
    let mut check = Check::new("tripartition-bounds");
    let instances = generate_instances(&small_config(31, 3, 6, 60)).expect("valid config");
    for (k, inst) in instances.iter().enumerate() {
        check_tripartition(&mut check, k, inst);
    }
    for (k, inst) in instances.iter().take(10).enumerate() {
        check_tripartition(&mut check, k, &inst.convert::<BigRational>());
    }
    check.finish()
}

fn check_approximation() -> CheckResult {
    let mut check = Check::new("approximation-ratio");
    let instances = generate_instances(&small_config(41, 3, 5, 80)).expect("valid config");
    let report = bench_ratio(&instances);
    for e in &report.entries {
        check.record(e.status == EntryStatus::Ok && e.violation.is_none(), || {
            format!(
                "instance {}: {}",
                e.index,
                e.violation.as_deref().unwrap_or("not completed")
            )
        });
    }
    check.finish()
}

/// Random prior with dyadic probabilities and half-integer values.
pub fn random_prior(rng: &mut ChaCha8Rng, bidders: usize, max_types: usize, m: usize) -> Prior {
    let mut out = Vec::with_capacity(bidders);
    for _ in 0..bidders {
        let k = rng.gen_range(1..=max_types);
        let mut weights = vec![1u32; k];
        for _ in k..8 {
            weights[rng.gen_range(0..k)] += 1;
        }
        let types = weights
            .iter()
            .map(|&w| BidderType {
                values: (0..m)
                    .map(|_| f64::from(rng.gen_range(0..=8)) / 2.0)
                    .collect(),
                budget: f64::from(rng.gen_range(0..=8)) / 2.0,
                probability: f64::from(w) / 8.0,
            })
            .collect();
        out.push(BidderPrior { types });
    }
    Prior { m, bidders: out }
}

fn check_mechanism_lp() -> CheckResult {
    let mut check = Check::new("mechanism-bic-ex-post");
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for k in 0..12 {
        let bidders = rng.gen_range(1..=2);
        let m = rng.gen_range(1..=2);
        let prior = random_prior(&mut rng, bidders, 2, m);
        for mode in [BicMode::Full, BicMode::BudgetDownward] {
            match mechanism::solve_optimal_mechanism::<f64>(&prior, mode) {
                Err(e) => check.record(false, || format!("prior {k}: {e}")),
                Ok(sol) => {
                    let bic = mechanism::check_bic(&sol, &prior, mode, 1e-7);
                    check.record(bic.is_empty(), || format!("prior {k} {mode:?}: {bic:?}"));
                    let ex_post = mechanism::check_ex_post(&sol, &prior, 1e-7);
                    check.record(ex_post.is_empty(), || {
                        format!("prior {k} {mode:?}: {ex_post:?}")
                    });
                    for i in 0..prior.n() {
                        for t in 0..prior.bidders[i].types.len() {
                            let u = sol.interim_utility(&prior, i, t, t);
                            check.record(u >= -1e-7, || {
                                format!("prior {k}: bidder {i} type {t} interim utility {u}")
                            });
                        }
                    }
                }
            }
        }
    }
    check.finish()
}

fn check_fault_injection() -> CheckResult {
    let mut check = Check::new("z-corruption-detected");
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for k in 0..8 {
        let prior = random_prior(&mut rng, 1, 2, 1);
        let mut sol = match mechanism::solve_optimal_mechanism::<f64>(&prior, BicMode::Full) {
            Ok(s) => s,
            Err(e) => {
                check.record(false, || format!("prior {k}: {e}"));
                continue;
            }
        };
        // Charge more than the cap on the first supported allocation.
        let a = (0..sol.allocations.len())
            .find(|&a| sol.lottery[0][a] > 1e-6)
            .expect("lottery has support");
        let cap: f64 = prior.payment_cap(&sol.profiles[0], &sol.allocations[a], 0);
        sol.payments[0][a][0] = sol.lottery[0][a] * cap + 0.5;
        let found = mechanism::check_ex_post(&sol, &prior, 1e-7);
        check.record(!found.is_empty(), || {
            format!("prior {k}: corruption not detected")
        });
    }
    check.finish()
}

fn check_boundary_load() -> CheckResult {
    let mut check = Check::new("load-at-twice-budget");
    // Two items of value 3 under budget 3: bar load 6 = 2b exactly.
    let inst = BavwmInstance::new(
        vec![vec![3.0, 3.0]],
        vec![3.0],
        vec![1.0],
        vec![vec![0.0, 0.0]],
    )
    .normalize();
    let split = SplitAllocation {
        bar: vec![Some(0), Some(0)],
        hat: vec![None, None],
    };
    match bavwm::tripartition_select(&inst, &split) {
        Ok(tri) => {
            let score = inst
                .split_objective(&tri.split)
                .unwrap_or(f64::NEG_INFINITY);
            check.record(score >= 2.0 - FLOAT_TOL, || {
                format!("selected score {score}")
            });
        }
        Err(e) => check.record(false, || e.to_string()),
    }
    let exact = inst.convert::<BigRational>();
    check.record(bavwm::tripartition_select(&exact, &split).is_ok(), || {
        "exact mode rejected the closed bound".to_string()
    });
    check.finish()
}

fn check_double_credit() -> CheckResult {
    let mut check = Check::new("double-credit-instance");
    let inst = BavwmInstance::new(
        vec![vec![3.0, 3.0]],
        vec![3.0],
        vec![1.0],
        vec![vec![-2.0, -2.0]],
    )
    .normalize()
    .convert::<BigRational>();
    let both = SplitAllocation {
        bar: vec![Some(0), Some(0)],
        hat: vec![None, None],
    };
    let one = BigRational::from_integer(1.into());
    check.record(
        inst.split_objective(&both) == Ok(one.clone() * BigRational::from_integer(2.into())),
        || "double-credit split objective is not 2".to_string(),
    );
    let merged = both.merge().expect("disjoint");
    check.record(inst.objective(&merged) == Ok(-one.clone()), || {
        "true objective is not -1".to_string()
    });
    match bavwm::solve_exact(&inst) {
        Ok(r) => check.record(
            r.objective_value == one && r.allocation.assigned_count() == 1,
            || format!("exact solver returned {}", r.objective_value),
        ),
        Err(e) => check.record(false, || e.to_string()),
    }
    check.finish()
}

/// Runs every invariant suite with fixed seeds.
pub fn verify_suite() -> VerifyReport {
    let checks: Vec<fn() -> CheckResult> = vec![
        check_double_credit,
        check_clamp_invariance,
        check_rounding_bounds,
        check_tripartition_bounds,
        check_boundary_load,
        check_approximation,
        check_mechanism_lp,
        check_fault_injection,
    ];
    let checks: Vec<CheckResult> = checks.par_iter().map(|f| f()).collect();
    let passed = checks.iter().all(|c| c.passed);
    VerifyReport { checks, passed }
}
