//! Solvers for budgeted-additive virtual welfare maximization.
//!
//! The approximate pipeline solves the split (bar/hat) relaxation, rounds it
//! through the GAP embedding to an integral split whose bar loads are at most
//! `2 b_i`, then keeps the best of three greedy budget-feasible bins per agent.
//! The result is within a factor 3 of the LP optimum, hence of the true optimum.

use serde::Serialize;
use thiserror::Error;

use crate::gap::{self, FractionalAssignment, GapError, MachineMap, MachineRole};
use crate::lp::{self, LinearProgram, LpError, LpSolution, LpStatus, Sense};
use crate::model::{Allocation, BavwmInstance, ModelError, PriceVector, SplitAllocation};
use crate::scalar::Scalar;

/// Default cap on `(n+1)^m` for exhaustive search.
pub const DEFAULT_EXACT_LIMIT: u64 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BavwmError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gap(#[from] GapError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("relaxation LP returned {0:?}")]
    LpStatus(LpStatus),
    #[error("exhaustive search over {count} allocations exceeds limit {limit}")]
    SizeLimit { count: u128, limit: u64 },
    #[error("agent {agent} has bar load {load} above twice its budget {budget}")]
    OverloadedSplit {
        agent: usize,
        load: f64,
        budget: f64,
    },
    #[error("greedy bin {bin} of agent {agent} has load {load} above budget {budget}")]
    BinOverflow {
        agent: usize,
        bin: usize,
        load: f64,
        budget: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Approx,
}

/// Variable layout of the relaxation: `bar[i][j]` then `hat[i][j]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelaxationMap {
    pub bar: Vec<Vec<usize>>,
    pub hat: Vec<Vec<usize>>,
}

impl RelaxationMap {
    pub fn new(n: usize, m: usize) -> Self {
        RelaxationMap {
            bar: (0..n)
                .map(|i| (0..m).map(|j| i * m + j).collect())
                .collect(),
            hat: (0..n)
                .map(|i| (0..m).map(|j| n * m + i * m + j).collect())
                .collect(),
        }
    }
}

/// LP over bar and hat fractions: each item at most once in total, bar value
/// within budget, objective `sum m_i v_ij bar_ij + sum w_ij (bar_ij + hat_ij)`.
pub fn build_relaxation<S: Scalar>(
    instance: &BavwmInstance<S>,
) -> Result<(LinearProgram<S>, RelaxationMap), BavwmError> {
    instance.require_normalized()?;
    instance.ensure_valid()?;
    let (n, m) = (instance.n, instance.m);
    let map = RelaxationMap::new(n, m);
    let mut lp = LinearProgram::new();
    for i in 0..n {
        for j in 0..m {
            let c = instance.multipliers[i].clone() * instance.values[i][j].clone()
                + instance.virtual_values[i][j].clone();
            let v = lp.add_var(
                format!("bar_{}_{}", i + 1, j + 1),
                c,
                Some(S::zero()),
                Some(S::one()),
            );
            debug_assert_eq!(v, map.bar[i][j]);
        }
    }
    for i in 0..n {
        for j in 0..m {
            let v = lp.add_var(
                format!("hat_{}_{}", i + 1, j + 1),
                instance.virtual_values[i][j].clone(),
                Some(S::zero()),
                Some(S::one()),
            );
            debug_assert_eq!(v, map.hat[i][j]);
        }
    }
    for j in 0..m {
        let terms = (0..n)
            .flat_map(|i| [(map.bar[i][j], S::one()), (map.hat[i][j], S::one())])
            .collect();
        lp.add_constraint(terms, Sense::Le, S::one());
    }
    for i in 0..n {
        let terms = (0..m)
            .map(|j| (map.bar[i][j], instance.values[i][j].clone()))
            .collect();
        lp.add_constraint(terms, Sense::Le, instance.budgets[i].clone());
    }
    Ok((lp, map))
}

fn clamp_unit<S: Scalar>(x: &S) -> S {
    S::min_of(S::max_of(x.clone(), S::zero()), S::one())
}

/// Embeds a relaxation solution into the GAP LP (unallocated mass goes to the
/// dummy machine) and rounds it to an integral split with bar loads `<= 2 b_i`.
pub fn round_to_split<S: Scalar>(
    instance: &BavwmInstance<S>,
    frac: &LpSolution<S>,
) -> Result<SplitAllocation, BavwmError> {
    if frac.status != LpStatus::Optimal {
        return Err(BavwmError::LpStatus(frac.status));
    }
    let (gap_instance, machines) = gap::build_gap_from_bavwm(instance)?;
    let (n, m) = (instance.n, instance.m);
    let map = RelaxationMap::new(n, m);
    let mut x = vec![vec![S::zero(); m]; gap_instance.machines()];
    for j in 0..m {
        let mut used = S::zero();
        for i in 0..n {
            let bar = clamp_unit(&frac.values[map.bar[i][j]]);
            let hat = clamp_unit(&frac.values[map.hat[i][j]]);
            used += bar.clone() + hat.clone();
            x[machines.bar[i]][j] = bar;
            x[machines.hat[i]][j] = hat;
        }
        x[MachineMap::DUMMY][j] = S::max_of(S::one() - used, S::zero());
    }
    let rounded = gap::st_round(&gap_instance, &FractionalAssignment { x })?;
    let mut split = SplitAllocation::unassigned(m);
    for (j, &machine) in rounded.machine_of.iter().enumerate() {
        match machines.role(machine) {
            MachineRole::Dummy => {}
            MachineRole::Hat(i) => split.hat[j] = Some(i),
            MachineRole::Bar(i) => split.bar[j] = Some(i),
        }
    }
    Ok(split)
}

/// Greedy three-way partition of one agent's bar items.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentBins<S = f64> {
    pub agent: usize,
    pub bins: [Vec<usize>; 3],
    pub loads: [S; 3],
    /// `sum (m_i v_ij + w_ij)` over each bin.
    pub scores: [S; 3],
    pub chosen: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tripartition<S> {
    pub split: SplitAllocation,
    pub bins: Vec<AgentBins<S>>,
}

/// Splits each agent's bar items into three bins of load at most `b_i` and
/// keeps the bin with the highest score. Hat items are kept unchanged.
pub fn tripartition_select<S: Scalar>(
    instance: &BavwmInstance<S>,
    split: &SplitAllocation,
) -> Result<Tripartition<S>, BavwmError> {
    instance.require_normalized()?;
    split.check_disjoint()?;
    let two = S::from_usize(2);
    let mut out = SplitAllocation {
        bar: vec![None; instance.m],
        hat: split.hat.clone(),
    };
    let mut all_bins = Vec::with_capacity(instance.n);
    for i in 0..instance.n {
        let budget = &instance.budgets[i];
        let load = split.bar_load(instance, i);
        if !load.le_tol(&(two.clone() * budget.clone())) {
            return Err(BavwmError::OverloadedSplit {
                agent: i,
                load: load.to_f64(),
                budget: budget.to_f64(),
            });
        }
        let values = &instance.values[i];
        let mut items: Vec<usize> = split.bar_items(i).collect();
        items.sort_by(|&a, &b| {
            values[b]
                .partial_cmp(&values[a])
                .expect("values are comparable")
                .then(a.cmp(&b))
        });
        let mut bins: [Vec<usize>; 3] = Default::default();
        let mut loads = [S::zero(), S::zero(), S::zero()];
        let mut scores = [S::zero(), S::zero(), S::zero()];
        for j in items {
            let mut k = 0;
            for c in 1..3 {
                if loads[c] < loads[k] {
                    k = c;
                }
            }
            bins[k].push(j);
            loads[k] += values[j].clone();
            scores[k] += instance.multipliers[i].clone() * values[j].clone()
                + instance.virtual_values[i][j].clone();
        }
        for (k, l) in loads.iter().enumerate() {
            if !l.le_tol(budget) {
                return Err(BavwmError::BinOverflow {
                    agent: i,
                    bin: k,
                    load: l.to_f64(),
                    budget: budget.to_f64(),
                });
            }
        }
        let mut chosen = 0;
        for c in 1..3 {
            if scores[c] > scores[chosen] {
                chosen = c;
            }
        }
        for &j in &bins[chosen] {
            out.bar[j] = Some(i);
        }
        all_bins.push(AgentBins {
            agent: i,
            bins,
            loads,
            scores,
            chosen,
        });
    }
    Ok(Tripartition {
        split: out,
        bins: all_bins,
    })
}

/// An agent whose rounded bar set already fits its budget keeps the whole set
/// when it scores higher than the selected bin. The result never scores below
/// the plain tripartition output.
fn keep_feasible_bundles<S: Scalar>(
    instance: &BavwmInstance<S>,
    rounded: &SplitAllocation,
    tri: &Tripartition<S>,
) -> SplitAllocation {
    let mut out = tri.split.clone();
    for bins in &tri.bins {
        let i = bins.agent;
        if !rounded.bar_load(instance, i).le_tol(&instance.budgets[i]) {
            continue;
        }
        let whole: S = bins.scores.iter().cloned().sum();
        if whole > bins.scores[bins.chosen] {
            for j in rounded.bar_items(i) {
                out.bar[j] = Some(i);
            }
        }
    }
    out
}

/// Intermediate quantities of one approximate solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxTrace<S> {
    pub lp_optimum: S,
    pub rounded: SplitAllocation,
    pub rounded_objective: S,
    pub bins: Vec<AgentBins<S>>,
    pub selected: SplitAllocation,
    pub selected_objective: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BavwmResult<S> {
    pub allocation: Allocation,
    pub prices: PriceVector<S>,
    pub objective_value: S,
    pub method: Method,
    /// LP optimum, an upper bound on the integral optimum.
    pub certificate: Option<S>,
    pub trace: Option<ApproxTrace<S>>,
}

fn prepared<S: Scalar>(instance: &BavwmInstance<S>) -> Result<BavwmInstance<S>, BavwmError> {
    instance.ensure_valid()?;
    Ok(if instance.normalized {
        instance.clone()
    } else {
        instance.normalize()
    })
}

/// 3-approximation: relax, round, tripartition, merge.
pub fn solve_approx<S: Scalar>(instance: &BavwmInstance<S>) -> Result<BavwmResult<S>, BavwmError> {
    let inst = prepared(instance)?;
    let (relaxation, _) = build_relaxation(&inst)?;
    let lp_sol = lp::solve(&relaxation)?;
    if lp_sol.status != LpStatus::Optimal {
        return Err(BavwmError::LpStatus(lp_sol.status));
    }
    let rounded = round_to_split(&inst, &lp_sol)?;
    let rounded_objective = inst.split_objective(&rounded)?;
    let tri = tripartition_select(&inst, &rounded)?;
    let selected = keep_feasible_bundles(&inst, &rounded, &tri);
    let selected_objective = inst.split_objective(&selected)?;

    let mut cleaned = selected.clone();
    for j in 0..inst.m {
        if let Some(i) = cleaned.hat[j] {
            if inst.virtual_values[i][j].is_negative() {
                cleaned.hat[j] = None;
            }
        }
    }
    let allocation = cleaned.merge()?;
    let objective_value = inst.objective(&allocation)?;
    let prices = inst.prices_from_allocation(&allocation)?;
    Ok(BavwmResult {
        allocation,
        prices,
        objective_value,
        method: Method::Approx,
        certificate: Some(lp_sol.objective_value.clone()),
        trace: Some(ApproxTrace {
            lp_optimum: lp_sol.objective_value,
            rounded,
            rounded_objective,
            bins: tri.bins,
            selected,
            selected_objective,
        }),
    })
}

pub fn solve_exact<S: Scalar>(instance: &BavwmInstance<S>) -> Result<BavwmResult<S>, BavwmError> {
    solve_exact_with_limit(instance, DEFAULT_EXACT_LIMIT)
}

/// Exhaustive search over all `(n+1)^m` allocations. Among maximizers the
/// lexicographically first assignment wins (unassigned sorts before agent 1).
pub fn solve_exact_with_limit<S: Scalar>(
    instance: &BavwmInstance<S>,
    limit: u64,
) -> Result<BavwmResult<S>, BavwmError> {
    let inst = prepared(instance)?;
    let (n, m) = (inst.n, inst.m);
    let count = (n as u128 + 1).checked_pow(m as u32).unwrap_or(u128::MAX);
    if count > limit as u128 {
        return Err(BavwmError::SizeLimit { count, limit });
    }

    // digits[j] == 0 means unassigned, k means agent k-1
    let mut digits = vec![0usize; m];
    let mut best_digits = digits.clone();
    let mut best = S::zero();
    let mut values = vec![S::zero(); n];
    let mut virt = vec![S::zero(); n];
    loop {
        for i in 0..n {
            values[i] = S::zero();
            virt[i] = S::zero();
        }
        for (j, &d) in digits.iter().enumerate() {
            if d > 0 {
                values[d - 1] += inst.values[d - 1][j].clone();
                virt[d - 1] += inst.virtual_values[d - 1][j].clone();
            }
        }
        let total: S = (0..n)
            .map(|i| {
                inst.multipliers[i].clone() * S::min_of(inst.budgets[i].clone(), values[i].clone())
                    + virt[i].clone()
            })
            .sum();
        if total > best {
            best = total;
            best_digits.clone_from(&digits);
        }

        let mut pos = m;
        loop {
            if pos == 0 {
                let allocation = Allocation::from_agents(
                    best_digits.iter().map(|&d| d.checked_sub(1)).collect(),
                );
                let objective_value = inst.objective(&allocation)?;
                let prices = inst.prices_from_allocation(&allocation)?;
                return Ok(BavwmResult {
                    allocation,
                    prices,
                    objective_value,
                    method: Method::Exact,
                    certificate: None,
                    trace: None,
                });
            }
            pos -= 1;
            if digits[pos] < n {
                digits[pos] += 1;
                break;
            }
            digits[pos] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::ratio;
    use num_rational::BigRational;

    fn double_credit() -> BavwmInstance<BigRational> {
        BavwmInstance::new(
            vec![vec![ratio(3, 1), ratio(3, 1)]],
            vec![ratio(3, 1)],
            vec![ratio(1, 1)],
            vec![vec![ratio(-2, 1), ratio(-2, 1)]],
        )
        .normalize()
    }

    #[test]
    fn double_credit_relaxation_shape_and_value() {
        let inst = double_credit();
        let (lp, _) = build_relaxation(&inst).unwrap();
        assert_eq!(lp.num_vars(), 4);
        assert_eq!(lp.num_constraints(), 3);
        // bar_1 + bar_2 <= 1 from the budget row, hats only cost: optimum 1.
        let sol = lp::solve(&lp).unwrap();
        assert_eq!(sol.objective_value, ratio(1, 1));
    }

    #[test]
    fn single_unit_item_relaxation() {
        let inst =
            BavwmInstance::new(vec![vec![1.0]], vec![1.0], vec![1.0], vec![vec![0.0]]).normalize();
        let (lp, map) = build_relaxation(&inst).unwrap();
        let sol = lp::solve(&lp).unwrap();
        assert!((sol.objective_value - 1.0).abs() < 1e-12);
        assert!((sol.values[map.bar[0][0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_objective_relaxation_is_zero() {
        let inst = BavwmInstance::new(
            vec![vec![1.0, 2.0], vec![3.0, 1.0]],
            vec![2.0, 2.0],
            vec![0.0, 0.0],
            vec![vec![-1.0, -0.5], vec![-2.0, -0.1]],
        )
        .normalize();
        let (lp, _) = build_relaxation(&inst).unwrap();
        let sol = lp::solve(&lp).unwrap();
        assert_eq!(sol.objective_value, 0.0);
        assert!(sol.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn relaxation_rejects_raw_instance() {
        let inst = BavwmInstance::new(vec![vec![1.0]], vec![1.0], vec![1.0], vec![vec![0.0]]);
        assert!(matches!(
            build_relaxation(&inst),
            Err(BavwmError::Model(ModelError::Unnormalized))
        ));
    }

    #[test]
    fn integral_lp_solution_rounds_to_itself() {
        let inst = double_credit();
        let (lp, map) = build_relaxation(&inst).unwrap();
        let mut values = vec![ratio(0, 1); lp.num_vars()];
        values[map.bar[0][1]] = ratio(1, 1);
        let frac = LpSolution {
            status: LpStatus::Optimal,
            objective_value: lp.evaluate(&values),
            values,
        };
        let split = round_to_split(&inst, &frac).unwrap();
        assert_eq!(split.bar, vec![None, Some(0)]);
        assert_eq!(split.hat, vec![None, None]);
    }

    #[test]
    fn double_credit_pipeline_rounds_within_double_budget() {
        let inst = double_credit();
        let (lp, _) = build_relaxation(&inst).unwrap();
        let sol = lp::solve(&lp).unwrap();
        let split = round_to_split(&inst, &sol).unwrap();
        assert!(split.bar_load(&inst, 0) <= ratio(6, 1));
        assert!(inst.split_objective(&split).unwrap() >= sol.objective_value);
    }

    #[test]
    fn double_credit_double_credit_split_keeps_one_item() {
        let inst = double_credit();
        let split = SplitAllocation {
            bar: vec![Some(0), Some(0)],
            hat: vec![None, None],
        };
        let tri = tripartition_select(&inst, &split).unwrap();
        assert_eq!(tri.split.bar, vec![Some(0), None]);
        assert_eq!(inst.split_objective(&tri.split).unwrap(), ratio(1, 1));
        assert_eq!(tri.bins[0].bins, [vec![0], vec![1], vec![]]);
    }

    #[test]
    fn greedy_bins_for_three_two_two() {
        let inst = BavwmInstance::new(
            vec![vec![ratio(2, 1), ratio(3, 1), ratio(2, 1)]],
            vec![ratio(4, 1)],
            vec![ratio(1, 1)],
            vec![vec![ratio(0, 1); 3]],
        )
        .normalize();
        let split = SplitAllocation {
            bar: vec![Some(0); 3],
            hat: vec![None; 3],
        };
        let tri = tripartition_select(&inst, &split).unwrap();
        let bins = &tri.bins[0];
        assert_eq!(bins.bins, [vec![1], vec![0], vec![2]]);
        assert_eq!(bins.loads, [ratio(3, 1), ratio(2, 1), ratio(2, 1)]);
        assert_eq!(bins.chosen, 0);
    }

    #[test]
    fn feasible_nonnegative_split_keeps_a_third() {
        let inst = BavwmInstance::new(
            vec![vec![1.0, 1.0, 1.0, 1.0]],
            vec![4.0],
            vec![1.0],
            vec![vec![0.5, 0.0, 1.0, 0.25]],
        )
        .normalize();
        let split = SplitAllocation {
            bar: vec![Some(0); 4],
            hat: vec![None; 4],
        };
        let before = inst.split_objective(&split).unwrap();
        let tri = tripartition_select(&inst, &split).unwrap();
        let after = inst.split_objective(&tri.split).unwrap();
        assert!(after >= before / 3.0);
        let placed: usize = tri.bins[0].bins.iter().map(Vec::len).sum();
        assert_eq!(placed, 4);
        let best = tri.bins[0].scores.iter().cloned().fold(f64::MIN, f64::max);
        assert!(best >= before / 3.0);
    }

    #[test]
    fn tripartition_accepts_load_exactly_twice_budget_and_rejects_more() {
        let inst = double_credit();
        let split = SplitAllocation {
            bar: vec![Some(0), Some(0)],
            hat: vec![None, None],
        };
        assert!(tripartition_select(&inst, &split).is_ok());

        let three = BavwmInstance::new(
            vec![vec![ratio(3, 1); 3]],
            vec![ratio(3, 1)],
            vec![ratio(1, 1)],
            vec![vec![ratio(0, 1); 3]],
        )
        .normalize();
        let split = SplitAllocation {
            bar: vec![Some(0); 3],
            hat: vec![None; 3],
        };
        assert!(matches!(
            tripartition_select(&three, &split),
            Err(BavwmError::OverloadedSplit { .. })
        ));
    }

    #[test]
    fn double_credit_exact_and_approx() {
        let inst = double_credit();
        let exact = solve_exact(&inst).unwrap();
        assert_eq!(exact.objective_value, ratio(1, 1));
        assert_eq!(exact.allocation.assigned_count(), 1);
        let approx = solve_approx(&inst).unwrap();
        assert!(approx.objective_value >= ratio(1, 3));
    }

    #[test]
    fn integral_lp_single_agent() {
        let inst = BavwmInstance::new(
            vec![vec![1.0, 1.0]],
            vec![2.0],
            vec![1.0],
            vec![vec![0.0, 0.0]],
        );
        let approx = solve_approx(&inst).unwrap();
        assert!((approx.objective_value - 2.0).abs() < 1e-9);
        assert_eq!(approx.prices.prices, vec![2.0]);
    }

    #[test]
    fn single_item_scan() {
        let inst = BavwmInstance::new(
            vec![vec![4.0], vec![6.0], vec![1.0]],
            vec![5.0, 2.0, 9.0],
            vec![1.0, 1.0, 1.0],
            vec![vec![-1.0], vec![0.5], vec![0.0]],
        );
        let exact = solve_exact(&inst).unwrap();
        // agent 1: 4 - 1 = 3; agent 2: min(2, 6) + 0.5 = 2.5; agent 3: 1.
        assert_eq!(exact.allocation.assignment, vec![Some(0)]);
        assert_eq!(exact.objective_value, 3.0);
    }

    #[test]
    fn all_negative_gives_empty_allocation() {
        let inst = BavwmInstance::new(
            vec![vec![1.0, 1.0]],
            vec![1.0],
            vec![0.0],
            vec![vec![-1.0, 0.0]],
        );
        let exact = solve_exact(&inst).unwrap();
        assert_eq!(exact.allocation, Allocation::unassigned(2));
        assert_eq!(exact.objective_value, 0.0);
    }

    #[test]
    fn exact_size_limit() {
        let inst = BavwmInstance::new(
            vec![vec![1.0; 5]; 2],
            vec![1.0; 2],
            vec![1.0; 2],
            vec![vec![0.0; 5]; 2],
        );
        assert!(matches!(
            solve_exact_with_limit(&inst, 100),
            Err(BavwmError::SizeLimit {
                count: 243,
                limit: 100
            })
        ));
    }
}
