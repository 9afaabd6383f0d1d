//! Desk-scale mechanism design with finite independent priors.
//!
//! The optimal mechanism is found by one explicit LP over every type profile
//! and every deterministic allocation. For profile `t` and allocation `a`,
//! `lambda(t, a)` is the probability of choosing `a` and `z_i(t, a)` is the
//! payment mass (probability times price). The bound
//! `0 <= z_i(t, a) <= lambda(t, a) * min(b_i, v_i . a_i)` makes every support
//! point ex-post IR, budget respecting and free of positive transfers.
//! Incentive and interim IR rows are written on the interim forms, which are
//! linear in `lambda` and `z`.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bavwm::{self, BavwmError};
use crate::lp::{self, LinearProgram, LpError, LpStatus, Sense};
use crate::model::{Allocation, BavwmInstance, PriceVector};
use crate::scalar::Scalar;

/// Default cap on LP variables (`profiles * allocations * (1 + n)`).
pub const DEFAULT_VARIABLE_LIMIT: u64 = 1_000_000;

const PROBABILITY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("invalid mapping distribution: {0}")]
    InvalidMapping(String),
    #[error("mechanism LP would need {count} variables, limit is {limit}")]
    SizeLimit { count: u128, limit: u64 },
    #[error("bidder {bidder} reported type {index}, which is not in the prior")]
    UnknownType { bidder: usize, index: usize },
    #[error("profile names {got} bidders, prior has {expected}")]
    ProfileLength { expected: usize, got: usize },
    #[error("single-item solver called on a prior with {0} items")]
    NotSingleItem(usize),
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Bavwm(#[from] BavwmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidderType {
    pub values: Vec<f64>,
    pub budget: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidderPrior {
    pub types: Vec<BidderType>,
}

/// Independent prior: bidder `i` draws a type from `bidders[i].types`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub m: usize,
    pub bidders: Vec<BidderPrior>,
}

impl Prior {
    pub fn n(&self) -> usize {
        self.bidders.len()
    }

    pub fn validate(&self) -> Result<(), MechanismError> {
        for (i, bidder) in self.bidders.iter().enumerate() {
            if bidder.types.is_empty() {
                return Err(MechanismError::InvalidPrior(format!(
                    "bidder {i} has no types"
                )));
            }
            let mut total = 0.0;
            for (k, t) in bidder.types.iter().enumerate() {
                if t.values.len() != self.m {
                    return Err(MechanismError::InvalidPrior(format!(
                        "bidder {i} type {k} has {} values, expected {}",
                        t.values.len(),
                        self.m
                    )));
                }
                if t.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(MechanismError::InvalidPrior(format!(
                        "bidder {i} type {k} has a negative or non-finite value"
                    )));
                }
                if !t.budget.is_finite() || t.budget < 0.0 {
                    return Err(MechanismError::InvalidPrior(format!(
                        "bidder {i} type {k} has a negative or non-finite budget"
                    )));
                }
                if !(t.probability > 0.0 && t.probability <= 1.0) {
                    return Err(MechanismError::InvalidPrior(format!(
                        "bidder {i} type {k} has probability {} outside (0, 1]",
                        t.probability
                    )));
                }
                total += t.probability;
            }
            if (total - 1.0).abs() > PROBABILITY_TOL {
                return Err(MechanismError::InvalidPrior(format!(
                    "bidder {i} probabilities sum to {total}"
                )));
            }
        }
        Ok(())
    }

    pub fn profile_count(&self) -> u128 {
        self.bidders.iter().map(|b| b.types.len() as u128).product()
    }

    /// All type profiles, bidder 0 most significant.
    pub fn profiles(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut digits = vec![0usize; self.n()];
        loop {
            out.push(digits.clone());
            let mut pos = self.n();
            loop {
                if pos == 0 {
                    return out;
                }
                pos -= 1;
                if digits[pos] + 1 < self.bidders[pos].types.len() {
                    digits[pos] += 1;
                    break;
                }
                digits[pos] = 0;
            }
        }
    }

    pub fn type_of(&self, bidder: usize, index: usize) -> &BidderType {
        &self.bidders[bidder].types[index]
    }

    pub fn probability<S: Scalar>(&self, bidder: usize, index: usize) -> S {
        S::from_f64(self.type_of(bidder, index).probability)
    }

    pub fn profile_probability<S: Scalar>(&self, profile: &[usize]) -> S {
        self.probability_without(profile, None)
    }

    /// Probability of the profile's types for every bidder except `skip`.
    pub fn probability_without<S: Scalar>(&self, profile: &[usize], skip: Option<usize>) -> S {
        let mut p = S::one();
        for (i, &t) in profile.iter().enumerate() {
            if Some(i) != skip {
                p *= self.probability::<S>(i, t);
            }
        }
        p
    }

    /// `min(b_i, v_i . a_i)`: the largest ex-post payment bidder `i` can owe.
    pub fn payment_cap<S: Scalar>(
        &self,
        profile: &[usize],
        alloc: &Allocation,
        bidder: usize,
    ) -> S {
        let t = self.type_of(bidder, profile[bidder]);
        let value: S = alloc.bundle(bidder).map(|j| S::from_f64(t.values[j])).sum();
        S::min_of(S::from_f64(t.budget), value)
    }

    /// Value bidder `i` of type `true_type` places on the bundle `alloc` gives it.
    pub fn bundle_value<S: Scalar>(
        &self,
        bidder: usize,
        true_type: usize,
        alloc: &Allocation,
    ) -> S {
        let t = self.type_of(bidder, true_type);
        alloc.bundle(bidder).map(|j| S::from_f64(t.values[j])).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BicMode {
    /// Every misreport is considered.
    #[default]
    Full,
    /// Only misreports whose budget does not exceed the true budget.
    BudgetDownward,
}

impl BicMode {
    pub fn constrains(
        &self,
        prior: &Prior,
        bidder: usize,
        true_type: usize,
        report: usize,
    ) -> bool {
        match self {
            BicMode::Full => true,
            BicMode::BudgetDownward => {
                prior.type_of(bidder, report).budget <= prior.type_of(bidder, true_type).budget
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MechanismSolution<S = f64> {
    pub profiles: Vec<Vec<usize>>,
    pub allocations: Vec<Allocation>,
    /// `lottery[profile][allocation]`
    pub lottery: Vec<Vec<S>>,
    /// `payments[profile][allocation][bidder]`: payment masses.
    pub payments: Vec<Vec<Vec<S>>>,
    /// `interim_allocation[bidder][type][item]`
    pub interim_allocation: Vec<Vec<Vec<S>>>,
    /// `interim_payment[bidder][type]`
    pub interim_payment: Vec<Vec<S>>,
    pub revenue: S,
}

impl<S: Scalar> MechanismSolution<S> {
    /// Builds a solution from a lottery table and derives its interim forms
    /// and expected revenue under `prior`.
    pub fn from_lotteries(
        prior: &Prior,
        allocations: Vec<Allocation>,
        lottery: Vec<Vec<S>>,
        payments: Vec<Vec<Vec<S>>>,
    ) -> Self {
        let profiles = prior.profiles();
        let n = prior.n();
        let mut interim_allocation: Vec<Vec<Vec<S>>> = prior
            .bidders
            .iter()
            .map(|b| vec![vec![S::zero(); prior.m]; b.types.len()])
            .collect();
        let mut interim_payment: Vec<Vec<S>> = prior
            .bidders
            .iter()
            .map(|b| vec![S::zero(); b.types.len()])
            .collect();
        let mut revenue = S::zero();
        for (p, profile) in profiles.iter().enumerate() {
            let pr = prior.profile_probability::<S>(profile);
            for a in 0..allocations.len() {
                for i in 0..n {
                    revenue += pr.clone() * payments[p][a][i].clone();
                }
            }
            for i in 0..n {
                let others = prior.probability_without::<S>(profile, Some(i));
                let t = profile[i];
                for (a, alloc) in allocations.iter().enumerate() {
                    let weight = others.clone() * lottery[p][a].clone();
                    if !weight.is_zero() {
                        for j in alloc.bundle(i) {
                            interim_allocation[i][t][j] += weight.clone();
                        }
                    }
                    interim_payment[i][t] += others.clone() * payments[p][a][i].clone();
                }
            }
        }
        MechanismSolution {
            profiles,
            allocations,
            lottery,
            payments,
            interim_allocation,
            interim_payment,
            revenue,
        }
    }

    /// Interim utility of bidder `i` with true type `t` reporting `report`.
    pub fn interim_utility(&self, prior: &Prior, bidder: usize, t: usize, report: usize) -> S {
        let values = &prior.type_of(bidder, t).values;
        let gain: S = self.interim_allocation[bidder][report]
            .iter()
            .zip(values)
            .map(|(pi, v)| pi.clone() * S::from_f64(*v))
            .sum();
        gain - self.interim_payment[bidder][report].clone()
    }

    /// Support of the lottery on one profile: `(allocation, probability, payment masses)`.
    pub fn support(&self, profile: usize) -> Vec<(&Allocation, &S, &[S])> {
        self.allocations
            .iter()
            .enumerate()
            .filter(|(a, _)| self.lottery[profile][*a].is_pos_tol())
            .map(|(a, alloc)| {
                (
                    alloc,
                    &self.lottery[profile][a],
                    self.payments[profile][a].as_slice(),
                )
            })
            .collect()
    }
}

/// Variable indices of the mechanism LP.
#[derive(Debug, Clone)]
pub struct MechanismLayout {
    pub lottery: Vec<Vec<usize>>,
    /// `None` where the payment cap is zero, so the payment is fixed at zero.
    pub payments: Vec<Vec<Vec<Option<usize>>>>,
    pub profiles: Vec<Vec<usize>>,
    pub allocations: Vec<Allocation>,
}

fn check_size(prior: &Prior, limit: u64) -> Result<(), MechanismError> {
    let allocs = (prior.n() as u128 + 1)
        .checked_pow(prior.m as u32)
        .unwrap_or(u128::MAX);
    let count = prior
        .profile_count()
        .saturating_mul(allocs)
        .saturating_mul(prior.n() as u128 + 1);
    if count > limit as u128 {
        Err(MechanismError::SizeLimit { count, limit })
    } else {
        Ok(())
    }
}

fn add_terms<S: Scalar>(acc: &mut BTreeMap<usize, S>, var: usize, coeff: S) {
    if coeff.is_zero() {
        return;
    }
    let entry = acc.entry(var).or_insert_with(S::zero);
    *entry += coeff;
}

pub fn build_mechanism_lp<S: Scalar>(
    prior: &Prior,
    mode: BicMode,
    limit: u64,
) -> Result<(LinearProgram<S>, MechanismLayout), MechanismError> {
    prior.validate()?;
    check_size(prior, limit)?;
    let n = prior.n();
    let profiles = prior.profiles();
    let allocations = Allocation::enumerate(n, prior.m);
    let mut lp = LinearProgram::<S>::new();

    let mut lottery = Vec::with_capacity(profiles.len());
    let mut payments = Vec::with_capacity(profiles.len());
    for (p, profile) in profiles.iter().enumerate() {
        let pr = prior.profile_probability::<S>(profile);
        let mut lrow = Vec::with_capacity(allocations.len());
        let mut zrow = Vec::with_capacity(allocations.len());
        for (a, alloc) in allocations.iter().enumerate() {
            lrow.push(lp.add_nonneg(format!("lambda_p{p}_a{a}"), S::zero()));
            let z: Vec<Option<usize>> = (0..n)
                .map(|i| {
                    let cap = prior.payment_cap::<S>(profile, alloc, i);
                    cap.is_positive()
                        .then(|| lp.add_nonneg(format!("z_p{p}_a{a}_b{}", i + 1), pr.clone()))
                })
                .collect();
            zrow.push(z);
        }
        lottery.push(lrow);
        payments.push(zrow);
    }

    for p in 0..profiles.len() {
        let terms = lottery[p].iter().map(|&v| (v, S::one())).collect();
        lp.add_constraint(terms, Sense::Eq, S::one());
    }
    for (p, profile) in profiles.iter().enumerate() {
        for (a, alloc) in allocations.iter().enumerate() {
            for i in 0..n {
                if let Some(z) = payments[p][a][i] {
                    let cap = prior.payment_cap::<S>(profile, alloc, i);
                    lp.add_constraint(
                        vec![(z, S::one()), (lottery[p][a], -cap)],
                        Sense::Le,
                        S::zero(),
                    );
                }
            }
        }
    }

    // Profiles where bidder i reports type k, with the probability of the others.
    let mut by_type: Vec<Vec<Vec<(usize, S)>>> = prior
        .bidders
        .iter()
        .map(|b| vec![Vec::new(); b.types.len()])
        .collect();
    for (p, profile) in profiles.iter().enumerate() {
        for i in 0..n {
            by_type[i][profile[i]].push((p, prior.probability_without::<S>(profile, Some(i))));
        }
    }

    // Interim utility of (bidder i, true type t) when reporting r, as LP terms.
    let utility_terms = |i: usize, t: usize, r: usize, sign: S, acc: &mut BTreeMap<usize, S>| {
        for (p, others) in &by_type[i][r] {
            for (a, alloc) in allocations.iter().enumerate() {
                let value = prior.bundle_value::<S>(i, t, alloc);
                add_terms(acc, lottery[*p][a], sign.clone() * others.clone() * value);
                if let Some(z) = payments[*p][a][i] {
                    add_terms(acc, z, -sign.clone() * others.clone());
                }
            }
        }
    };

    for i in 0..n {
        let types = prior.bidders[i].types.len();
        for t in 0..types {
            let mut ir = BTreeMap::new();
            utility_terms(i, t, t, S::one(), &mut ir);
            lp.add_constraint(ir.into_iter().collect(), Sense::Ge, S::zero());
            for r in 0..types {
                if r == t || !mode.constrains(prior, i, t, r) {
                    continue;
                }
                let mut bic = BTreeMap::new();
                utility_terms(i, t, t, S::one(), &mut bic);
                utility_terms(i, t, r, -S::one(), &mut bic);
                let terms: Vec<_> = bic.into_iter().filter(|(_, c)| !c.is_zero()).collect();
                lp.add_constraint(terms, Sense::Ge, S::zero());
            }
        }
    }

    Ok((
        lp,
        MechanismLayout {
            lottery,
            payments,
            profiles,
            allocations,
        },
    ))
}

pub fn solve_optimal_mechanism<S: Scalar>(
    prior: &Prior,
    mode: BicMode,
) -> Result<MechanismSolution<S>, MechanismError> {
    solve_optimal_mechanism_with_limit(prior, mode, DEFAULT_VARIABLE_LIMIT)
}

/// Revenue-optimal BIC, interim IR, ex-post IR and budget-respecting mechanism.
pub fn solve_optimal_mechanism_with_limit<S: Scalar>(
    prior: &Prior,
    mode: BicMode,
    limit: u64,
) -> Result<MechanismSolution<S>, MechanismError> {
    let (program, layout) = build_mechanism_lp::<S>(prior, mode, limit)?;
    let sol = lp::solve(&program)?;
    match sol.status {
        LpStatus::Optimal => {}
        status => {
            return Err(MechanismError::Internal(format!(
                "mechanism LP returned {status:?}; the null mechanism should be feasible"
            )))
        }
    }
    let lottery = layout
        .lottery
        .iter()
        .map(|row| row.iter().map(|&v| sol.values[v].clone()).collect())
        .collect();
    let payments = layout
        .payments
        .iter()
        .map(|row| {
            row.iter()
                .map(|zs| {
                    zs.iter()
                        .map(|z| z.map_or_else(S::zero, |v| sol.values[v].clone()))
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(MechanismSolution::from_lotteries(
        prior,
        layout.allocations,
        lottery,
        payments,
    ))
}

/// Exact optimum for a single item (the allocation space has `n + 1` outcomes).
pub fn solve_single_item_optimal<S: Scalar>(
    prior: &Prior,
    mode: BicMode,
) -> Result<MechanismSolution<S>, MechanismError> {
    if prior.m != 1 {
        return Err(MechanismError::NotSingleItem(prior.m));
    }
    solve_optimal_mechanism(prior, mode)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BicViolation {
    pub bidder: usize,
    pub true_type: usize,
    pub reported_type: usize,
    /// Utility gained by misreporting: the smallest epsilon for which this
    /// pair is epsilon-BIC.
    pub slack: f64,
}

/// Incentive pairs whose misreport gain exceeds `tol`.
pub fn check_bic<S: Scalar>(
    solution: &MechanismSolution<S>,
    prior: &Prior,
    mode: BicMode,
    tol: S,
) -> Vec<BicViolation> {
    let mut out = Vec::new();
    for i in 0..prior.n() {
        let types = prior.bidders[i].types.len();
        for t in 0..types {
            let truthful = solution.interim_utility(prior, i, t, t);
            for r in 0..types {
                if r == t || !mode.constrains(prior, i, t, r) {
                    continue;
                }
                let gain = solution.interim_utility(prior, i, t, r) - truthful.clone();
                if gain > tol {
                    out.push(BicViolation {
                        bidder: i,
                        true_type: t,
                        reported_type: r,
                        slack: gain.to_f64(),
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExPostKind {
    NegativeProbability,
    LotteryNotNormalized,
    PositiveTransfer,
    ExceedsBudgetOrValue,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExPostViolation {
    pub profile: usize,
    pub allocation: Option<usize>,
    pub bidder: Option<usize>,
    pub kind: ExPostKind,
    pub amount: f64,
}

/// Checks lottery normalization and `0 <= z <= lambda * min(b, v . a)` on every support point.
pub fn check_ex_post<S: Scalar>(
    solution: &MechanismSolution<S>,
    prior: &Prior,
    tol: S,
) -> Vec<ExPostViolation> {
    let mut out = Vec::new();
    for (p, profile) in solution.profiles.iter().enumerate() {
        let total: S = solution.lottery[p].iter().cloned().sum();
        let gap = (total - S::one()).abs();
        if gap > tol {
            out.push(ExPostViolation {
                profile: p,
                allocation: None,
                bidder: None,
                kind: ExPostKind::LotteryNotNormalized,
                amount: gap.to_f64(),
            });
        }
        for (a, alloc) in solution.allocations.iter().enumerate() {
            let lambda = &solution.lottery[p][a];
            if *lambda < -tol.clone() {
                out.push(ExPostViolation {
                    profile: p,
                    allocation: Some(a),
                    bidder: None,
                    kind: ExPostKind::NegativeProbability,
                    amount: lambda.to_f64(),
                });
            }
            for i in 0..prior.n() {
                let z = &solution.payments[p][a][i];
                if *z < -tol.clone() {
                    out.push(ExPostViolation {
                        profile: p,
                        allocation: Some(a),
                        bidder: Some(i),
                        kind: ExPostKind::PositiveTransfer,
                        amount: z.to_f64(),
                    });
                }
                let cap = S::max_of(lambda.clone(), S::zero())
                    * prior.payment_cap::<S>(profile, alloc, i);
                let excess = z.clone() - cap;
                if excess > tol {
                    out.push(ExPostViolation {
                        profile: p,
                        allocation: Some(a),
                        bidder: Some(i),
                        kind: ExPostKind::ExceedsBudgetOrValue,
                        amount: excess.to_f64(),
                    });
                }
            }
        }
    }
    out
}

/// Virtual type assigned to one reported type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeMapping {
    pub multiplier: f64,
    pub virtual_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidderMapping {
    pub types: Vec<TypeMapping>,
}

/// One mapping per bidder from types to virtual types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualMapping {
    pub bidders: Vec<BidderMapping>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedMapping {
    pub weight: f64,
    #[serde(flatten)]
    pub mapping: VirtualMapping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingDistribution {
    pub mappings: Vec<WeightedMapping>,
}

impl MappingDistribution {
    pub fn point_mass(mapping: VirtualMapping) -> Self {
        MappingDistribution {
            mappings: vec![WeightedMapping {
                weight: 1.0,
                mapping,
            }],
        }
    }

    pub fn validate(&self, prior: &Prior) -> Result<(), MechanismError> {
        let bad = |msg: String| Err(MechanismError::InvalidMapping(msg));
        if self.mappings.is_empty() {
            return bad("no mappings".into());
        }
        let total: f64 = self.mappings.iter().map(|w| w.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("weights sum to {total}"));
        }
        for (k, wm) in self.mappings.iter().enumerate() {
            if wm.weight.is_nan() || wm.weight <= 0.0 {
                return bad(format!("mapping {k} has non-positive weight"));
            }
            if wm.mapping.bidders.len() != prior.n() {
                return bad(format!(
                    "mapping {k} covers {} bidders",
                    wm.mapping.bidders.len()
                ));
            }
            for (i, b) in wm.mapping.bidders.iter().enumerate() {
                if b.types.len() != prior.bidders[i].types.len() {
                    return bad(format!(
                        "mapping {k} bidder {i} has the wrong number of types"
                    ));
                }
                for (t, tm) in b.types.iter().enumerate() {
                    if tm.multiplier.is_nan() || tm.multiplier < 0.0 {
                        return bad(format!(
                            "mapping {k} bidder {i} type {t} has negative multiplier"
                        ));
                    }
                    if tm.virtual_values.len() != prior.m {
                        return bad(format!(
                            "mapping {k} bidder {i} type {t} has wrong item count"
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Exact,
    Approx,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MechanismRun {
    pub mapping_index: usize,
    pub instance: BavwmInstance<f64>,
    pub allocation: Allocation,
    pub prices: PriceVector<f64>,
    pub virtual_welfare: f64,
}

/// Builds the virtual welfare instance for one reported profile under one mapping.
pub fn induced_instance(
    prior: &Prior,
    mapping: &VirtualMapping,
    profile: &[usize],
) -> BavwmInstance<f64> {
    let mut values = Vec::with_capacity(prior.n());
    let mut budgets = Vec::with_capacity(prior.n());
    let mut multipliers = Vec::with_capacity(prior.n());
    let mut virtual_values = Vec::with_capacity(prior.n());
    for (i, &t) in profile.iter().enumerate() {
        let ty = prior.type_of(i, t);
        let vt = &mapping.bidders[i].types[t];
        values.push(ty.values.clone());
        budgets.push(ty.budget);
        multipliers.push(vt.multiplier);
        virtual_values.push(vt.virtual_values.clone());
    }
    BavwmInstance {
        n: prior.n(),
        m: prior.m,
        values,
        budgets,
        multipliers,
        virtual_values,
        normalized: false,
    }
}

/// Runs the mechanism on a reported profile: sample a mapping from `delta`
/// with `seed`, maximize the induced virtual welfare, and charge
/// `min(b_i, bundle value)` to bidders whose multiplier is positive.
pub fn run_virtual_welfare_mechanism(
    prior: &Prior,
    delta: &MappingDistribution,
    profile: &[usize],
    seed: u64,
    solver: SolverKind,
) -> Result<MechanismRun, MechanismError> {
    prior.validate()?;
    delta.validate(prior)?;
    if profile.len() != prior.n() {
        return Err(MechanismError::ProfileLength {
            expected: prior.n(),
            got: profile.len(),
        });
    }
    for (i, &t) in profile.iter().enumerate() {
        if t >= prior.bidders[i].types.len() {
            return Err(MechanismError::UnknownType {
                bidder: i,
                index: t,
            });
        }
    }
    let weights: Vec<f64> = delta.mappings.iter().map(|w| w.weight).collect();
    let sampler =
        WeightedIndex::new(&weights).map_err(|e| MechanismError::InvalidMapping(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mapping_index = sampler.sample(&mut rng);
    let instance = induced_instance(prior, &delta.mappings[mapping_index].mapping, profile);
    let result = match solver {
        SolverKind::Exact => bavwm::solve_exact(&instance)?,
        SolverKind::Approx => bavwm::solve_approx(&instance)?,
    };
    Ok(MechanismRun {
        mapping_index,
        instance,
        allocation: result.allocation,
        prices: result.prices,
        virtual_welfare: result.objective_value,
    })
}

/// Items bought by each bidder under sequential posted prices on one profile,
/// with the amount each pays. Bidders in index order buy a utility-maximizing
/// affordable bundle of the remaining items; ties go to the larger payment,
/// then the smaller item mask.
pub fn posted_price_outcome(
    prior: &Prior,
    profile: &[usize],
    prices: &[f64],
) -> (Allocation, Vec<f64>) {
    let m = prior.m;
    let mut assignment = vec![None; m];
    let mut payments = vec![0.0; prior.n()];
    let mut remaining: u32 = if m == 0 { 0 } else { (1u32 << m) - 1 };
    for (i, &t) in profile.iter().enumerate() {
        let ty = prior.type_of(i, t);
        let mut best = (0.0f64, 0.0f64, 0u32);
        let mut mask = remaining;
        while mask != 0 {
            let (mut value, mut pay) = (0.0, 0.0);
            for j in 0..m {
                if mask & (1 << j) != 0 {
                    value += ty.values[j];
                    pay += prices[j];
                }
            }
            if pay <= ty.budget + 1e-12 {
                let utility = value - pay;
                let better = utility > best.0 + 1e-12
                    || ((utility - best.0).abs() <= 1e-12 && pay > best.1 + 1e-12);
                let tie = (utility - best.0).abs() <= 1e-12 && (pay - best.1).abs() <= 1e-12;
                if better || (tie && best.2 != 0 && mask < best.2) {
                    best = (utility, pay, mask);
                }
            }
            mask = (mask - 1) & remaining;
        }
        if best.2 != 0 {
            for (j, slot) in assignment.iter_mut().enumerate() {
                if best.2 & (1 << j) != 0 {
                    *slot = Some(i);
                }
            }
            payments[i] = best.1;
            remaining &= !best.2;
        }
    }
    (Allocation::from_agents(assignment), payments)
}

/// Sequential posted prices as a lottery table, so the constraint checkers
/// can decide which incentive mode it satisfies. Bidders can never pay above
/// their budget, so it is always ex-post feasible and truthful against
/// budget-downward misreports; overstating a budget can pay off.
pub fn posted_price_mechanism(prior: &Prior, prices: &[f64]) -> MechanismSolution<f64> {
    let allocations = Allocation::enumerate(prior.n(), prior.m);
    let profiles = prior.profiles();
    let mut lottery = vec![vec![0.0; allocations.len()]; profiles.len()];
    let mut payments = vec![vec![vec![0.0; prior.n()]; allocations.len()]; profiles.len()];
    for (p, profile) in profiles.iter().enumerate() {
        let (alloc, pay) = posted_price_outcome(prior, profile, prices);
        let a = allocations
            .iter()
            .position(|x| *x == alloc)
            .expect("every allocation is enumerated");
        lottery[p][a] = 1.0;
        payments[p][a] = pay;
    }
    MechanismSolution::from_lotteries(prior, allocations, lottery, payments)
}

/// Expected revenue of sequential posted prices.
pub fn posted_price_revenue(prior: &Prior, prices: &[f64]) -> f64 {
    prior
        .profiles()
        .iter()
        .map(|profile| {
            let pr: f64 = prior.profile_probability(profile);
            pr * posted_price_outcome(prior, profile, prices)
                .1
                .iter()
                .sum::<f64>()
        })
        .sum()
}

/// Every price vector whose entries are drawn from the item values and
/// budgets in the prior. An item nobody values is priced out of reach.
pub fn posted_price_candidates(prior: &Prior) -> Vec<Vec<f64>> {
    let per_item: Vec<Vec<f64>> = (0..prior.m)
        .map(|j| {
            let mut c: Vec<f64> = prior
                .bidders
                .iter()
                .flat_map(|b| b.types.iter().flat_map(move |t| [t.values[j], t.budget]))
                .filter(|v| *v > 0.0)
                .collect();
            c.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
            c.dedup();
            if c.is_empty() {
                c.push(f64::INFINITY);
            }
            c
        })
        .collect();
    let mut out = vec![Vec::new()];
    for choices in &per_item {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                choices.iter().map(move |&c| {
                    let mut next = prefix.clone();
                    next.push(c);
                    next
                })
            })
            .collect();
    }
    out
}

/// Best sequential posted-price revenue over [`posted_price_candidates`].
pub fn best_posted_price(prior: &Prior) -> (Vec<f64>, f64) {
    let mut best = (vec![0.0; prior.m], 0.0);
    for prices in posted_price_candidates(prior) {
        let r = posted_price_revenue(prior, &prices);
        if r > best.1 {
            best = (prices, r);
        }
    }
    best
}
