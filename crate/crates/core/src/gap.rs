//! Generalized assignment: instances, the fractional LP, and slot rounding.
//!
//! Rounding follows the slot construction: every machine gets one slot per
//! unit of fractional mass, jobs are packed into slots in order of
//! non-increasing processing time, and a maximum-cost matching over the
//! (job, slot) pairs that received mass picks the integral assignment. The
//! matching polytope is integral, so an exact LP solve yields the matching.
//! Loads end up at most `T_i + max p_ij <= 2 T_i`.

use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{self, LinearProgram, LpError, LpStatus, Sense};
use crate::model::{BavwmInstance, ModelError};
use crate::scalar::{convert, convert_matrix, convert_vec, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GapError {
    #[error("invalid GAP instance: {0}")]
    Invalid(String),
    #[error("job {0} has no machine with processing time within capacity")]
    NoEligibleMachine(usize),
    #[error("GAP LP is infeasible")]
    Infeasible,
    #[error("fractional assignment rejected: {0}")]
    Precondition(String),
    #[error("rounding produced a non-integral matching")]
    NonIntegralMatching,
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Machines are rows of `processing` and `costs`; jobs are columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapInstance<S = f64> {
    pub jobs: usize,
    pub capacities: Vec<S>,
    pub processing: Vec<Vec<S>>,
    pub costs: Vec<Vec<S>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionalAssignment<S = f64> {
    /// `x[machine][job]`
    pub x: Vec<Vec<S>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegralAssignment {
    pub machine_of: Vec<usize>,
}

impl<S: Scalar> GapInstance<S> {
    pub fn machines(&self) -> usize {
        self.capacities.len()
    }

    pub fn validate(&self) -> Result<(), GapError> {
        let k = self.machines();
        if self.processing.len() != k || self.costs.len() != k {
            return Err(GapError::Invalid(format!(
                "{k} capacities but {} processing rows and {} cost rows",
                self.processing.len(),
                self.costs.len()
            )));
        }
        for i in 0..k {
            if self.processing[i].len() != self.jobs || self.costs[i].len() != self.jobs {
                return Err(GapError::Invalid(format!(
                    "machine {i} rows do not have {} jobs",
                    self.jobs
                )));
            }
            if self.capacities[i].is_negative() {
                return Err(GapError::Invalid(format!(
                    "machine {i} has negative capacity"
                )));
            }
            if let Some(j) = self.processing[i].iter().position(|p| p.is_negative()) {
                return Err(GapError::Invalid(format!(
                    "processing time of job {j} on machine {i} is negative"
                )));
            }
        }
        Ok(())
    }

    pub fn is_eligible(&self, machine: usize, job: usize) -> bool {
        self.processing[machine][job] <= self.capacities[machine]
    }

    pub fn cost(&self, assignment: &IntegralAssignment) -> S {
        assignment
            .machine_of
            .iter()
            .enumerate()
            .map(|(j, &i)| self.costs[i][j].clone())
            .sum()
    }

    pub fn loads(&self, assignment: &IntegralAssignment) -> Vec<S> {
        let mut loads = vec![S::zero(); self.machines()];
        for (j, &i) in assignment.machine_of.iter().enumerate() {
            loads[i] += self.processing[i][j].clone();
        }
        loads
    }

    pub fn fractional_cost(&self, frac: &FractionalAssignment<S>) -> S {
        let mut total = S::zero();
        for (i, row) in frac.x.iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                total += x.clone() * self.costs[i][j].clone();
            }
        }
        total
    }

    pub fn fractional_loads(&self, frac: &FractionalAssignment<S>) -> Vec<S> {
        frac.x
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, x)| x.clone() * self.processing[i][j].clone())
                    .sum()
            })
            .collect()
    }

    pub fn convert<T: Scalar>(&self) -> GapInstance<T> {
        GapInstance {
            jobs: self.jobs,
            capacities: convert_vec(&self.capacities),
            processing: convert_matrix(&self.processing),
            costs: convert_matrix(&self.costs),
        }
    }

    /// Checks the fractional-assignment invariants within tolerance.
    pub fn check_fractional(&self, frac: &FractionalAssignment<S>) -> Result<(), GapError> {
        let k = self.machines();
        if frac.x.len() != k || frac.x.iter().any(|r| r.len() != self.jobs) {
            return Err(GapError::Precondition(
                "dimensions do not match instance".into(),
            ));
        }
        let one = S::one();
        for i in 0..k {
            for j in 0..self.jobs {
                let x = &frac.x[i][j];
                if x.is_neg_tol() || !x.le_tol(&one) {
                    return Err(GapError::Precondition(format!(
                        "x[{i}][{j}] = {x} outside [0,1]"
                    )));
                }
                if !self.is_eligible(i, j) && !x.is_zero_tol() {
                    return Err(GapError::Precondition(format!(
                        "job {j} placed on machine {i} whose capacity it exceeds"
                    )));
                }
            }
        }
        for j in 0..self.jobs {
            let total: S = (0..k).map(|i| frac.x[i][j].clone()).sum();
            if !total.approx_eq(&one) {
                return Err(GapError::Precondition(format!(
                    "job {j} has total fraction {total}, expected 1"
                )));
            }
        }
        for (i, load) in self.fractional_loads(frac).iter().enumerate() {
            if !load.le_tol(&self.capacities[i]) {
                return Err(GapError::Precondition(format!(
                    "machine {i} fractional load {load} exceeds capacity {}",
                    self.capacities[i]
                )));
            }
        }
        Ok(())
    }
}

/// Optimal fractional solution of the assignment LP: every job fully
/// assigned, capacities respected, ineligible pairs fixed at zero.
pub fn solve_gap_lp<S: Scalar>(gap: &GapInstance<S>) -> Result<FractionalAssignment<S>, GapError> {
    gap.validate()?;
    let k = gap.machines();
    if let Some(j) = (0..gap.jobs).find(|&j| !(0..k).any(|i| gap.is_eligible(i, j))) {
        return Err(GapError::NoEligibleMachine(j));
    }
    let mut lp = LinearProgram::<S>::new();
    let mut var = vec![vec![None; gap.jobs]; k];
    for i in 0..k {
        for j in 0..gap.jobs {
            if gap.is_eligible(i, j) {
                var[i][j] = Some(lp.add_var(
                    format!("x_{i}_{j}"),
                    gap.costs[i][j].clone(),
                    Some(S::zero()),
                    Some(S::one()),
                ));
            }
        }
    }
    for j in 0..gap.jobs {
        let terms = (0..k)
            .filter_map(|i| var[i][j].map(|v| (v, S::one())))
            .collect();
        lp.add_constraint(terms, Sense::Eq, S::one());
    }
    for i in 0..k {
        let terms: Vec<_> = (0..gap.jobs)
            .filter_map(|j| var[i][j].map(|v| (v, gap.processing[i][j].clone())))
            .filter(|(_, p)| !p.is_zero())
            .collect();
        if !terms.is_empty() {
            lp.add_constraint(terms, Sense::Le, gap.capacities[i].clone());
        }
    }
    let sol = lp::solve(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(GapError::Infeasible);
    }
    let x = (0..k)
        .map(|i| {
            (0..gap.jobs)
                .map(|j| var[i][j].map_or_else(S::zero, |v| sol.values[v].clone()))
                .collect()
        })
        .collect();
    Ok(FractionalAssignment { x })
}

/// One unit-capacity slot of a machine and the job fractions packed into it.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot<S> {
    pub machine: usize,
    pub index: usize,
    pub pieces: Vec<(usize, S)>,
}

/// Packs each machine's fractions into consecutive unit slots, jobs ordered by
/// non-increasing processing time (ties by job index).
pub fn build_slots<S: Scalar>(
    gap: &GapInstance<S>,
    frac: &FractionalAssignment<S>,
) -> Vec<Slot<S>> {
    let floor = S::fraction_floor();
    let mut slots = Vec::new();
    for i in 0..gap.machines() {
        let mut jobs: Vec<usize> = (0..gap.jobs).filter(|&j| frac.x[i][j] > floor).collect();
        jobs.sort_by(|&a, &b| {
            gap.processing[i][b]
                .partial_cmp(&gap.processing[i][a])
                .expect("processing times are comparable")
                .then(a.cmp(&b))
        });
        let mut current = Slot {
            machine: i,
            index: 0,
            pieces: Vec::new(),
        };
        let mut room = S::one();
        for j in jobs {
            let mut left = frac.x[i][j].clone();
            while left > floor {
                if room <= floor {
                    let next = current.index + 1;
                    slots.push(std::mem::replace(
                        &mut current,
                        Slot {
                            machine: i,
                            index: next,
                            pieces: Vec::new(),
                        },
                    ));
                    room = S::one();
                }
                let piece = S::min_of(left.clone(), room.clone());
                left -= piece.clone();
                room -= piece.clone();
                current.pieces.push((j, piece));
            }
        }
        if !current.pieces.is_empty() {
            slots.push(current);
        }
    }
    slots
}

/// Rounds a fractional assignment to an integral one with cost at least the
/// fractional cost and every machine load at most twice its capacity.
pub fn st_round<S: Scalar>(
    gap: &GapInstance<S>,
    frac: &FractionalAssignment<S>,
) -> Result<IntegralAssignment, GapError> {
    gap.validate()?;
    gap.check_fractional(frac)?;
    let slots = build_slots(gap, frac);

    let mut lp = LinearProgram::<BigRational>::new();
    let mut edges = Vec::new();
    let mut job_rows: Vec<Vec<(usize, BigRational)>> = vec![Vec::new(); gap.jobs];
    let mut slot_rows = Vec::with_capacity(slots.len());
    for (s, slot) in slots.iter().enumerate() {
        let mut row = Vec::new();
        for (j, _) in &slot.pieces {
            let v = lp.add_nonneg(
                format!("y_{j}_m{}s{}", slot.machine, slot.index),
                convert(&gap.costs[slot.machine][*j]),
            );
            edges.push((*j, s));
            job_rows[*j].push((v, BigRational::from_usize(1)));
            row.push((v, BigRational::from_usize(1)));
        }
        slot_rows.push(row);
    }
    for terms in job_rows {
        lp.add_constraint(terms, Sense::Eq, BigRational::from_usize(1));
    }
    for terms in slot_rows {
        lp.add_constraint(terms, Sense::Le, BigRational::from_usize(1));
    }
    let sol = lp::solve(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(GapError::Infeasible);
    }

    let one = BigRational::from_usize(1);
    let mut machine_of = vec![None; gap.jobs];
    for (v, &(j, s)) in edges.iter().enumerate() {
        let y = &sol.values[v];
        if *y == one {
            machine_of[j] = Some(slots[s].machine);
        } else if !num_traits::Zero::is_zero(y) {
            return Err(GapError::NonIntegralMatching);
        }
    }
    let machine_of = machine_of
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or(GapError::NonIntegralMatching)?;
    Ok(IntegralAssignment { machine_of })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "agent", rename_all = "lowercase")]
pub enum MachineRole {
    Dummy,
    Hat(usize),
    Bar(usize),
}

/// Machine layout of the BAVWM embedding: dummy `0`, hat machines `1..=n`,
/// bar machines `n+1..=2n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineMap {
    pub roles: Vec<MachineRole>,
    pub hat: Vec<usize>,
    pub bar: Vec<usize>,
}

impl MachineMap {
    pub fn new(n: usize) -> Self {
        let mut roles = vec![MachineRole::Dummy];
        roles.extend((0..n).map(MachineRole::Hat));
        roles.extend((0..n).map(MachineRole::Bar));
        MachineMap {
            roles,
            hat: (1..=n).collect(),
            bar: (n + 1..=2 * n).collect(),
        }
    }

    pub const DUMMY: usize = 0;

    pub fn role(&self, machine: usize) -> MachineRole {
        self.roles[machine]
    }
}

/// GAP instance whose fractional LP coincides with the BAVWM relaxation plus a
/// dummy machine that absorbs unallocated mass.
pub fn build_gap_from_bavwm<S: Scalar>(
    instance: &BavwmInstance<S>,
) -> Result<(GapInstance<S>, MachineMap), GapError> {
    instance.require_normalized()?;
    instance.ensure_valid()?;
    let (n, m) = (instance.n, instance.m);
    let map = MachineMap::new(n);
    let mut capacities = vec![S::zero(); 2 * n + 1];
    let mut processing = vec![vec![S::zero(); m]; 2 * n + 1];
    let mut costs = vec![vec![S::zero(); m]; 2 * n + 1];
    for i in 0..n {
        let (hat, bar) = (map.hat[i], map.bar[i]);
        capacities[bar] = instance.budgets[i].clone();
        for j in 0..m {
            costs[hat][j] = instance.virtual_values[i][j].clone();
            processing[bar][j] = instance.values[i][j].clone();
            costs[bar][j] = instance.multipliers[i].clone() * instance.values[i][j].clone()
                + instance.virtual_values[i][j].clone();
        }
    }
    Ok((
        GapInstance {
            jobs: m,
            capacities,
            processing,
            costs,
        },
        map,
    ))
}
