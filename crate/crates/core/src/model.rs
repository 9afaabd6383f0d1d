//! Budgeted-additive virtual welfare instances, allocations and pricing.
//!
//! The objective of an allocation with bundles `S_i` is
//! `sum_i m_i * min(b_i, v_i(S_i)) + sum_i w_i(S_i)`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{convert, convert_matrix, convert_vec, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("instance must be normalized first")]
    Unnormalized,
    #[error("invalid instance: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("allocation covers {got} items but the instance has {expected}")]
    ItemCount { expected: usize, got: usize },
    #[error("item {item} is assigned to agent {agent}, but there are only {n} agents")]
    UnknownAgent { item: usize, agent: usize, n: usize },
    #[error("item {0} is assigned in both the bar and hat parts")]
    DoublyAssigned(usize),
}

fn join_violations(vs: &[Violation]) -> String {
    vs.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// One broken invariant, located by field name and zero-based index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: &'static str,
    pub index: Vec<usize>,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.field)?;
        for i in &self.index {
            write!(f, "[{i}]")?;
        }
        write!(f, ": {}", self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BavwmInstance<S = f64> {
    pub n: usize,
    pub m: usize,
    /// `values[i][j]`: agent i's value for item j.
    pub values: Vec<Vec<S>>,
    pub budgets: Vec<S>,
    pub multipliers: Vec<S>,
    pub virtual_values: Vec<Vec<S>>,
    #[serde(default)]
    pub normalized: bool,
}

impl<S: Scalar> BavwmInstance<S> {
    /// Builds a raw (unnormalized) instance; dimensions are taken from `values`.
    pub fn new(
        values: Vec<Vec<S>>,
        budgets: Vec<S>,
        multipliers: Vec<S>,
        virtual_values: Vec<Vec<S>>,
    ) -> Self {
        let n = values.len();
        let m = values.first().map_or(0, Vec::len);
        BavwmInstance {
            n,
            m,
            values,
            budgets,
            multipliers,
            virtual_values,
            normalized: false,
        }
    }

    /// Convenience for an instance with no agents.
    pub fn empty(m: usize) -> Self {
        BavwmInstance {
            m,
            ..Self::new(Vec::new(), Vec::new(), Vec::new(), Vec::new())
        }
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut dim = |field: &'static str, index: Vec<usize>, got: usize, want: usize| {
            if got != want {
                out.push(Violation {
                    field,
                    index,
                    reason: format!("length {got}, expected {want}"),
                });
                false
            } else {
                true
            }
        };
        let mut shapes_ok = dim("values", vec![], self.values.len(), self.n);
        shapes_ok &= dim("budgets", vec![], self.budgets.len(), self.n);
        shapes_ok &= dim("multipliers", vec![], self.multipliers.len(), self.n);
        shapes_ok &= dim("virtual_values", vec![], self.virtual_values.len(), self.n);
        for i in 0..self.values.len() {
            shapes_ok &= dim("values", vec![i], self.values[i].len(), self.m);
        }
        for i in 0..self.virtual_values.len() {
            shapes_ok &= dim(
                "virtual_values",
                vec![i],
                self.virtual_values[i].len(),
                self.m,
            );
        }
        if !shapes_ok {
            return out;
        }

        for i in 0..self.n {
            if self.budgets[i].is_negative() {
                out.push(Violation {
                    field: "budgets",
                    index: vec![i],
                    reason: format!("budget {} is negative", self.budgets[i]),
                });
            }
            if self.normalized && self.multipliers[i].is_negative() {
                out.push(Violation {
                    field: "multipliers",
                    index: vec![i],
                    reason: format!(
                        "normalized instance has negative multiplier {}",
                        self.multipliers[i]
                    ),
                });
            }
            for j in 0..self.m {
                let v = &self.values[i][j];
                if v.is_negative() {
                    out.push(Violation {
                        field: "values",
                        index: vec![i, j],
                        reason: format!("value {v} is negative"),
                    });
                } else if self.normalized && *v > self.budgets[i] {
                    out.push(Violation {
                        field: "values",
                        index: vec![i, j],
                        reason: format!("normalized value {v} exceeds budget {}", self.budgets[i]),
                    });
                }
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<(), ModelError> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Invalid(violations))
        }
    }

    /// Negative multipliers become zero and values are clamped to the budget.
    /// Neither change alters the objective of any allocation.
    pub fn normalize(&self) -> Self {
        let mut out = self.clone();
        for m in out.multipliers.iter_mut() {
            if m.is_negative() {
                *m = S::zero();
            }
        }
        for (row, b) in out.values.iter_mut().zip(&self.budgets) {
            for v in row.iter_mut() {
                if *v > *b {
                    *v = b.clone();
                }
            }
        }
        out.normalized = true;
        out
    }

    pub fn require_normalized(&self) -> Result<(), ModelError> {
        if self.normalized {
            Ok(())
        } else {
            Err(ModelError::Unnormalized)
        }
    }

    pub fn convert<T: Scalar>(&self) -> BavwmInstance<T> {
        BavwmInstance {
            n: self.n,
            m: self.m,
            values: convert_matrix(&self.values),
            budgets: convert_vec(&self.budgets),
            multipliers: convert_vec(&self.multipliers),
            virtual_values: convert_matrix(&self.virtual_values),
            normalized: self.normalized,
        }
    }

    fn check_assignment(&self, assignment: &[Option<usize>]) -> Result<(), ModelError> {
        if assignment.len() != self.m {
            return Err(ModelError::ItemCount {
                expected: self.m,
                got: assignment.len(),
            });
        }
        for (item, a) in assignment.iter().enumerate() {
            if let Some(agent) = *a {
                if agent >= self.n {
                    return Err(ModelError::UnknownAgent {
                        item,
                        agent,
                        n: self.n,
                    });
                }
            }
        }
        Ok(())
    }

    /// `m_i * min(b_i, v_i(S_i)) + w_i(S_i)` for agent i.
    fn agent_term(&self, i: usize, items: impl Iterator<Item = usize>) -> S {
        let mut value = S::zero();
        let mut virt = S::zero();
        for j in items {
            value += self.values[i][j].clone();
            virt += self.virtual_values[i][j].clone();
        }
        self.multipliers[i].clone() * S::min_of(self.budgets[i].clone(), value) + virt
    }

    /// True budget-truncated objective. Rejects unnormalized instances.
    pub fn objective(&self, alloc: &Allocation) -> Result<S, ModelError> {
        self.require_normalized()?;
        self.truncated_objective(alloc)
    }

    /// The budget-truncated formula without the normalization gate; evaluating
    /// it on a raw instance is how clamp invariance is checked.
    pub fn truncated_objective(&self, alloc: &Allocation) -> Result<S, ModelError> {
        self.check_assignment(&alloc.assignment)?;
        Ok((0..self.n)
            .map(|i| self.agent_term(i, alloc.bundle(i)))
            .sum())
    }

    /// Objective that credits bar items at face value (`m_i v_ij + w_ij`) with
    /// no budget truncation, plus `w_ij` for hat items.
    pub fn split_objective(&self, split: &SplitAllocation) -> Result<S, ModelError> {
        self.require_normalized()?;
        split.check_disjoint()?;
        self.check_assignment(&split.bar)?;
        self.check_assignment(&split.hat)?;
        let mut total = S::zero();
        for j in 0..self.m {
            if let Some(i) = split.bar[j] {
                total += self.multipliers[i].clone() * self.values[i][j].clone()
                    + self.virtual_values[i][j].clone();
            }
            if let Some(i) = split.hat[j] {
                total += self.virtual_values[i][j].clone();
            }
        }
        Ok(total)
    }

    pub fn bundle_value(&self, alloc: &Allocation, agent: usize) -> S {
        alloc
            .bundle(agent)
            .map(|j| self.values[agent][j].clone())
            .sum()
    }

    /// Charges `min(b_i, v_i(S_i))` to agents with positive multiplier, nothing otherwise.
    pub fn prices_from_allocation(&self, alloc: &Allocation) -> Result<PriceVector<S>, ModelError> {
        self.check_assignment(&alloc.assignment)?;
        let prices = (0..self.n)
            .map(|i| {
                if self.multipliers[i].is_positive() {
                    S::min_of(self.budgets[i].clone(), self.bundle_value(alloc, i))
                } else {
                    S::zero()
                }
            })
            .collect();
        Ok(PriceVector { prices })
    }
}

/// Free-function forms of the instance operations.
pub fn validate<S: Scalar>(instance: &BavwmInstance<S>) -> Vec<Violation> {
    instance.validate()
}

pub fn normalize<S: Scalar>(instance: &BavwmInstance<S>) -> BavwmInstance<S> {
    instance.normalize()
}

pub fn objective<S: Scalar>(
    instance: &BavwmInstance<S>,
    alloc: &Allocation,
) -> Result<S, ModelError> {
    instance.objective(alloc)
}

pub fn split_objective<S: Scalar>(
    instance: &BavwmInstance<S>,
    split: &SplitAllocation,
) -> Result<S, ModelError> {
    instance.split_objective(split)
}

pub fn prices_from_allocation<S: Scalar>(
    instance: &BavwmInstance<S>,
    alloc: &Allocation,
) -> Result<PriceVector<S>, ModelError> {
    instance.prices_from_allocation(alloc)
}

/// Item-to-agent assignment. `None` is the explicit unassigned marker; agents
/// are zero-based in memory and one-based on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "AllocationWire", into = "AllocationWire")]
pub struct Allocation {
    pub assignment: Vec<Option<usize>>,
}

#[derive(Serialize, Deserialize)]
struct AllocationWire {
    assignment: Vec<Option<usize>>,
}

impl TryFrom<AllocationWire> for Allocation {
    type Error = String;

    fn try_from(w: AllocationWire) -> Result<Self, Self::Error> {
        let assignment = w
            .assignment
            .into_iter()
            .map(|a| match a {
                Some(0) => Err("agents are 1-indexed; use null for unassigned".to_string()),
                Some(k) => Ok(Some(k - 1)),
                None => Ok(None),
            })
            .collect::<Result<_, _>>()?;
        Ok(Allocation { assignment })
    }
}

impl From<Allocation> for AllocationWire {
    fn from(a: Allocation) -> Self {
        AllocationWire {
            assignment: a.assignment.into_iter().map(|x| x.map(|k| k + 1)).collect(),
        }
    }
}

impl Allocation {
    pub fn unassigned(m: usize) -> Self {
        Allocation {
            assignment: vec![None; m],
        }
    }

    pub fn from_agents(assignment: Vec<Option<usize>>) -> Self {
        Allocation { assignment }
    }

    pub fn bundle(&self, agent: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, a)| **a == Some(agent))
            .map(|(j, _)| j)
    }

    /// Every assignment in `[n+1]^m`, lexicographic with unassigned first.
    pub fn enumerate(n: usize, m: usize) -> Vec<Allocation> {
        let mut out = Vec::new();
        let mut digits = vec![0usize; m];
        loop {
            out.push(Allocation {
                assignment: digits.iter().map(|&d| d.checked_sub(1)).collect(),
            });
            let mut pos = m;
            loop {
                if pos == 0 {
                    return out;
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

    pub fn assigned_count(&self) -> usize {
        self.assignment.iter().filter(|a| a.is_some()).count()
    }
}

/// Integral allocation split into budget-counted (bar) and additive-only (hat) parts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAllocation {
    pub bar: Vec<Option<usize>>,
    pub hat: Vec<Option<usize>>,
}

impl SplitAllocation {
    pub fn unassigned(m: usize) -> Self {
        SplitAllocation {
            bar: vec![None; m],
            hat: vec![None; m],
        }
    }

    pub fn all_bar(alloc: &Allocation) -> Self {
        SplitAllocation {
            bar: alloc.assignment.clone(),
            hat: vec![None; alloc.assignment.len()],
        }
    }

    pub fn check_disjoint(&self) -> Result<(), ModelError> {
        if self.bar.len() != self.hat.len() {
            return Err(ModelError::ItemCount {
                expected: self.bar.len(),
                got: self.hat.len(),
            });
        }
        match (0..self.bar.len()).find(|&j| self.bar[j].is_some() && self.hat[j].is_some()) {
            Some(j) => Err(ModelError::DoublyAssigned(j)),
            None => Ok(()),
        }
    }

    pub fn bar_items(&self, agent: usize) -> impl Iterator<Item = usize> + '_ {
        self.bar
            .iter()
            .enumerate()
            .filter(move |(_, a)| **a == Some(agent))
            .map(|(j, _)| j)
    }

    pub fn bar_load<S: Scalar>(&self, instance: &BavwmInstance<S>, agent: usize) -> S {
        self.bar_items(agent)
            .map(|j| instance.values[agent][j].clone())
            .sum()
    }

    /// Union of both parts as a plain allocation.
    pub fn merge(&self) -> Result<Allocation, ModelError> {
        self.check_disjoint()?;
        Ok(Allocation {
            assignment: self
                .bar
                .iter()
                .zip(&self.hat)
                .map(|(b, h)| b.or(*h))
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceVector<S = f64> {
    pub prices: Vec<S>,
}

impl<S: Scalar> PriceVector<S> {
    /// `0 <= p_i <= min(b_i, bundle value)` for every agent, within tolerance.
    pub fn is_feasible_for(&self, instance: &BavwmInstance<S>, alloc: &Allocation) -> bool {
        self.prices.len() == instance.n
            && self.prices.iter().enumerate().all(|(i, p)| {
                let cap = S::min_of(instance.budgets[i].clone(), instance.bundle_value(alloc, i));
                p.ge_tol(&S::zero()) && p.le_tol(&cap)
            })
    }

    pub fn to_f64(&self) -> PriceVector<f64> {
        PriceVector {
            prices: self.prices.iter().map(convert).collect(),
        }
    }
}
