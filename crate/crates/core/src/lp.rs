//! Linear programs and a dense two-phase simplex solver.
//!
//! Every program is a maximization. The solver works in either the float or the
//! exact rational mode selected by the scalar type, returns a basic (vertex)
//! solution, and re-checks every optimal answer against the original program
//! before handing it back.

use std::fmt;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{convert, Arithmetic, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint<S> {
    pub terms: Vec<(usize, S)>,
    pub sense: Sense,
    pub rhs: S,
}

impl<S: Scalar> Constraint<S> {
    pub fn lhs(&self, values: &[S]) -> S {
        self.terms
            .iter()
            .map(|(j, a)| a.clone() * values[*j].clone())
            .sum()
    }

    /// Amount by which `values` violates this row (zero when satisfied).
    pub fn violation(&self, values: &[S]) -> S {
        let lhs = self.lhs(values);
        let zero = S::zero();
        match self.sense {
            Sense::Le => S::max_of(lhs - self.rhs.clone(), zero),
            Sense::Ge => S::max_of(self.rhs.clone() - lhs, zero),
            Sense::Eq => (lhs - self.rhs.clone()).abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution<S> {
    pub status: LpStatus,
    pub values: Vec<S>,
    pub objective_value: S,
}

impl<S: Scalar> LpSolution<S> {
    fn without_point(status: LpStatus, num_vars: usize) -> Self {
        LpSolution {
            status,
            values: vec![S::zero(); num_vars],
            objective_value: S::zero(),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("malformed LP: {0}")]
    Malformed(String),
    #[error("exact LP too large: {cells} tableau cells exceeds limit {limit}")]
    SizeLimit { cells: usize, limit: usize },
    #[error("simplex exceeded {0} iterations")]
    IterationLimit(usize),
    #[error("solution failed re-substitution check (max violation {0:e})")]
    Numerical(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    /// Exact mode refuses tableaus with more cells than this.
    pub exact_cell_limit: usize,
    pub max_iterations: usize,
    /// Consecutive degenerate pivots tolerated before switching to Bland's rule.
    pub degenerate_streak_limit: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            exact_cell_limit: 2_000_000,
            max_iterations: 200_000,
            degenerate_streak_limit: 50,
        }
    }
}

/// A maximization program `max c.x` over sparse rows and per-variable bounds.
/// `None` bounds are infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram<S = f64> {
    names: Vec<String>,
    lower: Vec<Option<S>>,
    upper: Vec<Option<S>>,
    objective: Vec<S>,
    constraints: Vec<Constraint<S>>,
}

impl<S: Scalar> Default for LinearProgram<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> LinearProgram<S> {
    pub fn new() -> Self {
        LinearProgram {
            names: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            objective: Vec::new(),
            constraints: Vec::new(),
        }
    }

    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        objective: S,
        lower: Option<S>,
        upper: Option<S>,
    ) -> usize {
        self.names.push(name.into());
        self.objective.push(objective);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    /// Adds a variable with bounds `[0, +inf)`.
    pub fn add_nonneg(&mut self, name: impl Into<String>, objective: S) -> usize {
        self.add_var(name, objective, Some(S::zero()), None)
    }

    pub fn add_constraint(&mut self, terms: Vec<(usize, S)>, sense: Sense, rhs: S) -> usize {
        self.constraints.push(Constraint { terms, sense, rhs });
        self.constraints.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn constraints(&self) -> &[Constraint<S>] {
        &self.constraints
    }

    pub fn objective(&self) -> &[S] {
        &self.objective
    }

    pub fn bounds(&self, j: usize) -> (Option<&S>, Option<&S>) {
        (self.lower[j].as_ref(), self.upper[j].as_ref())
    }

    pub fn name(&self, j: usize) -> &str {
        &self.names[j]
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        for (k, c) in self.constraints.iter().enumerate() {
            if let Some((j, _)) = c.terms.iter().find(|(j, _)| *j >= n) {
                return Err(LpError::Malformed(format!(
                    "constraint {k} references variable {j} but only {n} exist"
                )));
            }
        }
        for j in 0..n {
            if let (Some(l), Some(u)) = (&self.lower[j], &self.upper[j]) {
                if l > u {
                    return Err(LpError::Malformed(format!(
                        "variable {} has lower bound {l} above upper bound {u}",
                        self.names[j]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, values: &[S]) -> S {
        self.objective
            .iter()
            .zip(values)
            .map(|(c, x)| c.clone() * x.clone())
            .sum()
    }

    /// Largest violation of any row or bound at `values`.
    pub fn max_violation(&self, values: &[S]) -> S {
        let mut worst = S::zero();
        for c in &self.constraints {
            worst = S::max_of(worst, c.violation(values));
        }
        for (j, x) in values.iter().enumerate() {
            if let Some(l) = &self.lower[j] {
                worst = S::max_of(worst, l.clone() - x.clone());
            }
            if let Some(u) = &self.upper[j] {
                worst = S::max_of(worst, x.clone() - u.clone());
            }
        }
        worst
    }

    /// Number of rows holding with equality plus variables sitting at a bound.
    pub fn tight_count(&self, values: &[S]) -> usize {
        let rows = self
            .constraints
            .iter()
            .filter(|c| c.lhs(values).approx_eq(&c.rhs))
            .count();
        let bounds = (0..self.num_vars())
            .filter(|&j| {
                let at_lower = self.lower[j]
                    .as_ref()
                    .is_some_and(|l| values[j].approx_eq(l));
                let at_upper = self.upper[j]
                    .as_ref()
                    .is_some_and(|u| values[j].approx_eq(u));
                at_lower || at_upper
            })
            .count();
        rows + bounds
    }

    pub fn convert<T: Scalar>(&self) -> LinearProgram<T> {
        let opt = |v: &Option<S>| v.as_ref().map(|x| convert::<S, T>(x));
        LinearProgram {
            names: self.names.clone(),
            lower: self.lower.iter().map(opt).collect(),
            upper: self.upper.iter().map(opt).collect(),
            objective: self.objective.iter().map(convert).collect(),
            constraints: self
                .constraints
                .iter()
                .map(|c| Constraint {
                    terms: c.terms.iter().map(|(j, a)| (*j, convert(a))).collect(),
                    sense: c.sense,
                    rhs: convert(&c.rhs),
                })
                .collect(),
        }
    }

    /// Human-readable dump, one constraint per line.
    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

fn write_terms<S: Scalar>(
    f: &mut fmt::Formatter<'_>,
    names: &[String],
    terms: impl Iterator<Item = (usize, S)>,
) -> fmt::Result {
    let mut first = true;
    for (j, a) in terms {
        if a.is_zero() {
            continue;
        }
        if first {
            write!(f, "{a} {}", names[j])?;
        } else if a.is_negative() {
            write!(f, " - {} {}", a.abs(), names[j])?;
        } else {
            write!(f, " + {a} {}", names[j])?;
        }
        first = false;
    }
    if first {
        write!(f, "0")?;
    }
    Ok(())
}

impl<S: Scalar> fmt::Display for LinearProgram<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "maximize")?;
        write!(f, "  obj: ")?;
        write_terms(f, &self.names, self.objective.iter().cloned().enumerate())?;
        writeln!(f)?;
        writeln!(f, "subject to")?;
        for (k, c) in self.constraints.iter().enumerate() {
            write!(f, "  c{k}: ")?;
            write_terms(f, &self.names, c.terms.iter().cloned())?;
            writeln!(f, " {} {}", c.sense, c.rhs)?;
        }
        writeln!(f, "bounds")?;
        for j in 0..self.num_vars() {
            let name = &self.names[j];
            match (&self.lower[j], &self.upper[j]) {
                (None, None) => writeln!(f, "  {name} free")?,
                (Some(l), None) => writeln!(f, "  {name} >= {l}")?,
                (None, Some(u)) => writeln!(f, "  {name} <= {u}")?,
                (Some(l), Some(u)) => writeln!(f, "  {l} <= {name} <= {u}")?,
            }
        }
        writeln!(f, "end")
    }
}

pub fn solve<S: Scalar>(lp: &LinearProgram<S>) -> Result<LpSolution<S>, LpError> {
    solve_with(lp, &SolveOptions::default())
}

/// Solves a float program in the requested arithmetic. Exact mode converts the
/// data to rationals (losslessly), solves, and rounds the answer back.
pub fn solve_lp(lp: &LinearProgram<f64>, mode: Arithmetic) -> Result<LpSolution<f64>, LpError> {
    match mode {
        Arithmetic::Float => solve(lp),
        Arithmetic::Exact => {
            let exact: LinearProgram<BigRational> = lp.convert();
            let sol = solve(&exact)?;
            Ok(LpSolution {
                status: sol.status,
                values: sol.values.iter().map(convert).collect(),
                objective_value: convert(&sol.objective_value),
            })
        }
    }
}

pub fn solve_with<S: Scalar>(
    lp: &LinearProgram<S>,
    options: &SolveOptions,
) -> Result<LpSolution<S>, LpError> {
    lp.validate()?;
    let std_form = StandardForm::build(lp);
    if S::EXACT {
        let cells = std_form.rows.len() * (std_form.total_cols() + 1);
        if cells > options.exact_cell_limit {
            return Err(LpError::SizeLimit {
                cells,
                limit: options.exact_cell_limit,
            });
        }
    }
    let mut tableau = Tableau::new(&std_form);
    let mut pivots = PivotState::new(options);

    if tableau.art_start < tableau.ncols {
        let phase_one: Vec<S> = (0..tableau.ncols)
            .map(|j| {
                if j >= tableau.art_start {
                    -S::one()
                } else {
                    S::zero()
                }
            })
            .collect();
        tableau.set_objective(&phase_one);
        match tableau.optimize(tableau.ncols, &mut pivots)? {
            Phase::Optimal => {}
            // The phase-one objective is bounded above by zero.
            Phase::Unbounded => unreachable!("phase one cannot be unbounded"),
        }
        if tableau.objective_value().is_neg_tol() {
            return Ok(LpSolution::without_point(
                LpStatus::Infeasible,
                lp.num_vars(),
            ));
        }
        tableau.evict_artificials();
    }

    tableau.set_objective(&std_form.objective);
    if let Phase::Unbounded = tableau.optimize(tableau.art_start, &mut pivots)? {
        return Ok(LpSolution::without_point(
            LpStatus::Unbounded,
            lp.num_vars(),
        ));
    }

    let y = tableau.primal_values();
    let mut values = std_form.recover(&y);
    if !S::EXACT {
        clamp_to_bounds(lp, &mut values);
    }
    let violation = lp.max_violation(&values);
    if !violation.le_tol(&S::zero()) && !within_scaled_tol(lp, &violation) {
        return Err(LpError::Numerical(violation.to_f64()));
    }
    let objective_value = lp.evaluate(&values);
    Ok(LpSolution {
        status: LpStatus::Optimal,
        values,
        objective_value,
    })
}

fn within_scaled_tol<S: Scalar>(lp: &LinearProgram<S>, violation: &S) -> bool {
    if S::EXACT {
        return false;
    }
    let scale = lp
        .constraints
        .iter()
        .map(|c| c.rhs.abs().to_f64())
        .fold(1.0, f64::max);
    violation.to_f64() <= crate::scalar::FLOAT_TOL * scale
}

fn clamp_to_bounds<S: Scalar>(lp: &LinearProgram<S>, values: &mut [S]) {
    for (j, x) in values.iter_mut().enumerate() {
        if let Some(l) = &lp.lower[j] {
            if *x < *l && x.ge_tol(l) {
                *x = l.clone();
            }
        }
        if let Some(u) = &lp.upper[j] {
            if *x > *u && x.le_tol(u) {
                *x = u.clone();
            }
        }
    }
}

/// `x_j = offset + sum(sign * y_col)` for each original variable.
struct ColumnMap<S> {
    offset: S,
    cols: Vec<(usize, S)>,
}

struct StdRow<S> {
    coeffs: Vec<(usize, S)>,
    sense: Sense,
    rhs: S,
}

/// Program in `y >= 0` space before slacks and artificials are added.
struct StandardForm<S> {
    maps: Vec<ColumnMap<S>>,
    structural: usize,
    rows: Vec<StdRow<S>>,
    objective: Vec<S>,
    slack_count: usize,
    art_count: usize,
}

impl<S: Scalar> StandardForm<S> {
    fn build(lp: &LinearProgram<S>) -> Self {
        let mut maps = Vec::with_capacity(lp.num_vars());
        let mut structural = 0;
        let mut rows = Vec::new();
        let mut bound_rows = Vec::new();
        for j in 0..lp.num_vars() {
            match (&lp.lower[j], &lp.upper[j]) {
                (Some(l), upper) => {
                    let col = structural;
                    structural += 1;
                    if let Some(u) = upper {
                        bound_rows.push(StdRow {
                            coeffs: vec![(col, S::one())],
                            sense: Sense::Le,
                            rhs: u.clone() - l.clone(),
                        });
                    }
                    maps.push(ColumnMap {
                        offset: l.clone(),
                        cols: vec![(col, S::one())],
                    });
                }
                (None, Some(u)) => {
                    maps.push(ColumnMap {
                        offset: u.clone(),
                        cols: vec![(structural, -S::one())],
                    });
                    structural += 1;
                }
                (None, None) => {
                    maps.push(ColumnMap {
                        offset: S::zero(),
                        cols: vec![(structural, S::one()), (structural + 1, -S::one())],
                    });
                    structural += 2;
                }
            }
        }

        for c in &lp.constraints {
            let mut dense: Vec<S> = vec![S::zero(); structural];
            let mut rhs = c.rhs.clone();
            for (j, a) in &c.terms {
                let map = &maps[*j];
                rhs -= a.clone() * map.offset.clone();
                for (col, sign) in &map.cols {
                    dense[*col] += a.clone() * sign.clone();
                }
            }
            let coeffs = dense
                .into_iter()
                .enumerate()
                .filter(|(_, a)| !a.is_zero())
                .collect();
            rows.push(StdRow {
                coeffs,
                sense: c.sense,
                rhs,
            });
        }
        rows.extend(bound_rows);

        let mut objective = vec![S::zero(); structural];
        for (j, c) in lp.objective.iter().enumerate() {
            for (col, sign) in &maps[j].cols {
                objective[*col] += c.clone() * sign.clone();
            }
        }

        let slack_count = rows.iter().filter(|r| r.sense != Sense::Eq).count();
        let art_count = rows.iter().filter(|r| !Self::slack_is_basic(r)).count();
        StandardForm {
            maps,
            structural,
            rows,
            objective,
            slack_count,
            art_count,
        }
    }

    /// A row starts with its slack in the basis when the slack has coefficient
    /// +1 after the row is flipped to a nonnegative right-hand side.
    fn slack_is_basic(row: &StdRow<S>) -> bool {
        let flipped = row.rhs.is_negative();
        match row.sense {
            Sense::Le => !flipped,
            Sense::Ge => flipped,
            Sense::Eq => false,
        }
    }

    fn total_cols(&self) -> usize {
        self.structural + self.slack_count + self.art_count
    }

    fn recover(&self, y: &[S]) -> Vec<S> {
        self.maps
            .iter()
            .map(|m| {
                let mut x = m.offset.clone();
                for (col, sign) in &m.cols {
                    x += sign.clone() * y[*col].clone();
                }
                x
            })
            .collect()
    }
}

enum Phase {
    Optimal,
    Unbounded,
}

struct PivotState {
    iterations: usize,
    max_iterations: usize,
    degenerate_streak: usize,
    streak_limit: usize,
    bland: bool,
}

impl PivotState {
    fn new(options: &SolveOptions) -> Self {
        PivotState {
            iterations: 0,
            max_iterations: options.max_iterations,
            degenerate_streak: 0,
            streak_limit: options.degenerate_streak_limit,
            bland: false,
        }
    }
}

struct Tableau<S> {
    /// Each row holds `ncols` coefficients followed by the right-hand side.
    rows: Vec<Vec<S>>,
    basis: Vec<usize>,
    ncols: usize,
    art_start: usize,
    /// Reduced costs in `z_j - c_j` form; last entry is the objective value.
    reduced: Vec<S>,
}

fn snap<S: Scalar>(v: &mut S) {
    if !S::EXACT && v.abs() < S::fraction_floor() * S::from_f64(0.01) {
        *v = S::zero();
    }
}

impl<S: Scalar> Tableau<S> {
    fn new(sf: &StandardForm<S>) -> Self {
        let slack_start = sf.structural;
        let art_start = slack_start + sf.slack_count;
        let ncols = art_start + sf.art_count;
        let mut rows = Vec::with_capacity(sf.rows.len());
        let mut basis = Vec::with_capacity(sf.rows.len());
        let mut slack = slack_start;
        let mut art = art_start;
        for r in &sf.rows {
            let mut row = vec![S::zero(); ncols + 1];
            for (col, a) in &r.coeffs {
                row[*col] = a.clone();
            }
            row[ncols] = r.rhs.clone();
            let slack_col = match r.sense {
                Sense::Le => {
                    row[slack] = S::one();
                    slack += 1;
                    Some(slack - 1)
                }
                Sense::Ge => {
                    row[slack] = -S::one();
                    slack += 1;
                    Some(slack - 1)
                }
                Sense::Eq => None,
            };
            if r.rhs.is_negative() {
                for v in row.iter_mut() {
                    *v = -v.clone();
                }
            }
            if StandardForm::slack_is_basic(r) {
                basis.push(slack_col.expect("inequality row has a slack"));
            } else {
                row[art] = S::one();
                basis.push(art);
                art += 1;
            }
            rows.push(row);
        }
        Tableau {
            rows,
            basis,
            ncols,
            art_start,
            reduced: vec![S::zero(); ncols + 1],
        }
    }

    /// Installs a new objective (length `ncols`, zero-padded) and prices it
    /// against the current basis.
    fn set_objective(&mut self, c: &[S]) {
        let cost = |j: usize| c.get(j).cloned().unwrap_or_else(S::zero);
        let mut reduced: Vec<S> = (0..=self.ncols)
            .map(|j| if j < self.ncols { -cost(j) } else { S::zero() })
            .collect();
        for (r, row) in self.rows.iter().enumerate() {
            let cb = cost(self.basis[r]);
            if cb.is_zero() {
                continue;
            }
            for (j, v) in row.iter().enumerate() {
                if !v.is_zero() {
                    reduced[j] += cb.clone() * v.clone();
                }
            }
        }
        for v in reduced.iter_mut() {
            snap(v);
        }
        self.reduced = reduced;
    }

    fn objective_value(&self) -> S {
        self.reduced[self.ncols].clone()
    }

    fn entering(&self, allowed: usize, bland: bool) -> Option<usize> {
        let tol = S::tol();
        let mut best: Option<usize> = None;
        for j in 0..allowed {
            if self.reduced[j] < -tol.clone() {
                if bland {
                    return Some(j);
                }
                match best {
                    Some(b) if self.reduced[j] >= self.reduced[b] => {}
                    _ => best = Some(j),
                }
            }
        }
        best
    }

    fn leaving(&self, col: usize) -> Option<(usize, S)> {
        let mut best: Option<(usize, S)> = None;
        for (r, row) in self.rows.iter().enumerate() {
            let a = &row[col];
            if !a.is_pos_tol() {
                continue;
            }
            let ratio = row[self.ncols].clone() / a.clone();
            let better = match &best {
                None => true,
                Some((br, bratio)) => {
                    if ratio.approx_eq(bratio) {
                        self.basis[r] < self.basis[*br]
                    } else {
                        ratio < *bratio
                    }
                }
            };
            if better {
                best = Some((r, ratio));
            }
        }
        best
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let ncols = self.ncols;
        let p = self.rows[r][col].clone();
        let pivot_row: Vec<S> = self.rows[r].iter().map(|v| v.clone() / p.clone()).collect();
        let support: Vec<usize> = (0..=ncols).filter(|&j| !pivot_row[j].is_zero()).collect();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let factor = row[col].clone();
            if factor.is_zero() {
                continue;
            }
            for &j in &support {
                row[j] -= factor.clone() * pivot_row[j].clone();
                snap(&mut row[j]);
            }
            row[col] = S::zero();
        }
        let factor = self.reduced[col].clone();
        if !factor.is_zero() {
            for &j in &support {
                self.reduced[j] -= factor.clone() * pivot_row[j].clone();
                snap(&mut self.reduced[j]);
            }
            self.reduced[col] = S::zero();
        }
        self.rows[r] = pivot_row;
        self.rows[r][col] = S::one();
        self.basis[r] = col;
    }

    fn optimize(&mut self, allowed: usize, state: &mut PivotState) -> Result<Phase, LpError> {
        loop {
            let Some(col) = self.entering(allowed, state.bland) else {
                return Ok(Phase::Optimal);
            };
            let Some((row, ratio)) = self.leaving(col) else {
                return Ok(Phase::Unbounded);
            };
            state.iterations += 1;
            if state.iterations > state.max_iterations {
                return Err(LpError::IterationLimit(state.max_iterations));
            }
            if ratio.is_zero_tol() {
                state.degenerate_streak += 1;
                if state.degenerate_streak > state.streak_limit {
                    state.bland = true;
                }
            } else {
                state.degenerate_streak = 0;
            }
            self.pivot(row, col);
        }
    }

    /// Pivots zero-level artificials out of the basis, dropping rows that turn
    /// out to be redundant, then deletes the artificial columns.
    fn evict_artificials(&mut self) {
        let mut r = 0;
        while r < self.rows.len() {
            if self.basis[r] < self.art_start {
                r += 1;
                continue;
            }
            self.rows[r][self.ncols] = S::zero();
            let replacement = (0..self.art_start).find(|&j| !self.rows[r][j].is_zero_tol());
            match replacement {
                Some(j) => {
                    self.pivot(r, j);
                    r += 1;
                }
                None => {
                    self.rows.remove(r);
                    self.basis.remove(r);
                }
            }
        }
        let keep = self.art_start;
        for row in self.rows.iter_mut() {
            let rhs = row[self.ncols].clone();
            row.truncate(keep);
            row.push(rhs);
        }
        self.ncols = keep;
        self.art_start = keep;
        self.reduced = vec![S::zero(); keep + 1];
    }

    fn primal_values(&self) -> Vec<S> {
        let mut y = vec![S::zero(); self.ncols];
        for (r, &b) in self.basis.iter().enumerate() {
            y[b] = self.rows[r][self.ncols].clone();
        }
        y
    }
}
