//! Exact solver for small bounded mixed-integer linear programs.
//!
//! The LP relaxation is solved with a dense bounded-variable primal simplex
//! ([`solve_lp`]) and integrality is recovered by best-bound branch-and-bound
//! ([`solve_milp`]). Every variable must carry finite bounds. The solver is
//! intended as an exact reference at desk scale, not as a production engine.

mod branch;
mod simplex;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use branch::solve_milp;
pub use simplex::solve_lp;

/// Primal feasibility tolerance used by the simplex and for row checks.
pub const FEASIBILITY_TOL: f64 = 1e-7;
/// A value within this distance of an integer counts as integral.
pub const INTEGRALITY_TOL: f64 = 1e-6;
/// Default absolute optimality gap for branch-and-bound.
pub const GAP_TOL: f64 = 1e-6;
/// Pivots smaller than this in magnitude are treated as numerical breakdown.
pub const PIVOT_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
}

/// One linear row `sum(coef * x[var]) <relation> rhs`, stored sparsely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub terms: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
    /// Free-form tag naming the family the row belongs to; used in dumps.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
}

impl LinearConstraint {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates this row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.activity(x);
        match self.relation {
            Relation::Le => (lhs - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - lhs).max(0.0),
            Relation::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// A bounded mixed-integer linear program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilpProblem {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub integer: Vec<bool>,
    pub constraints: Vec<LinearConstraint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub names: Vec<String>,
}

impl MilpProblem {
    pub fn new(sense: Sense) -> Self {
        Self {
            sense,
            objective: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            integer: Vec::new(),
            constraints: Vec::new(),
            names: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    /// Appends a variable and returns its index.
    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64, integer: bool) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.integer.push(integer);
        self.objective.len() - 1
    }

    pub fn add_constraint(
        &mut self,
        terms: Vec<(usize, f64)>,
        relation: Relation,
        rhs: f64,
        label: impl Into<String>,
    ) {
        self.constraints.push(LinearConstraint {
            terms,
            relation,
            rhs,
            label: label.into(),
        });
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Checks the structural invariants: finite bounds, `lo <= hi`, indices in range,
    /// integer bounds integral.
    pub fn validate(&self) -> Result<(), MilpError> {
        let n = self.n_vars();
        if self.lower.len() != n || self.upper.len() != n || self.integer.len() != n {
            return Err(MilpError::Invalid(format!(
                "vector lengths disagree: objective {n}, lower {}, upper {}, integer {}",
                self.lower.len(),
                self.upper.len(),
                self.integer.len()
            )));
        }
        for j in 0..n {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if !lo.is_finite() || !hi.is_finite() || !self.objective[j].is_finite() {
                return Err(MilpError::Invalid(format!("variable {j} has a non-finite bound or cost")));
            }
            if lo > hi {
                return Err(MilpError::Invalid(format!("variable {j} has lower {lo} > upper {hi}")));
            }
            if self.integer[j] && (lo.fract() != 0.0 || hi.fract() != 0.0) {
                return Err(MilpError::Invalid(format!(
                    "integer variable {j} has fractional bounds [{lo}, {hi}]"
                )));
            }
        }
        for (i, row) in self.constraints.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(MilpError::Invalid(format!("constraint {i} has non-finite rhs")));
            }
            if let Some(&(j, _)) = row.terms.iter().find(|&&(j, a)| j >= n || !a.is_finite()) {
                return Err(MilpError::Invalid(format!("constraint {i} references bad column {j}")));
            }
        }
        Ok(())
    }

    /// Largest violation of bounds or rows at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let bounds = (0..self.n_vars())
            .map(|j| (self.lower[j] - x[j]).max(x[j] - self.upper[j]).max(0.0))
            .fold(0.0, f64::max);
        self.constraints
            .iter()
            .map(|r| r.violation(x))
            .fold(bounds, f64::max)
    }

    pub fn is_integral(&self, x: &[f64]) -> bool {
        self.integer
            .iter()
            .zip(x)
            .all(|(&int, &v)| !int || (v - v.round()).abs() <= INTEGRALITY_TOL)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MilpError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("numerical breakdown: {0}")]
    Numerical(String),
    #[error("simplex iteration limit of {0} reached")]
    IterationLimit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PivotRule {
    /// Smallest-index entering and leaving variables throughout.
    Bland,
    /// Most negative reduced cost, falling back to Bland's rule after a run of
    /// degenerate pivots.
    #[default]
    Dantzig,
}

/// Outcome of an LP solve.
#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    TimeLimit,
    NodeLimit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveLimits {
    pub time: Option<Duration>,
    pub nodes: Option<usize>,
    pub gap: f64,
    pub pivot_rule: PivotRule,
}

impl Default for SolveLimits {
    fn default() -> Self {
        Self {
            time: None,
            nodes: None,
            gap: GAP_TOL,
            pivot_rule: PivotRule::default(),
        }
    }
}

impl SolveLimits {
    pub fn with_time(mut self, time: Duration) -> Self {
        self.time = Some(time);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub incumbent: Option<Vec<f64>>,
    /// Objective of the incumbent in the problem's own sense; NaN when absent.
    pub incumbent_value: f64,
    /// Proven bound in the problem's sense: an upper bound when maximizing.
    pub best_bound: f64,
    pub node_count: usize,
    pub wall_time: Duration,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}
