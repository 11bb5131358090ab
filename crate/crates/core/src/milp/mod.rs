//! Small exact MILP solver: bounded simplex, best-bound branch-and-bound and
//! a brute-force enumeration oracle.

mod bnb;
mod enumerate;
pub mod problem;
mod simplex;

use std::time::Duration;

use thiserror::Error;

pub use bnb::{solve_lp, solve_milp};
pub use enumerate::{enumerate_optimal, enumerate_optimal_with_guard, feasible_points, Enumeration};
pub use problem::{MilpProblem, Sense, SparseRow};

/// Largest search space `enumerate_optimal` accepts.
pub const ENUMERATION_GUARD: u64 = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MilpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid problem data: {0}")]
    InvalidData(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("search space of {points} points exceeds the enumeration guard of {guard}")]
    SearchSpaceTooLarge { points: f64, guard: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Feasible,
    Infeasible,
    Unbounded,
    LimitReached,
}

impl SolveStatus {
    pub fn has_solution(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::Feasible)
    }
}

/// Which optimum is reported when several exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// First incumbent reaching the optimal value in search order.
    #[default]
    SearchOrder,
    /// Lexicographically smallest optimal point, variable 0 most significant.
    Lexicographic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    /// Relative optimality gap, scaled by `max(1, |incumbent|)`.
    pub gap_tolerance: f64,
    pub feasibility_tolerance: f64,
    pub integrality_tolerance: f64,
    pub time_limit: Option<Duration>,
    pub node_limit: Option<u64>,
    /// Stop at the k-th incumbent (first-feasible mode).
    pub stop_after_incumbents: Option<usize>,
    pub tie_break: TieBreak,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            gap_tolerance: 1e-4,
            feasibility_tolerance: 1e-7,
            integrality_tolerance: 1e-6,
            time_limit: Some(Duration::from_secs(100)),
            node_limit: None,
            stop_after_incumbents: None,
            tie_break: TieBreak::SearchOrder,
        }
    }
}

impl SolveConfig {
    pub fn with_gap(mut self, gap: f64) -> Self {
        self.gap_tolerance = gap;
        self
    }

    pub fn first_feasible(k: usize) -> Self {
        Self {
            stop_after_incumbents: Some(k),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), MilpError> {
        let positive = [
            ("gap_tolerance", self.gap_tolerance),
            ("feasibility_tolerance", self.feasibility_tolerance),
            ("integrality_tolerance", self.integrality_tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MilpError::InvalidData(format!("{name} must be positive, got {v}")));
            }
        }
        if self.time_limit.is_some_and(|t| t.is_zero())
            || self.node_limit == Some(0)
            || self.stop_after_incumbents == Some(0)
        {
            return Err(MilpError::InvalidData("limits must be positive".into()));
        }
        Ok(())
    }
}

/// An incumbent improvement observed during branch-and-bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncumbentEvent {
    pub time: f64,
    pub node: u64,
    pub objective: f64,
}

/// Solver output. Objective values and bounds are in the problem's own
/// sense: for a maximization `dual_bound` is an upper bound.
#[derive(Debug, Clone, PartialEq)]
pub struct MilpSolution {
    pub status: SolveStatus,
    pub values: Option<Vec<f64>>,
    pub objective_value: f64,
    pub dual_bound: f64,
    pub node_count: u64,
    pub wall_time: f64,
    pub lp_iterations: usize,
    pub incumbents: Vec<IncumbentEvent>,
    /// Dual bound after each improvement, in the problem's sense.
    pub bound_trace: Vec<f64>,
}

impl MilpSolution {
    /// Absolute distance between incumbent and dual bound.
    pub fn proven_gap(&self) -> f64 {
        if self.values.is_some() {
            (self.objective_value - self.dual_bound).abs()
        } else {
            f64::INFINITY
        }
    }

    pub fn values(&self) -> Option<&[f64]> {
        self.values.as_deref()
    }
}
