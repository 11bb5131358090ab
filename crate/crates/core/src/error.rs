use thiserror::Error;

use crate::milp::MilpError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("upper-level variables must be binary for this operation")]
    NonBinaryUpperVariables,
    #[error("point is not feasible for the upper-level problem: {0}")]
    UpperInfeasiblePoint(String),
    #[error("lower-level problem infeasible: {0}")]
    LowerInfeasible(String),
    #[error("solver did not return a solution: {0}")]
    NoSolution(String),
    #[error("subgradient descent stopped at loss {reached:.3e}, above the target {target:.3e}")]
    OptimizationDidNotReachDelta { reached: f64, target: f64 },
    #[error("activation cache is stale: backward called without a matching forward")]
    StaleActivationCache,
    #[error("missing labels: {0}")]
    MissingLabels(String),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("every grid-search run failed")]
    AllRunsFailed,
    #[error("{aborted} of {total} training steps aborted")]
    TooManyAbortedSteps { aborted: usize, total: usize },
    #[error("calibration set is empty")]
    EmptyCalibrationSet,
    #[error("alpha must lie in (0, 1), got {0}")]
    AlphaOutOfRange(f64),
    #[error("conformal model has not been calibrated")]
    Uncalibrated,
    #[error("{discarded} of {total} samples discarded, above the 5% limit")]
    TooManyDiscards { discarded: usize, total: usize },
    #[error("split needs {needed} samples but the dataset has {available}")]
    InsufficientSamples { needed: usize, available: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
