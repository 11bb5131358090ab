//! Learned hierarchical decompositions for parametric mixed-integer programs.

pub mod conformal;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod milp;
pub mod predictor;
pub mod problems;

pub use error::{Error, Result};
