use std::fmt;

use serde::{Deserialize, Serialize};

use super::MilpError;

/// Optimization direction of a [`MilpProblem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Minimize,
    Maximize,
}

impl Sense {
    /// Factor that turns the objective into a minimization objective.
    pub fn sign(self) -> f64 {
        match self {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        }
    }
}

/// One `≤` row stored as sorted `(column, coefficient)` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    pub entries: Vec<(usize, f64)>,
}

impl SparseRow {
    pub fn new(mut entries: Vec<(usize, f64)>) -> Self {
        entries.retain(|&(_, v)| v != 0.0);
        entries.sort_by_key(|&(j, _)| j);
        // merge duplicate columns
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
        for (j, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 += v,
                _ => merged.push((j, v)),
            }
        }
        merged.retain(|&(_, v)| v != 0.0);
        Self { entries: merged }
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.entries.iter().map(|&(j, v)| v * x[j]).sum()
    }
}

/// Canonical mixed-integer linear program:
///
/// ```text
/// optimize  objectiveᵀ x
/// s.t.      A x ≤ rhs
///           var_lower ≤ x ≤ var_upper
///           x_j ∈ ℤ  for integrality[j]
/// ```
///
/// Immutable after construction; all solver entry points take `&MilpProblem`.
#[derive(Debug, Clone, PartialEq)]
pub struct MilpProblem {
    objective: Vec<f64>,
    rows: Vec<SparseRow>,
    rhs: Vec<f64>,
    var_lower: Vec<f64>,
    var_upper: Vec<f64>,
    integrality: Vec<bool>,
    sense: Sense,
}

impl MilpProblem {
    pub fn new(
        objective: Vec<f64>,
        rows: Vec<SparseRow>,
        rhs: Vec<f64>,
        var_lower: Vec<f64>,
        var_upper: Vec<f64>,
        integrality: Vec<bool>,
        sense: Sense,
    ) -> Result<Self, MilpError> {
        let n = objective.len();
        if n == 0 {
            return Err(MilpError::DimensionMismatch("problem has no variables".into()));
        }
        for (what, len) in [
            ("var_lower", var_lower.len()),
            ("var_upper", var_upper.len()),
            ("integrality", integrality.len()),
        ] {
            if len != n {
                return Err(MilpError::DimensionMismatch(format!(
                    "{what} has length {len}, expected {n}"
                )));
            }
        }
        if rows.len() != rhs.len() {
            return Err(MilpError::DimensionMismatch(format!(
                "{} constraint rows but {} right-hand sides",
                rows.len(),
                rhs.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if let Some(&(j, _)) = row.entries.iter().find(|&&(j, _)| j >= n) {
                return Err(MilpError::DimensionMismatch(format!(
                    "row {i} references column {j} but n = {n}"
                )));
            }
            if row.entries.iter().any(|&(_, v)| !v.is_finite()) || rhs[i].is_nan() {
                return Err(MilpError::InvalidData(format!("row {i} has non-finite data")));
            }
        }
        if objective.iter().any(|v| !v.is_finite()) {
            return Err(MilpError::InvalidData("objective has non-finite entries".into()));
        }
        for j in 0..n {
            if var_lower[j].is_nan() || var_upper[j].is_nan() || var_lower[j] > var_upper[j] {
                return Err(MilpError::InvalidData(format!(
                    "variable {j} has bounds [{}, {}]",
                    var_lower[j], var_upper[j]
                )));
            }
        }
        Ok(Self {
            objective,
            rows,
            rhs,
            var_lower,
            var_upper,
            integrality,
            sense,
        })
    }

    /// All-binary problem with the given rows.
    pub fn binary(
        objective: Vec<f64>,
        rows: Vec<SparseRow>,
        rhs: Vec<f64>,
        sense: Sense,
    ) -> Result<Self, MilpError> {
        let n = objective.len();
        Self::new(
            objective,
            rows,
            rhs,
            vec![0.0; n],
            vec![1.0; n],
            vec![true; n],
            sense,
        )
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn var_lower(&self) -> &[f64] {
        &self.var_lower
    }

    pub fn var_upper(&self) -> &[f64] {
        &self.var_upper
    }

    pub fn integrality(&self) -> &[bool] {
        &self.integrality
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn is_all_binary(&self) -> bool {
        (0..self.num_vars()).all(|j| {
            self.integrality[j] && self.var_lower[j] >= 0.0 && self.var_upper[j] <= 1.0
        })
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Same feasible set, objective negated and sense flipped to minimize.
    pub fn to_minimize(&self) -> MilpProblem {
        match self.sense {
            Sense::Minimize => self.clone(),
            Sense::Maximize => MilpProblem {
                objective: self.objective.iter().map(|c| -c).collect(),
                sense: Sense::Minimize,
                ..self.clone()
            },
        }
    }

    pub fn with_objective(&self, objective: Vec<f64>, sense: Sense) -> Result<Self, MilpError> {
        Self::new(
            objective,
            self.rows.clone(),
            self.rhs.clone(),
            self.var_lower.clone(),
            self.var_upper.clone(),
            self.integrality.clone(),
            sense,
        )
    }

    pub fn with_bounds(&self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, MilpError> {
        Self::new(
            self.objective.clone(),
            self.rows.clone(),
            self.rhs.clone(),
            lower,
            upper,
            self.integrality.clone(),
            self.sense,
        )
    }

    pub fn with_extra_row(&self, row: SparseRow, rhs: f64) -> Result<Self, MilpError> {
        let mut rows = self.rows.clone();
        rows.push(row);
        let mut b = self.rhs.clone();
        b.push(rhs);
        Self::new(
            self.objective.clone(),
            rows,
            b,
            self.var_lower.clone(),
            self.var_upper.clone(),
            self.integrality.clone(),
            self.sense,
        )
    }

    /// Largest absolute constraint or bound violation of `x`, ignoring integrality.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (row, &b) in self.rows.iter().zip(&self.rhs) {
            worst = worst.max(row.dot(x) - b);
        }
        for j in 0..self.num_vars() {
            worst = worst.max(self.var_lower[j] - x[j]).max(x[j] - self.var_upper[j]);
        }
        worst
    }

    pub fn is_feasible(&self, x: &[f64], feas_tol: f64, int_tol: f64) -> bool {
        if x.len() != self.num_vars() {
            return false;
        }
        let integral = (0..self.num_vars())
            .all(|j| !self.integrality[j] || (x[j] - x[j].round()).abs() <= int_tol);
        integral && self.max_violation(x) <= feas_tol
    }
}

/// LP-style listing, one constraint per line.
impl fmt::Display for MilpProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let term = |f: &mut fmt::Formatter<'_>, first: bool, j: usize, v: f64| -> fmt::Result {
            if first {
                write!(f, "{v} x{j}")
            } else if v < 0.0 {
                write!(f, "- {} x{j}", -v)
            } else {
                write!(f, "+ {v} x{j}")
            }
        };
        match self.sense {
            Sense::Minimize => writeln!(f, "minimize")?,
            Sense::Maximize => writeln!(f, "maximize")?,
        }
        write!(f, "  obj:")?;
        let mut first = true;
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                write!(f, " ")?;
                term(f, first, j, c)?;
                first = false;
            }
        }
        if first {
            write!(f, " 0")?;
        }
        writeln!(f)?;
        writeln!(f, "subject to")?;
        for (i, (row, b)) in self.rows.iter().zip(&self.rhs).enumerate() {
            write!(f, "  c{i}:")?;
            if row.entries.is_empty() {
                write!(f, " 0")?;
            }
            for (k, &(j, v)) in row.entries.iter().enumerate() {
                write!(f, " ")?;
                term(f, k == 0, j, v)?;
            }
            writeln!(f, " <= {b}")?;
        }
        writeln!(f, "bounds")?;
        for j in 0..self.num_vars() {
            writeln!(f, "  {} <= x{j} <= {}", self.var_lower[j], self.var_upper[j])?;
        }
        let ints: Vec<String> = (0..self.num_vars())
            .filter(|&j| self.integrality[j])
            .map(|j| format!("x{j}"))
            .collect();
        if !ints.is_empty() {
            writeln!(f, "general")?;
            writeln!(f, "  {}", ints.join(" "))?;
        }
        write!(f, "end")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_dimensions() {
        let err = MilpProblem::new(
            vec![1.0, 2.0],
            vec![SparseRow::new(vec![(2, 1.0)])],
            vec![1.0],
            vec![0.0; 2],
            vec![1.0; 2],
            vec![false; 2],
            Sense::Minimize,
        )
        .unwrap_err();
        assert!(matches!(err, MilpError::DimensionMismatch(_)));

        let err = MilpProblem::new(
            vec![1.0],
            vec![],
            vec![1.0],
            vec![0.0],
            vec![1.0],
            vec![false],
            Sense::Minimize,
        )
        .unwrap_err();
        assert!(matches!(err, MilpError::DimensionMismatch(_)));
    }

    #[test]
    fn rejects_crossed_bounds() {
        let err = MilpProblem::new(
            vec![1.0],
            vec![],
            vec![],
            vec![2.0],
            vec![1.0],
            vec![false],
            Sense::Minimize,
        )
        .unwrap_err();
        assert!(matches!(err, MilpError::InvalidData(_)));
    }

    #[test]
    fn sparse_row_merges_duplicates() {
        let row = SparseRow::new(vec![(3, 1.0), (1, 2.0), (3, -1.0), (1, 0.5)]);
        assert_eq!(row.entries, vec![(1, 2.5)]);
    }

    #[test]
    fn listing_has_one_line_per_constraint() {
        let p = MilpProblem::binary(
            vec![-1.0, -1.0],
            vec![SparseRow::new(vec![(0, 1.0), (1, 1.0)])],
            vec![1.0],
            Sense::Minimize,
        )
        .unwrap();
        let text = p.to_string();
        assert!(text.contains("c0: 1 x0 + 1 x1 <= 1"));
        assert!(text.contains("general"));
    }

    #[test]
    fn negating_sense_keeps_feasible_set() {
        let p = MilpProblem::binary(
            vec![2.0, 3.0],
            vec![SparseRow::new(vec![(0, 1.0), (1, 1.0)])],
            vec![1.0],
            Sense::Maximize,
        )
        .unwrap();
        let q = p.to_minimize();
        assert_eq!(q.sense(), Sense::Minimize);
        assert_eq!(q.objective(), &[-2.0, -3.0]);
        assert_eq!(q.rows(), p.rows());
        assert_eq!(q.var_upper(), p.var_upper());
    }
}
