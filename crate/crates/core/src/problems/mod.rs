//! Hierarchical parametric problem families and their generators.

mod facility;
mod knapsack;

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use facility::{AffineMap, FacilityCosts, FacilityFamily, COMPLICATING_ROWS, DEFAULT_PENALTY};
pub use knapsack::KnapsackFamily;

use crate::error::{Error, Result};
use crate::milp::{solve_lp, solve_milp, MilpProblem, Sense, SolveConfig, SolveStatus};

pub const DEFAULT_PARAM_DIM: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Knapsack,
    #[serde(alias = "facility")]
    FacilityLocation,
}

impl FamilyKind {
    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Knapsack => "knapsack",
            FamilyKind::FacilityLocation => "facility",
        }
    }
}

impl std::str::FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knapsack" => Ok(FamilyKind::Knapsack),
            "facility" | "facility_location" => Ok(FamilyKind::FacilityLocation),
            other => Err(Error::InvalidConfig(format!("unknown family `{other}`"))),
        }
    }
}

/// Size parameters. For knapsack, `(a, b)` are `(J, k)`; for facility
/// location, `(|I|, |J|)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyDims {
    pub kind: FamilyKind,
    pub a: usize,
    pub b: usize,
    pub param_dim: usize,
}

impl FamilyDims {
    pub fn knapsack(blocks: usize, items: usize) -> Self {
        Self {
            kind: FamilyKind::Knapsack,
            a: blocks,
            b: items,
            param_dim: DEFAULT_PARAM_DIM,
        }
    }

    pub fn facility(clients: usize, sites: usize) -> Self {
        Self {
            kind: FamilyKind::FacilityLocation,
            a: clients,
            b: sites,
            param_dim: DEFAULT_PARAM_DIM,
        }
    }

    pub fn desk(kind: FamilyKind) -> Self {
        match kind {
            FamilyKind::Knapsack => Self::knapsack(20, 10),
            FamilyKind::FacilityLocation => Self::facility(15, 15),
        }
    }

    pub fn with_param_dim(mut self, p: usize) -> Self {
        self.param_dim = p;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilyData {
    Knapsack(KnapsackFamily),
    FacilityLocation(FacilityFamily),
}

/// A distribution over instances `θ ↦ (X(θ), Y(x, θ), c(θ), d(θ))`.
/// Fixed data is drawn once from `seed` and never changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalFamily {
    pub seed: u64,
    pub data: FamilyData,
}

/// Result of the lower-level solve for a fixed upper decision.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerSolution {
    pub y: Vec<f64>,
    pub cost: f64,
    /// Cost decomposition: per lower knapsack, or per client.
    pub block_costs: Vec<f64>,
    /// Wall time of each sequential solve, in seconds.
    pub block_times: Vec<f64>,
}

impl LowerSolution {
    pub fn total_time(&self) -> f64 {
        self.block_times.iter().sum()
    }

    /// Fixed-width summary `(total, mean, min, max, active count)`.
    pub fn summary(&self) -> [f64; 5] {
        let n = self.block_costs.len().max(1) as f64;
        let mean = self.block_costs.iter().sum::<f64>() / n;
        let min = self.block_costs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.block_costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let active = self.block_costs.iter().filter(|c| c.abs() > 1e-12).count() as f64;
        [self.cost, mean, min.min(max), max.max(min), active]
    }
}

/// Exact solve settings used for labels and lower problems.
pub fn exact_config() -> SolveConfig {
    SolveConfig {
        gap_tolerance: 1e-9,
        time_limit: None,
        ..SolveConfig::default()
    }
}

impl HierarchicalFamily {
    pub fn generate(dims: FamilyDims, seed: u64) -> Result<Self> {
        if dims.a == 0 || dims.b == 0 || dims.param_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "family dimensions must be positive, got {dims:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = match dims.kind {
            FamilyKind::Knapsack => {
                FamilyData::Knapsack(KnapsackFamily::generate(dims.a, dims.b, dims.param_dim, &mut rng))
            }
            FamilyKind::FacilityLocation => FamilyData::FacilityLocation(FacilityFamily::generate(
                dims.a,
                dims.b,
                dims.param_dim,
                &mut rng,
            )),
        };
        Ok(Self { seed, data })
    }

    pub fn kind(&self) -> FamilyKind {
        match self.data {
            FamilyData::Knapsack(_) => FamilyKind::Knapsack,
            FamilyData::FacilityLocation(_) => FamilyKind::FacilityLocation,
        }
    }

    pub fn dims(&self) -> FamilyDims {
        match &self.data {
            FamilyData::Knapsack(k) => FamilyDims::knapsack(k.blocks, k.items).with_param_dim(k.param_dim),
            FamilyData::FacilityLocation(f) => {
                FamilyDims::facility(f.clients, f.sites).with_param_dim(f.param_dim)
            }
        }
    }

    pub fn n_upper(&self) -> usize {
        match &self.data {
            FamilyData::Knapsack(k) => k.blocks,
            FamilyData::FacilityLocation(f) => f.sites,
        }
    }

    pub fn n_lower(&self) -> usize {
        match &self.data {
            FamilyData::Knapsack(k) => k.blocks * k.items,
            FamilyData::FacilityLocation(f) => f.clients * f.sites + f.clients,
        }
    }

    pub fn param_dim(&self) -> usize {
        match &self.data {
            FamilyData::Knapsack(k) => k.param_dim,
            FamilyData::FacilityLocation(f) => f.param_dim,
        }
    }

    /// `+1` when the upper policy minimizes `ĉᵀx`, `−1` when it maximizes.
    pub fn policy_sign(&self) -> f64 {
        match self.data {
            FamilyData::Knapsack(_) => -1.0,
            FamilyData::FacilityLocation(_) => 1.0,
        }
    }

    fn policy_sense(&self) -> Sense {
        if self.policy_sign() < 0.0 {
            Sense::Maximize
        } else {
            Sense::Minimize
        }
    }

    pub fn sample_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.data {
            FamilyData::Knapsack(k) => k.sample_theta(rng),
            FamilyData::FacilityLocation(f) => f.sample_theta(rng),
        }
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_dim() {
            return Err(Error::DimensionMismatch(format!(
                "theta has length {}, expected {}",
                theta.len(),
                self.param_dim()
            )));
        }
        Ok(())
    }

    /// Upper cost `c(θ)` and lower cost `d(θ)`.
    pub fn costs(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match &self.data {
            FamilyData::Knapsack(k) => (vec![0.0; k.blocks], k.lower_costs(theta)),
            FamilyData::FacilityLocation(f) => {
                let costs = f.costs(theta);
                let d = f.lower_costs(&costs);
                (costs.opening, d)
            }
        }
    }

    /// Master problem over `(x, y)`, variables ordered `x` first.
    pub fn build_master(&self, theta: &[f64]) -> Result<MilpProblem> {
        self.check_theta(theta)?;
        Ok(match &self.data {
            FamilyData::Knapsack(k) => k.master(theta),
            FamilyData::FacilityLocation(f) => f.master(theta),
        })
    }

    pub fn split_solution<'a>(&self, values: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        values.split_at(self.n_upper())
    }

    /// Upper feasible set `X` (independent of θ in both families) with the
    /// given minimization objective.
    pub fn upper_problem(&self, objective: Vec<f64>) -> Result<MilpProblem> {
        if objective.len() != self.n_upper() {
            return Err(Error::DimensionMismatch(format!(
                "upper objective has length {}, expected {}",
                objective.len(),
                self.n_upper()
            )));
        }
        let (rows, rhs) = match &self.data {
            FamilyData::Knapsack(k) => (vec![k.upper_row()], vec![k.upper_capacity]),
            FamilyData::FacilityLocation(f) => (f.complicating_rows(), f.complicating_rhs.clone()),
        };
        Ok(MilpProblem::binary(objective, rows, rhs, Sense::Minimize)?)
    }

    /// Policy problem: maximize `ĉᵀx` (knapsack) or minimize it (facility).
    pub fn build_upper_policy(&self, theta: &[f64], c_hat: &[f64]) -> Result<MilpProblem> {
        self.check_theta(theta)?;
        let p = self.upper_problem(c_hat.to_vec())?;
        Ok(p.with_objective(c_hat.to_vec(), self.policy_sense())?)
    }

    /// Policy with the penalty `ω‖x‖²`, written as `ω·1ᵀx` since `x` is
    /// binary. Returned in minimize form.
    pub fn build_upper_policy_fy(&self, theta: &[f64], c_hat: &[f64], omega: f64) -> Result<MilpProblem> {
        self.check_theta(theta)?;
        let sign = self.policy_sign();
        let objective = c_hat.iter().map(|c| sign * c + omega).collect();
        let p = self.upper_problem(objective)?;
        if !p.is_all_binary() {
            return Err(Error::NonBinaryUpperVariables);
        }
        Ok(p)
    }

    pub fn check_upper_feasible(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_upper() {
            return Err(Error::DimensionMismatch(format!(
                "upper point has length {}, expected {}",
                x.len(),
                self.n_upper()
            )));
        }
        let p = self.upper_problem(vec![0.0; self.n_upper()])?;
        if !p.is_feasible(x, 1e-7, 1e-6) {
            return Err(Error::UpperInfeasiblePoint(format!(
                "violation {:.3e}",
                p.max_violation(x)
            )));
        }
        Ok(())
    }

    /// Solves the lower blocks sequentially for a fixed upper decision.
    pub fn solve_lower(&self, theta: &[f64], x: &[f64]) -> Result<LowerSolution> {
        self.check_theta(theta)?;
        self.check_upper_feasible(x)?;
        let config = exact_config();
        match &self.data {
            FamilyData::Knapsack(k) => {
                let d = k.lower_costs(theta);
                let mut y = vec![0.0; k.blocks * k.items];
                let mut block_costs = Vec::with_capacity(k.blocks);
                let mut block_times = Vec::with_capacity(k.blocks);
                for j in 0..k.blocks {
                    let start = Instant::now();
                    let costs = &d[j * k.items..(j + 1) * k.items];
                    let mut block_cost = 0.0;
                    if x[j].round() == 1.0 {
                        let sol = solve_milp(&k.lower_block(j, costs), &config)?;
                        let Some(v) = sol.values.filter(|_| sol.status == SolveStatus::Optimal) else {
                            return Err(Error::LowerInfeasible(format!(
                                "knapsack block {j} returned {:?}",
                                sol.status
                            )));
                        };
                        y[j * k.items..(j + 1) * k.items].copy_from_slice(&v);
                        block_cost = costs.iter().zip(&v).map(|(c, v)| c * v).sum();
                    }
                    block_times.push(start.elapsed().as_secs_f64());
                    block_costs.push(block_cost);
                }
                let cost = block_costs.iter().sum();
                Ok(LowerSolution {
                    y,
                    cost,
                    block_costs,
                    block_times,
                })
            }
            FamilyData::FacilityLocation(f) => {
                let costs = f.costs(theta);
                let start = Instant::now();
                let sol = solve_lp(&f.lower_problem(&costs, x), &config)?;
                let elapsed = start.elapsed().as_secs_f64();
                let Some(y) = sol.values.filter(|_| sol.status == SolveStatus::Optimal) else {
                    return Err(Error::LowerInfeasible(format!(
                        "facility lower LP returned {:?}",
                        sol.status
                    )));
                };
                let nj = f.sites;
                let block_costs: Vec<f64> = (0..f.clients)
                    .map(|i| {
                        (0..nj)
                            .map(|j| costs.service[i * nj + j] * y[i * nj + j])
                            .sum::<f64>()
                            + f.penalty * y[f.clients * nj + i]
                    })
                    .collect();
                Ok(LowerSolution {
                    cost: block_costs.iter().sum(),
                    y,
                    block_costs,
                    block_times: vec![elapsed],
                })
            }
        }
    }

    /// `f_θ(x) = c(θ)ᵀx + min_y d(θ)ᵀy`.
    pub fn true_cost(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        let (c, _) = self.costs(theta);
        let lower = self.solve_lower(theta, x)?;
        Ok(c.iter().zip(x).map(|(c, x)| c * x).sum::<f64>() + lower.cost)
    }

    /// LP relaxation value of the master problem.
    pub fn relaxation_bound(&self, theta: &[f64]) -> Result<f64> {
        let sol = solve_lp(&self.build_master(theta)?, &exact_config())?;
        match sol.status {
            SolveStatus::Optimal => Ok(sol.objective_value),
            s => Err(Error::NoSolution(format!("master relaxation returned {s:?}"))),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}
