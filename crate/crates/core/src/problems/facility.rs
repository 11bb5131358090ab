use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::milp::{MilpProblem, Sense, SparseRow};

pub const COMPLICATING_ROWS: usize = 25;
pub const DEFAULT_PENALTY: f64 = 100.0;

/// `max(0, base + gᵀθ)` for each output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub base: Vec<f64>,
    pub gain: Vec<Vec<f64>>,
}

impl AffineMap {
    fn generate(outputs: usize, param_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let gain_law = Normal::new(0.0, 0.1).expect("valid normal");
        let base = (0..outputs)
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                v.abs()
            })
            .collect();
        let gain = (0..outputs)
            .map(|_| (0..param_dim).map(|_| gain_law.sample(rng)).collect())
            .collect();
        Self { base, gain }
    }

    pub fn eval(&self, theta: &[f64]) -> Vec<f64> {
        self.base
            .iter()
            .zip(&self.gain)
            .map(|(b, g)| (b + g.iter().zip(theta).map(|(a, t)| a * t).sum::<f64>()).max(0.0))
            .collect()
    }
}

/// Capacitated facility location with unmet-demand penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilityFamily {
    pub clients: usize,
    pub sites: usize,
    pub param_dim: usize,
    pub penalty: f64,
    pub capacities: Vec<f64>,
    pub complicating: Vec<Vec<f64>>,
    pub complicating_rhs: Vec<f64>,
    /// Service cost `d_ij`, client-major.
    pub service_cost: AffineMap,
    pub opening_cost: AffineMap,
    pub demand: AffineMap,
}

/// θ-dependent data of one facility instance.
#[derive(Debug, Clone, PartialEq)]
pub struct FacilityCosts {
    pub service: Vec<f64>,
    pub opening: Vec<f64>,
    pub demand: Vec<f64>,
}

impl FacilityFamily {
    pub fn generate(clients: usize, sites: usize, param_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 2.5 * clients as f64 / sites as f64;
        let capacities = (0..sites)
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                scale * (0.5 + v.abs())
            })
            .collect();
        let complicating: Vec<Vec<f64>> = (0..COMPLICATING_ROWS)
            .map(|_| {
                (0..sites)
                    .map(|_| {
                        let v: f64 = StandardNormal.sample(rng);
                        v.abs()
                    })
                    .collect()
            })
            .collect();
        let complicating_rhs = complicating
            .iter()
            .map(|row| 0.5 * row.iter().sum::<f64>())
            .collect();
        let service_cost = AffineMap::generate(clients * sites, param_dim, rng);
        let opening_cost = AffineMap::generate(sites, param_dim, rng);
        let demand = AffineMap::generate(clients, param_dim, rng);
        Self {
            clients,
            sites,
            param_dim,
            penalty: DEFAULT_PENALTY,
            capacities,
            complicating,
            complicating_rhs,
            service_cost,
            opening_cost,
            demand,
        }
    }

    pub fn sample_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.param_dim).map(|_| StandardNormal.sample(rng)).collect()
    }

    pub fn costs(&self, theta: &[f64]) -> FacilityCosts {
        FacilityCosts {
            service: self.service_cost.eval(theta),
            opening: self.opening_cost.eval(theta),
            demand: self.demand.eval(theta),
        }
    }

    /// Lower cost vector over `(y, η)`.
    pub fn lower_costs(&self, costs: &FacilityCosts) -> Vec<f64> {
        let mut d = costs.service.clone();
        d.extend(std::iter::repeat_n(self.penalty, self.clients));
        d
    }

    pub fn complicating_rows(&self) -> Vec<SparseRow> {
        self.complicating
            .iter()
            .map(|row| SparseRow::new(row.iter().copied().enumerate().collect()))
            .collect()
    }

    /// Rows over `(y, η)` placed at `offset`, with `x` either a variable
    /// block at column 0 or fixed to `fixed_x`.
    fn lower_rows(
        &self,
        costs: &FacilityCosts,
        offset: usize,
        fixed_x: Option<&[f64]>,
        rows: &mut Vec<SparseRow>,
        rhs: &mut Vec<f64>,
    ) {
        let (ni, nj) = (self.clients, self.sites);
        let y = |i: usize, j: usize| offset + i * nj + j;
        let eta = |i: usize| offset + ni * nj + i;
        for i in 0..ni {
            let mut entries: Vec<(usize, f64)> = (0..nj).map(|j| (y(i, j), 1.0)).collect();
            entries.push((eta(i), 1.0));
            rows.push(SparseRow::new(entries.clone()));
            rhs.push(1.0);
            rows.push(SparseRow::new(entries.into_iter().map(|(c, v)| (c, -v)).collect()));
            rhs.push(-1.0);
        }
        for j in 0..nj {
            let mut entries: Vec<(usize, f64)> =
                (0..ni).map(|i| (y(i, j), costs.demand[i])).collect();
            match fixed_x {
                None => {
                    entries.push((j, -self.capacities[j]));
                    rhs.push(0.0);
                }
                Some(x) => rhs.push(self.capacities[j] * x[j]),
            }
            rows.push(SparseRow::new(entries));
        }
        if fixed_x.is_none() {
            for i in 0..ni {
                for j in 0..nj {
                    rows.push(SparseRow::new(vec![(y(i, j), 1.0), (j, -1.0)]));
                    rhs.push(0.0);
                }
            }
        }
    }

    pub fn master(&self, theta: &[f64]) -> MilpProblem {
        let costs = self.costs(theta);
        let nj = self.sites;
        let n2 = self.clients * nj + self.clients;
        let mut objective = costs.opening.clone();
        objective.extend(self.lower_costs(&costs));
        let mut rows = self.complicating_rows();
        let mut rhs = self.complicating_rhs.clone();
        self.lower_rows(&costs, nj, None, &mut rows, &mut rhs);
        let n = nj + n2;
        let lower = vec![0.0; n];
        let upper = vec![1.0; n];
        let integrality: Vec<bool> = (0..n).map(|c| c < nj).collect();
        MilpProblem::new(objective, rows, rhs, lower, upper, integrality, Sense::Minimize)
            .expect("facility master is well formed")
    }

    /// Continuous lower problem over `(y, η)` with `x` fixed; `y_ij ≤ x_j`
    /// enters as a variable bound.
    pub fn lower_problem(&self, costs: &FacilityCosts, x: &[f64]) -> MilpProblem {
        let (ni, nj) = (self.clients, self.sites);
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        self.lower_rows(costs, 0, Some(x), &mut rows, &mut rhs);
        let n2 = ni * nj + ni;
        let mut upper = vec![1.0; n2];
        for i in 0..ni {
            for j in 0..nj {
                upper[i * nj + j] = x[j].clamp(0.0, 1.0);
            }
        }
        MilpProblem::new(
            self.lower_costs(costs),
            rows,
            rhs,
            vec![0.0; n2],
            upper,
            vec![false; n2],
            Sense::Minimize,
        )
        .expect("facility lower problem is well formed")
    }
}
