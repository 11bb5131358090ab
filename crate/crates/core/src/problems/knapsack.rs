use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::milp::{MilpProblem, Sense, SparseRow};

fn abs_normal(rng: &mut ChaCha8Rng) -> f64 {
    let v: f64 = StandardNormal.sample(rng);
    v.abs()
}

/// Hierarchical knapsack: one upper knapsack over `x ∈ {0,1}^J`, and lower
/// knapsack `j` (items `y_j ∈ {0,1}^k`) usable only when `x_j = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnapsackFamily {
    pub blocks: usize,
    pub items: usize,
    pub param_dim: usize,
    pub upper_weights: Vec<f64>,
    pub upper_capacity: f64,
    pub lower_weights: Vec<Vec<f64>>,
    pub lower_capacities: Vec<f64>,
    /// `Jk × p`; `d(θ) = −|Aθ|`.
    pub cost_map: Vec<Vec<f64>>,
}

impl KnapsackFamily {
    pub fn generate(blocks: usize, items: usize, param_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let upper_weights = (0..blocks).map(|_| abs_normal(rng)).collect();
        let upper_capacity = abs_normal(rng);
        let lower_weights = (0..blocks)
            .map(|_| (0..items).map(|_| abs_normal(rng)).collect())
            .collect();
        let lower_capacities = (0..blocks).map(|_| abs_normal(rng)).collect();
        let cost_map = (0..blocks * items)
            .map(|_| (0..param_dim).map(|_| StandardNormal.sample(rng)).collect())
            .collect();
        Self {
            blocks,
            items,
            param_dim,
            upper_weights,
            upper_capacity,
            lower_weights,
            lower_capacities,
            cost_map,
        }
    }

    pub fn sample_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.param_dim)
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                v.abs()
            })
            .collect()
    }

    pub fn lower_costs(&self, theta: &[f64]) -> Vec<f64> {
        self.cost_map
            .iter()
            .map(|row| -row.iter().zip(theta).map(|(a, t)| a * t).sum::<f64>().abs())
            .collect()
    }

    pub fn y_index(&self, block: usize, item: usize) -> usize {
        self.blocks + block * self.items + item
    }

    pub fn upper_row(&self) -> SparseRow {
        SparseRow::new(self.upper_weights.iter().copied().enumerate().collect())
    }

    pub fn master(&self, theta: &[f64]) -> MilpProblem {
        let (jn, k) = (self.blocks, self.items);
        let n = jn + jn * k;
        let mut objective = vec![0.0; n];
        objective[jn..].copy_from_slice(&self.lower_costs(theta));
        let mut rows = vec![self.upper_row()];
        let mut rhs = vec![self.upper_capacity];
        for j in 0..jn {
            rows.push(SparseRow::new(
                (0..k)
                    .map(|i| (self.y_index(j, i), self.lower_weights[j][i]))
                    .collect(),
            ));
            rhs.push(self.lower_capacities[j]);
        }
        for j in 0..jn {
            for i in 0..k {
                rows.push(SparseRow::new(vec![(self.y_index(j, i), 1.0), (j, -1.0)]));
                rhs.push(0.0);
            }
        }
        MilpProblem::binary(objective, rows, rhs, Sense::Minimize)
            .expect("knapsack master is well formed")
    }

    pub fn lower_block(&self, block: usize, costs: &[f64]) -> MilpProblem {
        let row = SparseRow::new(self.lower_weights[block].iter().copied().enumerate().collect());
        MilpProblem::binary(
            costs.to_vec(),
            vec![row],
            vec![self.lower_capacities[block]],
            Sense::Minimize,
        )
        .expect("knapsack block is well formed")
    }
}
