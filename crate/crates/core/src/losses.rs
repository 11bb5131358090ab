//! Suboptimality loss and its convex surrogates.
//!
//! Every surrogate has the form
//! `ℓ(ĉ) = max_{x∈X} { g(x) − Ω(x) − c̄ᵀx } + c̄ᵀx⋆ − g(x⋆) + Ω(x⋆)`
//! where `c̄ = s·ĉ` is the policy objective in minimize form (`s` is the
//! family's policy sign).

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::milp::{
    enumerate_optimal, feasible_points, solve_milp, MilpProblem, Sense, SolveConfig, SolveStatus,
};
use crate::problems::{exact_config, HierarchicalFamily};
use crate::{Error, Result};

/// Largest upper feasible set GSPO+ will enumerate.
pub const GSPO_GUARD: u64 = 1 << 16;

const VALUE_FLOOR: f64 = -1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[serde(rename = "gspo")]
    GspoPlus,
    Asl,
    Z,
    Fy,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::GspoPlus => "gspo",
            LossKind::Asl => "asl",
            LossKind::Z => "z",
            LossKind::Fy => "fy",
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gspo" | "gspo+" => Ok(LossKind::GspoPlus),
            "asl" => Ok(LossKind::Asl),
            "z" => Ok(LossKind::Z),
            "fy" => Ok(LossKind::Fy),
            other => Err(Error::InvalidConfig(format!("unknown loss `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    /// ASL scale ν.
    pub nu: f64,
    /// FY penalty weight on `‖x‖²`.
    pub omega_weight: f64,
    pub inner_config: SolveConfig,
}

impl LossSpec {
    /// Spec with the truncated inner solves used for training.
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            nu: 1.0,
            omega_weight: 1.0,
            inner_config: SolveConfig {
                gap_tolerance: 1e-3,
                node_limit: Some(10_000),
                ..SolveConfig::default()
            },
        }
    }

    pub fn z() -> Self {
        Self::new(LossKind::Z)
    }

    pub fn asl(nu: f64) -> Self {
        Self { nu, ..Self::new(LossKind::Asl) }
    }

    pub fn fy(omega_weight: f64) -> Self {
        Self { omega_weight, ..Self::new(LossKind::Fy) }
    }

    pub fn gspo() -> Self {
        Self::new(LossKind::GspoPlus)
    }

    /// Same spec with exact inner solves.
    pub fn exact(mut self) -> Self {
        self.inner_config = exact_config();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == LossKind::Asl && !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::InvalidConfig(format!("ASL needs nu > 0, got {}", self.nu)));
        }
        if !(self.omega_weight >= 0.0 && self.omega_weight.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "omega_weight must be >= 0, got {}",
                self.omega_weight
            )));
        }
        self.inner_config.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    /// Subgradient with respect to `ĉ`: `s·(x⋆ − x_inner)`.
    pub subgradient: Vec<f64>,
    pub x_inner: Vec<f64>,
    pub inner_status: SolveStatus,
    /// `Some(ε)` when the inner maximizer is only proven ε-optimal.
    pub epsilon: Option<f64>,
}

/// Upper feasible set `X` with the sign linking `ĉ` to the minimize-form
/// policy objective.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpace {
    feasible: MilpProblem,
    sign: f64,
}

/// `x ↦ f_θ(x)`, needed only by GSPO+.
pub type TrueCost<'a> = &'a dyn Fn(&[f64]) -> Result<f64>;

impl PolicySpace {
    pub fn new(feasible: MilpProblem, sign: f64) -> Result<Self> {
        if sign != 1.0 && sign != -1.0 {
            return Err(Error::InvalidConfig(format!("policy sign must be ±1, got {sign}")));
        }
        let n = feasible.num_vars();
        let feasible = feasible.with_objective(vec![0.0; n], Sense::Minimize)?;
        Ok(Self { feasible, sign })
    }

    pub fn of_family(family: &HierarchicalFamily) -> Result<Self> {
        Self::new(family.upper_problem(vec![0.0; family.n_upper()])?, family.policy_sign())
    }

    pub fn n(&self) -> usize {
        self.feasible.num_vars()
    }

    pub fn sign(&self) -> f64 {
        self.sign
    }

    pub fn feasible(&self) -> &MilpProblem {
        &self.feasible
    }

    /// Minimize-form policy objective `c̄ = s·ĉ`.
    pub fn policy_objective(&self, c_hat: &[f64]) -> Vec<f64> {
        c_hat.iter().map(|c| self.sign * c).collect()
    }

    /// Policy `min c̄ᵀx` over `X`.
    pub fn policy(&self, c_hat: &[f64]) -> Result<MilpProblem> {
        Ok(self.feasible.with_objective(self.policy_objective(c_hat), Sense::Minimize)?)
    }

    /// All minimizers of the policy objective, by enumeration.
    pub fn policy_argmin(&self, c_hat: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(enumerate_optimal(&self.policy(c_hat)?)?.points)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

fn hamming(x: &[f64], t: &[f64]) -> f64 {
    x.iter().zip(t).map(|(x, t)| x * (1.0 - 2.0 * t) + t).sum()
}

/// The penalty `g(x) − Ω(x)` maximized by the inner problem.
fn penalty(spec: &LossSpec, x: &[f64], x_star: &[f64], true_cost: Option<TrueCost>) -> Result<f64> {
    Ok(match spec.kind {
        LossKind::Z => 0.0,
        LossKind::Asl => spec.nu * hamming(x, x_star),
        LossKind::Fy => -spec.omega_weight * x.iter().sum::<f64>(),
        LossKind::GspoPlus => match true_cost {
            Some(f) => f(x)?,
            None => return Err(Error::InvalidConfig("GSPO+ needs a true-cost oracle".into())),
        },
    })
}

/// Result of the inner maximization.
#[derive(Debug, Clone, PartialEq)]
pub struct Inner {
    pub x: Vec<f64>,
    /// `g(x) − Ω(x) − c̄ᵀx` at `x`.
    pub value: f64,
    pub status: SolveStatus,
    pub epsilon: Option<f64>,
}

fn check_inputs(spec: &LossSpec, space: &PolicySpace, x_star: &[f64], c_hat: &[f64]) -> Result<()> {
    let n = space.n();
    if x_star.len() != n || c_hat.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "x_star has length {}, c_hat {}, expected {n}",
            x_star.len(),
            c_hat.len()
        )));
    }
    if matches!(spec.kind, LossKind::Asl | LossKind::Fy) && !space.feasible.is_all_binary() {
        return Err(Error::NonBinaryUpperVariables);
    }
    if !space.feasible.is_feasible(x_star, 1e-7, 1e-6) {
        return Err(Error::UpperInfeasiblePoint(format!(
            "anchor violates X by {:.3e}",
            space.feasible.max_violation(x_star)
        )));
    }
    Ok(())
}

/// Solves `max_{x∈X} { g(x) − Ω(x) − c̄ᵀx }`.
pub fn inner_maximize_in(
    spec: &LossSpec,
    space: &PolicySpace,
    x_star: &[f64],
    c_hat: &[f64],
    true_cost: Option<TrueCost>,
) -> Result<Inner> {
    check_inputs(spec, space, x_star, c_hat)?;
    let cbar = space.policy_objective(c_hat);
    if spec.kind == LossKind::GspoPlus {
        let points = feasible_points(&space.feasible, GSPO_GUARD)?;
        let mut best: Option<(Vec<f64>, f64)> = None;
        for x in points {
            let v = penalty(spec, &x, x_star, true_cost)? - dot(&cbar, &x);
            if best.as_ref().is_none_or(|(_, b)| v > *b) {
                best = Some((x, v));
            }
        }
        let (x, value) = best.ok_or_else(|| Error::NoSolution("upper feasible set is empty".into()))?;
        return Ok(Inner { x, value, status: SolveStatus::Optimal, epsilon: None });
    }
    // Linear inner objective in minimize form: min wᵀx, value = offset − min.
    let (w, offset): (Vec<f64>, f64) = match spec.kind {
        LossKind::Z => (cbar, 0.0),
        LossKind::Asl => (
            cbar.iter().zip(x_star).map(|(c, t)| c - spec.nu * (1.0 - 2.0 * t)).collect(),
            spec.nu * x_star.iter().sum::<f64>(),
        ),
        LossKind::Fy => (cbar.iter().map(|c| c + spec.omega_weight).collect(), 0.0),
        LossKind::GspoPlus => unreachable!(),
    };
    let problem = space.feasible.with_objective(w, Sense::Minimize)?;
    let sol = solve_milp(&problem, &spec.inner_config)?;
    match sol.values.clone() {
        Some(x) => {
            let gap = sol.proven_gap();
            let epsilon = (sol.status != SolveStatus::Optimal
                || gap > 1e-9 * sol.objective_value.abs().max(1.0))
            .then_some(gap);
            Ok(Inner { value: offset - sol.objective_value, x, status: sol.status, epsilon })
        }
        // Stopped before any incumbent: x⋆ is always inner-feasible.
        None if sol.status == SolveStatus::LimitReached => {
            let at_anchor = problem.objective_value(x_star);
            Ok(Inner {
                x: x_star.to_vec(),
                value: offset - at_anchor,
                status: sol.status,
                epsilon: Some((at_anchor - sol.dual_bound).max(0.0)),
            })
        }
        None => Err(Error::NoSolution(format!("inner maximization returned {:?}", sol.status))),
    }
}

/// Loss value and subgradient on an explicit policy space.
pub fn evaluate_in(
    spec: &LossSpec,
    space: &PolicySpace,
    x_star: &[f64],
    c_hat: &[f64],
    true_cost: Option<TrueCost>,
) -> Result<LossEval> {
    let inner = inner_maximize_in(spec, space, x_star, c_hat, true_cost)?;
    let cbar = space.policy_objective(c_hat);
    let mut value = inner.value + dot(&cbar, x_star) - penalty(spec, x_star, x_star, true_cost)?;
    if (VALUE_FLOOR..0.0).contains(&value) {
        value = 0.0;
    }
    let subgradient = x_star
        .iter()
        .zip(&inner.x)
        .map(|(t, x)| space.sign * (t - x))
        .collect();
    Ok(LossEval {
        value,
        subgradient,
        x_inner: inner.x,
        inner_status: inner.status,
        epsilon: inner.epsilon,
    })
}

/// Inner maximizer and its value for an instance of `family`.
pub fn inner_maximize(
    spec: &LossSpec,
    family: &HierarchicalFamily,
    theta: &[f64],
    x_star: &[f64],
    c_hat: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let space = PolicySpace::of_family(family)?;
    let f = |x: &[f64]| family.true_cost(theta, x);
    let oracle: Option<TrueCost> = (spec.kind == LossKind::GspoPlus).then_some(&f);
    let inner = inner_maximize_in(spec, &space, x_star, c_hat, oracle)?;
    Ok((inner.x, inner.value))
}

pub fn loss_value_and_subgradient(
    spec: &LossSpec,
    family: &HierarchicalFamily,
    theta: &[f64],
    x_star: &[f64],
    c_hat: &[f64],
) -> Result<LossEval> {
    let space = PolicySpace::of_family(family)?;
    let f = |x: &[f64]| family.true_cost(theta, x);
    let oracle: Option<TrueCost> = (spec.kind == LossKind::GspoPlus).then_some(&f);
    evaluate_in(spec, &space, x_star, c_hat, oracle)
}

/// Exact `ℓ_SUB(ĉ)`: worst true cost over the policy's minimizers, minus
/// `z(θ)`. Enumerates `X`, so only for tiny families.
pub fn suboptimality_loss(family: &HierarchicalFamily, theta: &[f64], c_hat: &[f64]) -> Result<f64> {
    let space = PolicySpace::of_family(family)?;
    let mut worst = f64::NEG_INFINITY;
    for x in space.policy_argmin(c_hat)? {
        worst = worst.max(family.true_cost(theta, &x)?);
    }
    let mut z = f64::INFINITY;
    for x in feasible_points(space.feasible(), GSPO_GUARD)? {
        z = z.min(family.true_cost(theta, &x)?);
    }
    Ok(worst - z)
}

/// The scaled cost `λ·c̃` making the binary anchor `x⋆` a sharp minimizer,
/// returned as `ĉ`. `c̃ᵀ(x − x⋆)` is the Hamming distance, so every other
/// binary point sits at least 1 above, and `λ > range` pushes each of them
/// below the anchor's inner value when `g(x) − g(x⋆) ≤ range` on `X`.
pub fn sharp_cost(space: &PolicySpace, x_star: &[f64], range: f64) -> Vec<f64> {
    let lambda = 2.0 * range.max(0.0) + 1.0;
    x_star
        .iter()
        .map(|t| space.sign * lambda * (1.0 - 2.0 * t))
        .collect()
}

/// Upper bound on `g(x) − Ω(x) − g(x⋆) + Ω(x⋆)` over binary `x` of size n.
pub fn penalty_range(spec: &LossSpec, n: usize, x_star: &[f64]) -> f64 {
    match spec.kind {
        LossKind::Z => 0.0,
        LossKind::Asl => spec.nu * n as f64,
        LossKind::Fy => spec.omega_weight * x_star.iter().sum::<f64>(),
        // Unknown without enumeration; callers pass their own range.
        LossKind::GspoPlus => f64::INFINITY,
    }
}

/// Outcome of the approximation-error check on one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Theorem2Check {
    pub anchor: Vec<f64>,
    pub c_hat: Vec<f64>,
    pub loss: f64,
    /// Largest `g(x) − g(x⋆)` over the policy's minimizers.
    pub worst_excess: f64,
    pub holds: bool,
}

const DESCENT_STEPS: usize = 20_000;

/// With `g = f_θ`, builds an ε-optimal anchor, drives the misspecified loss
/// below δ by Polyak subgradient steps, and checks
/// `g(x) ≤ g(x⋆) + ε + δ` on every policy minimizer.
pub fn check_theorem2(
    family: &HierarchicalFamily,
    theta: &[f64],
    epsilon: f64,
    delta: f64,
) -> Result<bool> {
    Ok(check_theorem2_detailed(family, theta, epsilon, delta)?.holds)
}

pub fn check_theorem2_detailed(
    family: &HierarchicalFamily,
    theta: &[f64],
    epsilon: f64,
    delta: f64,
) -> Result<Theorem2Check> {
    let space = PolicySpace::of_family(family)?;
    let points = feasible_points(space.feasible(), GSPO_GUARD)?;
    let g: Vec<f64> = points
        .iter()
        .map(|x| family.true_cost(theta, x))
        .collect::<Result<_>>()?;
    let g_star = g.iter().copied().fold(f64::INFINITY, f64::min);
    // Worst point still within ε of the optimum.
    let mut anchor = None;
    for (i, &v) in g.iter().enumerate() {
        if v <= g_star + epsilon && anchor.is_none_or(|b: usize| v > g[b]) {
            anchor = Some(i);
        }
    }
    let anchor = anchor.ok_or_else(|| Error::NoSolution("upper feasible set is empty".into()))?;
    let a = &points[anchor];
    let loss_at = |cbar: &[f64]| -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, x) in points.iter().enumerate() {
            let v = g[i] - dot(cbar, x);
            if v > best.0 {
                best = (v, i);
            }
        }
        (best.0 + dot(cbar, a) - g[anchor], best.1)
    };
    let n = space.n();
    let mut cbar = vec![0.0; n];
    let (mut loss, mut arg) = loss_at(&cbar);
    let target = delta + 1e-9;
    let mut steps = 0;
    while loss > target && steps < DESCENT_STEPS {
        let s: Vec<f64> = a.iter().zip(&points[arg]).map(|(t, x)| t - x).collect();
        let norm2 = dot(&s, &s);
        if norm2 == 0.0 {
            break;
        }
        let step = loss / norm2;
        for (c, s) in cbar.iter_mut().zip(&s) {
            *c -= step * s;
        }
        (loss, arg) = loss_at(&cbar);
        steps += 1;
    }
    if loss > target {
        return Err(Error::OptimizationDidNotReachDelta { reached: loss, target: delta });
    }
    let best = points.iter().map(|x| dot(&cbar, x)).fold(f64::INFINITY, f64::min);
    let tie = 1e-9 * best.abs().max(1.0);
    let worst_excess = points
        .iter()
        .zip(&g)
        .filter(|(x, _)| dot(&cbar, x) <= best + tie)
        .map(|(_, v)| v - g_star)
        .fold(f64::NEG_INFINITY, f64::max);
    let c_hat = space.policy_objective(&cbar);
    Ok(Theorem2Check {
        anchor: a.clone(),
        c_hat,
        loss,
        worst_excess,
        holds: worst_excess <= epsilon + delta + 1e-6,
    })
}
