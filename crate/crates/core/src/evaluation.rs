//! Baselines, regret metrics and CSV output for head-to-head runs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledSample;
use crate::milp::{solve_milp, SolveConfig};
use crate::predictor::{policy_decision, Gradients, Mlp, OutputActivation};
use crate::problems::{exact_config, FamilyKind, HierarchicalFamily};
use crate::{Error, Result};

/// Skip threshold for the normalized regret denominator.
pub const NORM_EPS: f64 = 1e-9;

/// `argmin_{x∈X} ‖x − t‖²` for binary `x`, solved as `min Σ x_j(1 − 2t_j)`.
pub fn project_onto_upper(family: &HierarchicalFamily, t: &[f64]) -> Result<(Vec<f64>, f64)> {
    let objective: Vec<f64> = t.iter().map(|t| 1.0 - 2.0 * t).collect();
    let problem = family.upper_problem(objective)?;
    let start = Instant::now();
    let sol = solve_milp(&problem, &exact_config())?;
    let elapsed = start.elapsed().as_secs_f64();
    match sol.values {
        Some(x) => Ok((x, elapsed)),
        None => Err(Error::NoSolution(format!("projection ended {:?}", sol.status))),
    }
}

/// Index of the training sample closest to `theta`; ties go to the smaller index.
pub fn nearest_index(train_set: &[LabeledSample], theta: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in train_set.iter().enumerate() {
        if s.theta.len() != theta.len() {
            return Err(Error::DimensionMismatch(format!("θ of length {} vs {}", theta.len(), s.theta.len())));
        }
        let d: f64 = s.theta.iter().zip(theta).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::EmptyTrainSet)
}

pub fn nearest_neighbor_predict(
    train_set: &[LabeledSample],
    family: &HierarchicalFamily,
    theta: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let i = nearest_index(train_set, theta)?;
    project_onto_upper(family, &train_set[i].x_star)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirectConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for DirectConfig {
    fn default() -> Self {
        DirectConfig { hidden: vec![128, 128], learning_rate: 1e-2, momentum: 0.9, batch_size: 16, epochs: 100, seed: 0 }
    }
}

/// Mean of `‖mlp(θ) − x⋆‖²` over `batch` and its gradient.
pub fn direct_loss_and_gradient(mlp: &Mlp, batch: &[&LabeledSample]) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros_like(mlp);
    let mut total = 0.0;
    let n = batch.len().max(1) as f64;
    for s in batch {
        let trace = mlp.forward_trace(&s.theta)?;
        let out = trace.output();
        if out.len() != s.x_star.len() {
            return Err(Error::DimensionMismatch(format!("network output {} vs x⋆ {}", out.len(), s.x_star.len())));
        }
        let upstream: Vec<f64> = out.iter().zip(&s.x_star).map(|(o, t)| 2.0 * (o - t) / n).collect();
        total += out.iter().zip(&s.x_star).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / n;
        grads.add_scaled(&mlp.backward(&trace, &upstream)?, 1.0);
    }
    Ok((total, grads))
}

/// Regresses `x⋆` on `θ`; returns the network and the per-epoch training loss.
pub fn direct_prediction_train(
    family: &HierarchicalFamily,
    train_set: &[LabeledSample],
    config: &DirectConfig,
) -> Result<(Mlp, Vec<f64>)> {
    if train_set.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    if config.batch_size == 0 || config.epochs == 0 || !(config.learning_rate >= 0.0) {
        return Err(Error::InvalidConfig("direct prediction needs positive batch size, epochs and rate".into()));
    }
    let mut dims = vec![family.param_dim()];
    dims.extend_from_slice(&config.hidden);
    dims.push(family.n_upper());
    let mut mlp = Mlp::new(&dims, OutputActivation::Identity, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut velocity = Gradients::zeros_like(&mlp);
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&LabeledSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, g) = direct_loss_and_gradient(&mlp, &batch)?;
            epoch_loss += loss * batch.len() as f64;
            let mut v = Gradients::zeros_like(&mlp);
            v.add_scaled(&velocity, config.momentum);
            v.add_scaled(&g, 1.0);
            velocity = v;
            mlp.apply(&velocity, config.learning_rate);
        }
        history.push(epoch_loss / train_set.len() as f64);
    }
    Ok((mlp, history))
}

pub fn direct_prediction_predict(family: &HierarchicalFamily, mlp: &Mlp, theta: &[f64]) -> Result<(Vec<f64>, f64)> {
    let start = Instant::now();
    let t = mlp.forward(theta)?;
    let predict_time = start.elapsed().as_secs_f64();
    let (x, solve_time) = project_onto_upper(family, &t)?;
    Ok((x, predict_time + solve_time))
}

/// What a method hands back for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutput {
    pub theta_id: usize,
    pub x_hat: Vec<f64>,
    /// Cost of the delivered solution.
    pub cost: f64,
    pub upper_time: f64,
    pub lower_time: f64,
    /// `(time, objective)` after each improvement.
    pub trajectory: Vec<(f64, f64)>,
}

/// Completes `x̂` with its optimal lower response and times the blocks.
pub fn complete_decision(
    family: &HierarchicalFamily,
    sample: &LabeledSample,
    x_hat: Vec<f64>,
    upper_time: f64,
) -> Result<MethodOutput> {
    let lower = family.solve_lower(&sample.theta, &x_hat)?;
    let (c, _) = family.costs(&sample.theta);
    let cost = c.iter().zip(&x_hat).map(|(c, x)| c * x).sum::<f64>() + lower.cost;
    let lower_time = lower.total_time();
    Ok(MethodOutput {
        theta_id: sample.theta_id,
        x_hat,
        cost,
        upper_time,
        lower_time,
        trajectory: vec![(upper_time + lower_time, cost)],
    })
}

pub fn run_learned(family: &HierarchicalFamily, predictor: &Mlp, sample: &LabeledSample) -> Result<MethodOutput> {
    let (x, t) = policy_decision(family, predictor, &sample.theta)?;
    complete_decision(family, sample, x, t)
}

pub fn run_nearest_neighbor(
    family: &HierarchicalFamily,
    train_set: &[LabeledSample],
    sample: &LabeledSample,
) -> Result<MethodOutput> {
    let (x, t) = nearest_neighbor_predict(train_set, family, &sample.theta)?;
    complete_decision(family, sample, x, t)
}

pub fn run_direct(family: &HierarchicalFamily, mlp: &Mlp, sample: &LabeledSample) -> Result<MethodOutput> {
    let (x, t) = direct_prediction_predict(family, mlp, &sample.theta)?;
    complete_decision(family, sample, x, t)
}

/// Full master solve under `config`; the delivered cost is the solver's
/// own objective.
pub fn run_solver(family: &HierarchicalFamily, config: &SolveConfig, sample: &LabeledSample) -> Result<MethodOutput> {
    let sol = solve_milp(&family.build_master(&sample.theta)?, config)?;
    if !sol.status.has_solution() {
        return Err(Error::NoSolution(format!("master solve ended {:?}", sol.status)));
    }
    let values = sol.values.as_deref().expect("solution present");
    let (x, _) = family.split_solution(values);
    Ok(MethodOutput {
        theta_id: sample.theta_id,
        x_hat: x.to_vec(),
        cost: sol.objective_value,
        upper_time: sol.wall_time,
        lower_time: 0.0,
        trajectory: sol.incumbents.iter().map(|e| (e.time, e.objective)).collect(),
    })
}

/// Exact, first-feasible and third-feasible solver settings.
pub fn solver_baselines() -> Vec<(&'static str, SolveConfig)> {
    vec![
        ("exact", SolveConfig::default()),
        ("feas1", SolveConfig::first_feasible(1)),
        ("feas3", SolveConfig::first_feasible(3)),
    ]
}

pub enum Method<'a> {
    Learned { id: String, predictor: &'a Mlp },
    NearestNeighbor { train_set: &'a [LabeledSample] },
    DirectPrediction { mlp: &'a Mlp },
    Solver { id: String, config: SolveConfig },
}

impl Method<'_> {
    pub fn id(&self) -> &str {
        match self {
            Method::Learned { id, .. } | Method::Solver { id, .. } => id,
            Method::NearestNeighbor { .. } => "nn",
            Method::DirectPrediction { .. } => "dp",
        }
    }

    pub fn run(&self, family: &HierarchicalFamily, sample: &LabeledSample) -> Result<MethodOutput> {
        match self {
            Method::Learned { predictor, .. } => run_learned(family, predictor, sample),
            Method::NearestNeighbor { train_set } => run_nearest_neighbor(family, train_set, sample),
            Method::DirectPrediction { mlp } => run_direct(family, mlp, sample),
            Method::Solver { config, .. } => run_solver(family, config, sample),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceRecord {
    pub theta_id: usize,
    #[serde(serialize_with = "space_separated")]
    pub x_hat: Vec<f64>,
    pub feasible: bool,
    pub true_cost: f64,
    pub regret: f64,
    pub normalized_regret: Option<f64>,
    pub wall_time_upper: f64,
    pub wall_time_lower: f64,
    pub wall_time_total: f64,
}

fn space_separated<S: serde::Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    s.serialize_str(&parts.join(" "))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub theta_id: usize,
    pub time_s: f64,
    pub incumbent_objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method_id: String,
    pub records: Vec<InstanceRecord>,
    pub trajectory: Vec<TrajectoryPoint>,
}

/// Turns raw outputs into regret records against the labels.
pub fn score_outputs(
    family: &HierarchicalFamily,
    labels: &[LabeledSample],
    method_id: &str,
    outputs: Vec<MethodOutput>,
) -> Result<MethodResult> {
    let mut records = Vec::with_capacity(outputs.len());
    let mut trajectory = Vec::new();
    for o in outputs {
        let label = labels
            .iter()
            .find(|s| s.theta_id == o.theta_id)
            .ok_or_else(|| Error::MissingLabels(format!("no label for instance {}", o.theta_id)))?;
        if !label.z.is_finite() {
            return Err(Error::MissingLabels(format!("instance {} has no optimal value", o.theta_id)));
        }
        let feasible = family.check_upper_feasible(&o.x_hat).is_ok();
        let regret = o.cost - label.z;
        let normalized_regret = if label.z.abs() < NORM_EPS {
            log::info!("{method_id}: instance {} has |f(x⋆)| ≈ 0, normalized regret skipped", o.theta_id);
            None
        } else {
            Some(regret / label.z.abs())
        };
        trajectory.extend(o.trajectory.iter().map(|&(t, v)| TrajectoryPoint {
            theta_id: o.theta_id,
            time_s: t,
            incumbent_objective: v,
        }));
        records.push(InstanceRecord {
            theta_id: o.theta_id,
            feasible,
            true_cost: o.cost,
            regret,
            normalized_regret,
            wall_time_upper: o.upper_time,
            wall_time_lower: o.lower_time,
            wall_time_total: o.upper_time + o.lower_time,
            x_hat: o.x_hat,
        });
    }
    Ok(MethodResult { method_id: method_id.to_string(), records, trajectory })
}

pub fn evaluate_method(family: &HierarchicalFamily, method: &Method, test_set: &[LabeledSample]) -> Result<MethodResult> {
    let outputs = test_set.iter().map(|s| method.run(family, s)).collect::<Result<Vec<_>>>()?;
    score_outputs(family, test_set, method.id(), outputs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method_id: String,
    pub instances: usize,
    pub r_abs: f64,
    pub r_norm: f64,
    pub normalized_skipped: usize,
    pub mean_time_upper: f64,
    pub mean_time_lower: f64,
    pub mean_time_total: f64,
    pub median_time_total: f64,
    pub infeasible: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub methods: Vec<MethodSummary>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn summarize(result: &MethodResult) -> MethodSummary {
    let r = &result.records;
    MethodSummary {
        method_id: result.method_id.clone(),
        instances: r.len(),
        r_abs: mean(r.iter().map(|x| x.regret)),
        r_norm: mean(r.iter().filter_map(|x| x.normalized_regret)),
        normalized_skipped: r.iter().filter(|x| x.normalized_regret.is_none()).count(),
        mean_time_upper: mean(r.iter().map(|x| x.wall_time_upper)),
        mean_time_lower: mean(r.iter().map(|x| x.wall_time_lower)),
        mean_time_total: mean(r.iter().map(|x| x.wall_time_total)),
        median_time_total: median(r.iter().map(|x| x.wall_time_total).collect()),
        infeasible: r.iter().filter(|x| !x.feasible).count(),
    }
}

pub fn compute_metrics(results: &[MethodResult]) -> ComparisonReport {
    ComparisonReport { methods: results.iter().map(summarize).collect() }
}

pub fn results_path(dir: &Path, kind: FamilyKind, method_id: &str) -> PathBuf {
    dir.join(format!("results_{}_{method_id}.csv", kind.name()))
}

pub fn trajectory_path(dir: &Path, kind: FamilyKind, method_id: &str) -> PathBuf {
    dir.join(format!("trajectory_{}_{method_id}.csv", kind.name()))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the results and trajectory CSVs for one method.
pub fn write_method_csv(dir: &Path, kind: FamilyKind, result: &MethodResult) -> Result<()> {
    write_rows(&results_path(dir, kind, &result.method_id), &result.records)?;
    write_rows(&trajectory_path(dir, kind, &result.method_id), &result.trajectory)
}

pub fn write_summary_csv(path: &Path, report: &ComparisonReport) -> Result<()> {
    write_rows(path, &report.methods)
}

