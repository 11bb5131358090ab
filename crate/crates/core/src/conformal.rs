//! Conformal lower bounds on the optimal value of a hierarchical MIP.
//!
//! A value network `ψ` predicts `h(θ) ∈ [l(θ), u(θ)]`; split-conformal
//! calibration of the score `φ(h)/φ(z)` turns it into a bound `ω(θ)` with
//! `P(z ≥ ω) ≥ 1 − ⌈Mα⌉/(M+1)`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{fmt_f64, parse_f64, LabeledSample};
use crate::predictor::{policy_decision, Gradients, Mlp, OutputActivation};
use crate::problems::HierarchicalFamily;
use crate::{Error, Result};

/// Intervals narrower than this are treated as a single point.
pub const DEGENERATE_WIDTH: f64 = 1e-9;
const UPPER_SHRINK: f64 = 1e-9;

/// `φ_{l,u}(x) = arctanh((x − l)/(u − l))`, with the ratio clamped to `[0, 1]`.
pub fn phi(l: f64, u: f64, x: f64) -> f64 {
    let r = ((x - l) / (u - l)).clamp(0.0, 1.0);
    if r >= 1.0 {
        f64::INFINITY
    } else {
        r.atanh()
    }
}

pub fn phi_inv(l: f64, u: f64, t: f64) -> f64 {
    l + (u - l) * t.tanh()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// `q` is the `⌈Mα⌉`-th largest score and `ω = φ⁻¹(φ(h)/q)`.
    #[default]
    Corrected,
    /// `q` is the `⌈Mα⌉`-th smallest score and `ω = φ⁻¹(q·φ(h))`.
    Paper,
}

impl Convention {
    pub fn name(self) -> &'static str {
        match self {
            Convention::Corrected => "corrected",
            Convention::Paper => "paper",
        }
    }
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Convention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "corrected" => Ok(Convention::Corrected),
            "paper" | "paper-literal" | "paper_literal" => Ok(Convention::Paper),
            other => Err(Error::InvalidConfig(format!("unknown convention `{other}`"))),
        }
    }
}

/// Conformity score `Φ = φ(h)/φ(z)`; `+∞` when `φ(z) = 0`.
pub fn score(l: f64, u: f64, h: f64, z: f64) -> f64 {
    if u - l < DEGENERATE_WIDTH {
        return 0.0;
    }
    let fz = phi(l, u, z);
    if fz <= 0.0 || fz.is_nan() {
        return f64::INFINITY;
    }
    phi(l, u, h) / fz
}

/// `⌈Mα⌉`, robust to `Mα` landing a rounding error above an integer.
pub fn quantile_rank(m: usize, alpha: f64) -> usize {
    let x = m as f64 * alpha;
    let r = x.round();
    let k = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (k as usize).clamp(1, m.max(1))
}

pub fn coverage_target(m: usize, alpha: f64) -> f64 {
    1.0 - quantile_rank(m, alpha) as f64 / (m as f64 + 1.0)
}

/// Bound from a calibrated quantile, clamped to `[l, u]`.
pub fn conformal_omega(l: f64, u: f64, h: f64, q: f64, convention: Convention) -> f64 {
    if u - l < DEGENERATE_WIDTH {
        return l;
    }
    let t = match convention {
        Convention::Corrected => {
            if q <= 0.0 || q.is_infinite() || q.is_nan() {
                return l;
            }
            phi(l, u, h) / q
        }
        Convention::Paper => q * phi(l, u, h),
    };
    if t.is_nan() {
        return l;
    }
    phi_inv(l, u, t).clamp(l, u)
}

/// Calibration artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub alpha: f64,
    pub convention: Convention,
    pub q_alpha: f64,
    pub m: usize,
    pub coverage_target: f64,
    pub scores: Vec<f64>,
}

impl Calibration {
    pub fn from_scores(scores: Vec<f64>, alpha: f64, convention: Convention) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::AlphaOutOfRange(alpha));
        }
        if scores.is_empty() {
            return Err(Error::EmptyCalibrationSet);
        }
        if let Some(s) = scores.iter().find(|s| s.is_nan() || **s < 0.0) {
            return Err(Error::InvalidConfig(format!("invalid conformity score {s}")));
        }
        let m = scores.len();
        let k = quantile_rank(m, alpha);
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        let q_alpha = match convention {
            Convention::Corrected => sorted[m - k],
            Convention::Paper => sorted[k - 1],
        };
        Ok(Calibration { alpha, convention, q_alpha, m, coverage_target: coverage_target(m, alpha), scores })
    }

    pub fn omega(&self, l: f64, u: f64, h: f64) -> f64 {
        conformal_omega(l, u, h, self.q_alpha, self.convention)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("alpha = {}\n", fmt_f64(self.alpha)));
        out.push_str(&format!("convention = {}\n", self.convention));
        out.push_str(&format!("q_alpha = {}\n", fmt_f64(self.q_alpha)));
        out.push_str(&format!("m = {}\n", self.m));
        out.push_str(&format!("coverage_target = {}\n", fmt_f64(self.coverage_target)));
        let scores: Vec<String> = self.scores.iter().map(|s| fmt_f64(*s)).collect();
        out.push_str(&format!("scores = {}\n", scores.join(" ")));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut alpha = None;
        let mut convention = None;
        let mut q_alpha = None;
        let mut m = None;
        let mut target = None;
        let mut scores = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected `key = value`, got `{line}`")))?;
            let value = value.trim();
            match key.trim() {
                "alpha" => alpha = Some(parse_f64(value)?),
                "convention" => convention = Some(value.parse()?),
                "q_alpha" => q_alpha = Some(parse_f64(value)?),
                "m" => m = Some(value.parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?),
                "coverage_target" => target = Some(parse_f64(value)?),
                "scores" => scores = Some(value.split_whitespace().map(parse_f64).collect::<Result<Vec<_>>>()?),
                other => return Err(Error::Parse(format!("unknown calibration key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::Parse(format!("calibration file lacks `{k}`"));
        let cal = Calibration {
            alpha: alpha.ok_or_else(|| missing("alpha"))?,
            convention: convention.ok_or_else(|| missing("convention"))?,
            q_alpha: q_alpha.ok_or_else(|| missing("q_alpha"))?,
            m: m.ok_or_else(|| missing("m"))?,
            coverage_target: target.ok_or_else(|| missing("coverage_target"))?,
            scores: scores.unwrap_or_default(),
        };
        if cal.scores.len() != cal.m {
            return Err(Error::Parse(format!("m = {} but {} scores listed", cal.m, cal.scores.len())));
        }
        Ok(cal)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Lines 1 to 4 of the online procedure: the learned decision, its lower
/// completion and the two deterministic bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutcome {
    pub x_hat: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub u: f64,
    pub l: f64,
    pub lower_summary: [f64; 5],
    pub upper_time: f64,
    pub lower_time: f64,
    pub relaxation_time: f64,
}

pub fn policy_outcome(family: &HierarchicalFamily, predictor: &Mlp, theta: &[f64]) -> Result<PolicyOutcome> {
    let (x_hat, upper_time) = policy_decision(family, predictor, theta)?;
    let lower = family.solve_lower(theta, &x_hat)?;
    let (c, _) = family.costs(theta);
    let u = c.iter().zip(&x_hat).map(|(c, x)| c * x).sum::<f64>() + lower.cost;
    let start = Instant::now();
    let l = family.relaxation_bound(theta)?;
    let relaxation_time = start.elapsed().as_secs_f64();
    Ok(PolicyOutcome {
        lower_summary: lower.summary(),
        lower_time: lower.total_time(),
        x_hat,
        y_hat: lower.y,
        u,
        l,
        upper_time,
        relaxation_time,
    })
}

/// `ψ` input: `θ`, `x̂`, pooled lower summary, `l`, `u`.
pub fn psi_features(theta: &[f64], outcome: &PolicyOutcome) -> Vec<f64> {
    let mut f = Vec::with_capacity(theta.len() + outcome.x_hat.len() + 7);
    f.extend_from_slice(theta);
    f.extend_from_slice(&outcome.x_hat);
    f.extend_from_slice(&outcome.lower_summary);
    f.push(outcome.l);
    f.push(outcome.u);
    f
}

pub fn psi_input_dim(family: &HierarchicalFamily) -> usize {
    family.param_dim() + family.n_upper() + 7
}

/// Fresh `ψ` with sigmoid output.
pub fn value_network(family: &HierarchicalFamily, hidden: &[usize], seed: u64) -> Result<Mlp> {
    let mut dims = vec![psi_input_dim(family)];
    dims.extend_from_slice(hidden);
    dims.push(1);
    Mlp::new(&dims, OutputActivation::Sigmoid, seed)
}

/// Per-feature affine normalization fitted on the evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer { mean: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::EmptyTrainSet)?;
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch(format!("feature rows of length {} and {dim}", r.len())));
            }
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            var.iter_mut().zip(r).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m) / n);
        }
        let scale = var.into_iter().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((x, m), s)| (x - m) / s).collect()
    }
}

/// Precomputed `ψ` training or calibration record.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSample {
    pub features: Vec<f64>,
    pub l: f64,
    pub u: f64,
    pub z: f64,
}

pub fn value_samples(
    family: &HierarchicalFamily,
    predictor: &Mlp,
    samples: &[LabeledSample],
) -> Result<Vec<ValueSample>> {
    samples
        .iter()
        .map(|s| {
            if !s.z.is_finite() {
                return Err(Error::MissingLabels(format!("sample {} has no optimal value", s.theta_id)));
            }
            let o = policy_outcome(family, predictor, &s.theta)?;
            Ok(ValueSample { features: psi_features(&s.theta, &o), l: o.l, u: o.u, z: s.z })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalModel {
    pub psi: Mlp,
    pub standardizer: Standardizer,
    pub alpha: f64,
    pub convention: Convention,
    pub calibration: Option<Calibration>,
}

impl ConformalModel {
    pub fn new(psi: Mlp, standardizer: Standardizer, alpha: f64, convention: Convention) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::AlphaOutOfRange(alpha));
        }
        if psi.output_dim() != 1 || psi.output_activation() != OutputActivation::Sigmoid {
            return Err(Error::InvalidConfig("value network needs one sigmoid output".into()));
        }
        if standardizer.mean.len() != psi.input_dim() || standardizer.scale.len() != psi.input_dim() {
            return Err(Error::DimensionMismatch("standardizer width differs from the network input".into()));
        }
        Ok(ConformalModel { psi, standardizer, alpha, convention, calibration: None })
    }

    pub fn q_alpha(&self) -> Option<f64> {
        self.calibration.as_ref().map(|c| c.q_alpha)
    }

    /// `h ∈ [l, u − 1e-9(u − l)]`.
    pub fn predict(&self, features: &[f64], l: f64, u: f64) -> Result<f64> {
        if u - l < DEGENERATE_WIDTH {
            return Ok(l);
        }
        let s = self.psi.forward(&self.standardizer.apply(features))?[0];
        Ok(l + (u - l) * (1.0 - UPPER_SHRINK) * s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: ConformalModel = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let calibration = m.calibration.clone();
        let mut checked = ConformalModel::new(m.psi, m.standardizer, m.alpha, m.convention)?;
        checked.calibration = calibration;
        Ok(checked)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Ok(std::fs::write(path, self.to_toml()?)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConformalTrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ConformalTrainConfig {
    fn default() -> Self {
        ConformalTrainConfig { hidden: vec![128, 128], learning_rate: 0.01, momentum: 0.9, batch_size: 16, epochs: 400, seed: 0 }
    }
}

impl ConformalTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!("momentum {}", self.momentum)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("batch size and epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Mean of `(z − h)²` over `samples` and its gradient in the network weights.
pub fn value_loss_and_gradient(
    psi: &Mlp,
    standardizer: &Standardizer,
    samples: &[&ValueSample],
) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros_like(psi);
    let mut total = 0.0;
    let n = samples.len().max(1) as f64;
    for s in samples {
        if s.u - s.l < DEGENERATE_WIDTH {
            continue;
        }
        let trace = psi.forward_trace(&standardizer.apply(&s.features))?;
        let width = (s.u - s.l) * (1.0 - UPPER_SHRINK);
        let h = s.l + width * trace.output()[0];
        let err = h - s.z;
        total += err * err / n;
        let g = psi.backward(&trace, &[2.0 * err * width / n])?;
        grads.add_scaled(&g, 1.0);
    }
    Ok((total, grads))
}

/// Fits `ψ` on precomputed samples; the step size is divided by the squared
/// mean interval width so one configuration serves every family.
pub fn fit_value_network(
    mut psi: Mlp,
    samples: &[ValueSample],
    config: &ConformalTrainConfig,
) -> Result<(Mlp, Standardizer, Vec<f64>)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.features.clone()).collect();
    let standardizer = Standardizer::fit(&rows)?;
    if standardizer.mean.len() != psi.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "features of width {} for a network taking {}",
            standardizer.mean.len(),
            psi.input_dim()
        )));
    }
    let width = samples.iter().map(|s| (s.u - s.l).max(0.0)).sum::<f64>() / samples.len() as f64;
    let lr = if width > DEGENERATE_WIDTH { config.learning_rate / (width * width) } else { config.learning_rate };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut velocity = Gradients::zeros_like(&psi);
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&ValueSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (_, g) = value_loss_and_gradient(&psi, &standardizer, &batch)?;
            let mut v = Gradients::zeros_like(&psi);
            v.add_scaled(&velocity, config.momentum);
            v.add_scaled(&g, 1.0);
            velocity = v;
            psi.apply(&velocity, lr);
        }
        let all: Vec<&ValueSample> = samples.iter().collect();
        history.push(value_loss_and_gradient(&psi, &standardizer, &all)?.0);
    }
    Ok((psi, standardizer, history))
}

/// Trains `ψ` on the evaluation set with the cost predictor frozen.
pub fn train_conformal(
    psi: Mlp,
    family: &HierarchicalFamily,
    eval_set: &[LabeledSample],
    predictor: &Mlp,
    config: &ConformalTrainConfig,
    alpha: f64,
    convention: Convention,
) -> Result<ConformalModel> {
    let samples = value_samples(family, predictor, eval_set)?;
    let (psi, standardizer, history) = fit_value_network(psi, &samples, config)?;
    if let Some(last) = history.last() {
        log::info!("value network trained, final squared error {last:.4e}");
    }
    ConformalModel::new(psi, standardizer, alpha, convention)
}

/// Scores the calibration set and stores the quantile in the model.
pub fn calibrate(
    model: &mut ConformalModel,
    family: &HierarchicalFamily,
    calib_set: &[LabeledSample],
    predictor: &Mlp,
    alpha: f64,
) -> Result<Calibration> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    if calib_set.is_empty() {
        return Err(Error::EmptyCalibrationSet);
    }
    let samples = value_samples(family, predictor, calib_set)?;
    let mut scores = Vec::with_capacity(samples.len());
    for s in &samples {
        let h = model.predict(&s.features, s.l, s.u)?;
        scores.push(score(s.l, s.u, h, s.z));
    }
    let cal = Calibration::from_scores(scores, alpha, model.convention)?;
    model.alpha = alpha;
    model.calibration = Some(cal.clone());
    Ok(cal)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCertificate {
    pub x_hat: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub u: f64,
    pub l: f64,
    pub h: f64,
    pub omega: f64,
    pub q_alpha: f64,
    pub coverage_target: f64,
    /// `u − l` below tolerance: the policy is provably optimal.
    pub exact: bool,
    pub upper_time: f64,
    pub lower_time: f64,
}

pub fn online_bound(
    model: &ConformalModel,
    family: &HierarchicalFamily,
    theta: &[f64],
    predictor: &Mlp,
) -> Result<BoundCertificate> {
    let cal = model.calibration.as_ref().ok_or(Error::Uncalibrated)?;
    let o = policy_outcome(family, predictor, theta)?;
    let features = psi_features(theta, &o);
    let h = model.predict(&features, o.l, o.u)?;
    let exact = o.u - o.l < DEGENERATE_WIDTH;
    Ok(BoundCertificate {
        omega: cal.omega(o.l, o.u, h),
        h,
        u: o.u,
        l: o.l,
        q_alpha: cal.q_alpha,
        coverage_target: cal.coverage_target,
        exact,
        upper_time: o.upper_time,
        lower_time: o.lower_time,
        x_hat: o.x_hat,
        y_hat: o.y_hat,
    })
}

/// Bound quality against the relaxation bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundMetrics {
    pub r_rel_plus: f64,
    pub r_rel_minus: f64,
    pub r_percent: f64,
    pub empirical_coverage: f64,
    pub used: usize,
    pub skipped: usize,
}

/// `z ≥ ω` up to a relative tolerance of `1e-9`.
pub fn bound_holds(z: f64, omega: f64) -> bool {
    z - omega >= -1e-9 * z.abs().max(1.0)
}

/// Metrics from `(z, ω, ω_rel)` triples.
pub fn bound_metrics(rows: &[(f64, f64, f64)]) -> BoundMetrics {
    let mut plus = 0.0;
    let mut minus = 0.0;
    let mut invalid = 0usize;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (i, &(z, omega, rel)) in rows.iter().enumerate() {
        let denom = z - rel;
        if denom.abs() < DEGENERATE_WIDTH {
            log::info!("row {i}: relaxation bound equals the optimum, skipped");
            skipped += 1;
            continue;
        }
        used += 1;
        if bound_holds(z, omega) {
            plus += ((z - omega) / denom).max(0.0);
        } else {
            invalid += 1;
            minus += (omega - z) / denom;
        }
    }
    let t = used.max(1) as f64;
    let r_percent = invalid as f64 / t;
    BoundMetrics {
        r_rel_plus: plus / t,
        r_rel_minus: minus / t,
        r_percent,
        empirical_coverage: if used == 0 { 1.0 } else { 1.0 - r_percent },
        used,
        skipped,
    }
}

/// Certificate row written next to the evaluation results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateRow {
    pub theta_id: usize,
    pub l: f64,
    pub u: f64,
    pub h: f64,
    pub omega: f64,
    pub z: Option<f64>,
    pub valid: Option<bool>,
}

impl CertificateRow {
    pub fn new(theta_id: usize, cert: &BoundCertificate, z: Option<f64>) -> Self {
        CertificateRow {
            theta_id,
            l: cert.l,
            u: cert.u,
            h: cert.h,
            omega: cert.omega,
            z,
            valid: z.map(|z| bound_holds(z, cert.omega)),
        }
    }
}

pub fn coverage_eval(
    model: &ConformalModel,
    family: &HierarchicalFamily,
    test_set: &[LabeledSample],
    predictor: &Mlp,
) -> Result<(BoundMetrics, Vec<CertificateRow>)> {
    let mut rows = Vec::with_capacity(test_set.len());
    let mut triples = Vec::with_capacity(test_set.len());
    for s in test_set {
        if !s.z.is_finite() {
            return Err(Error::MissingLabels(format!("sample {} has no optimal value", s.theta_id)));
        }
        let cert = online_bound(model, family, &s.theta, predictor)?;
        triples.push((s.z, cert.omega, cert.l));
        rows.push(CertificateRow::new(s.theta_id, &cert, Some(s.z)));
    }
    Ok((bound_metrics(&triples), rows))
}
