//! Feedforward cost predictor `ĉ_w(θ)` and its subgradient training loop.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledSample;
use crate::losses::{loss_value_and_subgradient, LossSpec};
use crate::milp::solve_milp;
use crate::problems::{exact_config, HierarchicalFamily};
use crate::{Error, Result};

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    /// Logistic output in `(0, 1)`; callers rescale it.
    Sigmoid,
}

/// ReLU network; weights stored row-major as `out × in`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    output: OutputActivation,
    #[serde(skip, default = "fresh_version")]
    version: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layer_dims == other.layer_dims
            && self.weights == other.weights
            && self.biases == other.biases
            && self.output == other.output
    }
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    version: u64,
    /// Input followed by each layer's output.
    activations: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has an output")
    }

    /// Pre-activations of every layer.
    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            weights: mlp.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: mlp.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, s: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(a, b)| *a += s * b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(a, b)| *a += s * b);
        }
    }

    /// Same order as [`Mlp::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.flatten().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl Mlp {
    /// He-initialized network, biases zero.
    pub fn new(layer_dims: &[usize], output: OutputActivation, seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad layer dims {layer_dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_dims.windows(2) {
            let law = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("valid normal");
            weights.push((0..w[0] * w[1]).map(|_| law.sample(&mut rng)).collect());
            biases.push(vec![0.0; w[1]]);
        }
        Ok(Self { layer_dims: layer_dims.to_vec(), weights, biases, output, version: fresh_version() })
    }

    pub fn zeros(layer_dims: &[usize], output: OutputActivation) -> Result<Self> {
        let mut m = Self::new(layer_dims, output, 0)?;
        m.weights.iter_mut().flatten().for_each(|w| *w = 0.0);
        Ok(m)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("at least two layers")
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Weight matrix of layer `l`, row-major `out × in`.
    pub fn weight(&self, l: usize) -> &[f64] {
        &self.weights[l]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        &self.biases[l]
    }

    pub fn set_layer(&mut self, l: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<()> {
        if weight.len() != self.weights[l].len() || bias.len() != self.biases[l].len() {
            return Err(Error::DimensionMismatch(format!("layer {l} shape")));
        }
        self.weights[l] = weight;
        self.biases[l] = bias;
        self.version = fresh_version();
        Ok(())
    }

    /// All parameters, layer by layer: weights then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters given, network has {}",
                params.len(),
                self.num_params()
            )));
        }
        let mut it = params.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
            b.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
        }
        self.version = fresh_version();
        Ok(())
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let depth = self.weights.len();
        let mut activations = vec![input.to_vec()];
        let mut pre = Vec::with_capacity(depth);
        for l in 0..depth {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let a = &activations[l];
            let w = &self.weights[l];
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    self.biases[l][o] + row.iter().zip(a).map(|(w, a)| w * a).sum::<f64>()
                })
                .collect();
            let out = if l + 1 < depth {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                match self.output {
                    OutputActivation::Identity => z.clone(),
                    OutputActivation::Sigmoid => z.iter().map(|&v| sigmoid(v)).collect(),
                }
            };
            pre.push(z);
            activations.push(out);
        }
        Ok(Trace { version: self.version, activations, pre })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut t = self.forward_trace(input)?;
        Ok(t.activations.pop().expect("trace has an output"))
    }

    /// Gradient of `upstreamᵀ·output` with respect to every parameter.
    /// The ReLU derivative at 0 is taken as 0.
    pub fn backward(&self, trace: &Trace, upstream: &[f64]) -> Result<Gradients> {
        if trace.version != self.version {
            return Err(Error::StaleActivationCache);
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "upstream has length {}, network outputs {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let depth = self.weights.len();
        let mut delta: Vec<f64> = match self.output {
            OutputActivation::Identity => upstream.to_vec(),
            OutputActivation::Sigmoid => upstream
                .iter()
                .zip(trace.output())
                .map(|(u, s)| u * s * (1.0 - s))
                .collect(),
        };
        let mut grads = Gradients::zeros_like(self);
        for l in (0..depth).rev() {
            let n_in = self.layer_dims[l];
            let a = &trace.activations[l];
            let gw = &mut grads.weights[l];
            for (o, d) in delta.iter().enumerate() {
                if *d != 0.0 {
                    gw[o * n_in..(o + 1) * n_in]
                        .iter_mut()
                        .zip(a)
                        .for_each(|(g, a)| *g = d * a);
                }
            }
            grads.biases[l].copy_from_slice(&delta);
            if l == 0 {
                break;
            }
            let w = &self.weights[l];
            let mut next = vec![0.0; n_in];
            for (o, d) in delta.iter().enumerate() {
                if *d != 0.0 {
                    next.iter_mut()
                        .zip(&w[o * n_in..(o + 1) * n_in])
                        .for_each(|(n, w)| *n += d * w);
                }
            }
            for (n, z) in next.iter_mut().zip(&trace.pre[l - 1]) {
                if *z <= 0.0 {
                    *n = 0.0;
                }
            }
            delta = next;
        }
        Ok(grads)
    }

    /// `w ← w − lr·g`.
    pub fn apply(&mut self, grads: &Gradients, lr: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            w.iter_mut().zip(g).for_each(|(w, g)| *w -= lr * g);
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            b.iter_mut().zip(g).for_each(|(b, g)| *b -= lr * g);
        }
        self.version = fresh_version();
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let shapes_ok = m.layer_dims.len() >= 2
            && m.weights.len() == m.layer_dims.len() - 1
            && m.biases.len() == m.weights.len()
            && m.layer_dims.windows(2).enumerate().all(|(l, w)| {
                m.weights[l].len() == w[0] * w[1] && m.biases[l].len() == w[1]
            });
        if !shapes_ok {
            return Err(Error::Parse("network parameter shapes do not chain".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Cost predictor with `hidden` ReLU layers between `θ` and `ĉ`.
pub fn cost_predictor(family: &HierarchicalFamily, hidden: &[usize], seed: u64) -> Result<Mlp> {
    let mut dims = vec![family.param_dim()];
    dims.extend_from_slice(hidden);
    dims.push(family.n_upper());
    Mlp::new(&dims, OutputActivation::Identity, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    Sgd,
    Momentum { beta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub lr_grid: Vec<f64>,
    /// Steps between eval-regret evaluations; 0 means once per epoch.
    pub eval_every: usize,
    pub hidden: Vec<usize>,
}

impl TrainConfig {
    pub fn new(loss: LossSpec) -> Self {
        Self {
            loss,
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 30,
            seed: 0,
            optimizer: Optimizer::Sgd,
            lr_grid: vec![1e-4, 1e-3, 1e-2],
            eval_every: 0,
            hidden: vec![128, 128],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("batch_size and epochs must be >= 1".into()));
        }
        if let Optimizer::Momentum { beta } = self.optimizer {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidConfig(format!("momentum beta {beta}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    /// Mean surrogate loss of the last batch (NaN before the first step).
    pub train_loss: f64,
    pub eval_regret: f64,
    pub best_eval_regret: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedPredictor {
    /// Snapshot with the lowest eval regret.
    pub mlp: Mlp,
    pub learning_rate: f64,
    pub curve: Vec<CurvePoint>,
    pub best_step: usize,
    pub best_eval_regret: f64,
    pub steps: usize,
    pub aborted_steps: usize,
}

/// Upper decision `x̂` of the learned policy and the solve's wall time.
pub fn policy_decision(family: &HierarchicalFamily, mlp: &Mlp, theta: &[f64]) -> Result<(Vec<f64>, f64)> {
    let c_hat = mlp.forward(theta)?;
    let problem = family.build_upper_policy(theta, &c_hat)?;
    let start = Instant::now();
    let sol = solve_milp(&problem, &exact_config())?;
    let elapsed = start.elapsed().as_secs_f64();
    match sol.values {
        Some(x) => Ok((x, elapsed)),
        None => Err(Error::NoSolution(format!("policy solve returned {:?}", sol.status))),
    }
}

/// `R̂_ABS` of the learned policy on labeled samples.
pub fn eval_regret(family: &HierarchicalFamily, mlp: &Mlp, samples: &[LabeledSample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in samples {
        let (x, _) = policy_decision(family, mlp, &s.theta)?;
        total += family.true_cost(&s.theta, &x)? - s.z;
    }
    Ok(total / samples.len() as f64)
}

/// Mean loss and averaged gradient over a batch; also returns the mean
/// subgradient with respect to each `ĉ`.
pub fn batch_gradient(
    mlp: &Mlp,
    family: &HierarchicalFamily,
    batch: &[&LabeledSample],
    loss: &LossSpec,
) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros_like(mlp);
    let mut total = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for s in batch {
        let trace = mlp.forward_trace(&s.theta)?;
        let e = loss_value_and_subgradient(loss, family, &s.theta, &s.x_star, trace.output())?;
        total += e.value;
        let g = mlp.backward(&trace, &e.subgradient)?;
        grads.add_scaled(&g, scale);
    }
    Ok((total * scale, grads))
}

/// Stochastic subgradient descent on the empirical surrogate risk.
pub fn train(
    mut mlp: Mlp,
    family: &HierarchicalFamily,
    train_set: &[LabeledSample],
    eval_set: &[LabeledSample],
    config: &TrainConfig,
) -> Result<TrainedPredictor> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let per_epoch = train_set.len().div_ceil(config.batch_size);
    let total_steps = per_epoch * config.epochs;
    let eval_every = if config.eval_every == 0 { per_epoch } else { config.eval_every };
    let mut velocity = Gradients::zeros_like(&mlp);
    let mut curve = Vec::new();
    let first = eval_regret(family, &mlp, eval_set)?;
    let mut best = (mlp.clone(), 0, first);
    curve.push(CurvePoint {
        step: 0,
        train_loss: f64::NAN,
        eval_regret: first,
        best_eval_regret: first,
        wall_time: start.elapsed().as_secs_f64(),
    });
    let mut step = 0;
    let mut aborted = 0;
    let mut last_loss = f64::NAN;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            let batch: Vec<&LabeledSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            match batch_gradient(&mlp, family, &batch, &config.loss) {
                Ok((loss, grads)) => {
                    last_loss = loss;
                    match config.optimizer {
                        Optimizer::Sgd => mlp.apply(&grads, config.learning_rate),
                        Optimizer::Momentum { beta } => {
                            let mut v = Gradients::zeros_like(&mlp);
                            v.add_scaled(&velocity, beta);
                            v.add_scaled(&grads, 1.0);
                            velocity = v;
                            mlp.apply(&velocity, config.learning_rate);
                        }
                    }
                }
                Err(e) => {
                    aborted += 1;
                    log::warn!("training step {step} aborted: {e}");
                }
            }
            if step % eval_every == 0 || step == total_steps {
                let regret = eval_regret(family, &mlp, eval_set)?;
                if regret <= best.2 {
                    best = (mlp.clone(), step, regret);
                }
                curve.push(CurvePoint {
                    step,
                    train_loss: last_loss,
                    eval_regret: regret,
                    best_eval_regret: best.2,
                    wall_time: start.elapsed().as_secs_f64(),
                });
            }
        }
    }
    if aborted as f64 > 0.01 * step as f64 {
        return Err(Error::TooManyAbortedSteps { aborted, total: step });
    }
    Ok(TrainedPredictor {
        mlp: best.0,
        learning_rate: config.learning_rate,
        curve,
        best_step: best.1,
        best_eval_regret: best.2,
        steps: step,
        aborted_steps: aborted,
    })
}

/// Outcome of one grid point.
#[derive(Debug, Clone)]
pub struct GridRun {
    pub learning_rate: f64,
    pub result: std::result::Result<TrainedPredictor, String>,
}

/// Trains one model per learning rate from the same initial network and
/// keeps the lowest eval regret, ties going to the smaller rate.
pub fn grid_search(
    template: &Mlp,
    family: &HierarchicalFamily,
    train_set: &[LabeledSample],
    eval_set: &[LabeledSample],
    config: &TrainConfig,
) -> Result<(TrainConfig, TrainedPredictor, Vec<GridRun>)> {
    if config.lr_grid.is_empty() {
        return Err(Error::InvalidConfig("learning-rate grid is empty".into()));
    }
    let mut runs = Vec::new();
    let mut best: Option<(TrainConfig, TrainedPredictor)> = None;
    for &lr in &config.lr_grid {
        let cfg = TrainConfig { learning_rate: lr, ..config.clone() };
        let result = train(template.clone(), family, train_set, eval_set, &cfg);
        match &result {
            Ok(t) => {
                let better = match &best {
                    None => true,
                    Some((bc, bt)) => {
                        t.best_eval_regret < bt.best_eval_regret
                            || (t.best_eval_regret == bt.best_eval_regret && lr < bc.learning_rate)
                    }
                };
                if better {
                    best = Some((cfg.clone(), t.clone()));
                }
            }
            Err(e) => log::warn!("grid point lr = {lr} failed: {e}"),
        }
        runs.push(GridRun { learning_rate: lr, result: result.map_err(|e| e.to_string()) });
    }
    let (cfg, trained) = best.ok_or(Error::AllRunsFailed)?;
    Ok((cfg, trained, runs))
}
