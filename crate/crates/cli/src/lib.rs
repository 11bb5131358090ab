//! Pipeline commands behind the `hmip` binary.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use hmip_core::conformal::{
    calibrate, coverage_eval, train_conformal, value_network, Calibration, ConformalModel, ConformalTrainConfig,
    Convention, CertificateRow, online_bound,
};
use hmip_core::datasets::{
    dataset_dir, generate_dataset_with_jobs, label_config, Dataset, SplitIndices, SplitSpec, Splits,
};
use hmip_core::evaluation::{
    compute_metrics, direct_prediction_train, evaluate_method, solver_baselines, write_method_csv, write_summary_csv,
    DirectConfig, Method, MethodResult,
};
use hmip_core::losses::{LossKind, LossSpec, GSPO_GUARD};
use hmip_core::predictor::{cost_predictor, grid_search, Mlp, Optimizer, TrainConfig};
use hmip_core::problems::{FamilyDims, FamilyKind, HierarchicalFamily};

/// Failure with its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or missing inputs (exit 2).
    Usage(String),
    /// Anything else (exit 1).
    Internal(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Internal(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<hmip_core::Error> for CliError {
    fn from(e: hmip_core::Error) -> Self {
        use hmip_core::Error as E;
        match e {
            E::InvalidConfig(_)
            | E::InsufficientSamples { .. }
            | E::AlphaOutOfRange(_)
            | E::Uncalibrated
            | E::EmptyCalibrationSet
            | E::EmptyTrainSet
            | E::MissingLabels(_) => CliError::Usage(e.to_string()),
            other => CliError::Internal(other.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Internal(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilySection {
    pub kind: FamilyKind,
    /// Knapsack blocks, or facility sites.
    #[serde(rename = "J")]
    pub j: Option<usize>,
    /// Items per knapsack block.
    pub k: Option<usize>,
    /// Facility clients.
    #[serde(rename = "I")]
    pub i: Option<usize>,
    pub param_dim: Option<usize>,
}

impl Default for FamilySection {
    fn default() -> Self {
        FamilySection { kind: FamilyKind::Knapsack, j: None, k: None, i: None, param_dim: None }
    }
}

impl FamilySection {
    pub fn dims(&self) -> CliResult<FamilyDims> {
        let desk = FamilyDims::desk(self.kind);
        let dims = match self.kind {
            FamilyKind::Knapsack => {
                FamilyDims::knapsack(self.j.unwrap_or(desk.a), self.k.unwrap_or(desk.b))
            }
            FamilyKind::FacilityLocation => {
                FamilyDims::facility(self.i.unwrap_or(desk.a), self.j.unwrap_or(desk.b))
            }
        };
        let dims = match self.param_dim {
            Some(p) => dims.with_param_dim(p),
            None => dims,
        };
        if dims.a == 0 || dims.b == 0 || dims.param_dim == 0 {
            return Err(usage(format!(
                "family dimensions must be positive, got {}×{} with {} parameters",
                dims.a, dims.b, dims.param_dim
            )));
        }
        Ok(dims)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: usize,
    pub eval: usize,
    pub calib: usize,
    pub test: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        let d = SplitSpec::desk(0);
        SplitSection { train: d.train, eval: d.eval, calib: d.calib, test: d.test }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub kind: LossKind,
    pub nu: f64,
    pub omega: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection { kind: LossKind::Asl, nu: 1.0, omega: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub lr_grid: Vec<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    /// 0 selects plain SGD.
    pub momentum: f64,
    pub eval_every: usize,
    pub hidden: Vec<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::new(LossSpec::asl(1.0));
        TrainSection {
            learning_rate: t.learning_rate,
            lr_grid: vec![1e-3, 3e-3, 1e-2],
            batch_size: t.batch_size,
            epochs: 60,
            momentum: 0.9,
            eval_every: t.eval_every,
            hidden: t.hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Learned policies included in the comparison.
    pub losses: Vec<LossKind>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection { losses: vec![LossKind::Asl, LossKind::Z, LossKind::Fy] }
    }
}

/// Full run description; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: usize,
    pub alpha: f64,
    pub convention: Convention,
    pub family: FamilySection,
    pub split: SplitSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub conformal: ConformalTrainConfig,
    pub direct: DirectConfig,
    pub evaluate: EvaluateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("runs"),
            jobs: 1,
            alpha: 0.1,
            convention: Convention::Corrected,
            family: FamilySection::default(),
            split: SplitSection::default(),
            loss: LossSection::default(),
            train: TrainSection::default(),
            conformal: ConformalTrainConfig::default(),
            direct: DirectConfig::default(),
            evaluate: EvaluateSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn split_spec(&self) -> SplitSpec {
        let s = &self.split;
        SplitSpec { train: s.train, eval: s.eval, calib: s.calib, test: s.test, seed: self.seed }
    }

    pub fn loss_spec(&self, kind: LossKind) -> LossSpec {
        match kind {
            LossKind::Asl => LossSpec::asl(self.loss.nu),
            LossKind::Fy => LossSpec::fy(self.loss.omega),
            LossKind::Z => LossSpec::z(),
            LossKind::GspoPlus => LossSpec::gspo(),
        }
    }

    pub fn train_config(&self, kind: LossKind) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            loss: self.loss_spec(kind),
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: self.seed,
            optimizer: if t.momentum > 0.0 { Optimizer::Momentum { beta: t.momentum } } else { Optimizer::Sgd },
            lr_grid: t.lr_grid.clone(),
            eval_every: t.eval_every,
            hidden: t.hidden.clone(),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.family.dims()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(usage(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if [self.split.train, self.split.eval, self.split.calib, self.split.test].contains(&0) {
            return Err(usage("split sizes must be positive"));
        }
        self.train_config(self.loss.kind).validate()?;
        self.conformal.validate()?;
        Ok(())
    }

    pub fn data_dir(&self) -> CliResult<PathBuf> {
        Ok(dataset_dir(&self.out, self.family.kind, self.seed))
    }

    pub fn model_dir(&self) -> PathBuf {
        self.out.join("models").join(self.family.kind.name()).join(self.seed.to_string())
    }

    pub fn results_dir(&self) -> PathBuf {
        self.out.join("results").join(self.family.kind.name()).join(self.seed.to_string())
    }

    pub fn predictor_path(&self, kind: LossKind) -> PathBuf {
        self.model_dir().join(format!("predictor_{}.toml", kind.name()))
    }

    pub fn conformal_path(&self) -> PathBuf {
        self.model_dir().join(format!("conformal_{}_{}.toml", self.loss.kind.name(), self.convention))
    }

    pub fn calibration_path(&self) -> PathBuf {
        self.model_dir().join(format!(
            "calibration_{}_{}_{}.txt",
            self.family.kind.name(),
            self.loss.kind.name(),
            self.convention
        ))
    }
}

/// Flags shared by every subcommand; each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// `knapsack` or `facility`.
    #[arg(long, global = true)]
    pub family: Option<String>,
    /// `asl`, `z`, `fy` or `gspo`.
    #[arg(long, global = true)]
    pub loss: Option<String>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// `corrected` or `paper`.
    #[arg(long, global = true)]
    pub convention: Option<String>,
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Knapsack blocks or facility sites.
    #[arg(long = "J", global = true)]
    pub j: Option<usize>,
    /// Items per knapsack block.
    #[arg(long = "k", global = true)]
    pub k: Option<usize>,
    /// Facility clients.
    #[arg(long = "I", global = true)]
    pub i: Option<usize>,
    #[arg(long, global = true)]
    pub param_dim: Option<usize>,
    /// ASL scale.
    #[arg(long, global = true)]
    pub nu: Option<f64>,
    /// FY regularization weight.
    #[arg(long, global = true)]
    pub omega: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
}

impl Overrides {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = &self.family {
            cfg.family.kind = v.parse().map_err(|e: hmip_core::Error| usage(e.to_string()))?;
        }
        if let Some(v) = &self.loss {
            cfg.loss.kind = v.parse().map_err(|e: hmip_core::Error| usage(e.to_string()))?;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = &self.convention {
            cfg.convention = v.parse().map_err(|e: hmip_core::Error| usage(e.to_string()))?;
        }
        if let Some(v) = self.jobs {
            cfg.jobs = v.max(1);
        }
        if self.j.is_some() {
            cfg.family.j = self.j;
        }
        if self.k.is_some() {
            cfg.family.k = self.k;
        }
        if self.i.is_some() {
            cfg.family.i = self.i;
        }
        if self.param_dim.is_some() {
            cfg.family.param_dim = self.param_dim;
        }
        if let Some(v) = self.nu {
            cfg.loss.nu = v;
        }
        if let Some(v) = self.omega {
            cfg.loss.omega = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Parser)]
#[command(name = "hmip", version, about = "Learned hierarchical decompositions for parametric MILPs")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label a dataset and write the four-way split.
    Generate,
    /// Train the cost predictor with the learning-rate grid search.
    Train,
    /// Train the value network and calibrate the conformal quantile.
    Calibrate,
    /// Certify each θ of a file (one whitespace-separated vector per line).
    Bound {
        #[arg(long)]
        theta_file: PathBuf,
        /// Defaults to `certificates_<family>.csv` in the results directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare every method on the test split.
    Evaluate,
    /// Print the evaluation summary.
    Report,
    /// Print the resolved configuration as TOML.
    Config,
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = cli.overrides.resolve()?;
    match &cli.command {
        Command::Generate => cmd_generate(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Calibrate => cmd_calibrate(&cfg),
        Command::Bound { theta_file, output } => cmd_bound(&cfg, theta_file, output.as_deref()),
        Command::Evaluate => cmd_evaluate(&cfg),
        Command::Report => cmd_report(&cfg),
        Command::Config => {
            print!("{}", toml::to_string(&cfg).map_err(|e| CliError::Internal(e.into()))?);
            Ok(())
        }
    }
}

fn require(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("missing {what}: {} (run the earlier pipeline step first)", path.display())))
    }
}

pub fn cmd_generate(cfg: &RunConfig) -> CliResult<()> {
    let dims = cfg.family.dims()?;
    let family = HierarchicalFamily::generate(dims, cfg.seed)?;
    let spec = cfg.split_spec();
    let ds = generate_dataset_with_jobs(&family, spec.total(), cfg.seed, &label_config(), cfg.jobs)?;
    let idx = hmip_core::datasets::split_indices(ds.samples.len(), &spec)?;
    let dir = cfg.data_dir()?;
    ds.save(&dir.join("dataset.txt"))?;
    std::fs::write(dir.join("splits.txt"), idx.to_text(&spec))?;
    println!(
        "generated {} samples ({} discarded) for {} {}x{} into {}",
        ds.samples.len(),
        ds.header.discarded,
        dims.kind.name(),
        dims.a,
        dims.b,
        dir.display()
    );
    Ok(())
}

/// Dataset, family and splits written by `generate`.
pub fn load_data(cfg: &RunConfig) -> CliResult<(HierarchicalFamily, Splits)> {
    let dir = cfg.data_dir()?;
    let ds_path = dir.join("dataset.txt");
    let split_path = dir.join("splits.txt");
    require(&ds_path, "dataset")?;
    require(&split_path, "split file")?;
    let ds = Dataset::load(&ds_path)?;
    let dims = cfg.family.dims()?;
    if ds.header.dims != dims {
        return Err(usage(format!(
            "dataset at {} has dimensions {:?}, configuration asks for {:?}",
            ds_path.display(),
            ds.header.dims,
            dims
        )));
    }
    let (_, idx) = SplitIndices::from_text(&std::fs::read_to_string(&split_path)?)?;
    if [&idx.train, &idx.eval, &idx.calib, &idx.test].iter().flat_map(|v| v.iter()).any(|&i| i >= ds.samples.len()) {
        return Err(usage(format!("split file {} does not match the dataset", split_path.display())));
    }
    let family = ds.family()?;
    Ok((family, idx.apply(&ds.samples)))
}

fn check_gspo(family: &HierarchicalFamily, kind: LossKind) -> CliResult<()> {
    if kind == LossKind::GspoPlus {
        let n = family.n_upper();
        if n >= 64 || (1u64 << n) > GSPO_GUARD {
            return Err(usage(format!(
                "the gspo loss enumerates all 2^{n} upper decisions, above the limit of {GSPO_GUARD}; use asl, z or fy"
            )));
        }
    }
    Ok(())
}

fn train_one(cfg: &RunConfig, family: &HierarchicalFamily, splits: &Splits, kind: LossKind) -> CliResult<Mlp> {
    check_gspo(family, kind)?;
    let tc = cfg.train_config(kind);
    let template = cost_predictor(family, &tc.hidden, cfg.seed)?;
    let (chosen, trained, runs) = grid_search(&template, family, &splits.train, &splits.eval, &tc)?;
    let dir = cfg.model_dir();
    trained.mlp.save(&cfg.predictor_path(kind))?;
    let mut w = csv::Writer::from_path(dir.join(format!("curve_{}_{}.csv", family.kind().name(), kind.name())))?;
    w.write_record(["step", "train_loss", "eval_regret", "best_eval_regret", "wall_time"])?;
    for p in &trained.curve {
        w.write_record([
            p.step.to_string(),
            p.train_loss.to_string(),
            p.eval_regret.to_string(),
            p.best_eval_regret.to_string(),
            p.wall_time.to_string(),
        ])?;
    }
    w.flush()?;
    let mut g = csv::Writer::from_path(dir.join(format!("grid_{}_{}.csv", family.kind().name(), kind.name())))?;
    g.write_record(["learning_rate", "best_eval_regret", "error"])?;
    for r in &runs {
        match &r.result {
            Ok(t) => g.write_record([r.learning_rate.to_string(), t.best_eval_regret.to_string(), String::new()])?,
            Err(e) => g.write_record([r.learning_rate.to_string(), String::new(), e.clone()])?,
        }
    }
    g.flush()?;
    println!(
        "{}: selected learning rate {} (eval regret {:.6}, best step {} of {})",
        kind.name(),
        chosen.learning_rate,
        trained.best_eval_regret,
        trained.best_step,
        trained.steps
    );
    Ok(trained.mlp)
}

/// Trains the configured loss and, for the comparison roster, any other
/// loss whose model is missing.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<()> {
    let (family, splits) = load_data(cfg)?;
    check_gspo(&family, cfg.loss.kind)?;
    std::fs::create_dir_all(cfg.model_dir())?;
    train_one(cfg, &family, &splits, cfg.loss.kind)?;
    for &kind in &cfg.evaluate.losses {
        if kind != cfg.loss.kind && !cfg.predictor_path(kind).exists() {
            train_one(cfg, &family, &splits, kind)?;
        }
    }
    let (dp, _) = direct_prediction_train(&family, &splits.train, &DirectConfig { seed: cfg.seed, ..cfg.direct.clone() })?;
    dp.save(&cfg.model_dir().join("direct.toml"))?;
    Ok(())
}

fn load_predictor(cfg: &RunConfig, kind: LossKind) -> CliResult<Mlp> {
    let path = cfg.predictor_path(kind);
    require(&path, "trained predictor")?;
    Ok(Mlp::load(&path)?)
}

pub fn cmd_calibrate(cfg: &RunConfig) -> CliResult<()> {
    let (family, splits) = load_data(cfg)?;
    let predictor = load_predictor(cfg, cfg.loss.kind)?;
    let ccfg = ConformalTrainConfig { seed: cfg.seed, ..cfg.conformal.clone() };
    let psi = value_network(&family, &ccfg.hidden, cfg.seed)?;
    let mut model = train_conformal(psi, &family, &splits.eval, &predictor, &ccfg, cfg.alpha, cfg.convention)?;
    let cal = calibrate(&mut model, &family, &splits.calib, &predictor, cfg.alpha)?;
    model.save(&cfg.conformal_path())?;
    cal.save(&cfg.calibration_path())?;
    println!(
        "calibrated {} convention on M = {}: q_alpha = {}, coverage target = {:.6}",
        cal.convention, cal.m, cal.q_alpha, cal.coverage_target
    );
    Ok(())
}

fn load_conformal(cfg: &RunConfig) -> CliResult<ConformalModel> {
    let model_path = cfg.conformal_path();
    let cal_path = cfg.calibration_path();
    if !model_path.exists() || !cal_path.exists() {
        return Err(usage(format!(
            "conformal model is not calibrated: missing {} (run `calibrate` first)",
            if model_path.exists() { cal_path.display() } else { model_path.display() }
        )));
    }
    let mut model = ConformalModel::load(&model_path)?;
    model.calibration = Some(Calibration::load(&cal_path)?);
    Ok(model)
}

fn read_thetas(path: &Path, dim: usize) -> CliResult<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| usage(format!("{}:{}: bad number `{s}`", path.display(), n + 1))))
            .collect::<CliResult<_>>()?;
        if v.len() != dim {
            return Err(usage(format!("{}:{}: expected {dim} values, got {}", path.display(), n + 1, v.len())));
        }
        out.push(v);
    }
    Ok(out)
}

fn write_certificates(path: &Path, rows: &[CertificateRow]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["theta_id", "l", "u", "h", "omega", "z_if_known", "valid_flag"])?;
    for r in rows {
        w.write_record([
            r.theta_id.to_string(),
            r.l.to_string(),
            r.u.to_string(),
            r.h.to_string(),
            r.omega.to_string(),
            r.z.map(|z| z.to_string()).unwrap_or_default(),
            r.valid.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_bound(cfg: &RunConfig, theta_file: &Path, output: Option<&Path>) -> CliResult<()> {
    let dims = cfg.family.dims()?;
    let family = HierarchicalFamily::generate(dims, cfg.seed)?;
    let model = load_conformal(cfg)?;
    let predictor = load_predictor(cfg, cfg.loss.kind)?;
    let thetas = read_thetas(theta_file, family.param_dim())?;
    let mut rows = Vec::with_capacity(thetas.len());
    for (i, theta) in thetas.iter().enumerate() {
        let cert = online_bound(&model, &family, theta, &predictor)?;
        rows.push(CertificateRow::new(i, &cert, None));
    }
    let path = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.results_dir().join(format!("certificates_{}.csv", family.kind().name())));
    write_certificates(&path, &rows)?;
    println!("wrote {} certificates to {}", rows.len(), path.display());
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig) -> CliResult<()> {
    let (family, splits) = load_data(cfg)?;
    let kind = family.kind();
    let mut losses = vec![cfg.loss.kind];
    losses.extend(cfg.evaluate.losses.iter().copied().filter(|k| *k != cfg.loss.kind));
    let predictors: Vec<(LossKind, Mlp)> =
        losses.iter().map(|&k| Ok((k, load_predictor(cfg, k)?))).collect::<CliResult<_>>()?;
    let dp_path = cfg.model_dir().join("direct.toml");
    require(&dp_path, "direct-prediction model")?;
    let dp = Mlp::load(&dp_path)?;
    let conformal = load_conformal(cfg)?;

    let mut methods: Vec<Method> = vec![
        Method::NearestNeighbor { train_set: &splits.train },
        Method::DirectPrediction { mlp: &dp },
    ];
    for (id, config) in solver_baselines() {
        methods.push(Method::Solver { id: id.to_string(), config });
    }
    for (k, mlp) in &predictors {
        methods.push(Method::Learned { id: k.name().to_string(), predictor: mlp });
    }
    let dir = cfg.results_dir();
    let mut results: Vec<MethodResult> = Vec::new();
    for m in &methods {
        log::info!("evaluating {}", m.id());
        let r = evaluate_method(&family, m, &splits.test)?;
        write_method_csv(&dir, kind, &r)?;
        results.push(r);
    }
    let report = compute_metrics(&results);
    write_summary_csv(&dir.join(format!("summary_{}.csv", kind.name())), &report)?;

    let (metrics, rows) = coverage_eval(&conformal, &family, &splits.test, &predictors[0].1)?;
    write_certificates(&dir.join(format!("certificates_{}.csv", kind.name())), &rows)?;
    let mut w = csv::Writer::from_path(dir.join(format!("coverage_{}.csv", kind.name())))?;
    w.write_record([
        "loss",
        "convention",
        "alpha",
        "q_alpha",
        "coverage_target",
        "r_rel_plus",
        "r_rel_minus",
        "r_percent",
        "empirical_coverage",
        "used",
        "skipped",
    ])?;
    let cal = conformal.calibration.as_ref().expect("loaded with calibration");
    w.write_record([
        cfg.loss.kind.name().to_string(),
        cal.convention.to_string(),
        cal.alpha.to_string(),
        cal.q_alpha.to_string(),
        cal.coverage_target.to_string(),
        metrics.r_rel_plus.to_string(),
        metrics.r_rel_minus.to_string(),
        metrics.r_percent.to_string(),
        metrics.empirical_coverage.to_string(),
        metrics.used.to_string(),
        metrics.skipped.to_string(),
    ])?;
    w.flush()?;
    print_summary(&std::fs::read_to_string(dir.join(format!("summary_{}.csv", kind.name())))?);
    println!(
        "conformal bound: r_rel+ = {:.4}, r_rel- = {:.4}, invalid = {:.3}, coverage = {:.3} (target {:.4})",
        metrics.r_rel_plus, metrics.r_rel_minus, metrics.r_percent, metrics.empirical_coverage, cal.coverage_target
    );
    Ok(())
}

fn print_summary(csv_text: &str) {
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(_) => return,
    };
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(m), Some(ra), Some(rn), Some(mt), Some(md)) =
        (col("method_id"), col("r_abs"), col("r_norm"), col("mean_time_total"), col("median_time_total"))
    else {
        return;
    };
    println!("{:<8} {:>14} {:>12} {:>12} {:>12}", "method", "R_ABS", "R_NORM", "mean s", "median s");
    for rec in reader.records().flatten() {
        let num = |i: usize| rec[i].parse::<f64>().unwrap_or(f64::NAN);
        println!("{:<8} {:>14.6} {:>12.6} {:>12.6} {:>12.6}", &rec[m], num(ra), num(rn), num(mt), num(md));
    }
}

pub fn cmd_report(cfg: &RunConfig) -> CliResult<()> {
    let dir = cfg.results_dir();
    let kind = cfg.family.kind.name();
    let summary = dir.join(format!("summary_{kind}.csv"));
    require(&summary, "evaluation summary")?;
    print_summary(&std::fs::read_to_string(&summary)?);
    let coverage = dir.join(format!("coverage_{kind}.csv"));
    if coverage.exists() {
        let mut reader = csv::Reader::from_path(&coverage)?;
        let headers = reader.headers()?.clone();
        for rec in reader.records() {
            let rec = rec?;
            let fields: Vec<String> = headers.iter().zip(rec.iter()).map(|(h, v)| format!("{h}={v}")).collect();
            println!("{}", fields.join(" "));
        }
    }
    Ok(())
}
