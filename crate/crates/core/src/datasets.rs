//! Labeled datasets, the four-way split and their text format.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::milp::{solve_milp, SolveConfig, SolveStatus};
use crate::problems::{FamilyDims, FamilyKind, HierarchicalFamily};
use crate::{Error, Result};

/// Discards above this fraction of attempts fail the generation.
pub const MAX_DISCARD_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub theta_id: usize,
    pub theta: Vec<f64>,
    pub x_star: Vec<f64>,
    pub y_star: Vec<f64>,
    pub z: f64,
    /// Relaxation bound.
    pub l: f64,
    /// Absolute gap proven by the labeling solve.
    pub label_gap: f64,
}

impl LabeledSample {
    pub fn check(&self, family: &HierarchicalFamily) -> Result<()> {
        let (c, d) = family.costs(&self.theta);
        let value: f64 = c.iter().zip(&self.x_star).map(|(c, x)| c * x).sum::<f64>()
            + d.iter().zip(&self.y_star).map(|(d, y)| d * y).sum::<f64>();
        if (self.z - value).abs() > 1e-6 * self.z.abs().max(1.0) {
            return Err(Error::Parse(format!(
                "sample {}: z = {} but the stored solution costs {value}",
                self.theta_id, self.z
            )));
        }
        if self.l > self.z + 1e-6 {
            return Err(Error::Parse(format!(
                "sample {}: relaxation bound {} above z = {}",
                self.theta_id, self.l, self.z
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub dims: FamilyDims,
    pub family_seed: u64,
    /// Seed of the θ stream.
    pub seed: u64,
    pub gap_tolerance: f64,
    pub time_limit: Option<f64>,
    pub attempts: usize,
    pub discarded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<LabeledSample>,
}

fn label(family: &HierarchicalFamily, theta_id: usize, theta: Vec<f64>, config: &SolveConfig) -> Result<Option<LabeledSample>> {
    let sol = solve_milp(&family.build_master(&theta)?, config)?;
    log::debug!(
        "sample {theta_id}: {:?} after {} nodes in {:.3} s",
        sol.status,
        sol.node_count,
        sol.wall_time
    );
    if sol.status != SolveStatus::Optimal {
        log::warn!("discarding sample {theta_id}: master solve ended {:?}", sol.status);
        return Ok(None);
    }
    let values = sol.values().expect("optimal solve has values");
    let (x, y) = family.split_solution(values);
    let l = family.relaxation_bound(&theta)?;
    Ok(Some(LabeledSample {
        theta_id,
        x_star: x.to_vec(),
        y_star: y.to_vec(),
        z: sol.objective_value,
        l,
        label_gap: sol.proven_gap(),
        theta,
    }))
}

/// Default labeling settings: gap 1e-4 and a 100 s limit.
pub fn label_config() -> SolveConfig {
    SolveConfig::default()
}

/// Draws θ from a stream seeded by `seed` and labels each draw with an
/// optimal master solve until `total` samples are kept.
pub fn generate_dataset(
    family: &HierarchicalFamily,
    total: usize,
    seed: u64,
    config: &SolveConfig,
) -> Result<Dataset> {
    generate_dataset_with_jobs(family, total, seed, config, 1)
}

pub fn generate_dataset_with_jobs(
    family: &HierarchicalFamily,
    total: usize,
    seed: u64,
    config: &SolveConfig,
    jobs: usize,
) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut samples = Vec::with_capacity(total);
    let mut attempts = 0;
    let mut discarded = 0;
    while samples.len() < total {
        let want = total - samples.len();
        let batch: Vec<(usize, Vec<f64>)> = (0..want)
            .map(|i| (attempts + i, family.sample_theta(&mut rng)))
            .collect();
        attempts += want;
        let labeled: Vec<Result<Option<LabeledSample>>> = pool.install(|| {
            batch
                .into_par_iter()
                .map(|(id, theta)| label(family, id, theta, config))
                .collect()
        });
        for r in labeled {
            match r? {
                Some(s) => samples.push(s),
                None => discarded += 1,
            }
        }
        if discarded as f64 > MAX_DISCARD_FRACTION * attempts as f64 {
            return Err(Error::TooManyDiscards { discarded, total: attempts });
        }
    }
    if discarded > 0 {
        log::info!("{discarded} of {attempts} samples discarded");
    }
    Ok(Dataset {
        header: DatasetHeader {
            dims: family.dims(),
            family_seed: family.seed,
            seed,
            gap_tolerance: config.gap_tolerance,
            time_limit: config.time_limit.map(|t| t.as_secs_f64()),
            attempts,
            discarded,
        },
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: usize,
    pub eval: usize,
    pub calib: usize,
    pub test: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn desk(seed: u64) -> Self {
        Self { train: 500, eval: 50, calib: 50, test: 100, seed }
    }

    pub fn total(&self) -> usize {
        self.train + self.eval + self.calib + self.test
    }
}

/// Positions into the dataset's sample list for each part.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
    pub calib: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<LabeledSample>,
    pub eval: Vec<LabeledSample>,
    pub calib: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<SplitIndices> {
    if [spec.train, spec.eval, spec.calib, spec.test].contains(&0) {
        return Err(Error::InvalidConfig("split sizes must be positive".into()));
    }
    if spec.total() > n {
        return Err(Error::InsufficientSamples { needed: spec.total(), available: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut rest = order.into_iter();
    let mut take = |k: usize| rest.by_ref().take(k).collect::<Vec<_>>();
    Ok(SplitIndices {
        train: take(spec.train),
        eval: take(spec.eval),
        calib: take(spec.calib),
        test: take(spec.test),
    })
}

/// Deterministic shuffle, then contiguous train/eval/calib/test slices.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    let idx = split_indices(dataset.samples.len(), spec)?;
    Ok(idx.apply(&dataset.samples))
}

impl SplitIndices {
    pub fn apply(&self, samples: &[LabeledSample]) -> Splits {
        let pick = |ids: &[usize]| ids.iter().map(|&i| samples[i].clone()).collect();
        Splits {
            train: pick(&self.train),
            eval: pick(&self.eval),
            calib: pick(&self.calib),
            test: pick(&self.test),
        }
    }

    pub fn to_text(&self, spec: &SplitSpec) -> String {
        let mut out = format!(
            "seed = {}\nsizes = {} {} {} {}\n",
            spec.seed, spec.train, spec.eval, spec.calib, spec.test
        );
        for (name, ids) in [("train", &self.train), ("eval", &self.eval), ("calib", &self.calib), ("test", &self.test)] {
            let list: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(out, "{name} = {}", list.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<(SplitSpec, Self)> {
        let kv = key_values(text.lines())?;
        let get = |k: &str| kv.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str()).ok_or_else(|| Error::Parse(format!("splits: missing `{k}`")));
        let ids = |k: &str| -> Result<Vec<usize>> { get(k)?.split_whitespace().map(|t| parse_num(t)).collect() };
        let sizes: Vec<usize> = get("sizes")?.split_whitespace().map(parse_num).collect::<Result<_>>()?;
        if sizes.len() != 4 {
            return Err(Error::Parse("splits: `sizes` needs four entries".into()));
        }
        let spec = SplitSpec {
            train: sizes[0],
            eval: sizes[1],
            calib: sizes[2],
            test: sizes[3],
            seed: parse_num(get("seed")?)?,
        };
        let idx = Self { train: ids("train")?, eval: ids("eval")?, calib: ids("calib")?, test: ids("test")? };
        Ok((spec, idx))
    }
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse(format!("cannot parse `{s}`")))
}

fn key_values<'a>(lines: impl Iterator<Item = &'a str>) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for line in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected `key = value`, got `{line}`")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn parse_f64(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Parse(format!("cannot parse number `{s}`")))
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ")
}

const RECORDS_MARKER: &str = "---";

impl Dataset {
    pub fn family(&self) -> Result<HierarchicalFamily> {
        HierarchicalFamily::generate(self.header.dims, self.header.family_seed)
    }

    /// Header block, a marker line, then one record per line:
    /// `theta_id | z | l | label_gap | θ | x⋆ | y⋆`.
    pub fn to_text(&self) -> String {
        let h = &self.header;
        let mut out = String::from("# hmip dataset\n");
        let _ = writeln!(out, "family = {}", h.dims.kind.name());
        let _ = writeln!(out, "dims = {} {}", h.dims.a, h.dims.b);
        let _ = writeln!(out, "param_dim = {}", h.dims.param_dim);
        let _ = writeln!(out, "family_seed = {}", h.family_seed);
        let _ = writeln!(out, "seed = {}", h.seed);
        let _ = writeln!(out, "gap_tolerance = {}", fmt_f64(h.gap_tolerance));
        let _ = writeln!(out, "time_limit = {}", h.time_limit.map_or("none".into(), fmt_f64));
        let _ = writeln!(out, "attempts = {}", h.attempts);
        let _ = writeln!(out, "discarded = {}", h.discarded);
        let _ = writeln!(out, "samples = {}", self.samples.len());
        out.push_str(RECORDS_MARKER);
        out.push('\n');
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{} | {} | {} | {} | {} | {} | {}",
                s.theta_id,
                fmt_f64(s.z),
                fmt_f64(s.l),
                fmt_f64(s.label_gap),
                fmt_vec(&s.theta),
                fmt_vec(&s.x_star),
                fmt_vec(&s.y_star)
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (head, body) = text
            .split_once(&format!("\n{RECORDS_MARKER}\n"))
            .ok_or_else(|| Error::Parse("dataset: missing record marker".into()))?;
        let kv = key_values(head.lines())?;
        let get = |k: &str| {
            kv.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Parse(format!("dataset: missing `{k}`")))
        };
        let kind: FamilyKind = get("family")?.parse()?;
        let ab: Vec<usize> = get("dims")?.split_whitespace().map(parse_num).collect::<Result<_>>()?;
        if ab.len() != 2 {
            return Err(Error::Parse("dataset: `dims` needs two entries".into()));
        }
        let dims = FamilyDims { kind, a: ab[0], b: ab[1], param_dim: parse_num(get("param_dim")?)? };
        let time_limit = match get("time_limit")? {
            "none" => None,
            t => Some(parse_f64(t)?),
        };
        let header = DatasetHeader {
            dims,
            family_seed: parse_num(get("family_seed")?)?,
            seed: parse_num(get("seed")?)?,
            gap_tolerance: parse_f64(get("gap_tolerance")?)?,
            time_limit,
            attempts: parse_num(get("attempts")?)?,
            discarded: parse_num(get("discarded")?)?,
        };
        let expected: usize = parse_num(get("samples")?)?;
        let vec = |s: &str| -> Result<Vec<f64>> { s.split_whitespace().map(parse_f64).collect() };
        let mut samples = Vec::with_capacity(expected);
        for line in body.lines().filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split('|').map(str::trim).collect();
            if f.len() != 7 {
                return Err(Error::Parse(format!("dataset record has {} fields, expected 7", f.len())));
            }
            samples.push(LabeledSample {
                theta_id: parse_num(f[0])?,
                z: parse_f64(f[1])?,
                l: parse_f64(f[2])?,
                label_gap: parse_f64(f[3])?,
                theta: vec(f[4])?,
                x_star: vec(f[5])?,
                y_star: vec(f[6])?,
            });
        }
        if samples.len() != expected {
            return Err(Error::Parse(format!(
                "dataset header announces {expected} samples, found {}",
                samples.len()
            )));
        }
        Ok(Self { header, samples })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Loads and re-checks every sample against its regenerated family.
    pub fn load(path: &Path) -> Result<Self> {
        let ds = Self::from_text(&std::fs::read_to_string(path)?)?;
        let family = ds.family()?;
        for s in &ds.samples {
            s.check(&family)?;
        }
        Ok(ds)
    }

    pub fn solve_config(&self) -> SolveConfig {
        SolveConfig {
            gap_tolerance: self.header.gap_tolerance,
            time_limit: self.header.time_limit.map(Duration::from_secs_f64),
            ..SolveConfig::default()
        }
    }
}

/// `data/<family>/<seed>/`.
pub fn dataset_dir(root: &Path, kind: FamilyKind, seed: u64) -> std::path::PathBuf {
    root.join("data").join(kind.name()).join(seed.to_string())
}
