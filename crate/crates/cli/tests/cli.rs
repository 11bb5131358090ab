use std::path::Path;
use std::process::{Command, Output};

use hmip_cli::RunConfig;

fn hmip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmip")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = r#"
seed = 3
alpha = 0.1

[family]
kind = "facility"
I = 4
J = 6
param_dim = 5

[split]
train = 40
eval = 20
calib = 50
test = 15

[train]
epochs = 3
lr_grid = [0.001, 0.01]
hidden = [8]

[conformal]
hidden = [8]
epochs = 20

[direct]
hidden = [8]
epochs = 5
"#;

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, TINY).unwrap();
    path.to_str().unwrap().to_string()
}

fn run_ok(args: &[&str]) -> String {
    let o = hmip(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    stdout(&o)
}

#[test]
fn config_defaults_and_overrides() {
    let cfg = RunConfig::default();
    assert_eq!(cfg.family.dims().unwrap().a, 20);
    assert_eq!(cfg.split_spec().total(), 700);
    let parsed = RunConfig::from_toml(TINY).unwrap();
    assert_eq!(parsed.family.dims().unwrap().b, 6);
    assert_eq!(parsed.train.epochs, 3);
    assert!(RunConfig::from_toml("[family]\nblocks = 3\n").is_err());
    assert!(RunConfig::from_toml("sed = 3\n").is_err());

    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let text = run_ok(&["config", "--config", &cfg, "--seed", "9", "--loss", "fy", "--omega", "2.5", "--alpha", "0.2"]);
    let resolved = RunConfig::from_toml(&text).unwrap();
    assert_eq!(resolved.seed, 9);
    assert_eq!(resolved.loss.omega, 2.5);
    assert_eq!(resolved.alpha, 0.2);
    assert_eq!(resolved.family.i, Some(4));
    for loss in ["z", "asl", "fy", "gspo"] {
        run_ok(&["config", "--loss", loss]);
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = hmip(&["generate", "--family", "knapsack", "--J", "0", "--k", "10", "--out", out]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = hmip(&["train", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dataset.txt"), "{}", stderr(&o));
    let o = hmip(&["generate", "--alpha", "1.5", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    let o = hmip(&["generate", "--convention", "sideways", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    let o = hmip(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    let o = hmip(&["evaluate", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn generate_creates_missing_directories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("a/b/c");
    let text = run_ok(&["generate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(text.contains("generated 125 samples"), "{text}");
    let data = out.join("data/facility/3");
    assert!(data.join("dataset.txt").exists());
    assert!(data.join("splits.txt").exists());
}

#[test]
fn gspo_is_rejected_above_the_guard() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run_ok(&["generate", "--family", "knapsack", "--J", "17", "--k", "2", "--param-dim", "3", "--out", out]);
    let o = hmip(&["train", "--family", "knapsack", "--J", "17", "--k", "2", "--param-dim", "3", "--loss", "gspo", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gspo"), "{}", stderr(&o));
    assert!(stderr(&o).contains("65536"), "{}", stderr(&o));
}

fn csv_without_time(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    let keep: Vec<usize> = (0..headers.len()).filter(|&i| !headers[i].contains("time")).collect();
    let mut rows = vec![keep.iter().map(|&i| headers[i].to_string()).collect()];
    for rec in r.records() {
        let rec = rec.unwrap();
        rows.push(keep.iter().map(|&i| rec[i].to_string()).collect());
    }
    rows
}

#[test]
fn tiny_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();
    let base = ["--config", cfg.as_str(), "--out", out];
    let with = |cmd: &str, extra: &[&str]| -> Vec<String> {
        let mut v = vec![cmd.to_string()];
        v.extend(base.iter().map(|s| s.to_string()));
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };

    run_ok(&args(&with("generate", &[])));
    let text = run_ok(&args(&with("train", &["--loss", "asl", "--nu", "1.0"])));
    assert!(text.contains("selected learning rate"), "{text}");
    let models = Path::new(out).join("models/facility/3");
    for k in ["asl", "z", "fy"] {
        assert!(models.join(format!("predictor_{k}.toml")).exists());
    }
    let curve = csv_without_time(&models.join("curve_facility_asl.csv"));
    assert!(curve.len() > 2);

    let theta_file = dir.path().join("thetas.txt");
    std::fs::write(&theta_file, "0.1 0.2 -0.3 0.4 0.5\n-1 0 1 0.5 0.25\n").unwrap();
    let o = hmip(&args(&with("bound", &["--theta-file", theta_file.to_str().unwrap()])));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("calibrate"));

    let text = run_ok(&args(&with("calibrate", &[])));
    assert!(text.contains(&format!("{:.6}", 1.0 - 5.0 / 51.0)), "{text}");
    let text = run_ok(&args(&with("calibrate", &["--convention", "paper"])));
    assert!(text.contains("paper convention"), "{text}");
    let corrected = hmip_core::conformal::Calibration::load(&models.join("calibration_facility_asl_corrected.txt")).unwrap();
    let paper = hmip_core::conformal::Calibration::load(&models.join("calibration_facility_asl_paper.txt")).unwrap();
    assert_eq!(corrected.scores, paper.scores);
    let mut sorted = corrected.scores.clone();
    sorted.sort_by(f64::total_cmp);
    assert_eq!(corrected.q_alpha.to_bits(), sorted[45].to_bits());
    assert_eq!(paper.q_alpha.to_bits(), sorted[4].to_bits());

    let certs = dir.path().join("certs.csv");
    run_ok(&args(&with("bound", &["--theta-file", theta_file.to_str().unwrap(), "--output", certs.to_str().unwrap()])));
    let rows = csv_without_time(&certs);
    assert_eq!(rows.len(), 3);
    for r in &rows[1..] {
        let (l, u, omega): (f64, f64, f64) = (r[1].parse().unwrap(), r[2].parse().unwrap(), r[4].parse().unwrap());
        assert!(l <= omega && omega <= u, "{r:?}");
    }

    let text = run_ok(&args(&with("evaluate", &[])));
    assert!(text.contains("conformal bound"), "{text}");
    let results = Path::new(out).join("results/facility/3");
    let summary = csv_without_time(&results.join("summary_facility.csv"));
    let ids: Vec<&str> = summary[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(ids, ["nn", "dp", "exact", "feas1", "feas3", "asl", "z", "fy"]);
    let r_abs = summary[0].iter().position(|h| h == "r_abs").unwrap();
    assert_eq!(summary[3][r_abs].parse::<f64>().unwrap(), 0.0);
    for m in &ids {
        assert!(results.join(format!("results_facility_{m}.csv")).exists());
        assert!(results.join(format!("trajectory_facility_{m}.csv")).exists());
    }
    let report = run_ok(&args(&with("report", &[])));
    assert!(report.contains("feas3") && report.contains("empirical_coverage"), "{report}");

    let snapshot = |root: &Path| -> Vec<(String, Vec<Vec<String>>)> {
        let mut files: Vec<_> = walk(root).into_iter().filter(|p| p.extension().is_some_and(|e| e == "csv")).collect();
        files.sort();
        files.iter().map(|p| (p.strip_prefix(root).unwrap().display().to_string(), csv_without_time(p))).collect()
    };
    let first = snapshot(Path::new(out));
    let out2 = dir.path().join("run2");
    let out2 = out2.to_str().unwrap();
    for cmd in ["generate", "train", "calibrate", "evaluate"] {
        run_ok(&[cmd, "--config", cfg.as_str(), "--out", out2]);
    }
    let second = snapshot(Path::new(out2));
    let first: Vec<_> = first.into_iter().filter(|(p, _)| !p.contains("_paper")).collect();
    assert_eq!(first.len(), second.len());
    assert_eq!(first, second);
    assert_eq!(
        std::fs::read(Path::new(out).join("data/facility/3/dataset.txt")).unwrap(),
        std::fs::read(Path::new(out2).join("data/facility/3/dataset.txt")).unwrap()
    );
}

fn args(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn walk(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out
}
