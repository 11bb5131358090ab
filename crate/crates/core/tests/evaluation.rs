use hmip_core::datasets::{generate_dataset, label_config, LabeledSample};
use hmip_core::evaluation::{
    compute_metrics, direct_loss_and_gradient, direct_prediction_predict, direct_prediction_train, evaluate_method,
    nearest_index, nearest_neighbor_predict, project_onto_upper, results_path, run_learned, run_solver,
    score_outputs, solver_baselines, trajectory_path, write_method_csv, DirectConfig, Method, MethodOutput,
};
use hmip_core::milp::feasible_points;
use hmip_core::predictor::{cost_predictor, Mlp, OutputActivation};
use hmip_core::problems::{FamilyDims, FamilyKind, HierarchicalFamily};
use hmip_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn knapsack(seed: u64) -> HierarchicalFamily {
    HierarchicalFamily::generate(FamilyDims::knapsack(8, 3).with_param_dim(6), seed).unwrap()
}

fn facility(seed: u64) -> HierarchicalFamily {
    HierarchicalFamily::generate(FamilyDims::facility(4, 8).with_param_dim(6), seed).unwrap()
}

fn labeled(fam: &HierarchicalFamily, n: usize, seed: u64) -> Vec<LabeledSample> {
    generate_dataset(fam, n, seed, &label_config()).unwrap().samples
}

fn sample(theta_id: usize, z: f64) -> LabeledSample {
    LabeledSample { theta_id, theta: vec![], x_star: vec![], y_star: vec![], z, l: z, label_gap: 0.0 }
}

#[test]
fn nearest_neighbor_reproduces_a_feasible_label() {
    for fam in [knapsack(1), facility(1)] {
        let train = labeled(&fam, 15, 3);
        for (i, s) in train.iter().enumerate() {
            assert_eq!(nearest_index(&train, &s.theta).unwrap(), i);
            let (x, _) = nearest_neighbor_predict(&train, &fam, &s.theta).unwrap();
            assert_eq!(x, s.x_star);
        }
        assert!(matches!(nearest_neighbor_predict(&[], &fam, &train[0].theta), Err(Error::EmptyTrainSet)));
    }
}

#[test]
fn nearest_ties_take_the_first_index() {
    let mut a = sample(0, 1.0);
    a.theta = vec![1.0, 0.0];
    let mut b = sample(1, 1.0);
    b.theta = vec![-1.0, 0.0];
    assert_eq!(nearest_index(&[a, b], &[0.0, 0.0]).unwrap(), 0);
}

#[test]
fn zero_anchor_projects_to_zero() {
    let fam = knapsack(2);
    let (x, _) = project_onto_upper(&fam, &vec![0.0; fam.n_upper()]).unwrap();
    assert!(x.iter().all(|&v| v == 0.0));
}

#[test]
fn linearized_projection_is_the_quadratic_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..20 {
        let fam = if seed % 2 == 0 {
            HierarchicalFamily::generate(FamilyDims::knapsack(10, 2).with_param_dim(4), seed).unwrap()
        } else {
            HierarchicalFamily::generate(FamilyDims::facility(3, 8).with_param_dim(4), seed).unwrap()
        };
        let points = feasible_points(&fam.upper_problem(vec![0.0; fam.n_upper()]).unwrap(), 1 << 12).unwrap();
        for _ in 0..5 {
            let t: Vec<f64> = (0..fam.n_upper()).map(|_| rng.random_range(-0.5..1.5)).collect();
            let dist = |x: &[f64]| x.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let best = points.iter().map(|p| dist(p)).fold(f64::INFINITY, f64::min);
            let (x, _) = project_onto_upper(&fam, &t).unwrap();
            assert!(fam.check_upper_feasible(&x).is_ok());
            assert!((dist(&x) - best).abs() < 1e-9, "seed {seed}");
        }
    }
}

#[test]
fn projection_of_random_predictions_is_feasible() {
    let fam = facility(5);
    let mlp = Mlp::new(&[fam.param_dim(), 8, fam.n_upper()], OutputActivation::Identity, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..500 {
        let theta = fam.sample_theta(&mut rng);
        let (x, _) = direct_prediction_predict(&fam, &mlp, &theta).unwrap();
        fam.check_upper_feasible(&x).unwrap();
    }
}

#[test]
fn direct_prediction_learns_constant_labels() {
    let fam = knapsack(3);
    let mut train = labeled(&fam, 12, 7);
    let target = train.iter().map(|s| s.x_star.clone()).max_by_key(|x| x.iter().filter(|&&v| v > 0.5).count()).unwrap();
    assert!(target.iter().any(|&v| v > 0.5));
    for s in &mut train {
        s.x_star = target.clone();
    }
    let cfg = DirectConfig { hidden: vec![16], epochs: 300, learning_rate: 0.01, ..Default::default() };
    let (mlp, hist) = direct_prediction_train(&fam, &train, &cfg).unwrap();
    assert!(*hist.last().unwrap() < 1e-4, "{:?}", hist.last());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (x, _) = direct_prediction_predict(&fam, &mlp, &fam.sample_theta(&mut rng)).unwrap();
    assert_eq!(x, target);
}

#[test]
fn direct_gradient_matches_finite_differences() {
    let fam = knapsack(4);
    let train = labeled(&fam, 5, 1);
    let refs: Vec<&LabeledSample> = train.iter().collect();
    let mut checked = 0;
    for seed in 0..20 {
        let mlp = Mlp::new(&[fam.param_dim(), 6, fam.n_upper()], OutputActivation::Identity, seed).unwrap();
        let kink = train.iter().any(|s| {
            let t = mlp.forward_trace(&s.theta).unwrap();
            t.pre_activations().iter().flatten().any(|z| z.abs() < 1e-4)
        });
        if kink {
            continue;
        }
        let (_, g) = direct_loss_and_gradient(&mlp, &refs).unwrap();
        let analytic = g.flatten();
        let params = mlp.params();
        let eps = 1e-6;
        let mut diff = 0.0;
        let mut norm = 0.0;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += eps;
            let mut a = mlp.clone();
            a.set_params(&p).unwrap();
            p[i] -= 2.0 * eps;
            let mut b = mlp.clone();
            b.set_params(&p).unwrap();
            let num = (direct_loss_and_gradient(&a, &refs).unwrap().0 - direct_loss_and_gradient(&b, &refs).unwrap().0)
                / (2.0 * eps);
            diff += (num - analytic[i]).powi(2);
            norm += num * num;
        }
        assert!(diff.sqrt() / norm.sqrt().max(1e-8) <= 1e-4, "seed {seed}");
        checked += 1;
    }
    assert!(checked >= 15);
}

#[test]
fn solver_baselines_behave() {
    for fam in [knapsack(6), facility(6)] {
        let test = labeled(&fam, 10, 8);
        let configs = solver_baselines();
        let results: Vec<_> = configs
            .iter()
            .map(|(id, cfg)| evaluate_method(&fam, &Method::Solver { id: id.to_string(), config: cfg.clone() }, &test).unwrap())
            .collect();
        for r in &results[0].records {
            assert_eq!(r.regret, 0.0);
        }
        for (a, b) in results[1].records.iter().zip(&results[2].records) {
            assert!(a.regret >= b.regret - 1e-12);
        }
        for r in &results {
            assert!(r.records.iter().all(|x| x.feasible));
            for s in &test {
                let traj: Vec<f64> = r
                    .trajectory
                    .iter()
                    .filter(|p| p.theta_id == s.theta_id)
                    .map(|p| p.incumbent_objective)
                    .collect();
                assert!(!traj.is_empty());
                assert!(traj.windows(2).all(|w| w[1] <= w[0] + 1e-12));
            }
        }
        let out = run_solver(&fam, &configs[1].1, &test[0]).unwrap();
        assert_eq!(out.trajectory.len(), 1);
    }
}

#[test]
fn learned_timing_is_sequential() {
    let fam = facility(7);
    let test = labeled(&fam, 5, 2);
    let predictor = cost_predictor(&fam, &[8], 0).unwrap();
    let result = evaluate_method(&fam, &Method::Learned { id: "asl".into(), predictor: &predictor }, &test).unwrap();
    for (r, s) in result.records.iter().zip(&test) {
        assert_eq!(r.wall_time_total, r.wall_time_upper + r.wall_time_lower);
        assert!(r.feasible);
        assert!(r.regret >= -1e-4 * s.z.abs().max(1.0));
        assert!((r.true_cost - fam.true_cost(&s.theta, &r.x_hat).unwrap()).abs() < 1e-9);
    }
    let out = run_learned(&fam, &predictor, &test[0]).unwrap();
    assert!(out.lower_time > 0.0);
}

fn output(theta_id: usize, cost: f64) -> MethodOutput {
    MethodOutput { theta_id, x_hat: vec![0.0], cost, upper_time: 0.5, lower_time: 0.25, trajectory: vec![(0.75, cost)] }
}

#[test]
fn metric_arithmetic() {
    let fam = HierarchicalFamily::generate(FamilyDims::knapsack(1, 1).with_param_dim(1), 0).unwrap();
    let labels = vec![sample(3, 10.0)];
    let r = score_outputs(&fam, &labels, "m", vec![output(3, 12.0)]).unwrap();
    assert_eq!(r.records[0].regret, 2.0);
    assert_eq!(r.records[0].normalized_regret, Some(0.2));
    let labels = vec![sample(0, -5.0), sample(1, 0.0), sample(2, 4.0)];
    let oracle = score_outputs(&fam, &labels, "o", vec![output(0, -5.0), output(1, 0.0), output(2, 4.0)]).unwrap();
    let rep = compute_metrics(&[oracle]);
    assert_eq!(rep.methods[0].r_abs, 0.0);
    assert_eq!(rep.methods[0].normalized_skipped, 1);
    assert!(matches!(score_outputs(&fam, &labels, "m", vec![output(9, 1.0)]), Err(Error::MissingLabels(_))));
}

#[test]
fn aggregates_recompute_from_the_csv() {
    let fam = knapsack(8);
    let train = labeled(&fam, 20, 1);
    let test = labeled(&fam, 12, 2);
    let r = evaluate_method(&fam, &Method::NearestNeighbor { train_set: &train }, &test).unwrap();
    let rep = compute_metrics(std::slice::from_ref(&r));
    let dir = tempfile::tempdir().unwrap();
    write_method_csv(dir.path(), FamilyKind::Knapsack, &r).unwrap();
    let mut reader = csv::Reader::from_path(results_path(dir.path(), FamilyKind::Knapsack, "nn")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (ri, ni, ti) = (col("regret"), col("normalized_regret"), col("wall_time_total"));
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 12);
    let regrets: Vec<f64> = rows.iter().map(|r| r[ri].parse().unwrap()).collect();
    let norms: Vec<f64> = rows.iter().filter(|r| !r[ni].is_empty()).map(|r| r[ni].parse().unwrap()).collect();
    let times: Vec<f64> = rows.iter().map(|r| r[ti].parse().unwrap()).collect();
    let m = &rep.methods[0];
    assert!((m.r_abs - regrets.iter().sum::<f64>() / 12.0).abs() < 1e-9);
    assert!((m.r_norm - norms.iter().sum::<f64>() / norms.len() as f64).abs() < 1e-9);
    assert!((m.mean_time_total - times.iter().sum::<f64>() / 12.0).abs() < 1e-9);
    let traj = std::fs::read_to_string(trajectory_path(dir.path(), FamilyKind::Knapsack, "nn")).unwrap();
    assert!(traj.starts_with("theta_id,time_s,incumbent_objective"));
    assert_eq!(traj.lines().count(), 13);
}
