use hmip_core::losses::{
    check_theorem2, check_theorem2_detailed, evaluate_in, loss_value_and_subgradient, penalty_range,
    sharp_cost, suboptimality_loss, LossKind, LossSpec, PolicySpace,
};
use hmip_core::milp::{solve_milp, MilpProblem, Sense, SolveConfig};
use hmip_core::problems::{exact_config, FamilyData, FamilyDims, HierarchicalFamily};
use hmip_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Instance {
    family: HierarchicalFamily,
    theta: Vec<f64>,
    x_star: Vec<f64>,
}

fn tiny_knapsack(seed: u64) -> Instance {
    let family = HierarchicalFamily::generate(FamilyDims::knapsack(3, 2).with_param_dim(10), seed).unwrap();
    let theta = family.sample_theta(&mut ChaCha8Rng::seed_from_u64(seed + 1000));
    let sol = solve_milp(&family.build_master(&theta).unwrap(), &exact_config()).unwrap();
    let x_star = family.split_solution(sol.values().unwrap()).0.to_vec();
    Instance { family, theta, x_star }
}

fn tiny_facility(seed: u64) -> Instance {
    let family = HierarchicalFamily::generate(FamilyDims::facility(3, 6).with_param_dim(10), seed).unwrap();
    let theta = family.sample_theta(&mut ChaCha8Rng::seed_from_u64(seed + 1000));
    let sol = solve_milp(&family.build_master(&theta).unwrap(), &exact_config()).unwrap();
    let x_star = family.split_solution(sol.values().unwrap()).0.to_vec();
    Instance { family, theta, x_star }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn loss(spec: &LossSpec, inst: &Instance, c: &[f64]) -> hmip_core::losses::LossEval {
    loss_value_and_subgradient(spec, &inst.family, &inst.theta, &inst.x_star, c).unwrap()
}

fn exact_specs() -> Vec<LossSpec> {
    vec![
        LossSpec::z().exact(),
        LossSpec::asl(1.0).exact(),
        LossSpec::fy(1.0).exact(),
        LossSpec::gspo().exact(),
    ]
}

fn one_binary() -> PolicySpace {
    PolicySpace::new(MilpProblem::binary(vec![0.0], vec![], vec![], Sense::Minimize).unwrap(), 1.0).unwrap()
}

#[test]
fn asl_single_binary_hand_case() {
    let e = evaluate_in(&LossSpec::asl(1.0).exact(), &one_binary(), &[1.0], &[-2.0], None).unwrap();
    assert_eq!(e.x_inner, vec![1.0]);
    assert!(e.value.abs() < 1e-12);
    assert_eq!(e.subgradient, vec![0.0]);
}

#[test]
fn z_loss_vanishes_when_anchor_is_the_unique_argmin() {
    let space = one_binary();
    let e = evaluate_in(&LossSpec::z().exact(), &space, &[1.0], &[-0.5], None).unwrap();
    assert_eq!(e.x_inner, vec![1.0]);
    assert_eq!(e.value, 0.0);
    let inst = tiny_knapsack(1);
    let c = sharp_cost(&PolicySpace::of_family(&inst.family).unwrap(), &inst.x_star, 0.0);
    let e = loss(&LossSpec::z().exact(), &inst, &c);
    assert_eq!(e.x_inner, inst.x_star);
    assert!(e.value.abs() < 1e-12);
}

#[test]
fn fy_without_penalty_is_z() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..10 {
        let inst = tiny_knapsack(seed);
        for _ in 0..10 {
            let c = normal_vec(&mut rng, 3, 2.0);
            let a = loss(&LossSpec::fy(0.0).exact(), &inst, &c);
            let b = loss(&LossSpec::z().exact(), &inst, &c);
            assert!((a.value - b.value).abs() < 1e-12);
        }
    }
}

#[test]
fn subgradient_inequality_per_kind() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for spec in exact_specs() {
        for i in 0..200 {
            let inst = if i % 2 == 0 { tiny_knapsack(i) } else { tiny_facility(i) };
            let n = inst.x_star.len();
            let c = normal_vec(&mut rng, n, 2.0);
            let d = normal_vec(&mut rng, n, 2.0);
            let at_c = loss(&spec, &inst, &c);
            let at_d = loss(&spec, &inst, &d);
            let lin: f64 = at_c.subgradient.iter().zip(d.iter().zip(&c)).map(|(g, (d, c))| g * (d - c)).sum();
            assert!(at_d.value >= at_c.value + lin - 1e-6, "{:?}: {} < {}", spec.kind, at_d.value, at_c.value + lin);
        }
    }
}

#[test]
fn z_subgradient_is_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let spec = LossSpec::z().exact();
    for seed in 0..30 {
        let inst = tiny_knapsack(seed);
        let space = PolicySpace::of_family(&inst.family).unwrap();
        let c = normal_vec(&mut rng, 3, 1.0);
        let neg: Vec<f64> = c.iter().map(|v| -v).collect();
        // inner argmax of −c̄ᵀx is the policy argmin of −ĉ
        if space.policy_argmin(&neg).unwrap().len() != 1 {
            continue;
        }
        let c2: Vec<f64> = c.iter().map(|v| 2.0 * v).collect();
        assert_eq!(loss(&spec, &inst, &c).subgradient, loss(&spec, &inst, &c2).subgradient);
    }
}

#[test]
fn sharp_cost_drives_asl_below_tolerance() {
    let spec = LossSpec::asl(1.0).exact();
    for seed in 0..20 {
        let inst = tiny_knapsack(seed);
        let space = PolicySpace::of_family(&inst.family).unwrap();
        let c = sharp_cost(&space, &inst.x_star, penalty_range(&spec, 3, &inst.x_star));
        assert!(loss(&spec, &inst, &c).value <= 1e-3);
    }
}

#[test]
fn suboptimality_zero_without_lower_coupling() {
    let mut fam = HierarchicalFamily::generate(FamilyDims::facility(3, 6).with_param_dim(10), 2).unwrap();
    if let FamilyData::FacilityLocation(f) = &mut fam.data {
        f.penalty = 0.0;
        f.service_cost.base.iter_mut().for_each(|b| *b = 0.0);
        f.service_cost.gain.iter_mut().flatten().for_each(|g| *g = 0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let th = fam.sample_theta(&mut rng);
        let (c, d) = fam.costs(&th);
        assert!(d.iter().all(|&v| v == 0.0));
        assert!(suboptimality_loss(&fam, &th, &c).unwrap().abs() < 1e-9);
    }
}

#[test]
fn zero_gspo_loss_gives_zero_suboptimality() {
    let spec = LossSpec::gspo().exact();
    for seed in 0..10 {
        let inst = tiny_knapsack(seed);
        let space = PolicySpace::of_family(&inst.family).unwrap();
        let costs: Vec<f64> = hmip_core::milp::feasible_points(space.feasible(), 64)
            .unwrap()
            .iter()
            .map(|x| inst.family.true_cost(&inst.theta, x).unwrap())
            .collect();
        let range = costs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - costs.iter().copied().fold(f64::INFINITY, f64::min);
        let c = sharp_cost(&space, &inst.x_star, range);
        assert!(loss(&spec, &inst, &c).value <= 1e-9);
        assert!(suboptimality_loss(&inst.family, &inst.theta, &c).unwrap().abs() < 1e-9);
    }
}

/// Brute force over every (x, y) of a knapsack family without any solver.
fn brute_suboptimality(fam: &HierarchicalFamily, theta: &[f64], c_hat: &[f64]) -> f64 {
    let FamilyData::Knapsack(k) = &fam.data else {
        unreachable!()
    };
    let d = k.lower_costs(theta);
    let bits = |mask: usize, n: usize| (0..n).map(|i| ((mask >> i) & 1) as f64).collect::<Vec<f64>>();
    let block_best = |j: usize| {
        (0..1usize << k.items)
            .map(|m| bits(m, k.items))
            .filter(|y| y.iter().zip(&k.lower_weights[j]).map(|(y, w)| y * w).sum::<f64>() <= k.lower_capacities[j])
            .map(|y| y.iter().zip(&d[j * k.items..]).map(|(y, d)| y * d).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    };
    let f = |x: &[f64]| (0..k.blocks).filter(|&j| x[j] == 1.0).map(block_best).sum::<f64>();
    let xs: Vec<Vec<f64>> = (0..1usize << k.blocks)
        .map(|m| bits(m, k.blocks))
        .filter(|x| x.iter().zip(&k.upper_weights).map(|(x, w)| x * w).sum::<f64>() <= k.upper_capacity)
        .collect();
    // the knapsack policy maximizes ĉᵀx
    let score = |x: &[f64]| x.iter().zip(c_hat).map(|(x, c)| x * c).sum::<f64>();
    let best = xs.iter().map(|x| score(x)).fold(f64::NEG_INFINITY, f64::max);
    let worst = xs
        .iter()
        .filter(|x| score(x) >= best - 1e-9 * best.abs().max(1.0))
        .map(|x| f(x))
        .fold(f64::NEG_INFINITY, f64::max);
    let z = xs.iter().map(|x| f(x)).fold(f64::INFINITY, f64::min);
    worst - z
}

#[test]
fn suboptimality_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..20 {
        let inst = tiny_knapsack(seed);
        for _ in 0..5 {
            let c = normal_vec(&mut rng, 3, 1.0);
            let a = suboptimality_loss(&inst.family, &inst.theta, &c).unwrap();
            let b = brute_suboptimality(&inst.family, &inst.theta, &c);
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}

#[test]
fn theorem2_degenerate_case() {
    for seed in 0..10 {
        let inst = tiny_knapsack(seed);
        let check = check_theorem2_detailed(&inst.family, &inst.theta, 0.0, 0.0).unwrap();
        assert!(check.holds);
        assert!(check.loss <= 1e-9);
        assert!(check.worst_excess <= 1e-6);
    }
}

#[test]
fn theorem2_with_slack() {
    for seed in 0..20 {
        let inst = if seed % 2 == 0 { tiny_knapsack(seed) } else { tiny_facility(seed) };
        assert!(check_theorem2(&inst.family, &inst.theta, 0.1, 0.05).unwrap());
        assert!(check_theorem2(&inst.family, &inst.theta, 0.0, 0.2).unwrap());
    }
}

#[test]
fn gspo_refuses_large_upper_sets() {
    let fam = HierarchicalFamily::generate(FamilyDims::knapsack(20, 2).with_param_dim(5), 0).unwrap();
    let th = fam.sample_theta(&mut ChaCha8Rng::seed_from_u64(0));
    let err = loss_value_and_subgradient(&LossSpec::gspo(), &fam, &th, &[0.0; 20], &[0.0; 20]).unwrap_err();
    assert!(matches!(err, Error::Milp(hmip_core::milp::MilpError::SearchSpaceTooLarge { .. })));
}

#[test]
fn losses_reject_bad_inputs() {
    let space = PolicySpace::new(
        MilpProblem::new(vec![0.0], vec![], vec![], vec![0.0], vec![2.0], vec![true], Sense::Minimize).unwrap(),
        1.0,
    )
    .unwrap();
    assert!(matches!(
        evaluate_in(&LossSpec::asl(1.0), &space, &[1.0], &[0.0], None),
        Err(Error::NonBinaryUpperVariables)
    ));
    assert!(LossSpec::asl(0.0).validate().is_err());
    assert_eq!("asl".parse::<LossKind>().unwrap(), LossKind::Asl);
    assert!("spo".parse::<LossKind>().is_err());
}

#[test]
fn truncated_inner_solves_report_epsilon() {
    let fam = HierarchicalFamily::generate(FamilyDims::facility(15, 15), 3).unwrap();
    let th = fam.sample_theta(&mut ChaCha8Rng::seed_from_u64(3));
    let mut spec = LossSpec::asl(1.0);
    spec.inner_config = SolveConfig { node_limit: Some(1), ..SolveConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut flagged = 0;
    for _ in 0..20 {
        let c = normal_vec(&mut rng, 15, 1.0);
        let e = loss_value_and_subgradient(&spec, &fam, &th, &[0.0; 15], &c).unwrap();
        if let Some(eps) = e.epsilon {
            assert!(eps >= 0.0);
            flagged += 1;
        }
    }
    assert!(flagged > 0);
}

fn kind_strategy() -> impl Strategy<Value = LossSpec> {
    prop_oneof![
        Just(LossSpec::z().exact()),
        (0.1..3.0f64).prop_map(|nu| LossSpec::asl(nu).exact()),
        (0.0..3.0f64).prop_map(|w| LossSpec::fy(w).exact()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn convex_along_segments(
        spec in kind_strategy(),
        seed in 0u64..50,
        c1 in prop::collection::vec(-3.0..3.0f64, 3),
        c2 in prop::collection::vec(-3.0..3.0f64, 3),
        lam in 0.0..=1.0f64,
    ) {
        let inst = tiny_knapsack(seed);
        let mid: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
        let l = |c: &[f64]| loss(&spec, &inst, c).value;
        prop_assert!(l(&mid) <= lam * l(&c1) + (1.0 - lam) * l(&c2) + 1e-6);
    }

    #[test]
    fn nonnegative_at_exact_anchor(
        spec in kind_strategy(),
        seed in 0u64..50,
        c in prop::collection::vec(-3.0..3.0f64, 3),
    ) {
        let inst = tiny_knapsack(seed);
        prop_assert!(loss(&spec, &inst, &c).value >= -1e-9);
    }

    #[test]
    fn zero_loss_certifies_unique_policy(seed in 0u64..200, nu in 0.1..3.0f64) {
        let inst = tiny_knapsack(seed);
        let spec = LossSpec::asl(nu).exact();
        let space = PolicySpace::of_family(&inst.family).unwrap();
        let c = sharp_cost(&space, &inst.x_star, penalty_range(&spec, 3, &inst.x_star));
        let e = loss(&spec, &inst, &c);
        prop_assert!(e.value <= 1e-9);
        prop_assert_eq!(space.policy_argmin(&c).unwrap(), vec![inst.x_star.clone()]);
    }

    #[test]
    fn epsilon_subgradients_hold(
        seed in 0u64..20,
        c in prop::collection::vec(-2.0..2.0f64, 12),
        d in prop::collection::vec(-2.0..2.0f64, 12),
    ) {
        let fam = HierarchicalFamily::generate(FamilyDims::facility(4, 12).with_param_dim(10), seed).unwrap();
        let th = fam.sample_theta(&mut ChaCha8Rng::seed_from_u64(seed));
        let x_star = vec![0.0; 12];
        let mut truncated = LossSpec::asl(1.0);
        truncated.inner_config = SolveConfig { node_limit: Some(2), ..SolveConfig::default() };
        let exact = LossSpec::asl(1.0).exact();
        let t = loss_value_and_subgradient(&truncated, &fam, &th, &x_star, &c).unwrap();
        let eps = t.epsilon.unwrap_or(0.0);
        let lc = loss_value_and_subgradient(&exact, &fam, &th, &x_star, &c).unwrap().value;
        let ld = loss_value_and_subgradient(&exact, &fam, &th, &x_star, &d).unwrap().value;
        let lin: f64 = t.subgradient.iter().zip(d.iter().zip(&c)).map(|(g, (d, c))| g * (d - c)).sum();
        prop_assert!(ld >= lc + lin - eps - 1e-6);
    }
}
