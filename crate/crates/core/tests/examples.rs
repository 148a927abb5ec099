//! Worked examples with hand-derived or oracle values.

use std::collections::BTreeMap;

use seqsens::bounds::{prod_v1_bound, prod_v2_bound, strategy_bounds, Model};
use seqsens::config::{builtin_config, BuiltinConfig};
use seqsens::law::{discretize_conditional, ArmLaw};
use seqsens::oracle::{oracle_single_period, oracle_two_period};
use seqsens::study::model_spec;
use seqsens::tree::CellSpec;
use seqsens::worstcase::{construct_worst_case, optimal_lambda, primal_value, verify_normalization, RatioSet};
use seqsens::{
    ate_bound, build_cell_tree, check_loss, conservative_prod_bound, eta_composite, eta_prod_step, eta_step,
    ice_functional, point_identified_mean, sharp_bound_primary, single_period_upper, tau_of, BoundOptions, CellTree,
    CheckParams, Direction, EtaStepParams, ObservedLaw, OutcomeConditional, ProdStepParams, SensitivitySpec,
    TreatmentStrategy, WeightedSupport,
};

const TOL: f64 = 1e-12;

fn coin() -> WeightedSupport {
    WeightedSupport::normalized(&[(0.0, 0.5), (1.0, 0.5)]).unwrap()
}

/// Singleton `L_0`, binary `L_1` with equal weights, both propensities .5
/// and `Y = L_1` deterministically.
fn toy() -> CellTree {
    let pm = |y| WeightedSupport::point_mass(y).unwrap();
    CellTree::from_cells(
        TreatmentStrategy::always_treat(2).unwrap(),
        vec![vec!["0".into()], vec!["0".into(), "1".into()]],
        vec![CellSpec::Inner {
            label: 0,
            weight: 1.0,
            propensity: 0.5,
            children: vec![
                CellSpec::Terminal { label: 0, weight: 0.5, propensity: 0.5, support: pm(0.0) },
                CellSpec::Terminal { label: 1, weight: 0.5, propensity: 0.5, support: pm(1.0) },
            ],
        }],
    )
    .unwrap()
}

fn toy_law(strategies: &[&str]) -> ObservedLaw {
    let mut arms = BTreeMap::new();
    for s in strategies {
        let mut arm = ArmLaw::default();
        arm.propensities.insert(vec![0], 0.5);
        arm.transitions.insert(vec![0], vec![0.5, 0.5]);
        for l1 in 0..2 {
            arm.propensities.insert(vec![0, l1], 0.5);
            arm.outcomes.insert(vec![0, l1], OutcomeConditional::Support(WeightedSupport::point_mass(l1 as f64).unwrap()));
        }
        arms.insert(s.parse().unwrap(), arm);
    }
    ObservedLaw::new(2, vec![vec!["0".into()], vec!["0".into(), "1".into()]], vec![1.0], arms).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

#[test]
fn kernel_values() {
    assert_eq!(check_loss(3.0, 3.0, CheckParams::new(0.3).unwrap()).unwrap(), 0.0);
    assert!(close(check_loss(1.0, 0.0, CheckParams::new(0.5).unwrap()).unwrap(), 0.5));
    assert!(close(check_loss(1.0, 0.0, CheckParams::new(2.0 / 3.0).unwrap()).unwrap(), 2.0 / 3.0));
    assert!(close(tau_of(1.0).unwrap(), 0.5));
    assert!(close(tau_of(2.0).unwrap(), 2.0 / 3.0));
    assert!(close(tau_of(3.0).unwrap(), 0.75));
    let p = |l, d| EtaStepParams::new(0.5, l, d).unwrap();
    assert!(close(eta_step(1.0, 0.0, &p(1.0, Direction::Upper)).unwrap(), 1.0));
    assert!(close(eta_step(1.0, 0.0, &p(2.0, Direction::Upper)).unwrap(), 1.5));
    assert!(close(eta_step(-1.0, 0.0, &p(2.0, Direction::Lower)).unwrap(), -1.5));
    let two = [p(2.0, Direction::Upper), p(2.0, Direction::Upper)];
    assert!(close(eta_composite(1.0, &[0.0, 0.0], &two).unwrap(), 2.25));
    let ones = [p(1.0, Direction::Upper), p(1.0, Direction::Upper)];
    assert!(close(eta_composite(4.2, &[9.0, -3.0], &ones).unwrap(), 4.2));
}

#[test]
fn product_step_relationships() {
    let (y, q) = (0.7, 0.2);
    // With the covariate channel at 1 the step reduces to the outcome-channel step.
    let p = ProdStepParams::new(0.4, 1.0, 3.0).unwrap();
    let (y_tilde, _) = eta_prod_step(y, y, 0.0, q, &p).unwrap();
    let (_, combined) = eta_prod_step(y, y_tilde, -5.0, q, &p).unwrap();
    assert!(close(combined, eta_step(y, q, &EtaStepParams::new(0.4, 3.0, Direction::Upper).unwrap()).unwrap()));
    // With ỹ = y the covariate channel acts like a primary step with Λ_L.
    let p = ProdStepParams::new(0.4, 2.5, 1.7).unwrap();
    let (_, combined) = eta_prod_step(y, y, q, 0.0, &p).unwrap();
    assert!(close(combined, eta_step(y, q, &EtaStepParams::new(0.4, 2.5, Direction::Upper).unwrap()).unwrap()));
    let p = ProdStepParams::new(0.4, 1.0, 1.0).unwrap();
    assert!(close(eta_prod_step(y, 2.0, q, q, &p).unwrap().1, 0.4 * y + 0.6 * 2.0));
}

#[test]
fn discretization() {
    let s = discretize_conditional(&OutcomeConditional::gaussian(60.0, 0.0).unwrap(), 64).unwrap();
    assert_eq!(s.nodes().len(), 1);
    assert_eq!((s.nodes()[0].y, s.nodes()[0].w), (60.0, 1.0));
    assert_eq!(discretize_conditional(&OutcomeConditional::Support(coin()), 64).unwrap(), coin());
    let g = discretize_conditional(&OutcomeConditional::gaussian(0.0, 1.0).unwrap(), 64).unwrap();
    let mean: f64 = g.nodes().iter().map(|n| n.w * n.y).sum();
    let var: f64 = g.nodes().iter().map(|n| n.w * n.y * n.y).sum();
    assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-10);
}

#[test]
fn builtin_tree_structure() {
    let tree = build_cell_tree(&builtin_config(BuiltinConfig::C1), &TreatmentStrategy::always_treat(2).unwrap(), 64)
        .unwrap();
    assert_eq!(tree.level(0).len(), 2);
    let reach: Vec<f64> = tree.terminals().iter().map(|c| c.reach).collect();
    for (r, e) in reach.iter().zip([0.4, 0.1, 0.1, 0.4]) {
        assert!(close(*r, e));
    }
    let props: Vec<f64> = tree.terminals().iter().map(|c| c.propensity).collect();
    assert_eq!(props, vec![0.4, 0.8, 0.4, 0.8]);
    let means: Vec<f64> = tree.supports().iter().map(|s| s.mean()).collect();
    for (m, e) in means.iter().zip([62.0, 58.0, 62.0, 58.0]) {
        assert!((m - e).abs() < 1e-9);
    }
    assert!((ice_functional(&tree, |_, _| 1.0) - 1.0).abs() < TOL);
}

#[test]
fn point_identified_means() {
    let all = TreatmentStrategy::always_treat(2).unwrap();
    for id in BuiltinConfig::ALL {
        let tree = build_cell_tree(&builtin_config(id), &all, 64).unwrap();
        assert!((point_identified_mean(&tree) - 60.0).abs() < 1e-9, "{id}");
    }
    let one = CellTree::from_cells(
        TreatmentStrategy::always_treat(1).unwrap(),
        vec![vec!["0".into()]],
        vec![CellSpec::Terminal { label: 0, weight: 1.0, propensity: 0.3, support: coin() }],
    )
    .unwrap();
    assert_eq!(one.terminals()[0].reach, 1.0);
    assert!(close(point_identified_mean(&one), 0.5));
}

#[test]
fn single_period_bounds() {
    for (l, v) in [(2.0, 0.625), (4.0, 0.6875)] {
        assert!(close(single_period_upper(&coin(), 0.5, l).unwrap().value, v));
        assert!(close(oracle_single_period(&coin(), 0.5, l).unwrap(), v));
    }
    assert!(close(single_period_upper(&coin(), 0.2, 1.0).unwrap().value, 0.5));
    let r = single_period_upper(&coin(), 0.5, 2.0).unwrap();
    assert_eq!(r.q_opt.primary().unwrap()[0][0], 1.0);
}

#[test]
fn toy_primary_bounds() {
    let t = toy();
    let spec = SensitivitySpec::primary(vec![2.0, 2.0]).unwrap();
    assert!(close(sharp_bound_primary(&t, &spec, Direction::Upper).unwrap().value, 0.625));
    assert!(close(sharp_bound_primary(&t, &spec, Direction::Lower).unwrap().value, 0.375));
    assert!(close(oracle_two_period(&t, &[2.0, 2.0]).unwrap(), 0.625));
    assert!(close(oracle_two_period(&t, &[1.0, 1.0]).unwrap(), 0.5));
}

#[test]
fn toy_product_bounds() {
    let t = toy();
    // The outcome-channel threshold may depend on the full history, so each
    // point-mass terminal is matched exactly and nothing is gained.
    let v1 = prod_v1_bound(&t, &SensitivitySpec::product(vec![1.0, 1.0], vec![2.0, 2.0]).unwrap(), Direction::Upper)
        .unwrap();
    assert!(close(v1.value, 0.5));
    let v2 = prod_v2_bound(&t, &SensitivitySpec::product(vec![2.0, 1.0], vec![1.0, 2.0]).unwrap(), Direction::Upper)
        .unwrap();
    assert!(close(v2.value, 0.625));
    let ones = SensitivitySpec::product(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
    for b in [
        prod_v1_bound(&t, &ones, Direction::Upper).unwrap(),
        prod_v2_bound(&t, &ones, Direction::Upper).unwrap(),
        conservative_prod_bound(&t, &ones, Direction::Upper).unwrap(),
    ] {
        assert!(close(b.value, 0.5));
    }
}

#[test]
fn c1_product_orderings() {
    let tree = build_cell_tree(&builtin_config(BuiltinConfig::C1), &TreatmentStrategy::always_treat(2).unwrap(), 64)
        .unwrap();
    for l in [1.5, 2.0, 3.0] {
        let p = sharp_bound_primary(&tree, &SensitivitySpec::primary(vec![l, l]).unwrap(), Direction::Upper).unwrap();
        let v1 = prod_v1_bound(&tree, &model_spec(Model::ProdV1, l, 2).unwrap(), Direction::Upper).unwrap();
        let v2 = prod_v2_bound(&tree, &model_spec(Model::ProdV2, l, 2).unwrap(), Direction::Upper).unwrap();
        assert!(v1.value <= p.value && v2.value <= p.value);
    }
    let r2 = 2f64.sqrt();
    let split = SensitivitySpec::product(vec![r2, 1.0], vec![r2, 2.0]).unwrap();
    let c = conservative_prod_bound(&tree, &split, Direction::Upper).unwrap();
    let p = sharp_bound_primary(&tree, &SensitivitySpec::primary(vec![2.0, 2.0]).unwrap(), Direction::Upper).unwrap();
    assert!(c.value <= p.value);
    assert!(c.value <= prod_v1_bound(&tree, &split, Direction::Upper).unwrap().value);
    assert!(c.value <= prod_v2_bound(&tree, &split, Direction::Upper).unwrap().value);
}

#[test]
fn strategy_and_ate_bounds() {
    let law = toy_law(&["11", "00"]);
    let (a, b): (TreatmentStrategy, TreatmentStrategy) = ("11".parse().unwrap(), "00".parse().unwrap());
    let spec = SensitivitySpec::primary(vec![2.0, 2.0]).unwrap();
    let requests = [(a.clone(), Direction::Upper), (b.clone(), Direction::Lower), (b.clone(), Direction::Upper)];
    let res = strategy_bounds(&law, &requests, &spec, 1, &BoundOptions::default()).unwrap();
    let up = &res[&(a.clone(), Direction::Upper)];
    let lo = &res[&(b.clone(), Direction::Lower)];
    assert!(close(up.value, 0.625) && close(lo.value, 0.375));
    assert!(close(ate_bound(up, lo).unwrap(), 0.25));
    // Identical arm laws give identical bounds.
    assert_eq!(res[&(b.clone(), Direction::Upper)].value, up.value);
    assert!(ate_bound(lo, up).is_err());
    // At Λ = 1 the ATE bound is the ICE difference, here zero.
    let ones = SensitivitySpec::primary(vec![1.0, 1.0]).unwrap();
    let res = strategy_bounds(&law, &requests, &ones, 1, &BoundOptions::default()).unwrap();
    assert!(close(ate_bound(&res[&(a, Direction::Upper)], &res[&(b, Direction::Lower)]).unwrap(), 0.0));
}

#[test]
fn singleton_strategy_set_matches_direct_bound() {
    let law = builtin_config(BuiltinConfig::C1);
    let s = TreatmentStrategy::always_treat(2).unwrap();
    let spec = SensitivitySpec::primary(vec![2.0, 3.0]).unwrap();
    let res = strategy_bounds(&law, &[(s.clone(), Direction::Upper)], &spec, 64, &BoundOptions::default()).unwrap();
    let direct = sharp_bound_primary(&build_cell_tree(&law, &s, 64).unwrap(), &spec, Direction::Upper).unwrap();
    assert_eq!(res[&(s, Direction::Upper)].value, direct.value);
}

#[test]
fn worst_case_examples() {
    let t = toy();
    let ones = RatioSet::uniform(&t, &[1.0, 1.0]).unwrap();
    assert_eq!(verify_normalization(&t, &ones).max_residual(), 0.0);
    assert!(close(primal_value(&t, &ones).unwrap(), point_identified_mean(&t)));
    let marginal = construct_worst_case(&t, &ones).unwrap().pop().unwrap();
    assert!(close(marginal.mean(), 0.5));
    let big = RatioSet::uniform(&t, &[3.0, 3.0]).unwrap();
    assert!(close(verify_normalization(&t, &big).residuals[0].residual, 2.0));

    let spec = SensitivitySpec::primary(vec![2.0, 2.0]).unwrap();
    let b = sharp_bound_primary(&t, &spec, Direction::Upper).unwrap();
    let ratios = optimal_lambda(&t, &b.q_opt, &spec, Direction::Upper).unwrap();
    assert!(close(primal_value(&t, &ratios).unwrap(), 0.625));
    let dists = construct_worst_case(&t, &ratios).unwrap();
    let m = dists.last().unwrap();
    assert_eq!((m.stage.as_str(), m.cell.as_str()), ("marginal", "*"));
    assert!(close(m.nodes[1].w, 0.625) && close(m.mean(), 0.625));

    let tree = build_cell_tree(&builtin_config(BuiltinConfig::C1), &TreatmentStrategy::always_treat(2).unwrap(), 64)
        .unwrap();
    let spec = SensitivitySpec::primary(vec![1.0, 1.0]).unwrap();
    let b = sharp_bound_primary(&tree, &spec, Direction::Upper).unwrap();
    let r = optimal_lambda(&tree, &b.q_opt, &spec, Direction::Upper).unwrap();
    assert!(r.node_lambdas.iter().flatten().all(|&l| l == 1.0));
    assert!((construct_worst_case(&tree, &r).unwrap().pop().unwrap().mean() - 60.0).abs() < 1e-9);
}

#[test]
fn single_period_boundary_ratio() {
    let tree = build_cell_tree(
        &{
            let mut arm = ArmLaw::default();
            arm.propensities.insert(vec![0], 0.5);
            arm.outcomes.insert(vec![0], OutcomeConditional::Support(coin()));
            let mut arms = BTreeMap::new();
            arms.insert(TreatmentStrategy::always_treat(1).unwrap(), arm);
            ObservedLaw::new(1, vec![vec!["0".into()]], vec![1.0], arms).unwrap()
        },
        &TreatmentStrategy::always_treat(1).unwrap(),
        1,
    )
    .unwrap();
    let spec = SensitivitySpec::primary(vec![2.0]).unwrap();
    let b = sharp_bound_primary(&tree, &spec, Direction::Upper).unwrap();
    let r = optimal_lambda(&tree, &b.q_opt, &spec, Direction::Upper).unwrap();
    assert_eq!(r.node_lambdas[0], vec![0.5, 1.5]);
    assert_eq!(r.cells[0][0].boundary, 1.5);
}

#[test]
fn product_descent_converges_on_zigzag_law() {
    use rand::SeedableRng;
    // Plain cyclic descent creeps down a diagonal valley here and used to
    // exhaust its sweep budget.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(375478855477215980);
    let t = seqsens::synth::random_small_tree(&mut rng, 3, 40).unwrap();
    let (l, ly) = (2.714236691193431, 2.869617290267322);
    let spec = SensitivitySpec::product(vec![l, l, 1.0], vec![ly; 3]).unwrap();
    let combined = SensitivitySpec::primary(vec![l * ly, l * ly, ly]).unwrap();
    let up = sharp_bound_primary(&t, &combined, Direction::Upper).unwrap().value;
    for d in [Direction::Upper, Direction::Lower] {
        let v1 = prod_v1_bound(&t, &spec, d).unwrap();
        let v2 = prod_v2_bound(&t, &spec, d).unwrap();
        assert!(v1.diagnostics.final_improvement < 1e-9 && v2.diagnostics.final_improvement < 1e-9);
        if d == Direction::Upper {
            assert!(v1.value <= up + 1e-7 && v2.value <= up + 1e-7);
        }
    }
}
