//! Trajectory sampling, empirical trees and IPW.

use seqsens::config::{builtin_config, BuiltinConfig};
use seqsens::sample::{enumerate_trajectories, ipw_functional, ipw_functional_weighted, sample_trajectories, Trajectory};
use seqsens::{
    build_cell_tree, estimate_cell_tree_from_sample, point_identified_mean, Error, ObservedLaw, OutcomeConditional,
    TreatmentStrategy,
};

fn all_treat() -> TreatmentStrategy {
    TreatmentStrategy::always_treat(2).unwrap()
}

#[test]
fn follower_fraction_matches_law() {
    // P(A_0 = A_1 = 1) = .5·.5·(.8·.4 + .2·.8) + .5·.5·(.2·.4 + .8·.8) = 0.30.
    let sample = sample_trajectories(&builtin_config(BuiltinConfig::C1), &all_treat(), 1_000_000, 11).unwrap();
    let followers = sample.iter().filter(|t| t.follows(&all_treat())).count() as f64 / sample.len() as f64;
    assert!((followers - 0.30).abs() < 0.002, "{followers}");
}

#[test]
fn monte_carlo_mean_and_ipw() {
    let law = builtin_config(BuiltinConfig::C1);
    let sample = sample_trajectories(&law, &all_treat(), 1_000_000, 5).unwrap();
    let tree = estimate_cell_tree_from_sample(&sample, &all_treat()).unwrap();
    assert!((point_identified_mean(&tree) - 60.0).abs() < 0.05);
    let ipw = ipw_functional(&sample, &law, &all_treat(), |_, y| y).unwrap();
    assert!((ipw - 60.0).abs() < 0.1, "{ipw}");
}

#[test]
fn sampling_is_deterministic_and_thread_independent() {
    let law = builtin_config(BuiltinConfig::C4);
    let a = sample_trajectories(&law, &all_treat(), 20_000, 3).unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap()
        .install(|| sample_trajectories(&law, &all_treat(), 20_000, 3).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, sample_trajectories(&law, &all_treat(), 20_000, 4).unwrap());
}

#[test]
fn degenerate_law_sample() {
    let law = builtin_config(BuiltinConfig::C1).map_outcomes(|_, o| OutcomeConditional::gaussian(o.mean(), 0.0).unwrap());
    let sample = sample_trajectories(&law, &all_treat(), 1, 9).unwrap();
    let t = &sample[0];
    match t.outcome {
        Some(y) => assert!(y == 62.0 || y == 58.0),
        None => assert!(t.is_censored()),
    }
}

#[test]
fn single_follower_tree() {
    let t = Trajectory { covariates: vec![1, 0], treatments: vec![1, 1], outcome: Some(3.5) };
    let tree = estimate_cell_tree_from_sample(&[t], &all_treat()).unwrap();
    assert_eq!(tree.node_count(), 1);
    assert_eq!(tree.terminals()[0].reach, 1.0);
    assert_eq!(tree.terminals()[0].propensity, 1.0);
    assert_eq!(point_identified_mean(&tree), 3.5);
}

#[test]
fn missing_followers_is_incomplete() {
    let sample = vec![
        Trajectory { covariates: vec![0, 0], treatments: vec![1, 1], outcome: Some(1.0) },
        Trajectory { covariates: vec![1], treatments: vec![0], outcome: None },
    ];
    assert!(matches!(estimate_cell_tree_from_sample(&sample, &all_treat()), Err(Error::IncompleteLaw { .. })));
}

#[test]
fn enumeration_weights_telescope() {
    let law: ObservedLaw = builtin_config(BuiltinConfig::C2);
    let pairs = enumerate_trajectories(&law, &all_treat(), 4).unwrap();
    let total: f64 = pairs.iter().map(|(_, p)| p).sum();
    assert!((total - 1.0).abs() < 1e-12);
    let one = ipw_functional_weighted(&pairs, &law, &all_treat(), |_, _| 1.0).unwrap();
    assert!((one - 1.0).abs() < 1e-12);
    let tree = build_cell_tree(&law, &all_treat(), 4).unwrap();
    let ipw = ipw_functional_weighted(&pairs, &law, &all_treat(), |_, y| y).unwrap();
    assert!((ipw - point_identified_mean(&tree)).abs() < 1e-12);
}
