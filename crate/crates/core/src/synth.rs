//! Seeded random finite-support laws for property tests and validation runs.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::law::{ArmLaw, ObservedLaw, OutcomeConditional, TreatmentStrategy, WeightedSupport};
use crate::tree::{build_cell_tree, CellTree};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub periods: usize,
    /// Covariate labels per period.
    pub labels: usize,
    /// Outcome support points per terminal cell.
    pub nodes_per_cell: usize,
    /// Propensities are drawn uniformly from this range.
    pub propensity_range: (f64, f64),
    /// Draw outcomes on a coarse grid so that ties occur.
    pub with_ties: bool,
    /// Arms to populate; all-treat when empty.
    pub strategies: Vec<TreatmentStrategy>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            periods: 2,
            labels: 2,
            nodes_per_cell: 3,
            propensity_range: (0.1, 0.95),
            with_ties: false,
            strategies: Vec::new(),
        }
    }
}

fn probability_vector(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

fn histories(labels: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|h| {
                (0..labels).map(move |l| {
                    let mut h = h.clone();
                    h.push(l);
                    h
                })
            })
            .collect();
    }
    out
}

pub fn random_law(rng: &mut impl Rng, options: &SynthOptions) -> Result<ObservedLaw> {
    let k = options.periods;
    let supports: Vec<Vec<String>> = (0..k).map(|_| (0..options.labels).map(|l| l.to_string()).collect()).collect();
    let baseline = probability_vector(rng, options.labels);
    let strategies =
        if options.strategies.is_empty() { vec![TreatmentStrategy::always_treat(k)?] } else { options.strategies.clone() };
    let (plo, phi) = options.propensity_range;
    let mut arms = BTreeMap::new();
    for s in strategies {
        let mut arm = ArmLaw::default();
        for len in 1..=k {
            for h in histories(options.labels, len) {
                arm.propensities.insert(h.clone(), if plo == phi { plo } else { rng.gen_range(plo..phi) });
                if len < k {
                    arm.transitions.insert(h, probability_vector(rng, options.labels));
                } else {
                    let ys: Vec<f64> = (0..options.nodes_per_cell)
                        .map(|_| if options.with_ties { rng.gen_range(-3..=3) as f64 } else { rng.gen_range(-3.0..3.0) })
                        .collect();
                    let ws = probability_vector(rng, options.nodes_per_cell);
                    let pairs: Vec<(f64, f64)> = ys.into_iter().zip(ws).collect();
                    arm.outcomes.insert(h, OutcomeConditional::Support(WeightedSupport::normalized(&pairs)?));
                }
            }
        }
        arms.insert(s, arm);
    }
    ObservedLaw::new(k, supports, baseline, arms)
}

pub fn random_law_seeded(seed: u64, options: &SynthOptions) -> Result<ObservedLaw> {
    random_law(&mut ChaCha8Rng::seed_from_u64(seed), options)
}

/// All-treat cell tree of a random law.
pub fn random_tree(rng: &mut impl Rng, options: &SynthOptions) -> Result<CellTree> {
    let law = random_law(rng, &SynthOptions { strategies: Vec::new(), ..options.clone() })?;
    build_cell_tree(&law, &TreatmentStrategy::always_treat(options.periods)?, 1)
}

/// Random tree with a random number of labels and nodes, capped at
/// `max_nodes` support nodes in total.
pub fn random_small_tree(rng: &mut impl Rng, periods: usize, max_nodes: usize) -> Result<CellTree> {
    let cells = |labels: usize| labels.pow(periods as u32);
    let mut choices: Vec<(usize, usize)> = Vec::new();
    for labels in 1..=3 {
        for nodes in 1..=5 {
            if cells(labels) * nodes <= max_nodes {
                choices.push((labels, nodes));
            }
        }
    }
    let &(labels, nodes_per_cell) = choices.choose(rng).expect("at least one shape fits");
    let with_ties = rng.gen_bool(0.3);
    random_tree(rng, &SynthOptions { periods, labels, nodes_per_cell, with_ties, ..SynthOptions::default() })
}
