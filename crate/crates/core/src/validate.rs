//! Self-checks run by `seqsens validate`: oracle agreement, duality,
//! orderings, monotonicity, reflection and ICE/IPW agreement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bounds::{
    conservative_prod_bound, prod_v1_bound, prod_v2_bound, sharp_bound_primary, single_period_upper, Model,
    SensitivitySpec,
};
use crate::config::{builtin_config, BuiltinConfig};
use crate::error::Result;
use crate::kernel::Direction;
use crate::law::{TreatmentStrategy, WeightedSupport};
use crate::oracle::{oracle_single_period, oracle_two_period};
use crate::sample::{enumerate_trajectories, ipw_functional_weighted};
use crate::study::model_spec;
use crate::synth::{random_law, random_small_tree, SynthOptions};
use crate::tree::{build_cell_tree, ice_functional, CellTree};
use crate::worstcase::{construct_worst_case, optimal_lambda, primal_value, verify_normalization};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, worst: f64, tol: f64, what: &str) -> Check {
    Check { name, passed: worst <= tol, detail: format!("{what} {worst:.3e} (tolerance {tol:.0e})") }
}

fn upper(tree: &CellTree, spec: &SensitivitySpec) -> Result<f64> {
    Ok(sharp_bound_primary(tree, spec, Direction::Upper)?.value)
}

/// Runs all checks with quadrature trees of `nodes` nodes and random
/// instances drawn from `seed`.
pub fn run_validation(seed: u64, nodes: usize) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all_treat = TreatmentStrategy::always_treat(2)?;
    let mut out = Vec::new();

    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=8);
        let pairs: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen_range(-5.0..5.0), rng.gen_range(0.05..1.0))).collect();
        let s = WeightedSupport::normalized(&pairs)?;
        let pi = rng.gen_range(0.05..1.0);
        let lambda = rng.gen_range(1.0..6.0);
        worst = worst.max((oracle_single_period(&s, pi, lambda)? - single_period_upper(&s, pi, lambda)?.value).abs());
    }
    out.push(check("single-period oracle", worst, 1e-9, "largest gap"));

    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let tree = random_small_tree(&mut rng, 2, 40)?;
        let l = [rng.gen_range(1.0..5.0), rng.gen_range(1.0..5.0)];
        worst = worst.max((oracle_two_period(&tree, &l)? - upper(&tree, &SensitivitySpec::primary(l.to_vec())?)?).abs());
    }
    out.push(check("two-period oracle", worst, 1e-9, "largest gap"));

    let c1 = build_cell_tree(&builtin_config(BuiltinConfig::C1), &all_treat, nodes)?;
    let (mut gap, mut resid): (f64, f64) = (0.0, 0.0);
    for lambda in [1.5, 2.0, 3.0] {
        let spec = SensitivitySpec::primary(vec![lambda; 2])?;
        for d in [Direction::Upper, Direction::Lower] {
            let b = sharp_bound_primary(&c1, &spec, d)?;
            let r = optimal_lambda(&c1, &b.q_opt, &spec, d)?;
            resid = resid.max(verify_normalization(&c1, &r).max_residual());
            let marginal = construct_worst_case(&c1, &r)?.pop().map(|m| m.mean()).unwrap_or(f64::NAN);
            gap = gap.max((primal_value(&c1, &r)? - b.value).abs()).max((marginal - b.value).abs());
        }
    }
    out.push(check("strong duality", gap, 1e-6, "largest primal-dual gap"));
    out.push(check("normalization", resid, 1e-10, "largest residual"));

    let mut trees: Vec<CellTree> = BuiltinConfig::ALL
        .iter()
        .map(|&id| build_cell_tree(&builtin_config(id), &all_treat, nodes))
        .collect::<Result<_>>()?;
    for _ in 0..20 {
        let labels = rng.gen_range(1..=3);
        let law = random_law(&mut rng, &SynthOptions { labels, nodes_per_cell: 4, ..SynthOptions::default() })?;
        trees.push(build_cell_tree(&law, &all_treat, 1)?);
    }
    let mut violation: f64 = 0.0;
    for tree in &trees {
        for lambda in [1.5, 2.0, 3.0] {
            let p = upper(tree, &model_spec(Model::Primary, lambda, 2)?)?;
            let v1 = prod_v1_bound(tree, &model_spec(Model::ProdV1, lambda, 2)?, Direction::Upper)?.value;
            let v2 = prod_v2_bound(tree, &model_spec(Model::ProdV2, lambda, 2)?, Direction::Upper)?.value;
            let split = model_spec(Model::Prod, lambda, 2)?;
            let c = conservative_prod_bound(tree, &split, Direction::Upper)?.value;
            let c1v = prod_v1_bound(tree, &split, Direction::Upper)?.value;
            let c2v = prod_v2_bound(tree, &split, Direction::Upper)?.value;
            violation = violation.max(v1 - p).max(v2 - p).max(c - c1v).max(c - c2v).max(c - p);
        }
    }
    out.push(check("ordering", violation.max(0.0), 1e-9, "largest violation"));

    let grid = [1.0, 1.25, 1.5, 2.0, 3.0, 5.0];
    let mut violation: f64 = 0.0;
    for tree in trees.iter().take(4) {
        for coord in 0..2 {
            let mut prev = (f64::NEG_INFINITY, f64::INFINITY);
            for &g in &grid {
                let mut l = vec![2.0; 2];
                l[coord] = g;
                let spec = SensitivitySpec::primary(l)?;
                let u = upper(tree, &spec)?;
                let lo = sharp_bound_primary(tree, &spec, Direction::Lower)?.value;
                violation = violation.max(prev.0 - u).max(lo - prev.1);
                prev = (u, lo);
            }
        }
    }
    let law = builtin_config(BuiltinConfig::C1);
    let mut prev = f64::NEG_INFINITY;
    for s in [0.0, 0.5, 1.0, 2.0] {
        let scaled = law.map_outcomes(|_, o| match o {
            crate::law::OutcomeConditional::Gaussian { mean, sd } => {
                crate::law::OutcomeConditional::Gaussian { mean: *mean, sd: sd * s }
            }
            other => other.clone(),
        });
        let u = upper(&build_cell_tree(&scaled, &all_treat, nodes)?, &SensitivitySpec::primary(vec![2.0; 2])?)?;
        violation = violation.max(prev - u);
        prev = u;
    }
    out.push(check("monotonicity", violation.max(0.0), 1e-9, "largest violation"));

    let mut gap: f64 = 0.0;
    for tree in &trees {
        let spec = SensitivitySpec::primary(vec![2.0, 3.0])?;
        let lo = sharp_bound_primary(tree, &spec, Direction::Lower)?.value;
        gap = gap.max((lo + upper(&tree.negated(), &spec)?).abs());
        let shifted = tree.shifted(7.5)?;
        gap = gap.max((upper(&shifted, &spec)? - upper(tree, &spec)? - 7.5).abs());
    }
    out.push(check("reflection and shift", gap, 1e-9, "largest gap"));

    let mut gap: f64 = 0.0;
    for _ in 0..20 {
        let options = SynthOptions {
            labels: rng.gen_range(1..=3),
            nodes_per_cell: 3,
            propensity_range: (0.2, 1.0),
            ..SynthOptions::default()
        };
        let law = random_law(&mut rng, &options)?;
        let tree = build_cell_tree(&law, &all_treat, 1)?;
        let pairs = enumerate_trajectories(&law, &all_treat, 1)?;
        for _ in 0..5 {
            let (a, b, c): (f64, f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let f = |h: &[usize], y: f64| a * y + b * y * y + c * (h[0] as f64 + 1.0) * (y * h[1] as f64).sin();
            gap = gap.max((ice_functional(&tree, f) - ipw_functional_weighted(&pairs, &law, &all_treat, f)?).abs());
        }
    }
    out.push(check("ICE equals IPW", gap, 1e-12, "largest gap"));
    Ok(out)
}
