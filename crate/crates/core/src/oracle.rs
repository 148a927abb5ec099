//! Brute-force validators for small finite-support instances.
//!
//! Both oracles avoid the quantile recursion used by the bound solvers. The
//! single-period one solves the primal linear program by greedy filling;
//! the two-period one enumerates every breakpoint of the dual objective.

use crate::error::{Error, Result};
use crate::kernel::{validate_lambda, validate_propensity, Direction, EtaStepParams};
use crate::law::WeightedSupport;
use crate::tree::CellTree;

/// Default cap on the number of support nodes of a two-period instance.
pub const DEFAULT_NODE_CAP: usize = 40;

/// Maximizer of the single-period primal program, with ratios in the
/// support's node order.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub value: f64,
    pub ratios: Vec<f64>,
}

/// Maximizes `Σ w_i (π + (1-π) λ_i) y_i` over `λ_i ∈ [1/Λ, Λ]` with
/// `Σ w_i λ_i = 1`: every ratio starts at `1/Λ` and the remaining budget
/// raises ratios to `Λ` from the largest outcome down.
pub fn oracle_single_period_solution(support: &WeightedSupport, pi: f64, lambda: f64) -> Result<LpSolution> {
    validate_propensity(pi)?;
    validate_lambda(lambda)?;
    let nodes = support.nodes();
    let lo = lambda.recip();
    let mut ratios = vec![lo; nodes.len()];
    let mut budget = 1.0 - nodes.iter().map(|n| n.w * lo).sum::<f64>();
    if budget < -1e-12 {
        return Err(Error::Construction("normalization infeasible".into()));
    }
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by(|&a, &b| nodes[b].y.total_cmp(&nodes[a].y));
    for i in order {
        if budget <= 0.0 {
            break;
        }
        let room = nodes[i].w * (lambda - lo);
        if room <= budget {
            ratios[i] = lambda;
            budget -= room;
        } else {
            ratios[i] = lo + budget / nodes[i].w;
            budget = 0.0;
        }
    }
    let value = nodes.iter().zip(&ratios).map(|(n, l)| n.w * (pi + (1.0 - pi) * l) * n.y).sum();
    Ok(LpSolution { value, ratios })
}

pub fn oracle_single_period(support: &WeightedSupport, pi: f64, lambda: f64) -> Result<f64> {
    Ok(oracle_single_period_solution(support, pi, lambda)?.value)
}

/// Exact sharp upper bound for trees with at most two periods and at most
/// `node_cap` support nodes, by enumerating candidate thresholds.
///
/// The objective is convex and piecewise linear in each threshold with
/// kinks at the values it acts on, so the first-period threshold is
/// searched over the outcome values of its cell and, for each choice, the
/// second-period threshold over the transformed values of its cell.
pub fn oracle_two_period_capped(tree: &CellTree, lambdas: &[f64], node_cap: usize) -> Result<f64> {
    let k = tree.periods();
    if k > 2 {
        return Err(Error::OracleCap(format!("{k} periods; the oracle handles at most 2")));
    }
    if tree.node_count() > node_cap {
        return Err(Error::OracleCap(format!("{} support nodes exceed the cap of {node_cap}", tree.node_count())));
    }
    if lambdas.len() != k {
        return Err(Error::InvalidParameter("one parameter per period is required".into()));
    }
    let y = tree.node_values();
    let w = tree.node_weights();
    let mut total = 0.0;
    for root in tree.level(0) {
        let p0 = EtaStepParams::new(root.propensity, lambdas[0], Direction::Upper)?;
        let mut best = f64::INFINITY;
        for &q0 in &y[root.nodes.clone()] {
            let value = if k == 1 {
                root.nodes.clone().map(|i| w[i] * p0.upper(y[i], q0)).sum::<f64>()
            } else {
                let mut v = 0.0;
                for t in root.children.clone() {
                    let cell = &tree.level(1)[t];
                    let p1 = EtaStepParams::new(cell.propensity, lambdas[1], Direction::Upper)?;
                    let z: Vec<(f64, f64)> = cell.nodes.clone().map(|i| (p0.upper(y[i], q0), w[i])).collect();
                    let inner = z
                        .iter()
                        .map(|&(q1, _)| z.iter().map(|&(zi, wi)| wi * p1.upper(zi, q1)).sum::<f64>())
                        .fold(f64::INFINITY, f64::min);
                    v += cell.cond_weight * inner;
                }
                v
            };
            best = best.min(value);
        }
        total += root.reach * best;
    }
    Ok(total)
}

pub fn oracle_two_period(tree: &CellTree, lambdas: &[f64]) -> Result<f64> {
    oracle_two_period_capped(tree, lambdas, DEFAULT_NODE_CAP)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::TreatmentStrategy;
    use crate::tree::CellSpec;

    fn coin() -> WeightedSupport {
        WeightedSupport::normalized(&[(0.0, 0.5), (1.0, 0.5)]).unwrap()
    }

    #[test]
    fn greedy_fill_values() {
        assert!((oracle_single_period(&coin(), 0.5, 2.0).unwrap() - 0.625).abs() < 1e-15);
        assert!((oracle_single_period(&coin(), 0.5, 4.0).unwrap() - 0.6875).abs() < 1e-15);
        assert!((oracle_single_period(&coin(), 0.3, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let s = oracle_single_period_solution(&coin(), 0.5, 2.0).unwrap();
        assert_eq!(s.ratios, vec![0.5, 1.5]);
    }

    #[test]
    fn toy_two_period() {
        let pm = |y| WeightedSupport::point_mass(y).unwrap();
        let tree = CellTree::from_cells(
            TreatmentStrategy::always_treat(2).unwrap(),
            vec![vec!["0".into()], vec!["0".into(), "1".into()]],
            vec![CellSpec::Inner {
                label: 0,
                weight: 1.0,
                propensity: 0.5,
                children: vec![
                    CellSpec::Terminal { label: 0, weight: 1.0, propensity: 0.5, support: pm(0.0) },
                    CellSpec::Terminal { label: 1, weight: 1.0, propensity: 0.5, support: pm(1.0) },
                ],
            }],
        )
        .unwrap();
        assert!((oracle_two_period(&tree, &[2.0, 2.0]).unwrap() - 0.625).abs() < 1e-15);
        assert!((oracle_two_period(&tree, &[1.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(oracle_two_period_capped(&tree, &[2.0, 2.0], 1), Err(Error::OracleCap(_))));
    }
}
