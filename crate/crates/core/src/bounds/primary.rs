//! Sharp bounds under the primary (and joint) sensitivity model.
//!
//! Because every η step is increasing in `y`, the order of the outcome
//! nodes below a cell never changes, whatever the thresholds above it.
//! Working bottom-up, the partially minimized objective of a cell is then a
//! fixed positive combination of its entry values, so the optimal threshold
//! of each cell is the weighted τ-quantile of its entry values under those
//! coefficients. The index of that quantile node depends only on the node
//! order and weights, which makes the whole nested minimization exact:
//! one bottom-up pass picks the threshold nodes, one top-down pass reads
//! off the thresholds.

use crate::error::{Error, Result};
use crate::kernel::{Direction, EtaStepParams};
use crate::law::WeightedSupport;
use crate::tree::CellTree;

use super::search::golden_section;
use super::{BoundOptions, BoundResult, Diagnostics, Exactness, Model, QAssignment, Scheme, SensitivitySpec};

/// Relative slack on the cumulative weight when locating a quantile; only
/// affects which of two equally good breakpoints is reported.
const QUANTILE_SLACK: f64 = 1e-12;

pub(crate) struct Solved {
    pub q: Vec<Vec<f64>>,
    pub value: f64,
}

fn step_params(tree: &CellTree, lambdas: &[f64]) -> Result<Vec<Vec<EtaStepParams>>> {
    tree.levels()
        .iter()
        .zip(lambdas)
        .map(|(level, &lam)| {
            level.iter().map(|c| EtaStepParams::new(c.propensity, lam, Direction::Upper)).collect::<Result<Vec<_>>>()
        })
        .collect()
}

/// Bottom-up pass: threshold node of every cell.
fn threshold_nodes(tree: &CellTree, params: &[Vec<EtaStepParams>]) -> Vec<Vec<usize>> {
    let k_total = tree.periods();
    let y = tree.node_values();
    let mut coef = tree.node_weights().to_vec();
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut thresholds = vec![Vec::new(); k_total];
    for k in (0..k_total).rev() {
        let level = tree.level(k);
        let mut th = Vec::with_capacity(level.len());
        for (ci, cell) in level.iter().enumerate() {
            if k + 1 < k_total {
                for d in &tree.level(k + 1)[cell.children.clone()] {
                    for i in d.nodes.clone() {
                        coef[i] *= d.cond_weight;
                    }
                }
                order[cell.nodes.clone()].sort_by(|&a, &b| y[a].total_cmp(&y[b]));
            }
            let seg = &order[cell.nodes.clone()];
            let p = &params[k][ci];
            let tau = p.tau();
            let total: f64 = seg.iter().map(|&i| coef[i]).sum();
            let target = tau * total - QUANTILE_SLACK * total;
            // Locate the group of equal values holding the quantile.
            let mut below = 0.0;
            let mut start = 0;
            let (g_start, g_end, at) = loop {
                let mut end = start + 1;
                while end < seg.len() && y[seg[end]] == y[seg[start]] {
                    end += 1;
                }
                let mass: f64 = seg[start..end].iter().map(|&i| coef[i]).sum();
                if below + mass >= target || end == seg.len() {
                    break (start, end, mass);
                }
                below += mass;
                start = end;
            };
            th.push(seg[g_start]);
            if !p.is_identity() {
                let (rho_lo, rho_hi) = p.slopes();
                let above = (total - below - at).max(0.0);
                let c = p.coef();
                let f_at = (at + c * ((1.0 - tau) * below - tau * above)) / at;
                for &i in &seg[..g_start] {
                    coef[i] *= rho_lo;
                }
                for &i in &seg[g_start..g_end] {
                    coef[i] *= f_at;
                }
                for &i in &seg[g_end..] {
                    coef[i] *= rho_hi;
                }
            }
        }
        thresholds[k] = th;
    }
    thresholds
}

/// Top-down pass: thresholds from threshold nodes, and final node values.
fn forward(tree: &CellTree, params: &[Vec<EtaStepParams>], thresholds: &[Vec<usize>]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut z = tree.node_values().to_vec();
    let mut q = Vec::with_capacity(tree.periods());
    for (k, level) in tree.levels().iter().enumerate() {
        let mut qk = Vec::with_capacity(level.len());
        for (ci, cell) in level.iter().enumerate() {
            let qv = z[thresholds[k][ci]];
            let p = &params[k][ci];
            if !p.is_identity() {
                for zi in &mut z[cell.nodes.clone()] {
                    *zi = p.upper(*zi, qv);
                }
            }
            qk.push(qv);
        }
        q.push(qk);
    }
    (q, z)
}

fn terminal_mean(tree: &CellTree, z: &[f64]) -> f64 {
    let w = tree.node_weights();
    tree.terminals()
        .iter()
        .map(|t| t.reach * t.nodes.clone().map(|i| w[i] * z[i]).sum::<f64>())
        .sum()
}

/// Exact upper-direction solution on `tree`.
pub(crate) fn solve_upper(tree: &CellTree, lambdas: &[f64]) -> Result<Solved> {
    let params = step_params(tree, lambdas)?;
    let thresholds = threshold_nodes(tree, &params);
    let (q, z) = forward(tree, &params, &thresholds);
    Ok(Solved { q, value: terminal_mean(tree, &z) })
}

/// Dual objective `E[η^{K-1}(Y, q̄)]` at given thresholds.
pub fn primary_objective(tree: &CellTree, lambdas: &[f64], direction: Direction, q: &[Vec<f64>]) -> Result<f64> {
    if lambdas.len() != tree.periods() || q.len() != tree.periods() {
        return Err(Error::InvalidParameter("threshold or parameter count does not match the tree depth".into()));
    }
    let mut z = tree.node_values().to_vec();
    for (k, level) in tree.levels().iter().enumerate() {
        if q[k].len() != level.len() {
            return Err(Error::InvalidParameter(format!("level {k} has {} cells but {} thresholds", level.len(), q[k].len())));
        }
        for (ci, cell) in level.iter().enumerate() {
            let p = EtaStepParams::new(cell.propensity, lambdas[k], direction)?;
            let qv = q[k][ci];
            if !qv.is_finite() {
                return Err(Error::NonFinite("threshold"));
            }
            for zi in &mut z[cell.nodes.clone()] {
                *zi = p.apply(*zi, qv);
            }
        }
    }
    Ok(terminal_mean(tree, &z))
}

/// Coordinate sweeps: each cell's threshold is line-searched by golden
/// section, with the thresholds below it set to their conditional optima.
fn coordinate_upper(tree: &CellTree, lambdas: &[f64], options: &BoundOptions) -> Result<(Vec<Vec<f64>>, f64, usize, f64)> {
    let params = step_params(tree, lambdas)?;
    let thresholds = threshold_nodes(tree, &params);
    let k_total = tree.periods();
    let y = tree.node_values();
    // Start from the plain cell medians of the outcome values.
    let mut q: Vec<Vec<f64>> = tree
        .levels()
        .iter()
        .map(|level| {
            level
                .iter()
                .map(|c| {
                    let mut v: Vec<f64> = y[c.nodes.clone()].to_vec();
                    v.sort_by(f64::total_cmp);
                    v[v.len() / 2]
                })
                .collect()
        })
        .collect();
    let cond: Vec<Vec<Vec<f64>>> = (0..k_total)
        .map(|k| (0..tree.level(k).len()).map(|c| tree.node_cond_weights(k, c)).collect())
        .collect();

    // Entry values of every node at level k under the current thresholds.
    let entry_values = |q: &[Vec<f64>], upto: usize| -> Vec<f64> {
        let mut z = y.to_vec();
        for (k, level) in tree.levels().iter().enumerate().take(upto) {
            for (ci, cell) in level.iter().enumerate() {
                for zi in &mut z[cell.nodes.clone()] {
                    *zi = params[k][ci].upper(*zi, q[k][ci]);
                }
            }
        }
        z
    };
    // Value of cell (k, ci) given entry values, threshold qv, and optimal
    // thresholds below.
    let subtree_value = |z_entry: &[f64], k: usize, ci: usize, qv: f64| -> f64 {
        let cell = &tree.level(k)[ci];
        let off = cell.nodes.start;
        let mut z: Vec<f64> = z_entry[cell.nodes.clone()].iter().map(|&v| params[k][ci].upper(v, qv)).collect();
        let mut lo = ci..ci + 1;
        for j in k + 1..k_total {
            let first = tree.level(j - 1)[lo.start].children.start;
            let last = tree.level(j - 1)[lo.end - 1].children.end;
            lo = first..last;
            for d in lo.clone() {
                let dc = &tree.level(j)[d];
                let qd = z[thresholds[j][d] - off];
                for zi in &mut z[dc.nodes.start - off..dc.nodes.end - off] {
                    *zi = params[j][d].upper(*zi, qd);
                }
            }
        }
        cond[k][ci].iter().zip(&z).map(|(w, v)| w * v).sum()
    };

    let mut evaluations = 0;
    let mut value = primary_objective(tree, lambdas, Direction::Upper, &q)?;
    let mut improvement = f64::INFINITY;
    let mut converged = false;
    for _ in 0..options.max_sweeps {
        let start = value;
        for k in 0..k_total {
            let z_entry = entry_values(&q, k);
            for ci in 0..tree.level(k).len() {
                let cell = &tree.level(k)[ci];
                let seg = &z_entry[cell.nodes.clone()];
                let lo = seg.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let current = subtree_value(&z_entry, k, ci, q[k][ci]);
                let m = golden_section(|v| subtree_value(&z_entry, k, ci, v), lo, hi, 1e-11 * (hi - lo).max(1e-300));
                evaluations += m.evaluations + 1;
                if m.fx < current {
                    q[k][ci] = m.x;
                }
            }
            // Deeper thresholds follow their conditional optima.
            let z = entry_values(&q, k + 1);
            let mut zz = z;
            for j in k + 1..k_total {
                for (d, dc) in tree.level(j).iter().enumerate() {
                    q[j][d] = zz[thresholds[j][d]];
                    for zi in &mut zz[dc.nodes.clone()] {
                        *zi = params[j][d].upper(*zi, q[j][d]);
                    }
                }
            }
        }
        value = primary_objective(tree, lambdas, Direction::Upper, &q)?;
        improvement = start - value;
        if improvement.abs() < options.sweep_tol * (1.0 + value.abs()) {
            converged = true;
            break;
        }
    }
    if !converged {
        let exact = solve_upper(tree, lambdas)?.value;
        return Err(Error::NonConvergence { best: value, gap: value - exact });
    }
    Ok((q, value, evaluations, improvement.abs()))
}

fn lambdas_of(spec: &SensitivitySpec) -> Result<(&[f64], Model)> {
    match spec {
        SensitivitySpec::Primary { lambdas } => Ok((lambdas, Model::Primary)),
        SensitivitySpec::Joint { lambdas } => Ok((lambdas, Model::Joint)),
        SensitivitySpec::Product { .. } => {
            Err(Error::InvalidParameter("product specs are handled by the product bounds".into()))
        }
    }
}

/// Sharp bound under the primary model; joint specs return the same value
/// flagged as an alias.
pub fn sharp_bound_primary(tree: &CellTree, spec: &SensitivitySpec, direction: Direction) -> Result<BoundResult> {
    sharp_bound_primary_with(tree, spec, direction, &BoundOptions::default())
}

pub fn sharp_bound_primary_with(
    tree: &CellTree,
    spec: &SensitivitySpec,
    direction: Direction,
    options: &BoundOptions,
) -> Result<BoundResult> {
    let (lambdas, model) = lambdas_of(spec)?;
    spec.check_periods(tree.periods(), options)?;
    let work = match direction {
        Direction::Upper => std::borrow::Cow::Borrowed(tree),
        Direction::Lower => std::borrow::Cow::Owned(tree.negated()),
    };
    let (q, value, diagnostics) = match options.scheme {
        Scheme::CoordinateDescent => {
            let (q, value, evaluations, final_improvement) = coordinate_upper(&work, lambdas, options)?;
            (q, value, Diagnostics { evaluations, final_improvement, scheme: Scheme::CoordinateDescent })
        }
        Scheme::Nested | Scheme::Sequential => {
            let s = solve_upper(&work, lambdas)?;
            let evaluations = work.node_count() * work.periods();
            (s.q, s.value, Diagnostics { evaluations, final_improvement: 0.0, scheme: Scheme::Nested })
        }
    };
    let (value, q_opt) = match direction {
        Direction::Upper => (value, QAssignment::Primary(q)),
        Direction::Lower => (-value, QAssignment::Primary(q).negated()),
    };
    Ok(BoundResult {
        value,
        direction,
        model,
        q_opt,
        diagnostics,
        exactness: Exactness::Sharp,
        alias_of: (model == Model::Joint).then_some(Model::Primary),
    })
}

/// Single-period sharp upper bound `min_q E[y + (1-π)(Λ-1/Λ) ρ_τ(y, q)]`.
pub fn single_period_upper(support: &WeightedSupport, pi: f64, lambda: f64) -> Result<BoundResult> {
    let strategy = crate::law::TreatmentStrategy::always_treat(1)?;
    let tree = CellTree::chain(strategy, &[pi], support.clone())?;
    sharp_bound_primary(&tree, &SensitivitySpec::primary(vec![lambda])?, Direction::Upper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::TreatmentStrategy;
    use crate::tree::CellSpec;

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
                    CellSpec::Terminal { label: 0, weight: 1.0, propensity: 0.5, support: pm(0.0) },
                    CellSpec::Terminal { label: 1, weight: 1.0, propensity: 0.5, support: pm(1.0) },
                ],
            }],
        )
        .unwrap()
    }

    #[test]
    fn single_period_examples() {
        let s = WeightedSupport::normalized(&[(0.0, 0.5), (1.0, 0.5)]).unwrap();
        assert!((single_period_upper(&s, 0.5, 1.0).unwrap().value - 0.5).abs() < 1e-15);
        let r = single_period_upper(&s, 0.5, 2.0).unwrap();
        assert!((r.value - 0.625).abs() < 1e-12);
        assert_eq!(r.q_opt.primary().unwrap()[0][0], 1.0);
        assert!((single_period_upper(&s, 0.5, 4.0).unwrap().value - 0.6875).abs() < 1e-12);
    }

    #[test]
    fn toy_two_period() {
        let t = toy();
        let spec = SensitivitySpec::primary(vec![2.0, 2.0]).unwrap();
        let up = sharp_bound_primary(&t, &spec, Direction::Upper).unwrap();
        let lo = sharp_bound_primary(&t, &spec, Direction::Lower).unwrap();
        assert!((up.value - 0.625).abs() < 1e-12);
        assert!((lo.value - 0.375).abs() < 1e-12);
        let q = lo.q_opt.primary().unwrap();
        let at = primary_objective(&t, &[2.0, 2.0], Direction::Lower, q).unwrap();
        assert!((at - lo.value).abs() < 1e-12);
    }

    #[test]
    fn joint_is_alias() {
        let t = toy();
        let p = sharp_bound_primary(&t, &SensitivitySpec::primary(vec![3.0, 1.5]).unwrap(), Direction::Upper).unwrap();
        let j = sharp_bound_primary(&t, &SensitivitySpec::joint(vec![3.0, 1.5]).unwrap(), Direction::Upper).unwrap();
        assert_eq!(p.value, j.value);
        assert_eq!(j.alias_of, Some(Model::Primary));
        assert_eq!(j.exactness, Exactness::Sharp);
    }

    #[test]
    fn coordinate_scheme_agrees() {
        let t = toy();
        let spec = SensitivitySpec::primary(vec![2.0, 3.0]).unwrap();
        let opts = BoundOptions { scheme: Scheme::CoordinateDescent, ..Default::default() };
        let a = sharp_bound_primary_with(&t, &spec, Direction::Upper, &opts).unwrap();
        let b = sharp_bound_primary(&t, &spec, Direction::Upper).unwrap();
        assert!((a.value - b.value).abs() < 1e-6);
    }

    #[test]
    fn period_checks() {
        let t = toy();
        assert!(sharp_bound_primary(&t, &SensitivitySpec::primary(vec![2.0]).unwrap(), Direction::Upper).is_err());
        let opts = BoundOptions { max_periods: 1, ..Default::default() };
        let spec = SensitivitySpec::primary(vec![2.0, 2.0]).unwrap();
        assert!(sharp_bound_primary_with(&t, &spec, Direction::Upper, &opts).is_err());
    }
}
