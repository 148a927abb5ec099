//! Worst-case sensitivity ratios and the implied counterfactual distributions.
//!
//! Ratios take threshold form per cell: `Λ_k` above the threshold, `1/Λ_k`
//! below, and a boundary value on nodes sitting exactly on it, chosen so
//! that the cell's normalization constraint holds. Cells are processed
//! from the last period back, because the constraint of period `k` weights
//! nodes by the `ϱ` factors of every later period.

use crate::bounds::{QAssignment, SensitivitySpec};
use crate::error::{Error, Result};
use crate::kernel::{Direction, EtaStepParams};
use crate::law::SupportNode;
use crate::tree::CellTree;

/// Slack for deciding that a composed value sits on its cell's threshold,
/// and for accepting a boundary value just outside `[1/Λ, Λ]`.
const ON_THRESHOLD_TOL: f64 = 1e-9;

/// Threshold-form ratio of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdRatio {
    /// Threshold on the composed value `η^{k-1}(y, q̌)`, in the working scale
    /// (negated outcomes for the lower direction).
    pub threshold: f64,
    pub high: f64,
    pub low: f64,
    /// Value applied to nodes on the threshold.
    pub boundary: f64,
}

/// Ratios for every cell, with the per-node values they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioSet {
    /// Per level, per cell.
    pub cells: Vec<Vec<ThresholdRatio>>,
    /// Per level, per flattened node: `λ_k` at that node.
    pub node_lambdas: Vec<Vec<f64>>,
    /// True when built for the lower direction (thresholds refer to negated outcomes).
    pub negate: bool,
}

impl RatioSet {
    /// Constant ratio `values[k]` at every node of period `k`.
    pub fn uniform(tree: &CellTree, values: &[f64]) -> Result<Self> {
        if values.len() != tree.periods() {
            return Err(Error::InvalidParameter("one ratio per period is required".into()));
        }
        let n = tree.node_count();
        Ok(Self {
            cells: tree
                .levels()
                .iter()
                .zip(values)
                .map(|(l, &v)| vec![ThresholdRatio { threshold: 0.0, high: v, low: v, boundary: v }; l.len()])
                .collect(),
            node_lambdas: values.iter().map(|&v| vec![v; n]).collect(),
            negate: false,
        })
    }

    /// `ϱ_k = π_k + (1 - π_k) λ_k` per level and node.
    pub fn node_rhos(&self, tree: &CellTree) -> Vec<Vec<f64>> {
        tree.levels()
            .iter()
            .zip(&self.node_lambdas)
            .map(|(level, lam)| {
                let mut rho = vec![0.0; lam.len()];
                for cell in level {
                    let pi = cell.propensity;
                    for i in cell.nodes.clone() {
                        rho[i] = pi + (1.0 - pi) * lam[i];
                    }
                }
                rho
            })
            .collect()
    }
}

fn primary_lambdas(spec: &SensitivitySpec) -> Result<&[f64]> {
    match spec {
        SensitivitySpec::Primary { lambdas } | SensitivitySpec::Joint { lambdas } => Ok(lambdas),
        SensitivitySpec::Product { .. } => {
            Err(Error::InvalidParameter("worst-case ratios are built for the primary model only".into()))
        }
    }
}

/// Worst-case ratios attaining the sharp primary bound with thresholds `q_opt`.
pub fn optimal_lambda(tree: &CellTree, q_opt: &QAssignment, spec: &SensitivitySpec, direction: Direction) -> Result<RatioSet> {
    let lambdas = primary_lambdas(spec)?;
    let q = q_opt
        .primary()
        .ok_or_else(|| Error::InvalidParameter("primary thresholds required".into()))?;
    let k_total = tree.periods();
    if lambdas.len() != k_total || q.len() != k_total {
        return Err(Error::InvalidParameter("thresholds or parameters do not match the tree depth".into()));
    }
    let sign = match direction {
        Direction::Upper => 1.0,
        Direction::Lower => -1.0,
    };
    // Composed keys η^{k-1}(s y, s q̌) per level.
    let mut keys = Vec::with_capacity(k_total);
    let mut z: Vec<f64> = tree.node_values().iter().map(|y| sign * y).collect();
    for (k, level) in tree.levels().iter().enumerate() {
        if q[k].len() != level.len() {
            return Err(Error::InvalidParameter(format!("level {k} threshold count mismatch")));
        }
        keys.push(z.clone());
        for (ci, cell) in level.iter().enumerate() {
            let p = EtaStepParams::new(cell.propensity, lambdas[k], Direction::Upper)?;
            let qv = sign * q[k][ci];
            for zi in &mut z[cell.nodes.clone()] {
                *zi = p.upper(*zi, qv);
            }
        }
    }

    let n = tree.node_count();
    let mut node_lambdas = vec![vec![1.0; n]; k_total];
    let mut cells = vec![Vec::new(); k_total];
    // Product of ϱ_j over the periods after the one being processed.
    let mut tail = vec![1.0; n];
    for k in (0..k_total).rev() {
        let lam = lambdas[k];
        let level = tree.level(k);
        let mut row = Vec::with_capacity(level.len());
        for (ci, cell) in level.iter().enumerate() {
            let t = sign * q[k][ci];
            let cw = tree.node_cond_weights(k, ci);
            let tol = ON_THRESHOLD_TOL * (1.0 + t.abs());
            let (mut above, mut below, mut at) = (0.0, 0.0, 0.0);
            for (j, i) in cell.nodes.clone().enumerate() {
                let m = cw[j] * tail[i];
                let key = keys[k][i];
                if key > t + tol {
                    above += m;
                } else if key < t - tol {
                    below += m;
                } else {
                    at += m;
                }
            }
            let boundary = if lam == 1.0 {
                1.0
            } else if at > 0.0 {
                let b = (1.0 - lam * above - below / lam) / at;
                if b < lam.recip() - ON_THRESHOLD_TOL || b > lam + ON_THRESHOLD_TOL {
                    return Err(Error::Construction(format!(
                        "boundary ratio {b} outside [{}, {lam}] at cell {} of period {k}; thresholds are not optimal",
                        lam.recip(),
                        tree.cell_label(k, ci)
                    )));
                }
                b.clamp(lam.recip(), lam)
            } else {
                let residual = lam * above + below / lam - 1.0;
                if residual.abs() > ON_THRESHOLD_TOL {
                    return Err(Error::Construction(format!(
                        "no node on the threshold at cell {} of period {k} and residual {residual}",
                        tree.cell_label(k, ci)
                    )));
                }
                0.5 * (lam + lam.recip())
            };
            let pi = cell.propensity;
            for i in cell.nodes.clone() {
                let key = keys[k][i];
                let l = if lam == 1.0 {
                    1.0
                } else if key > t + tol {
                    lam
                } else if key < t - tol {
                    lam.recip()
                } else {
                    boundary
                };
                node_lambdas[k][i] = l;
                tail[i] *= pi + (1.0 - pi) * l;
            }
            row.push(ThresholdRatio { threshold: t, high: lam, low: lam.recip(), boundary });
        }
        cells[k] = row;
    }
    Ok(RatioSet { cells, node_lambdas, negate: direction == Direction::Lower })
}

/// Residual of one normalization constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub period: usize,
    pub cell: String,
    pub residual: f64,
}

/// Residuals `|E[λ_k ∏_{j>k} ϱ_j | cell] - 1|`, last period first.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationReport {
    pub residuals: Vec<Residual>,
}

impl NormalizationReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().map(|r| r.residual).fold(0.0, f64::max)
    }
}

pub fn verify_normalization(tree: &CellTree, ratios: &RatioSet) -> NormalizationReport {
    let rhos = ratios.node_rhos(tree);
    let n = tree.node_count();
    let mut tail = vec![1.0; n];
    let mut residuals = Vec::new();
    for k in (0..tree.periods()).rev() {
        for (ci, cell) in tree.level(k).iter().enumerate() {
            let cw = tree.node_cond_weights(k, ci);
            let s: f64 = cell.nodes.clone().enumerate().map(|(j, i)| cw[j] * ratios.node_lambdas[k][i] * tail[i]).sum();
            residuals.push(Residual { period: k, cell: tree.cell_label(k, ci), residual: (s - 1.0).abs() });
        }
        for (t, r) in tail.iter_mut().zip(&rhos[k]) {
            *t *= r;
        }
    }
    NormalizationReport { residuals }
}

/// Largest normalization residual accepted by [`primal_value`].
pub const PRIMAL_TOL: f64 = 1e-8;

/// ICE value of `∏_k ϱ_k(λ_k) Y`.
pub fn primal_value(tree: &CellTree, ratios: &RatioSet) -> Result<f64> {
    let worst = verify_normalization(tree, ratios).max_residual();
    if worst.is_nan() || worst > PRIMAL_TOL {
        return Err(Error::NotNormalized { what: "sensitivity ratios (largest residual + 1)".into(), sum: 1.0 + worst });
    }
    let rhos = ratios.node_rhos(tree);
    let y = tree.node_values();
    let w = tree.node_weights();
    Ok(tree
        .terminals()
        .iter()
        .map(|t| {
            t.reach
                * t.nodes.clone().map(|i| w[i] * rhos.iter().map(|r| r[i]).product::<f64>() * y[i]).sum::<f64>()
        })
        .sum())
}

/// One conditional distribution of the counterfactual outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedOutcomeDistribution {
    /// `followed:k`, `deviated:k`, `pooled:k` or `marginal`.
    pub stage: String,
    /// Cell path with labels joined by `/`; `*` for the marginal.
    pub cell: String,
    /// Nodes sorted by value, equal values merged.
    pub nodes: Vec<SupportNode>,
    /// Distributions this one mixes or tilts, with their weights.
    pub lineage: Vec<(String, f64)>,
}

impl WeightedOutcomeDistribution {
    pub fn total_weight(&self) -> f64 {
        self.nodes.iter().map(|n| n.w).sum()
    }

    pub fn mean(&self) -> f64 {
        self.nodes.iter().map(|n| n.w * n.y).sum()
    }
}

fn merged(mut pts: Vec<(f64, f64)>) -> Result<Vec<SupportNode>> {
    if pts.iter().any(|p| p.1.is_nan() || p.1 < 0.0) {
        return Err(Error::Construction("negative weight in an implied distribution".into()));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<SupportNode> = Vec::with_capacity(pts.len());
    for (y, w) in pts {
        match out.last_mut() {
            Some(last) if last.y == y => last.w += w,
            _ => out.push(SupportNode { y, w }),
        }
    }
    Ok(out)
}

fn path(tree: &CellTree, k: usize, ci: usize) -> String {
    tree.cell_label(k, ci).replace(',', "/")
}

/// Stagewise conditionals of the worst-case law and the final marginal of
/// the counterfactual outcome. For each cell, from the last period back:
/// the law among strategy followers, its `λ_k` tilt (the law among those
/// who deviate at period `k`), and their `π_k` mixture, i.e. the `ϱ_k` tilt.
pub fn construct_worst_case(tree: &CellTree, ratios: &RatioSet) -> Result<Vec<WeightedOutcomeDistribution>> {
    let worst = verify_normalization(tree, ratios).max_residual();
    if worst.is_nan() || worst > PRIMAL_TOL {
        return Err(Error::NotNormalized { what: "sensitivity ratios (largest residual + 1)".into(), sum: 1.0 + worst });
    }
    let rhos = ratios.node_rhos(tree);
    let y = tree.node_values();
    let n = tree.node_count();
    let mut tail = vec![1.0; n];
    let mut out = Vec::new();
    let mut roots = Vec::new();
    for k in (0..tree.periods()).rev() {
        for (ci, cell) in tree.level(k).iter().enumerate() {
            let cw = tree.node_cond_weights(k, ci);
            let label = path(tree, k, ci);
            let nodes = cell.nodes.clone();
            let followed: Vec<(f64, f64)> = nodes.clone().enumerate().map(|(j, i)| (y[i], cw[j] * tail[i])).collect();
            let deviated: Vec<(f64, f64)> =
                nodes.clone().enumerate().map(|(j, i)| (y[i], cw[j] * tail[i] * ratios.node_lambdas[k][i])).collect();
            let pooled: Vec<(f64, f64)> = nodes.clone().enumerate().map(|(j, i)| (y[i], cw[j] * tail[i] * rhos[k][i])).collect();
            let followed_lineage = if k + 1 < tree.periods() {
                cell.children
                    .clone()
                    .map(|d| (format!("pooled:{}@{}", k + 1, path(tree, k + 1, d)), tree.level(k + 1)[d].cond_weight))
                    .collect()
            } else {
                vec![(format!("observed@{label}"), 1.0)]
            };
            out.push(WeightedOutcomeDistribution {
                stage: format!("followed:{k}"),
                cell: label.clone(),
                nodes: merged(followed)?,
                lineage: followed_lineage,
            });
            out.push(WeightedOutcomeDistribution {
                stage: format!("deviated:{k}"),
                cell: label.clone(),
                nodes: merged(deviated)?,
                lineage: vec![(format!("followed:{k}@{label}"), 1.0)],
            });
            out.push(WeightedOutcomeDistribution {
                stage: format!("pooled:{k}"),
                cell: label.clone(),
                nodes: merged(pooled.clone())?,
                lineage: vec![
                    (format!("followed:{k}@{label}"), cell.propensity),
                    (format!("deviated:{k}@{label}"), 1.0 - cell.propensity),
                ],
            });
            if k == 0 {
                roots.push((label, cell.reach, pooled));
            }
        }
        for (t, r) in tail.iter_mut().zip(&rhos[k]) {
            *t *= r;
        }
    }
    let mut all = Vec::new();
    let mut lineage = Vec::new();
    for (label, reach, pooled) in roots {
        lineage.push((format!("pooled:0@{label}"), reach));
        all.extend(pooled.into_iter().map(|(y, w)| (y, reach * w)));
    }
    out.push(WeightedOutcomeDistribution { stage: "marginal".into(), cell: "*".into(), nodes: merged(all)?, lineage });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::sharp_bound_primary;
    use crate::law::{TreatmentStrategy, WeightedSupport};
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
    fn single_period_boundary_value() {
        let s = WeightedSupport::normalized(&[(0.0, 0.5), (1.0, 0.5)]).unwrap();
        let tree = CellTree::chain(TreatmentStrategy::always_treat(1).unwrap(), &[0.5], s).unwrap();
        let spec = SensitivitySpec::primary(vec![2.0]).unwrap();
        let r = sharp_bound_primary(&tree, &spec, Direction::Upper).unwrap();
        let ratios = optimal_lambda(&tree, &r.q_opt, &spec, Direction::Upper).unwrap();
        assert_eq!(ratios.node_lambdas[0], vec![0.5, 1.5]);
        assert_eq!(ratios.cells[0][0].boundary, 1.5);
        assert!((primal_value(&tree, &ratios).unwrap() - 0.625).abs() < 1e-12);
    }

    #[test]
    fn toy_worst_case_marginal() {
        let t = toy();
        let spec = SensitivitySpec::primary(vec![2.0, 2.0]).unwrap();
        let r = sharp_bound_primary(&t, &spec, Direction::Upper).unwrap();
        let ratios = optimal_lambda(&t, &r.q_opt, &spec, Direction::Upper).unwrap();
        let dists = construct_worst_case(&t, &ratios).unwrap();
        let m = dists.last().unwrap();
        assert_eq!(m.stage, "marginal");
        assert!((m.nodes[0].w - 0.375).abs() < 1e-12 && (m.nodes[1].w - 0.625).abs() < 1e-12);
        assert!((m.mean() - 0.625).abs() < 1e-12);
        for d in &dists {
            assert!((d.total_weight() - 1.0).abs() < 1e-12, "{} {}", d.stage, d.cell);
        }
    }

    #[test]
    fn uniform_ratios() {
        let t = toy();
        let ones = RatioSet::uniform(&t, &[1.0, 1.0]).unwrap();
        assert_eq!(verify_normalization(&t, &ones).max_residual(), 0.0);
        assert_eq!(primal_value(&t, &ones).unwrap(), 0.5);
        let big = RatioSet::uniform(&t, &[3.0, 3.0]).unwrap();
        let rep = verify_normalization(&t, &big);
        assert_eq!(rep.residuals[0].period, 1);
        assert!((rep.residuals[0].residual - 2.0).abs() < 1e-15);
        assert!(primal_value(&t, &big).is_err());
    }

    #[test]
    fn lower_direction_attains() {
        let t = toy();
        let spec = SensitivitySpec::primary(vec![2.0, 3.0]).unwrap();
        let r = sharp_bound_primary(&t, &spec, Direction::Lower).unwrap();
        let ratios = optimal_lambda(&t, &r.q_opt, &spec, Direction::Lower).unwrap();
        assert!((primal_value(&t, &ratios).unwrap() - r.value).abs() < 1e-12);
    }
}
