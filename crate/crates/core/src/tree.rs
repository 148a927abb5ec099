//! Discrete covariate-history cell trees and the ICE functional.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::law::{discretize_conditional, history_label, ObservedLaw, SupportNode, TreatmentStrategy, WeightedSupport};
use crate::sample::Trajectory;

/// One covariate-history cell at some level `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    /// Label indices `(l_0, ..., l_k)`.
    pub labels: Vec<usize>,
    /// Probability of the history along the strategy (product of the
    /// baseline marginal and the follower transition probabilities).
    pub reach: f64,
    /// Probability of `l_k` given the parent cell; the baseline marginal at level 0.
    pub cond_weight: f64,
    /// Propensity `π*_k` of taking the strategy's action in this cell.
    pub propensity: f64,
    pub parent: Option<usize>,
    /// Children in the next level, or the cell's own index at the last level.
    pub children: Range<usize>,
    /// Terminal cells below this one.
    pub terminals: Range<usize>,
    /// Flattened outcome nodes below this one.
    pub nodes: Range<usize>,
}

/// Immutable cell tree along one strategy with sorted finite outcome supports.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTree {
    strategy: TreatmentStrategy,
    label_names: Vec<Vec<String>>,
    levels: Vec<Vec<Cell>>,
    supports: Vec<WeightedSupport>,
    node_y: Vec<f64>,
    node_w: Vec<f64>,
    node_terminal: Vec<usize>,
}

/// Input for [`CellTree::from_cells`]: a cell and its subtree.
#[derive(Debug, Clone)]
pub enum CellSpec {
    Inner { label: usize, weight: f64, propensity: f64, children: Vec<CellSpec> },
    Terminal { label: usize, weight: f64, propensity: f64, support: WeightedSupport },
}

impl CellTree {
    /// Builds a tree from nested cell descriptions. Conditional weights of
    /// siblings are renormalized to sum to one; cells with zero weight are
    /// dropped.
    pub fn from_cells(strategy: TreatmentStrategy, label_names: Vec<Vec<String>>, roots: Vec<CellSpec>) -> Result<Self> {
        let k = strategy.periods();
        let mut levels: Vec<Vec<Cell>> = vec![Vec::new(); k];
        let mut supports = Vec::new();
        let mut frontier: Vec<(Option<usize>, Vec<usize>, f64, Vec<CellSpec>)> = vec![(None, Vec::new(), 1.0, roots)];
        for (level, slot) in levels.iter_mut().enumerate() {
            let mut next = Vec::new();
            for (parent, prefix, parent_reach, specs) in frontier {
                let kept: Vec<CellSpec> = specs.into_iter().filter(|s| spec_weight(s) > 0.0).collect();
                if kept.is_empty() {
                    return Err(Error::IncompleteLaw {
                        what: "children".into(),
                        cell: if prefix.is_empty() { "root".into() } else { history_label(&label_names, &prefix) },
                    });
                }
                let total: f64 = kept.iter().map(spec_weight).sum();
                if !total.is_finite() {
                    return Err(Error::NonFinite("cell weights"));
                }
                for spec in kept {
                    let (label, weight, propensity, rest) = match spec {
                        CellSpec::Inner { label, weight, propensity, children } => {
                            if level + 1 == k {
                                return Err(Error::InvalidParameter("inner cell at terminal level".into()));
                            }
                            (label, weight, propensity, Ok(children))
                        }
                        CellSpec::Terminal { label, weight, propensity, support } => {
                            if level + 1 != k {
                                return Err(Error::InvalidParameter("terminal cell above the last level".into()));
                            }
                            (label, weight, propensity, Err(support))
                        }
                    };
                    let mut labels = prefix.clone();
                    labels.push(label);
                    if !(propensity > 0.0 && propensity <= 1.0) {
                        return Err(Error::Positivity { cell: history_label(&label_names, &labels), value: propensity });
                    }
                    let cond_weight = weight / total;
                    let reach = parent_reach * cond_weight;
                    let idx = slot.len();
                    match rest {
                        Ok(children) => next.push((Some(idx), labels.clone(), reach, children)),
                        Err(support) => supports.push(support.sorted()),
                    }
                    slot.push(Cell {
                        labels,
                        reach,
                        cond_weight,
                        propensity,
                        parent,
                        children: 0..0,
                        terminals: 0..0,
                        nodes: 0..0,
                    });
                }
            }
            frontier = next;
        }
        // Children ranges: cells are pushed parent by parent, so each
        // parent's children are contiguous.
        for level in 1..k {
            let (upper, lower) = levels.split_at_mut(level);
            let parents = &mut upper[level - 1];
            for p in parents.iter_mut() {
                p.children = 0..0;
            }
            for (i, c) in lower[0].iter().enumerate() {
                let p = &mut parents[c.parent.expect("non-root cell has a parent")];
                if p.children.is_empty() {
                    p.children = i..i + 1;
                } else {
                    p.children.end = i + 1;
                }
            }
        }
        let mut node_y = Vec::new();
        let mut node_w = Vec::new();
        let mut node_terminal = Vec::new();
        let mut offsets = Vec::with_capacity(supports.len() + 1);
        for (t, s) in supports.iter().enumerate() {
            offsets.push(node_y.len());
            for n in s.nodes() {
                node_y.push(n.y);
                node_w.push(n.w);
                node_terminal.push(t);
            }
        }
        offsets.push(node_y.len());
        for (t, c) in levels[k - 1].iter_mut().enumerate() {
            c.children = t..t + 1;
            c.terminals = t..t + 1;
            c.nodes = offsets[t]..offsets[t + 1];
        }
        for level in (0..k - 1).rev() {
            let (upper, lower) = levels.split_at_mut(level + 1);
            for c in upper[level].iter_mut() {
                let first = &lower[0][c.children.start];
                let last = &lower[0][c.children.end - 1];
                c.terminals = first.terminals.start..last.terminals.end;
                c.nodes = first.nodes.start..last.nodes.end;
            }
        }
        Ok(Self { strategy, label_names, levels, supports, node_y, node_w, node_terminal })
    }

    /// Single chain of cells, one per period, ending in `support`.
    pub(crate) fn chain(strategy: TreatmentStrategy, propensities: &[f64], support: WeightedSupport) -> Result<Self> {
        let k = propensities.len();
        let mut spec = CellSpec::Terminal { label: 0, weight: 1.0, propensity: propensities[k - 1], support };
        for &pi in propensities[..k - 1].iter().rev() {
            spec = CellSpec::Inner { label: 0, weight: 1.0, propensity: pi, children: vec![spec] };
        }
        Self::from_cells(strategy, vec![vec!["0".into()]; k], vec![spec])
    }

    pub fn strategy(&self) -> &TreatmentStrategy {
        &self.strategy
    }

    pub fn periods(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[Vec<Cell>] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &[Cell] {
        &self.levels[k]
    }

    pub fn terminals(&self) -> &[Cell] {
        &self.levels[self.levels.len() - 1]
    }

    /// Sorted outcome support of terminal cell `t`.
    pub fn support(&self, t: usize) -> &WeightedSupport {
        &self.supports[t]
    }

    pub fn supports(&self) -> &[WeightedSupport] {
        &self.supports
    }

    pub fn label_names(&self) -> &[Vec<String>] {
        &self.label_names
    }

    /// Cell label such as `0,1`.
    pub fn cell_label(&self, k: usize, idx: usize) -> String {
        history_label(&self.label_names, &self.levels[k][idx].labels)
    }

    pub fn node_count(&self) -> usize {
        self.node_y.len()
    }

    /// Outcome values of all nodes, terminal by terminal.
    pub fn node_values(&self) -> &[f64] {
        &self.node_y
    }

    /// Weights of nodes within their terminal cell.
    pub fn node_weights(&self) -> &[f64] {
        &self.node_w
    }

    pub fn node_terminal(&self) -> &[usize] {
        &self.node_terminal
    }

    /// Index of the level-`k` ancestor of terminal `t`.
    pub fn ancestor(&self, t: usize, k: usize) -> usize {
        let last = self.periods() - 1;
        let mut idx = t;
        for level in (k + 1..=last).rev() {
            idx = self.levels[level][idx].parent.expect("non-root cell has a parent");
        }
        idx
    }

    /// Conditional probability of each node below cell `(k, idx)` given the
    /// cell, in node order.
    pub fn node_cond_weights(&self, k: usize, idx: usize) -> Vec<f64> {
        let cell = &self.levels[k][idx];
        let last = self.periods() - 1;
        let mut out = Vec::with_capacity(cell.nodes.len());
        for t in cell.terminals.clone() {
            let mut w = 1.0;
            let mut j = t;
            for level in (k + 1..=last).rev() {
                let c = &self.levels[level][j];
                w *= c.cond_weight;
                j = c.parent.expect("non-root cell has a parent");
            }
            let tc = &self.levels[last][t];
            for n in tc.nodes.clone() {
                out.push(w * self.node_w[n]);
            }
        }
        out
    }

    /// Copy with every outcome value passed through `f`; supports are re-sorted.
    pub fn map_outcomes(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let mut out = self.clone();
        for s in out.supports.iter_mut() {
            *s = s.map_values(&f).sorted();
            if s.nodes().iter().any(|n| !n.y.is_finite()) {
                return Err(Error::NonFinite("transformed outcome"));
            }
        }
        out.node_y = out.supports.iter().flat_map(|s| s.nodes().iter().map(|n| n.y)).collect();
        out.node_w = out.supports.iter().flat_map(|s| s.nodes().iter().map(|n| n.w)).collect();
        Ok(out)
    }

    /// Outcome-negated tree, used for lower bounds.
    pub fn negated(&self) -> Self {
        self.map_outcomes(|y| -y).expect("negation keeps values finite")
    }

    pub fn shifted(&self, c: f64) -> Result<Self> {
        self.map_outcomes(|y| y + c)
    }

    /// Replaces the propensities of every level-`k` cell.
    pub fn with_propensities(&self, f: impl Fn(usize, &Cell) -> f64) -> Result<Self> {
        let mut out = self.clone();
        for (k, level) in out.levels.iter_mut().enumerate() {
            for c in level.iter_mut() {
                let p = f(k, c);
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::Positivity { cell: history_label(&self.label_names, &c.labels), value: p });
                }
                c.propensity = p;
            }
        }
        Ok(out)
    }

    pub fn with_label_names(mut self, names: Vec<Vec<String>>) -> Self {
        self.label_names = names;
        self
    }
}

fn spec_weight(s: &CellSpec) -> f64 {
    match s {
        CellSpec::Inner { weight, .. } | CellSpec::Terminal { weight, .. } => *weight,
    }
}

/// Builds the cell tree of `law` along `strategy`, discretizing Gaussian
/// outcome conditionals with `n_nodes` Gauss–Hermite nodes.
pub fn build_cell_tree(law: &ObservedLaw, strategy: &TreatmentStrategy, n_nodes: usize) -> Result<CellTree> {
    if n_nodes == 0 {
        return Err(Error::InvalidParameter("n_nodes must be positive".into()));
    }
    if strategy.periods() != law.periods() {
        return Err(Error::InvalidParameter(format!(
            "strategy {strategy} has {} periods, law has {}",
            strategy.periods(),
            law.periods()
        )));
    }
    let arm = law.arm(strategy)?;
    let k = law.periods();
    let missing = |what: &str, h: &[usize]| Error::IncompleteLaw { what: what.into(), cell: law.history_label(h) };

    fn build(
        arm: &crate::law::ArmLaw,
        history: Vec<usize>,
        weight: f64,
        k: usize,
        n_nodes: usize,
        missing: &dyn Fn(&str, &[usize]) -> Error,
    ) -> Result<CellSpec> {
        let label = *history.last().expect("nonempty history");
        let propensity = *arm.propensities.get(&history).ok_or_else(|| missing("propensity", &history))?;
        if history.len() == k {
            let cond = arm.outcomes.get(&history).ok_or_else(|| missing("outcome", &history))?;
            let support = discretize_conditional(cond, n_nodes)?;
            return Ok(CellSpec::Terminal { label, weight, propensity, support });
        }
        let trans = arm.transitions.get(&history).ok_or_else(|| missing("transition", &history))?;
        let mut children = Vec::new();
        for (l, &p) in trans.iter().enumerate() {
            if p > 0.0 {
                let mut h = history.clone();
                h.push(l);
                children.push(build(arm, h, p, k, n_nodes, missing)?);
            }
        }
        Ok(CellSpec::Inner { label, weight, propensity, children })
    }

    let mut roots = Vec::new();
    for (l, &p) in law.baseline_marginal().iter().enumerate() {
        if p > 0.0 {
            roots.push(build(arm, vec![l], p, k, n_nodes, &missing)?);
        }
    }
    CellTree::from_cells(strategy.clone(), law.covariate_supports().to_vec(), roots)
}

/// Empirical plug-in tree from trajectories: propensities are follow
/// frequencies, transitions are empirical kernels among followers and
/// terminal supports are uniform over observed outcomes.
pub fn estimate_cell_tree_from_sample(trajectories: &[Trajectory], strategy: &TreatmentStrategy) -> Result<CellTree> {
    if trajectories.is_empty() {
        return Err(Error::InvalidParameter("empty sample".into()));
    }
    let k = strategy.periods();
    let actions = strategy.actions();
    // Per history: (reached, followed), and outcomes of full followers.
    let mut counts: BTreeMap<Vec<usize>, (usize, usize)> = BTreeMap::new();
    let mut outcomes: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    let mut max_label = vec![0usize; k];
    for (i, tr) in trajectories.iter().enumerate() {
        let bad = |msg: &str| Error::InvalidParameter(format!("trajectory {i}: {msg}"));
        if tr.covariates.is_empty() || tr.covariates.len() > k {
            return Err(bad("covariate sequence length out of range"));
        }
        let mut history = Vec::with_capacity(k);
        for period in 0..k {
            let Some(&l) = tr.covariates.get(period) else {
                return Err(bad("follower is missing a covariate"));
            };
            max_label[period] = max_label[period].max(l);
            history.push(l);
            let entry = counts.entry(history.clone()).or_default();
            entry.0 += 1;
            let Some(&a) = tr.treatments.get(period) else {
                return Err(bad("missing treatment"));
            };
            if a != actions[period] {
                break;
            }
            entry.1 += 1;
            if period + 1 == k {
                let y = tr.outcome.ok_or_else(|| bad("full follower has no outcome"))?;
                if !y.is_finite() {
                    return Err(Error::NonFinite("sample outcome"));
                }
                outcomes.entry(history.clone()).or_default().push(y);
            }
        }
    }
    let names: Vec<Vec<String>> = max_label.iter().map(|&m| (0..=m).map(|l| l.to_string()).collect()).collect();

    fn build(
        history: Vec<usize>,
        k: usize,
        counts: &BTreeMap<Vec<usize>, (usize, usize)>,
        outcomes: &BTreeMap<Vec<usize>, Vec<f64>>,
        names: &[Vec<String>],
    ) -> Result<CellSpec> {
        let (reached, followed) = counts[&history];
        let label = *history.last().expect("nonempty history");
        if followed == 0 {
            return Err(Error::IncompleteLaw { what: "strategy followers".into(), cell: history_label(names, &history) });
        }
        let propensity = followed as f64 / reached as f64;
        if history.len() == k {
            let support = WeightedSupport::empirical(&outcomes[&history])?;
            return Ok(CellSpec::Terminal { label, weight: reached as f64, propensity, support });
        }
        let mut children = Vec::new();
        for (h, _) in counts.range(history.clone()..) {
            if !h.starts_with(&history) {
                break;
            }
            if h.len() == history.len() + 1 {
                children.push(build(h.clone(), k, counts, outcomes, names)?);
            }
        }
        Ok(CellSpec::Inner { label, weight: reached as f64, propensity, children })
    }

    let roots = counts
        .keys()
        .filter(|h| h.len() == 1)
        .map(|h| build(h.clone(), k, &counts, &outcomes, &names))
        .collect::<Result<Vec<_>>>()?;
    CellTree::from_cells(strategy.clone(), names, roots)
}

/// Iterated conditional expectation of `transform(history, Y)` along the tree.
pub fn ice_functional(tree: &CellTree, transform: impl Fn(&[usize], f64) -> f64) -> f64 {
    tree.terminals()
        .iter()
        .enumerate()
        .map(|(t, cell)| {
            let s: f64 = tree.support(t).nodes().iter().map(|n: &SupportNode| n.w * transform(&cell.labels, n.y)).sum();
            cell.reach * s
        })
        .sum()
}

/// Counterfactual mean under sequential unconfounding.
pub fn point_identified_mean(tree: &CellTree) -> f64 {
    ice_functional(tree, |_, y| y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> CellTree {
        let pm = |y| WeightedSupport::point_mass(y).unwrap();
        CellTree::from_cells(
            TreatmentStrategy::always_treat(2).unwrap(),
            vec![vec!["a".into()], vec!["0".into(), "1".into()]],
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
    fn toy_structure() {
        let t = toy();
        assert_eq!(t.periods(), 2);
        assert_eq!(t.level(0)[0].children, 0..2);
        assert_eq!(t.level(0)[0].nodes, 0..2);
        assert_eq!(t.terminals()[1].reach, 0.5);
        assert_eq!(t.ancestor(1, 0), 0);
        assert_eq!(t.cell_label(1, 1), "a,1");
        assert_eq!(point_identified_mean(&t), 0.5);
        assert_eq!(ice_functional(&t, |_, _| 1.0), 1.0);
        assert_eq!(t.node_cond_weights(0, 0), vec![0.5, 0.5]);
    }

    #[test]
    fn negation_and_shift() {
        let t = toy();
        assert_eq!(point_identified_mean(&t.negated()), -0.5);
        assert!((point_identified_mean(&t.shifted(2.0).unwrap()) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn single_follower_sample() {
        let s = TreatmentStrategy::always_treat(2).unwrap();
        let tr = Trajectory { covariates: vec![0, 1], treatments: vec![1, 1], outcome: Some(3.0) };
        let t = estimate_cell_tree_from_sample(&[tr], &s).unwrap();
        assert_eq!(t.level(0)[0].reach, 1.0);
        assert_eq!(t.level(0)[0].propensity, 1.0);
        assert_eq!(t.terminals()[0].reach, 1.0);
        assert_eq!(point_identified_mean(&t), 3.0);
    }

    #[test]
    fn cell_without_followers_is_incomplete() {
        let s = TreatmentStrategy::always_treat(2).unwrap();
        let a = Trajectory { covariates: vec![0, 0], treatments: vec![1, 1], outcome: Some(1.0) };
        let b = Trajectory { covariates: vec![1], treatments: vec![0], outcome: None };
        let err = estimate_cell_tree_from_sample(&[a, b], &s).unwrap_err();
        assert!(matches!(err, Error::IncompleteLaw { .. }), "{err:?}");
    }
}
