//! Observed-data laws along static treatment strategies.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::quadrature::standard_normal_rule;

/// Tolerance used when checking that probability vectors sum to one.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// A static treatment strategy `(a_0, ..., a_{K-1})`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TreatmentStrategy {
    actions: Vec<u8>,
}

impl TreatmentStrategy {
    pub fn new(actions: Vec<u8>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::InvalidParameter("treatment strategy must have at least one period".into()));
        }
        if let Some(a) = actions.iter().find(|&&a| a > 1) {
            return Err(Error::InvalidParameter(format!("treatment action {a} is not binary")));
        }
        Ok(Self { actions })
    }

    /// Strategy that treats in every one of `k` periods.
    pub fn always_treat(k: usize) -> Result<Self> {
        Self::new(vec![1; k])
    }

    pub fn actions(&self) -> &[u8] {
        &self.actions
    }

    pub fn periods(&self) -> usize {
        self.actions.len()
    }
}

impl fmt::Display for TreatmentStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.actions {
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for TreatmentStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let actions = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::InvalidParameter(format!("invalid treatment action `{other}` in `{s}`"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(actions)
    }
}

/// One outcome node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportNode {
    pub y: f64,
    pub w: f64,
}

/// Finite outcome distribution with positive, normalized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSupport {
    nodes: Vec<SupportNode>,
}

impl WeightedSupport {
    /// Validates finiteness, positivity and normalization. Node order is kept.
    pub fn new(nodes: Vec<SupportNode>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::EmptySupport);
        }
        for n in &nodes {
            if !n.y.is_finite() {
                return Err(Error::NonFinite("support node value"));
            }
            if !(n.w.is_finite() && n.w > 0.0) {
                return Err(Error::InvalidParameter(format!("support weight {} must be positive", n.w)));
            }
        }
        let sum: f64 = nodes.iter().map(|n| n.w).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::NotNormalized { what: "outcome support".into(), sum });
        }
        Ok(Self { nodes })
    }

    /// Builds a support from `(y, w)` pairs, dividing by the total weight.
    pub fn normalized(pairs: &[(f64, f64)]) -> Result<Self> {
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::EmptySupport);
        }
        Self::new(pairs.iter().map(|&(y, w)| SupportNode { y, w: w / total }).collect())
    }

    /// Uniform weights over the given values.
    pub fn empirical(values: &[f64]) -> Result<Self> {
        let w = 1.0 / values.len() as f64;
        Self::new(values.iter().map(|&y| SupportNode { y, w }).collect())
    }

    pub fn point_mass(y: f64) -> Result<Self> {
        Self::new(vec![SupportNode { y, w: 1.0 }])
    }

    pub fn nodes(&self) -> &[SupportNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.nodes.iter().map(|n| n.w * n.y).sum()
    }

    /// Copy with nodes sorted by value, equal values kept in input order.
    pub fn sorted(&self) -> Self {
        let mut nodes = self.nodes.clone();
        nodes.sort_by(|a, b| a.y.total_cmp(&b.y));
        Self { nodes }
    }

    pub(crate) fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { nodes: self.nodes.iter().map(|n| SupportNode { y: f(n.y), w: n.w }).collect() }
    }
}

/// Conditional law of the outcome in a terminal cell.
#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeConditional {
    Gaussian { mean: f64, sd: f64 },
    Support(WeightedSupport),
}

impl OutcomeConditional {
    pub fn gaussian(mean: f64, sd: f64) -> Result<Self> {
        if !mean.is_finite() || !sd.is_finite() {
            return Err(Error::NonFinite("gaussian outcome parameters"));
        }
        if sd < 0.0 {
            return Err(Error::InvalidParameter(format!("standard deviation {sd} is negative")));
        }
        Ok(Self::Gaussian { mean, sd })
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Gaussian { mean, .. } => *mean,
            Self::Support(s) => s.mean(),
        }
    }
}

/// Discretizes a conditional into a weighted finite support.
///
/// Gaussians use the `n_nodes`-point Gauss–Hermite rule (a single node when
/// the standard deviation is zero); finite supports pass through unchanged.
pub fn discretize_conditional(cond: &OutcomeConditional, n_nodes: usize) -> Result<WeightedSupport> {
    if n_nodes == 0 {
        return Err(Error::InvalidParameter("n_nodes must be positive".into()));
    }
    match cond {
        OutcomeConditional::Support(s) => Ok(s.clone()),
        OutcomeConditional::Gaussian { mean, sd } => {
            if *sd == 0.0 {
                return WeightedSupport::point_mass(*mean);
            }
            let (x, w) = standard_normal_rule(n_nodes)?;
            WeightedSupport::new(x.iter().zip(&w).map(|(x, w)| SupportNode { y: mean + sd * x, w: *w }).collect())
        }
    }
}

/// Observed-data components along one treatment strategy.
///
/// Histories are keyed by covariate label indices `(l_0, ..., l_k)`:
/// propensities and transitions by level-`k` histories, outcomes by
/// terminal histories of length `K`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArmLaw {
    /// Probability of taking the strategy's action at period `k`, given the
    /// history and that the strategy was followed so far.
    pub propensities: BTreeMap<Vec<usize>, f64>,
    /// Distribution of `L_{k+1}` among followers through period `k`.
    pub transitions: BTreeMap<Vec<usize>, Vec<f64>>,
    pub outcomes: BTreeMap<Vec<usize>, OutcomeConditional>,
}

/// Generative description of the observed data along one or more strategies.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedLaw {
    periods: usize,
    covariate_supports: Vec<Vec<String>>,
    baseline_marginal: Vec<f64>,
    arms: BTreeMap<TreatmentStrategy, ArmLaw>,
}

impl ObservedLaw {
    /// Validates shapes, normalization and parameter ranges. Completeness of
    /// the arms is checked when a tree is built for a specific strategy.
    pub fn new(
        periods: usize,
        covariate_supports: Vec<Vec<String>>,
        baseline_marginal: Vec<f64>,
        arms: BTreeMap<TreatmentStrategy, ArmLaw>,
    ) -> Result<Self> {
        if periods == 0 {
            return Err(Error::InvalidParameter("law needs at least one period".into()));
        }
        if covariate_supports.len() != periods {
            return Err(Error::InvalidParameter(format!(
                "{} covariate supports for {periods} periods",
                covariate_supports.len()
            )));
        }
        if let Some(k) = covariate_supports.iter().position(|s| s.is_empty()) {
            return Err(Error::InvalidParameter(format!("covariate support {k} is empty")));
        }
        check_probability_vector(&baseline_marginal, covariate_supports[0].len(), "baseline marginal")?;
        for (strategy, arm) in &arms {
            if strategy.periods() != periods {
                return Err(Error::InvalidParameter(format!("strategy {strategy} does not have {periods} periods")));
            }
            for (h, &p) in &arm.propensities {
                validate_history(h, &covariate_supports, periods)?;
                if !(p.is_finite() && p > 0.0 && p <= 1.0) {
                    return Err(Error::Positivity { cell: history_label(&covariate_supports, h), value: p });
                }
            }
            for (h, t) in &arm.transitions {
                validate_history(h, &covariate_supports, periods - 1)?;
                let what = format!("transition at {}", history_label(&covariate_supports, h));
                check_probability_vector(t, covariate_supports[h.len()].len(), &what)?;
            }
            for h in arm.outcomes.keys() {
                if h.len() != periods {
                    return Err(Error::InvalidParameter(format!(
                        "outcome history {} is not terminal",
                        history_label(&covariate_supports, h)
                    )));
                }
                validate_history(h, &covariate_supports, periods)?;
            }
        }
        Ok(Self { periods, covariate_supports, baseline_marginal, arms })
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn covariate_supports(&self) -> &[Vec<String>] {
        &self.covariate_supports
    }

    pub fn baseline_marginal(&self) -> &[f64] {
        &self.baseline_marginal
    }

    pub fn arms(&self) -> &BTreeMap<TreatmentStrategy, ArmLaw> {
        &self.arms
    }

    pub fn arm(&self, strategy: &TreatmentStrategy) -> Result<&ArmLaw> {
        self.arms.get(strategy).ok_or_else(|| Error::IncompleteLaw {
            what: "strategy arm".into(),
            cell: strategy.to_string(),
        })
    }

    /// Human-readable history such as `0,1`.
    pub fn history_label(&self, history: &[usize]) -> String {
        history_label(&self.covariate_supports, history)
    }

    /// Copy with outcome conditionals transformed, for instance to rescale
    /// standard deviations or shift means.
    pub fn map_outcomes(&self, f: impl Fn(&[usize], &OutcomeConditional) -> OutcomeConditional) -> Self {
        let mut out = self.clone();
        for arm in out.arms.values_mut() {
            for (h, o) in arm.outcomes.iter_mut() {
                *o = f(h, o);
            }
        }
        out
    }

    /// Copy with an extra period appended in which every follower takes the
    /// action with probability `pi`, the new covariate is a singleton and the
    /// outcome law is unchanged.
    pub fn with_trailing_period(&self, action: u8, pi: f64) -> Result<Self> {
        let mut supports = self.covariate_supports.clone();
        supports.push(vec!["0".into()]);
        let mut arms = BTreeMap::new();
        for (strategy, arm) in &self.arms {
            let mut actions = strategy.actions().to_vec();
            actions.push(action);
            let mut new = arm.clone();
            new.outcomes = BTreeMap::new();
            for (h, o) in &arm.outcomes {
                new.transitions.insert(h.clone(), vec![1.0]);
                let mut ext = h.clone();
                ext.push(0);
                new.propensities.insert(ext.clone(), pi);
                new.outcomes.insert(ext, o.clone());
            }
            arms.insert(TreatmentStrategy::new(actions)?, new);
        }
        Self::new(self.periods + 1, supports, self.baseline_marginal.clone(), arms)
    }
}

pub(crate) fn history_label(supports: &[Vec<String>], history: &[usize]) -> String {
    history
        .iter()
        .enumerate()
        .map(|(k, &l)| supports.get(k).and_then(|s| s.get(l)).cloned().unwrap_or_else(|| format!("#{l}")))
        .collect::<Vec<_>>()
        .join(",")
}

fn validate_history(h: &[usize], supports: &[Vec<String>], max_len: usize) -> Result<()> {
    if h.is_empty() || h.len() > max_len {
        return Err(Error::InvalidParameter(format!("history of length {} out of range", h.len())));
    }
    for (k, &l) in h.iter().enumerate() {
        if l >= supports[k].len() {
            return Err(Error::InvalidParameter(format!("label index {l} out of range at period {k}")));
        }
    }
    Ok(())
}

pub(crate) fn check_probability_vector(p: &[f64], len: usize, what: &str) -> Result<()> {
    if p.len() != len {
        return Err(Error::InvalidParameter(format!("{what} has {} entries, expected {len}", p.len())));
    }
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidParameter(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::NotNormalized { what: what.to_string(), sum });
    }
    Ok(())
}
