//! Trajectory sampling, exact enumeration and the IPW functional.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::law::{discretize_conditional, ArmLaw, ObservedLaw, OutcomeConditional, TreatmentStrategy};

/// One observed trajectory. Sampling stops at the first departure from the
/// strategy; such trajectories carry no outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub covariates: Vec<usize>,
    pub treatments: Vec<u8>,
    pub outcome: Option<f64>,
}

impl Trajectory {
    pub fn is_censored(&self) -> bool {
        self.outcome.is_none()
    }

    /// True when every recorded treatment matches the strategy and the
    /// trajectory reaches the terminal period.
    pub fn follows(&self, strategy: &TreatmentStrategy) -> bool {
        self.treatments.len() == strategy.periods() && self.treatments == strategy.actions()
    }
}

const CHUNK: usize = 8192;

/// Indexed form of one arm: one entry per reachable history.
struct Compiled {
    periods: usize,
    baseline_cdf: Vec<f64>,
    roots: Vec<Option<usize>>,
    entries: Vec<Entry>,
}

struct Entry {
    label: usize,
    propensity: f64,
    transition_cdf: Vec<f64>,
    children: Vec<Option<usize>>,
    outcome: Option<OutcomeConditional>,
}

fn cdf(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

fn draw_index(cdf: &[f64], u: f64) -> usize {
    let total = *cdf.last().expect("nonempty distribution");
    let target = u * total;
    cdf.iter().position(|&c| target < c).unwrap_or(cdf.len() - 1)
}

impl Compiled {
    fn new(law: &ObservedLaw, strategy: &TreatmentStrategy) -> Result<Self> {
        if strategy.periods() != law.periods() {
            return Err(Error::InvalidParameter(format!("strategy {strategy} does not match the law's periods")));
        }
        let arm = law.arm(strategy)?;
        let mut entries = Vec::new();
        let roots = law
            .baseline_marginal()
            .iter()
            .enumerate()
            .map(|(l, &p)| if p > 0.0 { compile(law, arm, vec![l], &mut entries).map(Some) } else { Ok(None) })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { periods: law.periods(), baseline_cdf: cdf(law.baseline_marginal()), roots, entries })
    }

    fn draw(&self, strategy: &TreatmentStrategy, rng: &mut ChaCha8Rng) -> Trajectory {
        let actions = strategy.actions();
        let mut covariates = Vec::with_capacity(self.periods);
        let mut treatments = Vec::with_capacity(self.periods);
        let mut id = self.roots[draw_index(&self.baseline_cdf, rng.gen())].expect("drawn label has positive mass");
        for (k, &a) in actions.iter().enumerate() {
            let e = &self.entries[id];
            covariates.push(e.label);
            if rng.gen::<f64>() >= e.propensity {
                treatments.push(1 - a);
                return Trajectory { covariates, treatments, outcome: None };
            }
            treatments.push(a);
            if k + 1 < self.periods {
                id = e.children[draw_index(&e.transition_cdf, rng.gen())].expect("drawn label has positive mass");
            }
        }
        let outcome = match self.entries[id].outcome.as_ref().expect("terminal entry has an outcome") {
            OutcomeConditional::Gaussian { mean, sd } => {
                if *sd == 0.0 {
                    *mean
                } else {
                    Normal::new(*mean, *sd).expect("validated sd").sample(rng)
                }
            }
            OutcomeConditional::Support(s) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let nodes = s.nodes();
                let mut y = nodes[nodes.len() - 1].y;
                for n in nodes {
                    acc += n.w;
                    if u < acc {
                        y = n.y;
                        break;
                    }
                }
                y
            }
        };
        Trajectory { covariates, treatments, outcome: Some(outcome) }
    }
}

fn compile(law: &ObservedLaw, arm: &ArmLaw, history: Vec<usize>, entries: &mut Vec<Entry>) -> Result<usize> {
    let missing = |what: &str| Error::IncompleteLaw { what: what.into(), cell: law.history_label(&history) };
    let propensity = *arm.propensities.get(&history).ok_or_else(|| missing("propensity"))?;
    let id = entries.len();
    entries.push(Entry {
        label: *history.last().expect("nonempty history"),
        propensity,
        transition_cdf: Vec::new(),
        children: Vec::new(),
        outcome: None,
    });
    if history.len() == law.periods() {
        entries[id].outcome = Some(arm.outcomes.get(&history).ok_or_else(|| missing("outcome"))?.clone());
        return Ok(id);
    }
    let trans = arm.transitions.get(&history).ok_or_else(|| missing("transition"))?.clone();
    let mut children = Vec::with_capacity(trans.len());
    for (l, &p) in trans.iter().enumerate() {
        if p > 0.0 {
            let mut h = history.clone();
            h.push(l);
            children.push(Some(compile(law, arm, h, entries)?));
        } else {
            children.push(None);
        }
    }
    entries[id].transition_cdf = cdf(&trans);
    entries[id].children = children;
    Ok(id)
}

/// Draws `n` trajectories along `strategy`. The stream is split into fixed
/// chunks with independent generator streams, so the output depends only on
/// the seed and not on the number of worker threads.
pub fn sample_trajectories(law: &ObservedLaw, strategy: &TreatmentStrategy, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be positive".into()));
    }
    let compiled = Compiled::new(law, strategy)?;
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Vec<Trajectory>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len).map(|_| compiled.draw(strategy, &mut rng)).collect()
        })
        .collect();
    Ok(parts.into_iter().flatten().collect())
}

/// Every possible trajectory with its exact probability. Gaussian outcome
/// conditionals are discretized with `n_nodes` nodes first.
pub fn enumerate_trajectories(law: &ObservedLaw, strategy: &TreatmentStrategy, n_nodes: usize) -> Result<Vec<(Trajectory, f64)>> {
    let compiled = Compiled::new(law, strategy)?;
    let actions = strategy.actions();
    let mut out = Vec::new();

    #[allow(clippy::too_many_arguments)]
    fn walk(
        c: &Compiled,
        id: usize,
        k: usize,
        actions: &[u8],
        covs: &mut Vec<usize>,
        prob: f64,
        n_nodes: usize,
        out: &mut Vec<(Trajectory, f64)>,
    ) -> Result<()> {
        let e = &c.entries[id];
        covs.push(e.label);
        let mut treatments = actions[..k].to_vec();
        if e.propensity < 1.0 {
            treatments.push(1 - actions[k]);
            out.push((
                Trajectory { covariates: covs.clone(), treatments: treatments.clone(), outcome: None },
                prob * (1.0 - e.propensity),
            ));
            treatments.pop();
        }
        let follow = prob * e.propensity;
        if k + 1 == c.periods {
            treatments.push(actions[k]);
            let support = discretize_conditional(e.outcome.as_ref().expect("terminal entry"), n_nodes)?;
            for node in support.nodes() {
                out.push((
                    Trajectory { covariates: covs.clone(), treatments: treatments.clone(), outcome: Some(node.y) },
                    follow * node.w,
                ));
            }
        } else {
            let mut prev = 0.0;
            for (l, &cum) in e.transition_cdf.iter().enumerate() {
                let p = cum - prev;
                prev = cum;
                if let Some(child) = e.children[l] {
                    walk(c, child, k + 1, actions, covs, follow * p, n_nodes, out)?;
                }
            }
        }
        covs.pop();
        Ok(())
    }

    let mut prev = 0.0;
    for (l, &cum) in compiled.baseline_cdf.iter().enumerate() {
        let p = cum - prev;
        prev = cum;
        if let Some(root) = compiled.roots[l] {
            walk(&compiled, root, 0, actions, &mut Vec::new(), p, n_nodes, &mut out)?;
        }
    }
    Ok(out)
}

fn ipw_weight(tr: &Trajectory, arm: &ArmLaw, law: &ObservedLaw, strategy: &TreatmentStrategy) -> Result<f64> {
    if !tr.follows(strategy) {
        return Ok(0.0);
    }
    if tr.covariates.len() != strategy.periods() {
        return Err(Error::InvalidParameter("follower trajectory has the wrong number of covariates".into()));
    }
    let mut w = 1.0;
    for k in 0..strategy.periods() {
        let h = &tr.covariates[..=k];
        let pi = arm
            .propensities
            .get(h)
            .ok_or_else(|| Error::IncompleteLaw { what: "propensity".into(), cell: law.history_label(h) })?;
        w /= pi;
    }
    Ok(w)
}

/// Sample mean of `prod_k 1{A_k = a_k} / π*_k` times the transform.
pub fn ipw_functional(
    trajectories: &[Trajectory],
    law: &ObservedLaw,
    strategy: &TreatmentStrategy,
    transform: impl Fn(&[usize], f64) -> f64,
) -> Result<f64> {
    if trajectories.is_empty() {
        return Err(Error::InvalidParameter("empty sample".into()));
    }
    let arm = law.arm(strategy)?;
    let mut acc = 0.0;
    for tr in trajectories {
        let w = ipw_weight(tr, arm, law, strategy)?;
        if w != 0.0 {
            let y = tr.outcome.ok_or_else(|| Error::InvalidParameter("follower trajectory has no outcome".into()))?;
            acc += w * transform(&tr.covariates, y);
        }
    }
    Ok(acc / trajectories.len() as f64)
}

/// IPW functional under explicit trajectory probabilities, e.g. from
/// [`enumerate_trajectories`].
pub fn ipw_functional_weighted(
    trajectories: &[(Trajectory, f64)],
    law: &ObservedLaw,
    strategy: &TreatmentStrategy,
    transform: impl Fn(&[usize], f64) -> f64,
) -> Result<f64> {
    let arm = law.arm(strategy)?;
    let mut acc = 0.0;
    for (tr, p) in trajectories {
        let w = ipw_weight(tr, arm, law, strategy)?;
        if w != 0.0 {
            let y = tr.outcome.ok_or_else(|| Error::InvalidParameter("follower trajectory has no outcome".into()))?;
            acc += p * w * transform(&tr.covariates, y);
        }
    }
    Ok(acc)
}
