//! Conservative bounds under the product sensitivity model.
//!
//! Two recursions are implemented. The forward one applies, per period,
//! the outcome channel to the running transformed value and combines it
//! with the covariate channel. The backward one is a functional recursion
//! on conditional expectations. Each is exact in one restricted case and
//! otherwise minimized by coordinate descent warm-started from the primary
//! solution at the matched joint parameters.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::kernel::{Direction, EtaStepParams, ProdStepParams};
use crate::law::TreatmentStrategy;
use crate::tree::CellTree;

use super::primary::solve_upper;
use super::search::coordinate_descent;
use super::{BoundOptions, BoundResult, Diagnostics, Exactness, Model, QAssignment, Scheme, SensitivitySpec};

fn channels(spec: &SensitivitySpec) -> Result<(&[f64], &[f64])> {
    match spec {
        SensitivitySpec::Product { lambda_l, lambda_y } => Ok((lambda_l, lambda_y)),
        _ => Err(Error::InvalidParameter("product bounds need a product spec".into())),
    }
}

/// Per-cell step parameters and terminal ancestors.
struct Ctx<'a> {
    tree: &'a CellTree,
    params: Vec<Vec<ProdStepParams>>,
    /// `anc[k][t]`: level-`k` ancestor of terminal `t`.
    anc: Vec<Vec<usize>>,
}

impl<'a> Ctx<'a> {
    fn new(tree: &'a CellTree, lambda_l: &[f64], lambda_y: &[f64]) -> Result<Self> {
        let params = tree
            .levels()
            .iter()
            .enumerate()
            .map(|(k, level)| {
                level.iter().map(|c| ProdStepParams::new(c.propensity, lambda_l[k], lambda_y[k])).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let nt = tree.terminals().len();
        let anc = (0..tree.periods()).map(|k| (0..nt).map(|t| tree.ancestor(t, k)).collect()).collect();
        Ok(Self { tree, params, anc })
    }

    fn k(&self) -> usize {
        self.tree.periods()
    }

    /// Forward recursion value of one node of terminal `t`.
    fn v1_node(&self, y: f64, t: usize, ql: &[Vec<f64>], qy: &[Vec<f64>]) -> f64 {
        let mut z = y;
        for k in 0..self.k() {
            let c = self.anc[k][t];
            let p = &self.params[k][c];
            let yc = p.y_channel(z, qy[k][t]);
            let q_l = if k + 1 < self.k() { ql[k][c] } else { 0.0 };
            z = p.combine(z, yc, q_l);
        }
        z
    }

    fn v1_terminal(&self, t: usize, ql: &[Vec<f64>], qy: &[Vec<f64>]) -> f64 {
        self.tree.support(t).nodes().iter().map(|n| n.w * self.v1_node(n.y, t, ql, qy)).sum()
    }

    /// Backward recursion: conditional expectation over cell `(k, ci)` of
    /// the level-`k` functional applied to node values `b`.
    fn v2_cell(&self, k: usize, ci: usize, b: &[f64], ql: &[Vec<f64>], qy: &[Vec<f64>]) -> f64 {
        let tree = self.tree;
        let cell = &tree.level(k)[ci];
        let last = self.k() - 1;
        if k == last {
            let p = &self.params[k][ci];
            let w = &tree.node_weights()[cell.nodes.clone()];
            return w.iter().zip(b).map(|(w, &v)| w * p.combine(v, p.y_channel(v, qy[k][ci]), 0.0)).sum();
        }
        let p = &self.params[k][ci];
        let off = cell.nodes.start;
        let mut acc = 0.0;
        for d in cell.children.clone() {
            let dc = &tree.level(k + 1)[d];
            let bd = &b[dc.nodes.start - off..dc.nodes.end - off];
            let plain = self.v2_cell(k + 1, d, bd, ql, qy);
            let shifted: Vec<f64> = if p.lambda_y() == 1.0 {
                bd.to_vec()
            } else {
                dc.nodes
                    .clone()
                    .zip(bd)
                    .map(|(i, &v)| p.y_channel(v, qy[k][tree.node_terminal()[i]]))
                    .collect()
            };
            let tilted = if p.lambda_y() == 1.0 { plain } else { self.v2_cell(k + 1, d, &shifted, ql, qy) };
            acc += dc.cond_weight * p.combine(plain, tilted, ql[k][ci]);
        }
        acc
    }

    fn v2_root(&self, r: usize, ql: &[Vec<f64>], qy: &[Vec<f64>]) -> f64 {
        let cell = &self.tree.level(0)[r];
        self.v2_cell(0, r, &self.tree.node_values()[cell.nodes.clone()], ql, qy)
    }

    /// Interval holding every argument of every threshold in the upper
    /// problem, so line searches over it cannot miss a minimizer.
    fn bracket(&self) -> (f64, f64) {
        let y = self.tree.node_values();
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for level in &self.params {
            let grow = level
                .iter()
                .map(|p| {
                    let cy = p.lambda_y() - p.lambda_y().recip();
                    let cl = p.lambda_l() - p.lambda_l().recip();
                    cy + cl * (1.0 + cy)
                })
                .fold(0.0, f64::max);
            hi += grow * (hi - lo);
        }
        (lo, hi.max(lo))
    }
}

/// Covariate-channel and outcome-channel thresholds per level.
type QPair = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn shape_q(tree: &CellTree, q: &QAssignment) -> Result<QPair> {
    let QAssignment::Product { covariate, outcome } = q else {
        return Err(Error::InvalidParameter("product objective needs product thresholds".into()));
    };
    let k = tree.periods();
    let nt = tree.terminals().len();
    if covariate.len() + 1 != k.max(1) || outcome.len() != k {
        return Err(Error::InvalidParameter("threshold levels do not match the tree depth".into()));
    }
    for (j, c) in covariate.iter().enumerate() {
        if c.len() != tree.level(j).len() {
            return Err(Error::InvalidParameter(format!("covariate thresholds at level {j} have the wrong length")));
        }
    }
    if outcome.iter().any(|o| o.len() != nt) {
        return Err(Error::InvalidParameter("outcome thresholds need one value per terminal cell".into()));
    }
    if covariate.iter().chain(outcome).flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("threshold"));
    }
    // Internally the covariate channel carries a row for the last level too.
    let mut ql = covariate.clone();
    ql.push(vec![0.0; tree.level(k - 1).len()]);
    Ok((ql, outcome.clone()))
}

fn objective(
    tree: &CellTree,
    spec: &SensitivitySpec,
    direction: Direction,
    q: &QAssignment,
    eval: impl Fn(&Ctx, &[Vec<f64>], &[Vec<f64>]) -> f64,
) -> Result<f64> {
    let (lambda_l, lambda_y) = channels(spec)?;
    spec.check_periods(tree.periods(), &BoundOptions { max_periods: usize::MAX, ..Default::default() })?;
    let (work, q) = match direction {
        Direction::Upper => (Cow::Borrowed(tree), Cow::Borrowed(q)),
        Direction::Lower => (Cow::Owned(tree.negated()), Cow::Owned(q.negated())),
    };
    let (ql, qy) = shape_q(&work, &q)?;
    let ctx = Ctx::new(&work, lambda_l, lambda_y)?;
    let v = eval(&ctx, &ql, &qy);
    Ok(match direction {
        Direction::Upper => v,
        Direction::Lower => -v,
    })
}

/// Forward-recursion objective at given thresholds.
pub fn prod_v1_objective(tree: &CellTree, spec: &SensitivitySpec, direction: Direction, q: &QAssignment) -> Result<f64> {
    objective(tree, spec, direction, q, |ctx, ql, qy| {
        ctx.tree.terminals().iter().enumerate().map(|(t, c)| c.reach * ctx.v1_terminal(t, ql, qy)).sum()
    })
}

/// Backward-recursion objective at given thresholds.
pub fn prod_v2_objective(tree: &CellTree, spec: &SensitivitySpec, direction: Direction, q: &QAssignment) -> Result<f64> {
    objective(tree, spec, direction, q, |ctx, ql, qy| {
        ctx.tree.level(0).iter().enumerate().map(|(r, c)| c.reach * ctx.v2_root(r, ql, qy)).sum()
    })
}

struct Raw {
    value: f64,
    ql: Vec<Vec<f64>>,
    qy: Vec<Vec<f64>>,
    diagnostics: Diagnostics,
    exactness: Exactness,
}

/// Warm start from the primary solution with `Λ_k = Λ_{k,L} Λ_{k,Y}`.
fn warm_start(ctx: &Ctx, lambda_l: &[f64], lambda_y: &[f64]) -> Result<QPair> {
    let joint: Vec<f64> = lambda_l.iter().zip(lambda_y).map(|(a, b)| a * b).collect();
    let s = solve_upper(ctx.tree, &joint)?;
    let nt = ctx.tree.terminals().len();
    let qy = (0..ctx.k()).map(|k| (0..nt).map(|t| s.q[k][ctx.anc[k][t]]).collect()).collect();
    Ok((s.q, qy))
}

/// Coordinate descent, one level-0 block at a time (blocks do not interact).
fn descend(
    ctx: &Ctx,
    mut ql: Vec<Vec<f64>>,
    mut qy: Vec<Vec<f64>>,
    options: &BoundOptions,
    block_value: impl Fn(usize, &[Vec<f64>], &[Vec<f64>]) -> f64,
) -> Result<Raw> {
    let tree = ctx.tree;
    let k_total = ctx.k();
    let (lo, hi) = ctx.bracket();
    let mut total = 0.0;
    let mut evaluations = 0;
    let mut worst_improvement = 0.0f64;
    for (r, root) in tree.level(0).iter().enumerate() {
        // Variables of this block: covariate thresholds of its cells below
        // the last level, outcome thresholds of its terminals.
        let mut vars: Vec<(bool, usize, usize)> = Vec::new();
        let mut range = r..r + 1;
        for k in 0..k_total {
            if k + 1 < k_total {
                for c in range.clone() {
                    vars.push((true, k, c));
                }
                let first = tree.level(k)[range.start].children.start;
                let last = tree.level(k)[range.end - 1].children.end;
                range = first..last;
            }
        }
        for k in 0..k_total {
            for t in root.terminals.clone() {
                vars.push((false, k, t));
            }
        }
        let x0: Vec<f64> = vars.iter().map(|&(is_l, k, i)| if is_l { ql[k][i] } else { qy[k][i] }).collect();
        let res = {
            let mut ql_w = ql.clone();
            let mut qy_w = qy.clone();
            coordinate_descent(
                x0,
                |_| (lo, hi),
                |x| {
                    for (&(is_l, k, i), &v) in vars.iter().zip(x) {
                        if is_l {
                            ql_w[k][i] = v;
                        } else {
                            qy_w[k][i] = v;
                        }
                    }
                    block_value(r, &ql_w, &qy_w)
                },
                options.sweep_tol,
                options.max_sweeps,
            )
        };
        if !res.converged {
            return Err(Error::NonConvergence { best: res.fx, gap: res.final_improvement });
        }
        for (&(is_l, k, i), &v) in vars.iter().zip(&res.x) {
            if is_l {
                ql[k][i] = v;
            } else {
                qy[k][i] = v;
            }
        }
        total += root.reach * res.fx;
        evaluations += res.evaluations;
        worst_improvement = worst_improvement.max(res.final_improvement.abs());
    }
    Ok(Raw {
        value: total,
        ql,
        qy,
        diagnostics: Diagnostics { evaluations, final_improvement: worst_improvement, scheme: Scheme::CoordinateDescent },
        exactness: Exactness::Conservative,
    })
}

fn v1_upper(tree: &CellTree, lambda_l: &[f64], lambda_y: &[f64], options: &BoundOptions) -> Result<Raw> {
    let ctx = Ctx::new(tree, lambda_l, lambda_y)?;
    let k_total = tree.periods();
    if lambda_l.iter().all(|&l| l == 1.0) {
        // Separable per terminal: a primary problem on each terminal's chain.
        let nt = tree.terminals().len();
        let mut qy = vec![vec![0.0; nt]; k_total];
        let mut value = 0.0;
        let mut evaluations = 0;
        for (t, cell) in tree.terminals().iter().enumerate() {
            let pis: Vec<f64> = (0..k_total).map(|k| tree.level(k)[ctx.anc[k][t]].propensity).collect();
            let chain = CellTree::chain(TreatmentStrategy::always_treat(k_total)?, &pis, tree.support(t).clone())?;
            let s = solve_upper(&chain, lambda_y)?;
            for k in 0..k_total {
                qy[k][t] = s.q[k][0];
            }
            value += cell.reach * s.value;
            evaluations += chain.node_count() * k_total;
        }
        // Covariate thresholds are inert here; report the first terminal's.
        let ql = (0..k_total)
            .map(|k| tree.level(k).iter().map(|c| qy[k][c.terminals.start]).collect())
            .collect();
        return Ok(Raw {
            value,
            ql,
            qy,
            diagnostics: Diagnostics { evaluations, final_improvement: 0.0, scheme: Scheme::Nested },
            exactness: Exactness::Sharp,
        });
    }
    let (ql, qy) = warm_start(&ctx, lambda_l, lambda_y)?;
    descend(&ctx, ql, qy, options, |r, ql, qy| {
        let root = &tree.level(0)[r];
        root.terminals.clone().map(|t| (tree.terminals()[t].reach / root.reach) * ctx.v1_terminal(t, ql, qy)).sum()
    })
}

/// Smallest value whose cumulative weight reaches `tau` of the total.
fn weighted_quantile(mut pts: Vec<(f64, f64)>, tau: f64) -> f64 {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pts.iter().map(|p| p.1).sum();
    let target = tau * total - 1e-12 * total;
    let mut acc = 0.0;
    for &(v, w) in &pts {
        acc += w;
        if acc >= target {
            return v;
        }
    }
    pts[pts.len() - 1].0
}

fn v2_upper(tree: &CellTree, lambda_l: &[f64], lambda_y: &[f64], options: &BoundOptions) -> Result<Raw> {
    let ctx = Ctx::new(tree, lambda_l, lambda_y)?;
    let k_total = tree.periods();
    if lambda_y[..k_total - 1].iter().all(|&l| l == 1.0) {
        // Sequential weighted quantiles from the terminals up.
        let nt = tree.terminals().len();
        let mut qy = vec![vec![0.0; nt]; k_total];
        let mut ql: Vec<Vec<f64>> = tree.levels().iter().map(|l| vec![0.0; l.len()]).collect();
        let last = k_total - 1;
        let mut values: Vec<f64> = Vec::with_capacity(nt);
        for (t, cell) in tree.terminals().iter().enumerate() {
            let p = EtaStepParams::new(cell.propensity, lambda_y[last], Direction::Upper)?;
            let s = tree.support(t);
            let q = weighted_quantile(s.nodes().iter().map(|n| (n.y, n.w)).collect(), p.tau());
            qy[last][t] = q;
            values.push(s.nodes().iter().map(|n| n.w * p.upper(n.y, q)).sum());
        }
        for k in (0..last).rev() {
            let mut next = Vec::with_capacity(tree.level(k).len());
            for (ci, cell) in tree.level(k).iter().enumerate() {
                let p = EtaStepParams::new(cell.propensity, lambda_l[k], Direction::Upper)?;
                let pts: Vec<(f64, f64)> =
                    cell.children.clone().map(|d| (values[d], tree.level(k + 1)[d].cond_weight)).collect();
                let q = weighted_quantile(pts.clone(), p.tau());
                ql[k][ci] = q;
                next.push(pts.iter().map(|&(v, w)| w * p.upper(v, q)).sum());
            }
            values = next;
        }
        let value = tree.level(0).iter().zip(&values).map(|(c, v)| c.reach * v).sum();
        // Outcome thresholds of earlier periods are inert; mirror the covariate ones.
        for k in 0..last {
            for t in 0..nt {
                qy[k][t] = ql[k][ctx.anc[k][t]];
            }
        }
        return Ok(Raw {
            value,
            ql,
            qy,
            diagnostics: Diagnostics { evaluations: tree.node_count(), final_improvement: 0.0, scheme: Scheme::Sequential },
            exactness: Exactness::Sharp,
        });
    }
    let (ql, qy) = warm_start(&ctx, lambda_l, lambda_y)?;
    descend(&ctx, ql, qy, options, |r, ql, qy| ctx.v2_root(r, ql, qy))
}

fn finish(tree: &CellTree, spec: &SensitivitySpec, direction: Direction, options: &BoundOptions, model: Model) -> Result<BoundResult> {
    let (lambda_l, lambda_y) = channels(spec)?;
    spec.check_periods(tree.periods(), options)?;
    let work = match direction {
        Direction::Upper => Cow::Borrowed(tree),
        Direction::Lower => Cow::Owned(tree.negated()),
    };
    let raw = match model {
        Model::ProdV1 => v1_upper(&work, lambda_l, lambda_y, options)?,
        Model::ProdV2 => v2_upper(&work, lambda_l, lambda_y, options)?,
        _ => unreachable!("only product components are finished here"),
    };
    let mut covariate = raw.ql;
    covariate.truncate(tree.periods() - 1);
    let q_opt = QAssignment::Product { covariate, outcome: raw.qy };
    let (value, q_opt) = match direction {
        Direction::Upper => (raw.value, q_opt),
        Direction::Lower => (-raw.value, q_opt.negated()),
    };
    Ok(BoundResult {
        value,
        direction,
        model,
        q_opt,
        diagnostics: raw.diagnostics,
        exactness: raw.exactness,
        alias_of: None,
    })
}

/// Forward-recursion bound; sharp when every covariate channel is 1.
pub fn prod_v1_bound(tree: &CellTree, spec: &SensitivitySpec, direction: Direction) -> Result<BoundResult> {
    prod_v1_bound_with(tree, spec, direction, &BoundOptions::default())
}

pub fn prod_v1_bound_with(tree: &CellTree, spec: &SensitivitySpec, direction: Direction, options: &BoundOptions) -> Result<BoundResult> {
    finish(tree, spec, direction, options, Model::ProdV1)
}

/// Backward-recursion bound; sharp when every outcome channel before the
/// last period is 1.
pub fn prod_v2_bound(tree: &CellTree, spec: &SensitivitySpec, direction: Direction) -> Result<BoundResult> {
    prod_v2_bound_with(tree, spec, direction, &BoundOptions::default())
}

pub fn prod_v2_bound_with(tree: &CellTree, spec: &SensitivitySpec, direction: Direction, options: &BoundOptions) -> Result<BoundResult> {
    finish(tree, spec, direction, options, Model::ProdV2)
}

/// The tighter of the two product bounds.
pub fn conservative_prod_bound(tree: &CellTree, spec: &SensitivitySpec, direction: Direction) -> Result<BoundResult> {
    conservative_prod_bound_with(tree, spec, direction, &BoundOptions::default())
}

pub fn conservative_prod_bound_with(
    tree: &CellTree,
    spec: &SensitivitySpec,
    direction: Direction,
    options: &BoundOptions,
) -> Result<BoundResult> {
    let v1 = prod_v1_bound_with(tree, spec, direction, options)?;
    let v2 = prod_v2_bound_with(tree, spec, direction, options)?;
    let pick_v1 = match direction {
        Direction::Upper => v1.value <= v2.value,
        Direction::Lower => v1.value >= v2.value,
    };
    let evaluations = v1.diagnostics.evaluations + v2.diagnostics.evaluations;
    let mut best = if pick_v1 { v1 } else { v2 };
    best.alias_of = Some(best.model);
    best.model = Model::Prod;
    best.diagnostics.evaluations = evaluations;
    Ok(best)
}
