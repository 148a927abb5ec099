//! Sweep harness: bound grids over configurations and models, CSV output
//! and implied worst-case distributions.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use crate::bounds::{
    conservative_prod_bound_with, prod_v1_bound_with, prod_v2_bound_with, sharp_bound_primary_with, BoundOptions,
    BoundResult, Model, Scheme, SensitivitySpec,
};
use crate::error::{Error, Result};
use crate::kernel::Direction;
use crate::law::{ObservedLaw, TreatmentStrategy};
use crate::sample::sample_trajectories;
use crate::tree::{build_cell_tree, estimate_cell_tree_from_sample, CellTree};
use crate::worstcase::{construct_worst_case, optimal_lambda};

/// Column header of bounds files.
pub const BOUNDS_HEADER: [&str; 11] =
    ["config", "strategy", "model", "lambda_spec", "direction", "value", "exact", "backend", "nodes_or_n", "seed", "runtime_ms"];

/// Column header of distribution files.
pub const DISTRIBUTION_HEADER: [&str; 4] = ["stage", "cell", "y", "weight"];

/// Default number of quadrature nodes per Gaussian cell.
pub const DEFAULT_NODES: usize = 64;

/// Decimal rendering with `sig` significant digits, without exponent and
/// without trailing zeros.
pub fn format_sig(x: f64, sig: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let sig = sig.max(1);
    // Round in scientific form first so the digit count is exact.
    let sci = format!("{:.*e}", sig - 1, x);
    let rounded: f64 = sci.parse().expect("formatted float parses");
    let exp: i32 = sci.rsplit('e').next().and_then(|e| e.parse().ok()).expect("exponent present");
    let decimals = (sig as i32 - 1 - exp).max(0) as usize;
    let mut s = format!("{rounded:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

/// How the observed law is turned into a finite cell tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// Gauss–Hermite discretization of Gaussian cells.
    Quadrature { nodes: usize },
    /// Empirical tree from `n` simulated trajectories.
    MonteCarlo { n: usize, seed: u64 },
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Quadrature { .. } => "quadrature",
            Backend::MonteCarlo { .. } => "mc",
        }
    }

    pub fn size(&self) -> usize {
        match *self {
            Backend::Quadrature { nodes } => nodes,
            Backend::MonteCarlo { n, .. } => n,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match *self {
            Backend::Quadrature { .. } => None,
            Backend::MonteCarlo { seed, .. } => Some(seed),
        }
    }

    pub fn build_tree(&self, law: &ObservedLaw, strategy: &TreatmentStrategy) -> Result<CellTree> {
        match *self {
            Backend::Quadrature { nodes } => build_cell_tree(law, strategy, nodes),
            Backend::MonteCarlo { n, seed } => {
                let sample = sample_trajectories(law, strategy, n, seed)?;
                Ok(estimate_cell_tree_from_sample(&sample, strategy)?.with_label_names(law.covariate_supports().to_vec()))
            }
        }
    }
}

/// Sensitivity spec used for model `model` at grid value `lambda`:
/// every period at `lambda` for the primary and joint models, the outcome
/// channel only for `prod_v1`, the covariate channel (plus the final
/// outcome channel) for `prod_v2`, and an even split `√λ·√λ` before the
/// final period for the conservative product bound.
pub fn model_spec(model: Model, lambda: f64, periods: usize) -> Result<SensitivitySpec> {
    if periods == 0 {
        return Err(Error::InvalidParameter("no periods".into()));
    }
    let lead = periods - 1;
    let with_last = |mut v: Vec<f64>, last: f64| {
        v.push(last);
        v
    };
    match model {
        Model::Primary => SensitivitySpec::primary(vec![lambda; periods]),
        Model::Joint => SensitivitySpec::joint(vec![lambda; periods]),
        Model::ProdV1 => SensitivitySpec::product(vec![1.0; periods], vec![lambda; periods]),
        Model::ProdV2 => SensitivitySpec::product(with_last(vec![lambda; lead], 1.0), with_last(vec![1.0; lead], lambda)),
        Model::Prod => {
            let r = lambda.sqrt();
            SensitivitySpec::product(with_last(vec![r; lead], 1.0), with_last(vec![r; lead], lambda))
        }
    }
}

/// Bound for one model at one spec.
pub fn compute_bound(
    tree: &CellTree,
    model: Model,
    spec: &SensitivitySpec,
    direction: Direction,
    options: &BoundOptions,
) -> Result<BoundResult> {
    match model {
        Model::Primary | Model::Joint => sharp_bound_primary_with(tree, spec, direction, options),
        Model::ProdV1 => prod_v1_bound_with(tree, spec, direction, options),
        Model::ProdV2 => prod_v2_bound_with(tree, spec, direction, options),
        Model::Prod => conservative_prod_bound_with(tree, spec, direction, options),
    }
}

/// One row of a bounds file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config: String,
    pub strategy: String,
    pub model: Model,
    /// Grid value for sweep rows; `None` for explicitly given parameters.
    pub grid_value: Option<f64>,
    pub lambda_spec: String,
    pub direction: Direction,
    /// The bound, or the failure message.
    pub outcome: std::result::Result<BoundResult, Error>,
    pub backend: Backend,
    pub runtime_ms: u64,
}

impl RunRecord {
    pub fn value(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|r| r.value)
    }

    pub fn is_ok(&self) -> bool {
        self.outcome.is_ok()
    }

    fn fields(&self) -> [String; 11] {
        let (value, exact) = match &self.outcome {
            Ok(r) => (format_sig(r.value, 12), if r.exactness.is_sharp() { "sharp" } else { "conservative" }.to_string()),
            Err(_) => (String::new(), "failed".to_string()),
        };
        [
            self.config.clone(),
            self.strategy.clone(),
            self.model.as_str().to_string(),
            self.lambda_spec.clone(),
            self.direction.as_str().to_string(),
            value,
            exact,
            self.backend.name().to_string(),
            self.backend.size().to_string(),
            self.backend.seed().map(|s| s.to_string()).unwrap_or_default(),
            self.runtime_ms.to_string(),
        ]
    }
}

/// Everything a sweep needs.
#[derive(Debug, Clone)]
pub struct SweepRequest {
    pub config: String,
    pub law: ObservedLaw,
    pub strategy: TreatmentStrategy,
    pub models: Vec<Model>,
    pub grid: Vec<f64>,
    pub directions: Vec<Direction>,
    pub backend: Backend,
    pub options: BoundOptions,
    /// Record wall-clock runtimes; otherwise `runtime_ms` is 0 so that
    /// output files are byte-stable.
    pub timing: bool,
}

/// Runs every (grid value, model, direction) combination. Combinations run
/// concurrently; records come back in grid, model, direction order.
/// Failures of individual combinations are recorded, not raised; building
/// the tree is the only step that fails the whole sweep.
pub fn run_sweep(req: &SweepRequest) -> Result<Vec<RunRecord>> {
    if req.grid.is_empty() || req.models.is_empty() || req.directions.is_empty() {
        return Err(Error::InvalidParameter("empty grid, model list or direction list".into()));
    }
    for &l in &req.grid {
        crate::kernel::validate_lambda(l)?;
    }
    let tree = req.backend.build_tree(&req.law, &req.strategy)?;
    let jobs: Vec<(f64, Model, Direction)> = req
        .grid
        .iter()
        .flat_map(|&l| req.models.iter().flat_map(move |&m| req.directions.iter().map(move |&d| (l, m, d))))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(lambda, model, direction)| {
            let start = Instant::now();
            let spec = model_spec(model, lambda, tree.periods());
            let lambda_spec = spec.as_ref().map(|s| s.lambda_spec()).unwrap_or_default();
            let outcome = spec.and_then(|s| compute_bound(&tree, model, &s, direction, &req.options));
            RunRecord {
                config: req.config.clone(),
                strategy: req.strategy.to_string(),
                model,
                grid_value: Some(lambda),
                lambda_spec,
                direction,
                outcome,
                backend: req.backend,
                runtime_ms: if req.timing { start.elapsed().as_millis() as u64 } else { 0 },
            }
        })
        .collect();
    Ok(records)
}

/// Bounds at explicitly given parameters, one record per spec and direction.
#[allow(clippy::too_many_arguments)]
pub fn run_bounds(
    config: &str,
    law: &ObservedLaw,
    strategy: &TreatmentStrategy,
    specs: &[(Model, SensitivitySpec)],
    directions: &[Direction],
    backend: Backend,
    options: &BoundOptions,
    timing: bool,
) -> Result<Vec<RunRecord>> {
    let tree = backend.build_tree(law, strategy)?;
    let jobs: Vec<(&(Model, SensitivitySpec), Direction)> =
        specs.iter().flat_map(|s| directions.iter().map(move |&d| (s, d))).collect();
    Ok(jobs
        .par_iter()
        .map(|&((model, spec), direction)| {
            let start = Instant::now();
            RunRecord {
                config: config.to_string(),
                strategy: strategy.to_string(),
                model: *model,
                grid_value: None,
                lambda_spec: spec.lambda_spec(),
                direction,
                outcome: compute_bound(&tree, *model, spec, direction, options),
                backend,
                runtime_ms: if timing { start.elapsed().as_millis() as u64 } else { 0 },
            }
        })
        .collect())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

pub fn write_bounds_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BOUNDS_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record(r.fields()).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

/// Summary of an implied-distribution export.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpliedSummary {
    pub bound: f64,
    pub marginal_mean: f64,
    pub max_residual: f64,
    pub rows: usize,
}

/// Writes every stagewise conditional of the worst-case law attaining the
/// sharp primary bound, then the marginal, then a `marginal_mean` footer
/// row whose `y` column holds the marginal mean.
pub fn emit_implied_distribution<W: Write>(
    tree: &CellTree,
    lambdas: &[f64],
    direction: Direction,
    out: W,
) -> Result<ImpliedSummary> {
    let spec = SensitivitySpec::primary(lambdas.to_vec())?;
    let options = BoundOptions { scheme: Scheme::Nested, ..BoundOptions::default() };
    let bound = sharp_bound_primary_with(tree, &spec, direction, &options)?;
    let ratios = optimal_lambda(tree, &bound.q_opt, &spec, direction)?;
    let max_residual = crate::worstcase::verify_normalization(tree, &ratios).max_residual();
    let dists = construct_worst_case(tree, &ratios)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DISTRIBUTION_HEADER).map_err(csv_err)?;
    let mut rows = 0;
    let mut marginal_mean = f64::NAN;
    for d in &dists {
        for n in &d.nodes {
            w.write_record([d.stage.as_str(), d.cell.as_str(), &format_sig(n.y, 12), &format_sig(n.w, 12)])
                .map_err(csv_err)?;
            rows += 1;
        }
        if d.stage == "marginal" {
            marginal_mean = d.mean();
        }
    }
    w.write_record(["marginal_mean", "*", &format_sig(marginal_mean, 12), ""]).map_err(csv_err)?;
    w.flush().map_err(|e| Error::Io(e.to_string()))?;
    Ok(ImpliedSummary { bound: bound.value, marginal_mean, max_residual, rows })
}
