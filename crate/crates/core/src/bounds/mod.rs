//! Sharp and conservative sensitivity bounds.
//!
//! Upper bounds are computed directly; lower bounds are computed as the
//! negated upper bound of the outcome-negated tree, with thresholds mapped
//! back to the original scale.

mod primary;
mod product;
pub mod search;
mod strategy;

use std::fmt;

pub use primary::{primary_objective, sharp_bound_primary, sharp_bound_primary_with, single_period_upper};
pub use product::{
    conservative_prod_bound, conservative_prod_bound_with, prod_v1_bound, prod_v1_bound_with, prod_v1_objective,
    prod_v2_bound, prod_v2_bound_with, prod_v2_objective,
};
pub use strategy::{ate_bound, strategy_bounds};

use crate::error::{Error, Result};
use crate::kernel::{validate_lambda, Direction};

/// Default cap on the number of periods.
pub const DEFAULT_MAX_PERIODS: usize = 6;

/// Sensitivity model and its per-period parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum SensitivitySpec {
    Primary { lambdas: Vec<f64> },
    /// Joint covariate-outcome model; its sharp bound equals the primary one.
    Joint { lambdas: Vec<f64> },
    /// Product model with covariate-channel `lambda_l` and outcome-channel
    /// `lambda_y`; the final covariate channel is fixed at 1.
    Product { lambda_l: Vec<f64>, lambda_y: Vec<f64> },
}

impl SensitivitySpec {
    pub fn primary(lambdas: Vec<f64>) -> Result<Self> {
        validate_all(&lambdas)?;
        Ok(Self::Primary { lambdas })
    }

    pub fn joint(lambdas: Vec<f64>) -> Result<Self> {
        validate_all(&lambdas)?;
        Ok(Self::Joint { lambdas })
    }

    pub fn product(lambda_l: Vec<f64>, lambda_y: Vec<f64>) -> Result<Self> {
        validate_all(&lambda_l)?;
        validate_all(&lambda_y)?;
        if lambda_l.len() != lambda_y.len() {
            return Err(Error::InvalidParameter("product channels have different lengths".into()));
        }
        if lambda_l.last() != Some(&1.0) {
            return Err(Error::InvalidParameter("final-period covariate parameter must be 1".into()));
        }
        Ok(Self::Product { lambda_l, lambda_y })
    }

    pub fn periods(&self) -> usize {
        match self {
            Self::Primary { lambdas } | Self::Joint { lambdas } => lambdas.len(),
            Self::Product { lambda_y, .. } => lambda_y.len(),
        }
    }

    pub fn model_name(&self) -> &'static str {
        match self {
            Self::Primary { .. } => "primary",
            Self::Joint { .. } => "joint",
            Self::Product { .. } => "product",
        }
    }

    /// Per-period parameters as written in result files: `2|3` for the
    /// primary and joint models, `L:Y|L:Y` for the product model.
    pub fn lambda_spec(&self) -> String {
        match self {
            Self::Primary { lambdas } | Self::Joint { lambdas } => {
                lambdas.iter().map(|l| fmt_lambda(*l)).collect::<Vec<_>>().join("|")
            }
            Self::Product { lambda_l, lambda_y } => lambda_l
                .iter()
                .zip(lambda_y)
                .map(|(l, y)| format!("{}:{}", fmt_lambda(*l), fmt_lambda(*y)))
                .collect::<Vec<_>>()
                .join("|"),
        }
    }

    pub(crate) fn check_periods(&self, periods: usize, options: &BoundOptions) -> Result<()> {
        if self.periods() != periods {
            return Err(Error::InvalidParameter(format!(
                "sensitivity spec has {} periods, tree has {periods}",
                self.periods()
            )));
        }
        if periods > options.max_periods {
            return Err(Error::InvalidParameter(format!(
                "{periods} periods exceed the limit of {}; raise max_periods to override",
                options.max_periods
            )));
        }
        Ok(())
    }
}

fn validate_all(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(Error::InvalidParameter("no sensitivity parameters".into()));
    }
    lambdas.iter().try_for_each(|&l| validate_lambda(l))
}

/// Shortest decimal form that round-trips for typical grid values.
pub(crate) fn fmt_lambda(x: f64) -> String {
    let s = format!("{x}");
    if s.len() <= 14 {
        s
    } else {
        crate::study::format_sig(x, 12)
    }
}

/// Which bound a result belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Model {
    Primary,
    Joint,
    ProdV1,
    ProdV2,
    Prod,
}

impl Model {
    pub const ALL: [Model; 5] = [Model::Primary, Model::Joint, Model::ProdV1, Model::ProdV2, Model::Prod];

    pub fn as_str(self) -> &'static str {
        match self {
            Model::Primary => "primary",
            Model::Joint => "joint",
            Model::ProdV1 => "prod_v1",
            Model::ProdV2 => "prod_v2",
            Model::Prod => "prod",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "primary" => Model::Primary,
            "joint" => Model::Joint,
            "prod_v1" | "prod-v1" => Model::ProdV1,
            "prod_v2" | "prod-v2" => Model::ProdV2,
            "prod" | "product" => Model::Prod,
            other => return Err(Error::InvalidParameter(format!("unknown model `{other}`"))),
        })
    }
}

/// Optimal thresholds. Values are on the original outcome scale for both
/// directions.
#[derive(Debug, Clone, PartialEq)]
pub enum QAssignment {
    /// `q_k` per level-`k` cell.
    Primary(Vec<Vec<f64>>),
    /// `q_{k,L}` per level-`k` cell for `k < K-1`, and `q_{k,Y}` per
    /// terminal cell for every `k`.
    Product { covariate: Vec<Vec<f64>>, outcome: Vec<Vec<f64>> },
}

impl QAssignment {
    pub fn primary(&self) -> Option<&[Vec<f64>]> {
        match self {
            Self::Primary(q) => Some(q),
            Self::Product { .. } => None,
        }
    }

    pub(crate) fn negated(&self) -> Self {
        let neg = |v: &Vec<Vec<f64>>| v.iter().map(|l| l.iter().map(|q| -q).collect()).collect();
        match self {
            Self::Primary(q) => Self::Primary(neg(q)),
            Self::Product { covariate, outcome } => Self::Product { covariate: neg(covariate), outcome: neg(outcome) },
        }
    }
}

/// Optimization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Level-by-level exact minimization over breakpoints.
    Nested,
    /// Coordinate sweeps with golden-section line searches.
    CoordinateDescent,
    /// Exact sequential weighted-quantile scheme of the restricted product model.
    Sequential,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Nested => "nested",
            Scheme::CoordinateDescent => "coordinate-descent",
            Scheme::Sequential => "sequential",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exactness {
    Sharp,
    Conservative,
}

impl Exactness {
    pub fn is_sharp(self) -> bool {
        self == Exactness::Sharp
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub evaluations: usize,
    pub final_improvement: f64,
    pub scheme: Scheme,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundResult {
    pub value: f64,
    pub direction: Direction,
    pub model: Model,
    pub q_opt: QAssignment,
    pub diagnostics: Diagnostics,
    pub exactness: Exactness,
    /// Set when the value was computed by another model's optimizer, as for
    /// the joint model.
    pub alias_of: Option<Model>,
}

/// Optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundOptions {
    pub scheme: Scheme,
    pub max_periods: usize,
    pub max_sweeps: usize,
    pub sweep_tol: f64,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self { scheme: Scheme::Nested, max_periods: DEFAULT_MAX_PERIODS, max_sweeps: 100, sweep_tol: 1e-10 }
    }
}
