//! Sensitivity bounds for counterfactual means under sequential unmeasured
//! confounding in longitudinal studies.
//!
//! The crate is organized bottom-up:
//!
//! * [`kernel`]: check loss and the η transforms.
//! * [`law`], [`tree`], [`sample`]: observed-data laws, the discrete cell tree
//!   every bound is computed on, ICE/IPW functionals and trajectory sampling.
//! * [`bounds`]: sharp primary/joint bounds, conservative product bounds,
//!   multi-strategy and ATE bounds.
//! * [`worstcase`]: worst-case sensitivity ratios and implied distributions.
//! * [`oracle`]: brute-force validators for small instances.
//! * [`config`], [`study`]: law documents, built-in configurations and the
//!   sweep harness used by the command-line tool.

pub mod bounds;
pub mod config;
pub mod error;
pub mod kernel;
pub mod law;
pub mod oracle;
pub mod quadrature;
pub mod sample;
pub mod study;
pub mod synth;
pub mod tree;
pub mod validate;
pub mod worstcase;

pub use bounds::{
    ate_bound, conservative_prod_bound, prod_v1_bound, prod_v2_bound, sharp_bound_primary, single_period_upper,
    strategy_bounds, BoundOptions, BoundResult, Exactness, Model, QAssignment, Scheme, SensitivitySpec,
};
pub use error::{Error, Result};
pub use kernel::{check_loss, eta_composite, eta_prod_step, eta_step, tau_of, CheckParams, Direction, EtaStepParams, ProdStepParams};
pub use law::{ObservedLaw, OutcomeConditional, SupportNode, TreatmentStrategy, WeightedSupport};
pub use tree::{build_cell_tree, estimate_cell_tree_from_sample, ice_functional, point_identified_mean, CellTree};
