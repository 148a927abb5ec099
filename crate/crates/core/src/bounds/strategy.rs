//! Bounds across treatment strategies and on average treatment effects.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kernel::Direction;
use crate::law::{ObservedLaw, TreatmentStrategy};
use crate::tree::build_cell_tree;

use super::primary::sharp_bound_primary_with;
use super::product::conservative_prod_bound_with;
use super::{BoundOptions, BoundResult, SensitivitySpec};

/// Per-strategy bounds, each computed on that strategy's own cell tree.
/// Primary and joint specs give sharp bounds, product specs the
/// conservative product bound.
pub fn strategy_bounds(
    law: &ObservedLaw,
    requests: &[(TreatmentStrategy, Direction)],
    spec: &SensitivitySpec,
    n_nodes: usize,
    options: &BoundOptions,
) -> Result<BTreeMap<(TreatmentStrategy, Direction), BoundResult>> {
    let mut out = BTreeMap::new();
    for (strategy, direction) in requests {
        let tree = build_cell_tree(law, strategy, n_nodes)?;
        let r = match spec {
            SensitivitySpec::Primary { .. } | SensitivitySpec::Joint { .. } => {
                sharp_bound_primary_with(&tree, spec, *direction, options)?
            }
            SensitivitySpec::Product { .. } => conservative_prod_bound_with(&tree, spec, *direction, options)?,
        };
        out.insert((strategy.clone(), *direction), r);
    }
    Ok(out)
}

/// Upper bound on `μ^{a} - μ^{a'}` from an upper bound for `a` and a lower
/// bound for `a'`.
pub fn ate_bound(upper_result: &BoundResult, lower_result: &BoundResult) -> Result<f64> {
    if upper_result.direction != Direction::Upper || lower_result.direction != Direction::Lower {
        return Err(Error::DirectionMismatch(format!(
            "expected upper and lower results, got {} and {}",
            upper_result.direction.as_str(),
            lower_result.direction.as_str()
        )));
    }
    Ok(upper_result.value - lower_result.value)
}
