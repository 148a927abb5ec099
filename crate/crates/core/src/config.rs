//! Law configuration documents and the built-in study configurations.
//!
//! A document is JSON:
//!
//! ```json
//! {
//!   "periods": 2,
//!   "covariate_supports": [["0", "1"], ["0", "1"]],
//!   "baseline_marginal": [0.5, 0.5],
//!   "strategy": "11",
//!   "propensities": {"0": 0.5, "1": 0.5, "0,0": 0.4, "0,1": 0.8, "1,0": 0.4, "1,1": 0.8},
//!   "transitions": {"0": [0.8, 0.2], "1": [0.2, 0.8]},
//!   "outcomes": {
//!     "0,0": {"gaussian": {"mean": 62, "sd": 1}},
//!     "0,1": {"support": [[57, 0.5], [59, 0.5]]},
//!     "1,0": {"gaussian": {"mean": 62, "sd": 1}},
//!     "1,1": {"gaussian": {"mean": 58, "sd": 1}}
//!   }
//! }
//! ```
//!
//! History keys list covariate labels from `covariate_supports`, comma
//! separated. `propensities`, `transitions` and `outcomes` describe the arm
//! named by `strategy` (all-treat when omitted). Further arms go in
//! `strategy_arms`, an object from strategy strings to objects with the
//! same three fields.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::law::{ArmLaw, ObservedLaw, OutcomeConditional, TreatmentStrategy, WeightedSupport};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LawDoc {
    periods: usize,
    covariate_supports: Vec<Vec<String>>,
    baseline_marginal: Vec<f64>,
    #[serde(default)]
    strategy: Option<String>,
    #[serde(default)]
    propensities: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    transitions: Option<BTreeMap<String, Vec<f64>>>,
    #[serde(default)]
    outcomes: Option<BTreeMap<String, OutcomeDoc>>,
    #[serde(default)]
    strategy_arms: BTreeMap<String, ArmDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArmDoc {
    propensities: BTreeMap<String, f64>,
    #[serde(default)]
    transitions: BTreeMap<String, Vec<f64>>,
    outcomes: BTreeMap<String, OutcomeDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
enum OutcomeDoc {
    Gaussian { mean: f64, sd: f64 },
    Support(Vec<(f64, f64)>),
}

fn config_err(path: impl Into<String>, msg: impl fmt::Display) -> Error {
    Error::Config { path: path.into(), msg: msg.to_string() }
}

fn parse_history(key: &str, supports: &[Vec<String>], path: &str) -> Result<Vec<usize>> {
    let parts: Vec<&str> = key.split(',').map(str::trim).collect();
    if parts.len() > supports.len() {
        return Err(config_err(path, format!("history `{key}` is longer than {} periods", supports.len())));
    }
    parts
        .iter()
        .enumerate()
        .map(|(k, p)| {
            supports[k]
                .iter()
                .position(|s| s == p)
                .ok_or_else(|| config_err(path, format!("`{p}` is not a label of covariate {k}")))
        })
        .collect()
}

fn build_arm(
    path: &str,
    supports: &[Vec<String>],
    propensities: &BTreeMap<String, f64>,
    transitions: &BTreeMap<String, Vec<f64>>,
    outcomes: &BTreeMap<String, OutcomeDoc>,
) -> Result<ArmLaw> {
    let mut arm = ArmLaw::default();
    for (key, &p) in propensities {
        let here = format!("{path}.propensities[\"{key}\"]");
        let h = parse_history(key, supports, &here)?;
        if !(p.is_finite() && p > 0.0 && p <= 1.0) {
            return Err(config_err(here, format!("propensity {p} outside (0, 1]")));
        }
        arm.propensities.insert(h, p);
    }
    for (key, t) in transitions {
        let here = format!("{path}.transitions[\"{key}\"]");
        let h = parse_history(key, supports, &here)?;
        if h.len() >= supports.len() {
            return Err(config_err(here, "transition given at a terminal history"));
        }
        if t.len() != supports[h.len()].len() {
            return Err(config_err(here, format!("expected {} probabilities, got {}", supports[h.len()].len(), t.len())));
        }
        let s: f64 = t.iter().sum();
        if t.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
            return Err(config_err(here, format!("not a probability vector (sum {s})")));
        }
        arm.transitions.insert(h, t.clone());
    }
    for (key, o) in outcomes {
        let here = format!("{path}.outcomes[\"{key}\"]");
        let h = parse_history(key, supports, &here)?;
        if h.len() != supports.len() {
            return Err(config_err(here, "outcome histories must cover every period"));
        }
        let cond = match o {
            OutcomeDoc::Gaussian { mean, sd } => {
                OutcomeConditional::gaussian(*mean, *sd).map_err(|e| config_err(format!("{here}.gaussian"), e))?
            }
            OutcomeDoc::Support(pairs) => OutcomeConditional::Support(
                WeightedSupport::normalized(pairs).map_err(|e| config_err(format!("{here}.support"), e))?,
            ),
        };
        arm.outcomes.insert(h, cond);
    }
    Ok(arm)
}

/// Parses and validates a law document.
pub fn parse_law_json(text: &str) -> Result<ObservedLaw> {
    let doc: LawDoc = serde_json::from_str(text).map_err(|e| config_err("$", e))?;
    if doc.periods == 0 {
        return Err(config_err("$.periods", "must be positive"));
    }
    if doc.covariate_supports.len() != doc.periods {
        return Err(config_err(
            "$.covariate_supports",
            format!("{} supports for {} periods", doc.covariate_supports.len(), doc.periods),
        ));
    }
    for (k, s) in doc.covariate_supports.iter().enumerate() {
        if s.is_empty() {
            return Err(config_err(format!("$.covariate_supports[{k}]"), "empty support"));
        }
        if s.iter().any(|l| l.contains(',')) {
            return Err(config_err(format!("$.covariate_supports[{k}]"), "labels may not contain commas"));
        }
    }
    let supports = &doc.covariate_supports;
    let mut arms = BTreeMap::new();
    let has_main = doc.propensities.is_some() || doc.outcomes.is_some() || doc.transitions.is_some();
    if has_main {
        let strategy = match &doc.strategy {
            Some(s) => s.parse::<TreatmentStrategy>().map_err(|e| config_err("$.strategy", e))?,
            None => TreatmentStrategy::always_treat(doc.periods)?,
        };
        let empty_t = BTreeMap::new();
        let empty_o = BTreeMap::new();
        let arm = build_arm(
            "$",
            supports,
            doc.propensities.as_ref().ok_or_else(|| config_err("$.propensities", "missing"))?,
            doc.transitions.as_ref().unwrap_or(&empty_t),
            doc.outcomes.as_ref().unwrap_or(&empty_o),
        )?;
        arms.insert(strategy, arm);
    } else if doc.strategy.is_some() {
        return Err(config_err("$.strategy", "given without propensities or outcomes"));
    }
    for (name, a) in &doc.strategy_arms {
        let path = format!("$.strategy_arms[\"{name}\"]");
        let strategy = name.parse::<TreatmentStrategy>().map_err(|e| config_err(&path, e))?;
        if strategy.periods() != doc.periods {
            return Err(config_err(path, format!("strategy has {} periods, law has {}", strategy.periods(), doc.periods)));
        }
        if arms.contains_key(&strategy) {
            return Err(config_err(path, "arm given twice"));
        }
        let arm = build_arm(&path, supports, &a.propensities, &a.transitions, &a.outcomes)?;
        arms.insert(strategy, arm);
    }
    if arms.is_empty() {
        return Err(config_err("$", "no strategy arm given"));
    }
    ObservedLaw::new(doc.periods, doc.covariate_supports, doc.baseline_marginal, arms).map_err(|e| config_err("$", e))
}

pub fn load_law(path: &Path) -> Result<ObservedLaw> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_law_json(&text).map_err(|e| match e {
        Error::Config { path: p, msg } => Error::Config { path: format!("{}:{p}", path.display()), msg },
        other => other,
    })
}

/// Built-in two-period study configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BuiltinConfig {
    /// Baseline: cell means 62, 58, 62, 58 and unit standard deviations.
    C1,
    /// C1 with all propensities halved.
    C2,
    /// C1 with cell means 62, 58, 66, 57.
    C3,
    /// C1 with standard deviation 2 when `L_0 = 1`.
    C4,
}

impl BuiltinConfig {
    pub const ALL: [BuiltinConfig; 4] = [Self::C1, Self::C2, Self::C3, Self::C4];

    pub fn id(self) -> &'static str {
        match self {
            Self::C1 => "C1",
            Self::C2 => "C2",
            Self::C3 => "C3",
            Self::C4 => "C4",
        }
    }
}

impl fmt::Display for BuiltinConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for BuiltinConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "C1" => Ok(Self::C1),
            "C2" => Ok(Self::C2),
            "C3" => Ok(Self::C3),
            "C4" => Ok(Self::C4),
            _ => Err(Error::InvalidParameter(format!("unknown built-in config `{s}`"))),
        }
    }
}

/// The all-treat arm of a built-in configuration. `L_0` and `L_1` are
/// binary, `P(L_0 = 1) = .5` and `P(L_1 = 1 | L_0 = l_0)` is .2 or .8.
pub fn builtin_config(id: BuiltinConfig) -> ObservedLaw {
    let (pi0, pi1) = match id {
        BuiltinConfig::C2 => (0.25, [0.2, 0.4]),
        _ => (0.5, [0.4, 0.8]),
    };
    let means = match id {
        BuiltinConfig::C3 => [[62.0, 58.0], [66.0, 57.0]],
        _ => [[62.0, 58.0], [62.0, 58.0]],
    };
    let sds = match id {
        BuiltinConfig::C4 => [1.0, 2.0],
        _ => [1.0, 1.0],
    };
    let mut arm = ArmLaw::default();
    for l0 in 0..2 {
        arm.propensities.insert(vec![l0], pi0);
        arm.transitions.insert(vec![l0], if l0 == 0 { vec![0.8, 0.2] } else { vec![0.2, 0.8] });
        for l1 in 0..2 {
            arm.propensities.insert(vec![l0, l1], pi1[l1]);
            arm.outcomes.insert(vec![l0, l1], OutcomeConditional::Gaussian { mean: means[l0][l1], sd: sds[l0] });
        }
    }
    let labels = vec!["0".to_string(), "1".to_string()];
    let mut arms = BTreeMap::new();
    arms.insert(TreatmentStrategy::always_treat(2).expect("two periods"), arm);
    ObservedLaw::new(2, vec![labels.clone(), labels], vec![0.5, 0.5], arms).expect("built-in law is valid")
}

/// Resolves `C1`..`C4` or a path to a law document. Returns the id used in
/// result files and the law.
pub fn resolve_config(spec: &str) -> Result<(String, ObservedLaw)> {
    if let Ok(id) = spec.parse::<BuiltinConfig>() {
        return Ok((id.id().to_string(), builtin_config(id)));
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(Error::InvalidParameter(format!("`{spec}` is neither a built-in config nor an existing file")));
    }
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| spec.to_string());
    Ok((id, load_law(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{build_cell_tree, point_identified_mean};

    const DOC: &str = r#"{
        "periods": 2,
        "covariate_supports": [["a", "b"], ["0", "1"]],
        "baseline_marginal": [0.5, 0.5],
        "propensities": {"a": 0.5, "b": 0.5, "a,0": 0.4, "a,1": 0.8, "b,0": 0.4, "b,1": 0.8},
        "transitions": {"a": [0.8, 0.2], "b": [0.2, 0.8]},
        "outcomes": {
            "a,0": {"gaussian": {"mean": 62, "sd": 1}},
            "a,1": {"support": [[57, 0.5], [59, 0.5]]},
            "b,0": {"gaussian": {"mean": 62, "sd": 1}},
            "b,1": {"gaussian": {"mean": 58, "sd": 1}}
        }
    }"#;

    #[test]
    fn parses_document() {
        let law = parse_law_json(DOC).unwrap();
        let tree = build_cell_tree(&law, &TreatmentStrategy::always_treat(2).unwrap(), 16).unwrap();
        assert!((point_identified_mean(&tree) - 60.0).abs() < 1e-9);
    }

    #[test]
    fn error_paths() {
        let bad = DOC.replace("\"a,1\": 0.8", "\"a,1\": 1.5");
        match parse_law_json(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "$.propensities[\"a,1\"]"),
            other => panic!("{other:?}"),
        }
        let bad = DOC.replace("\"b\": [0.2, 0.8]", "\"b\": [0.2, 0.7]");
        match parse_law_json(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "$.transitions[\"b\"]"),
            other => panic!("{other:?}"),
        }
        let bad = DOC.replace("\"a,0\": {\"gaussian\"", "\"a,2\": {\"gaussian\"");
        assert!(matches!(parse_law_json(&bad), Err(Error::Config { .. })));
        assert!(matches!(parse_law_json("{\"periods\": 1}"), Err(Error::Config { .. })));
    }

    #[test]
    fn builtin_means() {
        for id in BuiltinConfig::ALL {
            let tree = build_cell_tree(&builtin_config(id), &TreatmentStrategy::always_treat(2).unwrap(), 64).unwrap();
            assert!((point_identified_mean(&tree) - 60.0).abs() < 1e-9, "{id}");
        }
    }
}
