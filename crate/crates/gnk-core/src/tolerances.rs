//! Central table of numerical thresholds, overridable by key.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{GnkError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub groupoid_axioms: f64,
    pub jet_axioms: f64,
    pub chain_rule: f64,
    pub frame_morphism: f64,
    pub algebroid_jacobi: f64,
    pub bracket_preservation: f64,
    pub exp_derivative: f64,
    pub exp_one_parameter: f64,
    pub action_laws: f64,
    pub action_linearity: f64,
    pub frame_covering: f64,
    pub tangent_fd: f64,
    pub cojet_iso: f64,
    pub theta_invariance: f64,
    pub omega_invariance: f64,
    pub holonomy_violation_min: f64,
    pub lagrangian_invariance: f64,
    pub negative_control_min: f64,
    pub constraint: f64,
    pub oracle: f64,
    pub admissibility: f64,
    pub claim1: f64,
    pub ratio_lo: f64,
    pub ratio_hi: f64,
    pub charge_drift: f64,
    pub energy_drift: f64,
    /// |div − claim1 − claim2| relative to max |div| on the same grid.
    pub decomposition: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            groupoid_axioms: 1e-9,
            jet_axioms: 1e-9,
            chain_rule: 1e-8,
            frame_morphism: 1e-10,
            algebroid_jacobi: 1e-8,
            bracket_preservation: 1e-8,
            exp_derivative: 1e-6,
            exp_one_parameter: 1e-7,
            action_laws: 1e-9,
            action_linearity: 1e-12,
            frame_covering: 1e-10,
            tangent_fd: 1e-6,
            cojet_iso: 1e-9,
            theta_invariance: 1e-7,
            omega_invariance: 1e-6,
            holonomy_violation_min: 1e-3,
            lagrangian_invariance: 1e-9,
            negative_control_min: 1e-2,
            constraint: 1e-9,
            oracle: 1e-6,
            admissibility: 1e-8,
            claim1: 1e-5,
            ratio_lo: 3.2,
            ratio_hi: 4.8,
            charge_drift: 5e-3,
            energy_drift: 1e-8,
            decomposition: 1.0,
        }
    }
}

impl Tolerances {
    /// Apply `key = value` overrides; unknown keys are a config error.
    pub fn with_overrides(&self, overrides: &BTreeMap<String, f64>) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        let map = v.as_object_mut().expect("tolerance table is an object");
        for (k, x) in overrides {
            if !map.contains_key(k) {
                return Err(GnkError::Config(format!("unknown tolerance '{k}'")));
            }
            map.insert(k.clone(), serde_json::json!(x));
        }
        Ok(serde_json::from_value(v)?)
    }

    /// Parse `key=value` strings.
    pub fn parse_overrides(items: &[String]) -> Result<BTreeMap<String, f64>> {
        items
            .iter()
            .map(|s| {
                let (k, v) = s.split_once('=').ok_or_else(|| GnkError::Config(format!("expected key=value, got '{s}'")))?;
                let x: f64 = v.trim().parse().map_err(|_| GnkError::Config(format!("bad number in '{s}'")))?;
                Ok((k.trim().to_string(), x))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_and_reject_unknown() {
        let o = Tolerances::parse_overrides(&["claim1=1e-3".into()]).unwrap();
        let t = Tolerances::default().with_overrides(&o).unwrap();
        assert_eq!(t.claim1, 1e-3);
        assert_eq!(t.ratio_lo, 3.2);
        let bad = Tolerances::parse_overrides(&["nope=1".into()]).unwrap();
        assert!(Tolerances::default().with_overrides(&bad).is_err());
        assert!(Tolerances::parse_overrides(&["x".into()]).is_err());
    }
}
