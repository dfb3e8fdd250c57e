//! Instance document format, validation, and canonical (de)serialization.
//!
//! ```json
//! {
//!   "n": 1,
//!   "discount": 0.9,
//!   "states": [
//!     { "id": 1, "actions": [
//!       { "label": "stay", "transitions": [{ "to": 1, "p": 1.0 }], "costs": [{ "to": 1, "g": 1.0 }] }
//!     ] }
//!   ]
//! }
//! ```
//!
//! The canonical form is `serde_json` pretty output with a trailing newline,
//! costs listed in the same order as transitions. Floats use the shortest
//! round-trip representation, so canonical text survives load/save unchanged.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::LoadError;
use crate::model::{Action, MdpInstance, Outcome, PROBABILITY_TOLERANCE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDoc {
    pub n: usize,
    pub discount: f64,
    pub states: Vec<StateDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDoc {
    pub id: usize,
    pub actions: Vec<ActionDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionDoc {
    pub label: String,
    pub transitions: Vec<TransitionDoc>,
    pub costs: Vec<CostDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionDoc {
    pub to: usize,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostDoc {
    pub to: usize,
    pub g: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    /// Where the problem is, e.g. `state 2, action "to1"` or `discount`.
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation { location: location.into(), message: message.into() });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        let lines: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", lines.join("; "))
    }
}

/// Checks every model invariant on a raw document. Violations are returned as
/// data; this never fails.
pub fn validate(doc: &InstanceDoc) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = doc.n;
    if n == 0 {
        report.push("n", "number of states must be positive");
    }
    if !(doc.discount.is_finite() && doc.discount > 0.0 && doc.discount < 1.0) {
        report.push("discount", format!("must lie strictly between 0 and 1, got {}", doc.discount));
    }
    if doc.states.len() != n {
        report.push("states", format!("expected {} state entries, found {}", n, doc.states.len()));
    }
    for (i, state) in doc.states.iter().enumerate() {
        if state.id != i + 1 {
            report.push(
                format!("states[{}]", i),
                format!("state id {} out of order, expected {}", state.id, i + 1),
            );
        }
        let sid = state.id;
        if state.actions.is_empty() {
            report.push(format!("state {}", sid), format!("empty action set at state {}", sid));
        }
        let mut labels = HashSet::new();
        for action in &state.actions {
            let loc = format!("state {}, action {:?}", sid, action.label);
            if action.label.is_empty() {
                report.push(&loc, "empty action label");
            }
            if !labels.insert(action.label.as_str()) {
                report.push(&loc, "duplicate action label");
            }
            validate_action(&mut report, &loc, action, n);
        }
    }
    report
}

fn validate_action(report: &mut ValidationReport, loc: &str, action: &ActionDoc, n: usize) {
    if action.transitions.is_empty() {
        report.push(loc, "no transitions");
    }
    let mut successors = HashSet::new();
    let mut sum = 0.0;
    for t in &action.transitions {
        if t.to == 0 || t.to > n {
            report.push(loc, format!("successor {} outside 1..={}", t.to, n));
        }
        if !successors.insert(t.to) {
            report.push(loc, format!("duplicate transition to {}", t.to));
        }
        if !(t.p.is_finite() && t.p >= 0.0) {
            report.push(loc, format!("invalid probability {} to {}", t.p, t.to));
        }
        sum += t.p;
    }
    if !action.transitions.is_empty() && !((sum - 1.0).abs() <= PROBABILITY_TOLERANCE) {
        report.push(loc, format!("probabilities sum to {}, expected 1", sum));
    }
    let mut costed = HashSet::new();
    for c in &action.costs {
        if !costed.insert(c.to) {
            report.push(loc, format!("duplicate cost entry for {}", c.to));
        }
        if !successors.contains(&c.to) {
            report.push(loc, format!("cost entry for {} has no matching transition", c.to));
        }
        if !c.g.is_finite() {
            report.push(loc, format!("non-finite cost to {}", c.to));
        }
    }
    for t in &action.transitions {
        if !costed.contains(&t.to) {
            report.push(loc, format!("missing cost entry for transition to {}", t.to));
        }
    }
}

impl MdpInstance {
    /// Validates and converts a document.
    pub fn from_doc(doc: &InstanceDoc) -> Result<MdpInstance, ValidationReport> {
        let report = validate(doc);
        if !report.is_ok() {
            return Err(report);
        }
        let states = doc
            .states
            .iter()
            .map(|s| {
                s.actions
                    .iter()
                    .map(|a| Action {
                        label: a.label.clone(),
                        outcomes: a
                            .transitions
                            .iter()
                            .map(|t| Outcome {
                                to: t.to - 1,
                                p: t.p,
                                g: a.costs.iter().find(|c| c.to == t.to).map(|c| c.g).unwrap_or(0.0),
                            })
                            .collect(),
                    })
                    .collect()
            })
            .collect();
        Ok(MdpInstance::from_parts(doc.discount, states))
    }

    pub fn to_doc(&self) -> InstanceDoc {
        InstanceDoc {
            n: self.n(),
            discount: self.discount(),
            states: (0..self.n())
                .map(|x| StateDoc {
                    id: x + 1,
                    actions: self
                        .actions(x)
                        .iter()
                        .map(|a| ActionDoc {
                            label: a.label.clone(),
                            transitions: a
                                .outcomes
                                .iter()
                                .map(|o| TransitionDoc { to: o.to + 1, p: o.p })
                                .collect(),
                            costs: a.outcomes.iter().map(|o| CostDoc { to: o.to + 1, g: o.g }).collect(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// SHA-256 of the canonical serialization, as `sha256:<hex>`.
    pub fn digest(&self) -> String {
        let text = save_instance(self);
        format!("sha256:{}", hex::encode(Sha256::digest(text.as_bytes())))
    }
}

pub fn load_instance(text: &str) -> Result<MdpInstance, LoadError> {
    let doc: InstanceDoc = serde_json::from_str(text).map_err(|e| LoadError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    MdpInstance::from_doc(&doc).map_err(LoadError::Invalid)
}

/// Canonical serialization.
pub fn save_instance(instance: &MdpInstance) -> String {
    let mut text =
        serde_json::to_string_pretty(&instance.to_doc()).expect("instance documents always serialize");
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::build_counterexample;

    fn single_state(p: f64) -> InstanceDoc {
        InstanceDoc {
            n: 1,
            discount: 0.9,
            states: vec![StateDoc {
                id: 1,
                actions: vec![ActionDoc {
                    label: "stay".into(),
                    transitions: vec![TransitionDoc { to: 1, p }],
                    costs: vec![CostDoc { to: 1, g: 1.0 }],
                }],
            }],
        }
    }

    #[test]
    fn counterexample_validates() {
        assert!(validate(&build_counterexample().to_doc()).is_ok());
    }

    #[test]
    fn short_row_names_the_pair() {
        let mut doc = build_counterexample().to_doc();
        let action = &mut doc.states[1].actions[0];
        action.transitions = vec![TransitionDoc { to: 1, p: 0.98 }];
        let report = validate(&doc);
        assert_eq!(report.violations.len(), 1);
        let v = &report.violations[0];
        assert_eq!(v.location, "state 2, action \"to1\"");
        assert!(v.message.contains("0.98"), "{}", v.message);
    }

    #[test]
    fn empty_action_set_reported() {
        let mut doc = build_counterexample().to_doc();
        doc.states[1].actions.clear();
        let report = validate(&doc);
        assert!(report
            .violations
            .iter()
            .any(|v| v.message == "empty action set at state 2"));
    }

    #[test]
    fn bad_discount_and_successor() {
        let mut doc = single_state(1.0);
        doc.discount = 1.0;
        doc.states[0].actions[0].transitions[0].to = 2;
        let report = validate(&doc);
        let locs: Vec<&str> = report.violations.iter().map(|v| v.location.as_str()).collect();
        assert!(locs.contains(&"discount"));
        assert!(report.violations.iter().any(|v| v.message.contains("successor 2")));
    }

    #[test]
    fn missing_cost_entry() {
        let mut doc = single_state(1.0);
        doc.states[0].actions[0].costs.clear();
        let report = validate(&doc);
        assert!(report.violations.iter().any(|v| v.message.contains("missing cost")));
    }

    #[test]
    fn load_counterexample() {
        let text = save_instance(&build_counterexample());
        let inst = load_instance(&text).unwrap();
        assert_eq!(inst.n(), 3);
        assert_eq!(inst.discount(), 0.9);
        assert_eq!(save_instance(&inst), text);
    }

    #[test]
    fn empty_text_is_parse_error() {
        assert!(matches!(load_instance(""), Err(LoadError::Parse { line: 1, .. })));
    }

    #[test]
    fn unknown_field_is_named() {
        let text = r#"{"n": 1, "discount": 0.5, "states": [], "extra": 3}"#;
        match load_instance(text) {
            Err(LoadError::Parse { message, line, .. }) => {
                assert!(message.contains("extra"), "{}", message);
                assert_eq!(line, 1);
            }
            other => panic!("expected parse error, got {:?}", other),
        }
    }

    #[test]
    fn invalid_instance_lists_violations() {
        let text = serde_json::to_string(&single_state(0.5)).unwrap();
        match load_instance(&text) {
            Err(LoadError::Invalid(report)) => assert_eq!(report.violations.len(), 1),
            other => panic!("expected validation error, got {:?}", other),
        }
    }

    #[test]
    fn costs_reordered_to_transition_order() {
        let mut doc = build_counterexample().to_doc();
        doc.states[0].actions[0].transitions =
            vec![TransitionDoc { to: 2, p: 0.5 }, TransitionDoc { to: 1, p: 0.5 }];
        doc.states[0].actions[0].costs = vec![CostDoc { to: 1, g: 3.0 }, CostDoc { to: 2, g: 4.0 }];
        let inst = MdpInstance::from_doc(&doc).unwrap();
        let out = inst.to_doc();
        assert_eq!(out.states[0].actions[0].costs, vec![CostDoc { to: 2, g: 4.0 }, CostDoc { to: 1, g: 3.0 }]);
    }
}
