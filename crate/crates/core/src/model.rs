//! MDP data model: instances, stationary policies and cost vectors.
//!
//! States and actions are 0-indexed inside the library. Everything that leaves
//! the process (instance documents, run logs, CLI output) is 1-indexed; the
//! conversion happens in [`crate::format`] and [`crate::runlog`].

use std::fmt;
use std::ops::Index;

use crate::error::ModelError;

/// Absolute tolerance on the sum of a transition row.
pub const PROBABILITY_TOLERANCE: f64 = 1e-9;

/// One successor of a state-action pair: `p_xy(u)` and `g(x, u, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub to: usize,
    pub p: f64,
    pub g: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Action {
    pub label: String,
    pub outcomes: Vec<Outcome>,
}

impl Action {
    /// Expected one-stage cost `sum_y p_xy(u) g(x,u,y)`.
    pub fn expected_cost(&self) -> f64 {
        self.outcomes.iter().map(|o| o.p * o.g).sum()
    }
}

/// A validated finite-state discounted MDP.
///
/// Instances are only built through [`MdpInstance::from_doc`] (or the
/// constructors in [`crate::instances`], which go through it), so every value
/// of this type satisfies the model invariants. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct MdpInstance {
    discount: f64,
    states: Vec<Vec<Action>>,
}

impl MdpInstance {
    pub(crate) fn from_parts(discount: f64, states: Vec<Vec<Action>>) -> Self {
        Self { discount, states }
    }

    /// Number of states.
    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// The action set `U(x)` in declaration order.
    pub fn actions(&self, x: usize) -> &[Action] {
        &self.states[x]
    }

    pub fn num_actions(&self, x: usize) -> usize {
        self.states[x].len()
    }

    pub fn max_actions(&self) -> usize {
        self.states.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Resolves an action label at `x` to its declaration index.
    pub fn action_index(&self, x: usize, label: &str) -> Option<usize> {
        self.states[x].iter().position(|a| a.label == label)
    }

    pub fn action(&self, x: usize, u: usize) -> &Action {
        &self.states[x][u]
    }

    /// Number of stationary policies, saturating at `u128::MAX`.
    pub fn policy_count(&self) -> u128 {
        self.states
            .iter()
            .fold(1u128, |acc, a| acc.saturating_mul(a.len() as u128))
    }

    pub fn check_state(&self, x: usize) -> Result<(), ModelError> {
        if x < self.n() {
            Ok(())
        } else {
            Err(ModelError::StateOutOfRange { state: x + 1, n: self.n() })
        }
    }

    pub fn check_action(&self, x: usize, u: usize) -> Result<(), ModelError> {
        self.check_state(x)?;
        if u < self.num_actions(x) {
            Ok(())
        } else {
            Err(ModelError::ActionOutOfRange {
                state: x + 1,
                index: u,
                available: self.num_actions(x),
            })
        }
    }

    pub fn check_cost_vector(&self, j: &CostVector) -> Result<(), ModelError> {
        if j.len() != self.n() {
            return Err(ModelError::DimensionMismatch { expected: self.n(), found: j.len() });
        }
        if let Some(pos) = j.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteCost { state: pos + 1 });
        }
        Ok(())
    }
}

/// A stationary policy `mu`: one action index per state.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StationaryPolicy {
    choice: Vec<usize>,
}

impl StationaryPolicy {
    /// Wraps raw action indices. Use [`StationaryPolicy::check`] before handing
    /// an unverified policy to the algorithms.
    pub fn new(choice: Vec<usize>) -> Self {
        Self { choice }
    }

    /// The policy choosing the first declared action everywhere.
    pub fn first_actions(instance: &MdpInstance) -> Self {
        Self { choice: vec![0; instance.n()] }
    }

    pub fn from_labels<S: AsRef<str>>(
        instance: &MdpInstance,
        labels: &[S],
    ) -> Result<Self, ModelError> {
        if labels.len() != instance.n() {
            return Err(ModelError::DimensionMismatch {
                expected: instance.n(),
                found: labels.len(),
            });
        }
        let choice = labels
            .iter()
            .enumerate()
            .map(|(x, l)| {
                instance.action_index(x, l.as_ref()).ok_or_else(|| ModelError::UnknownAction {
                    state: x + 1,
                    label: l.as_ref().to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { choice })
    }

    pub fn labels<'a>(&self, instance: &'a MdpInstance) -> Vec<&'a str> {
        self.choice
            .iter()
            .enumerate()
            .map(|(x, &u)| instance.action(x, u).label.as_str())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.choice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choice.is_empty()
    }

    pub fn action(&self, x: usize) -> usize {
        self.choice[x]
    }

    pub fn set(&mut self, x: usize, u: usize) {
        self.choice[x] = u;
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.choice
    }

    /// Checks `mu(x) in U(x)` for every state.
    pub fn check(&self, instance: &MdpInstance) -> Result<(), ModelError> {
        if self.choice.len() != instance.n() {
            return Err(ModelError::DimensionMismatch {
                expected: instance.n(),
                found: self.choice.len(),
            });
        }
        for (x, &u) in self.choice.iter().enumerate() {
            instance.check_action(x, u)?;
        }
        Ok(())
    }

    /// States where `self` and `other` pick different actions.
    pub fn diff(&self, other: &StationaryPolicy) -> Vec<usize> {
        self.choice
            .iter()
            .zip(&other.choice)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(x, _)| x)
            .collect()
    }

    /// Human-readable form, e.g. `{1->to2, 2->to1, 3->stay}`.
    pub fn describe(&self, instance: &MdpInstance) -> String {
        let parts: Vec<String> = self
            .labels(instance)
            .iter()
            .enumerate()
            .map(|(x, l)| format!("{}->{}", x + 1, l))
            .collect();
        format!("{{{}}}", parts.join(", "))
    }
}

/// A cost vector `J` in R^n.
#[derive(Clone, Debug, PartialEq)]
pub struct CostVector(Vec<f64>);

impl CostVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `||self - other||_inf`. Panics on length mismatch.
    pub fn sup_distance(&self, other: &CostVector) -> f64 {
        assert_eq!(self.len(), other.len(), "cost vector length mismatch");
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Componentwise `self <= other + slack`.
    pub fn le_with_slack(&self, other: &CostVector, slack: f64) -> bool {
        self.len() == other.len() && self.0.iter().zip(&other.0).all(|(a, b)| *a <= b + slack)
    }
}

impl Index<usize> for CostVector {
    type Output = f64;

    fn index(&self, x: usize) -> &f64 {
        &self.0[x]
    }
}

impl From<Vec<f64>> for CostVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl fmt::Display for CostVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| format_sig(*v)).collect();
        write!(f, "({})", parts.join(", "))
    }
}

/// Formats with 9 significant digits, `%.9g` style.
pub fn format_sig(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{:.8e}", v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp) as usize;
        trim_zeros(format!("{:.*}", decimals, v))
    } else {
        format!("{}e{}", trim_zeros(mantissa.to_string()), exp)
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
