//! On-line policy iteration.
//!
//! The run generates state-policy pairs `(x_k, mu^k)`. At step `k` only the
//! current state `x_k` is a candidate for policy improvement, using Q-factors
//! of `mu^k`; `x_{k+1}` is then drawn from the transition row of the (possibly
//! new) action at `x_k`. The exploration mode adds one uniformly drawn extra
//! state per step, and the rollout mode never edits the policy, acting greedily
//! against the cost of the fixed base policy.

use serde::{Deserialize, Serialize};

use rand::Rng;

use crate::bellman::{evaluate_unchecked, greedy_unchecked, q_row_unchecked, QFactorRow};
use crate::error::ModelError;
use crate::instances::{seeded_rng, Prng};
use crate::model::{Action, CostVector, MdpInstance, StationaryPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnlineMode {
    Plain,
    Exploration,
    Rollout,
}

impl OnlineMode {
    pub fn as_str(self) -> &'static str {
        match self {
            OnlineMode::Plain => "plain",
            OnlineMode::Exploration => "exploration",
            OnlineMode::Rollout => "rollout",
        }
    }
}

/// How `u_k` is picked among controls that strictly improve on `J(x_k)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImprovementRule {
    /// The minimizing control (first in declaration order on ties).
    Argmin,
    /// The first improving control in declaration order.
    FirstImproving,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineConfig {
    pub mode: OnlineMode,
    pub improvement_rule: ImprovementRule,
    /// A control counts as improving only if its Q-factor is below
    /// `J(x) - epsilon_improve`.
    pub epsilon_improve: f64,
    pub max_steps: usize,
    /// Unchanged steps required before convergence; `None` means `10 * n`.
    pub stable_window: Option<usize>,
    pub seed: u64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            mode: OnlineMode::Plain,
            improvement_rule: ImprovementRule::Argmin,
            epsilon_improve: 1e-9,
            max_steps: 1000,
            stable_window: None,
            seed: 0,
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.epsilon_improve >= 0.0 && self.epsilon_improve.is_finite()) {
            return Err(ModelError::InvalidArgument(format!(
                "epsilon_improve must be finite and >= 0, got {}",
                self.epsilon_improve
            )));
        }
        if self.stable_window == Some(0) {
            return Err(ModelError::InvalidArgument("stable_window must be >= 1".into()));
        }
        Ok(())
    }

    pub fn window(&self, n: usize) -> usize {
        self.stable_window.unwrap_or(10 * n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Improvement {
    pub action: usize,
    pub changed: bool,
}

fn improve_at(
    instance: &MdpInstance,
    policy: &StationaryPolicy,
    j: &[f64],
    x: usize,
    config: &OnlineConfig,
) -> (QFactorRow, Improvement) {
    let row = q_row_unchecked(instance, x, j);
    let threshold = j[x] - config.epsilon_improve;
    let chosen = match config.improvement_rule {
        ImprovementRule::Argmin => Some(row.argmin()).filter(|&u| row.values[u] < threshold),
        ImprovementRule::FirstImproving => row.values.iter().position(|q| *q < threshold),
    };
    let current = policy.action(x);
    let imp = match chosen {
        Some(u) => Improvement { action: u, changed: u != current },
        None => Improvement { action: current, changed: false },
    };
    (row, imp)
}

/// Policy improvement at a single state. `j` must be the cost of `policy`.
pub fn improvement_step(
    instance: &MdpInstance,
    policy: &StationaryPolicy,
    j: &CostVector,
    x: usize,
    config: &OnlineConfig,
) -> Result<Improvement, ModelError> {
    policy.check(instance)?;
    instance.check_cost_vector(j)?;
    instance.check_state(x)?;
    Ok(improve_at(instance, policy, j.as_slice(), x, config).1)
}

/// The extra improvement performed at `x̄_k` in exploration mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplorationRecord {
    pub state: usize,
    pub q_factors: Vec<f64>,
    pub action: usize,
    pub changed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub state: usize,
    /// `Q_{mu^k}(x_k, u)` for every `u` in `U(x_k)`.
    pub q_factors: Vec<f64>,
    /// `mu^{k+1}(x_k)`, or the rollout action in rollout mode.
    pub action: usize,
    pub changed: bool,
    pub exploration: Option<ExplorationRecord>,
    pub next_state: usize,
    /// `J_{mu^{k+1}}`, present only when the policy changed at this step.
    pub cost_snapshot: Option<CostVector>,
}

impl StepRecord {
    pub fn policy_changed(&self) -> bool {
        self.changed || self.exploration.as_ref().is_some_and(|e| e.changed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxSteps,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OnlineRunLog {
    pub config: OnlineConfig,
    pub x0: usize,
    pub initial_policy: StationaryPolicy,
    pub initial_cost: CostVector,
    pub steps: Vec<StepRecord>,
    pub final_policy: StationaryPolicy,
    pub final_cost: CostVector,
    pub visit_counts: Vec<usize>,
    /// States visited after the last policy change, sorted.
    pub recurrent_estimate: Vec<usize>,
    pub termination: Termination,
}

impl OnlineRunLog {
    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    pub fn policy_changes(&self) -> usize {
        self.steps.iter().filter(|s| s.policy_changed()).count()
    }

    pub fn last_change_step(&self) -> Option<usize> {
        self.steps.iter().rev().find(|s| s.policy_changed()).map(|s| s.k)
    }

    /// The sequence of evaluated cost vectors: `J_{mu^0}` then every snapshot.
    pub fn cost_sequence(&self) -> impl Iterator<Item = &CostVector> {
        std::iter::once(&self.initial_cost).chain(self.steps.iter().filter_map(|s| s.cost_snapshot.as_ref()))
    }

    /// States visited, in order, including the state after the final step.
    pub fn trajectory(&self) -> Vec<usize> {
        let mut path: Vec<usize> = self.steps.iter().map(|s| s.state).collect();
        if let Some(last) = self.steps.last() {
            path.push(last.next_state);
        }
        path
    }
}

fn sample_successor(action: &Action, rng: &mut Prng) -> usize {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = None;
    for o in action.outcomes.iter().filter(|o| o.p > 0.0) {
        acc += o.p;
        last = Some(o.to);
        if r < acc {
            return o.to;
        }
    }
    last.expect("every row has positive mass")
}

/// True iff every positive-probability successor of `set` under the acting
/// controls stays inside `set`.
fn is_closed(instance: &MdpInstance, acting: &StationaryPolicy, inside: &[bool]) -> bool {
    inside.iter().enumerate().filter(|(_, &v)| v).all(|(x, _)| {
        instance
            .action(x, acting.action(x))
            .outcomes
            .iter()
            .all(|o| o.p == 0.0 || inside[o.to])
    })
}

/// Runs on-line PI from `(x0, mu0)`.
///
/// `J_{mu^k}` is re-solved only on steps that change the policy. The run
/// stops at `max_steps`, or once the policy has been unchanged for the
/// stable window, the set of states visited since the last change is closed
/// under the controls being applied, and (exploration mode) every state has
/// been examined since the last change.
pub fn run_online_pi(
    instance: &MdpInstance,
    x0: usize,
    mu0: &StationaryPolicy,
    config: &OnlineConfig,
) -> Result<OnlineRunLog, ModelError> {
    config.validate()?;
    mu0.check(instance)?;
    instance.check_state(x0)?;

    let n = instance.n();
    let window = config.window(n);
    let mut rng = seeded_rng(config.seed);
    let mut policy = mu0.clone();
    let initial_cost = evaluate_unchecked(instance, &policy);
    let mut j = initial_cost.clone();
    let rollout_policy = (config.mode == OnlineMode::Rollout).then(|| greedy_unchecked(instance, j.as_slice()));

    let mut x = x0;
    let mut steps = Vec::new();
    let mut visit_counts = vec![0usize; n];
    let mut visited_since_change = vec![false; n];
    let mut examined_since_change = vec![false; n];
    let mut last_change: Option<usize> = None;
    let mut termination = Termination::MaxSteps;

    for k in 0..config.max_steps {
        visit_counts[x] += 1;
        let (row, imp, exploration) = match config.mode {
            OnlineMode::Rollout => {
                let row = q_row_unchecked(instance, x, j.as_slice());
                let u = row.argmin();
                (row, Improvement { action: u, changed: false }, None)
            }
            OnlineMode::Plain | OnlineMode::Exploration => {
                let (row, imp) = improve_at(instance, &policy, j.as_slice(), x, config);
                let exploration = (config.mode == OnlineMode::Exploration && n > 1).then(|| {
                    let mut xbar = rng.gen_range(0..n);
                    while xbar == x {
                        xbar = rng.gen_range(0..n);
                    }
                    // Same mu^k and J_{mu^k} as the edit at x_k.
                    let (bar_row, bar) = improve_at(instance, &policy, j.as_slice(), xbar, config);
                    ExplorationRecord { state: xbar, q_factors: bar_row.values, action: bar.action, changed: bar.changed }
                });
                policy.set(x, imp.action);
                if let Some(e) = &exploration {
                    policy.set(e.state, e.action);
                }
                (row, imp, exploration)
            }
        };

        let changed = imp.changed || exploration.as_ref().is_some_and(|e| e.changed);
        let cost_snapshot = if changed {
            j = evaluate_unchecked(instance, &policy);
            last_change = Some(k);
            visited_since_change.fill(false);
            examined_since_change.fill(false);
            Some(j.clone())
        } else {
            visited_since_change[x] = true;
            examined_since_change[x] = true;
            if let Some(e) = &exploration {
                examined_since_change[e.state] = true;
            }
            None
        };

        let next = sample_successor(instance.action(x, imp.action), &mut rng);
        steps.push(StepRecord {
            k,
            state: x,
            q_factors: row.values,
            action: imp.action,
            changed: imp.changed,
            exploration,
            next_state: next,
            cost_snapshot,
        });
        x = next;

        let unchanged_for = match last_change {
            Some(c) => k - c,
            None => k + 1,
        };
        if unchanged_for >= window {
            let acting = rollout_policy.as_ref().unwrap_or(&policy);
            let covered = config.mode != OnlineMode::Exploration || examined_since_change.iter().all(|&e| e);
            if covered && is_closed(instance, acting, &visited_since_change) {
                termination = Termination::Converged;
                break;
            }
        }
    }

    let recurrent_estimate = visited_since_change
        .iter()
        .enumerate()
        .filter(|(_, &v)| v)
        .map(|(x, _)| x)
        .collect();
    Ok(OnlineRunLog {
        config: config.clone(),
        x0,
        initial_policy: mu0.clone(),
        initial_cost,
        steps,
        final_policy: policy,
        final_cost: j,
        visit_counts,
        recurrent_estimate,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bellman::{check_global_optimality, evaluate_policy_exact, OPTIMALITY_TOL};
    use crate::instances::{build_counterexample, counterexample_mubar, generate_random, GeneratorParams};

    fn plain(max_steps: usize, seed: u64) -> OnlineConfig {
        OnlineConfig { max_steps, seed, ..OnlineConfig::default() }
    }

    #[test]
    fn improvement_step_examples() {
        let inst = build_counterexample();
        let mubar = counterexample_mubar(&inst).unwrap();
        let j = evaluate_policy_exact(&inst, &mubar).unwrap();
        let cfg = OnlineConfig::default();
        let at1 = improvement_step(&inst, &mubar, &j, 0, &cfg).unwrap();
        assert_eq!(at1, Improvement { action: inst.action_index(0, "to2").unwrap(), changed: false });
        let at3 = improvement_step(&inst, &mubar, &j, 2, &cfg).unwrap();
        assert_eq!(at3, Improvement { action: inst.action_index(2, "to2").unwrap(), changed: true });
    }

    #[test]
    fn first_improving_rule_takes_declaration_order() {
        // One state, three self-loop actions with costs 3, 2, 1; policy on the first.
        let params = GeneratorParams { n: 1, max_actions: 1, branching: 1, cost_range: (0.0, 0.0), discount: 0.5, seed: 0 };
        let base = generate_random(&params).unwrap();
        let mut doc = base.to_doc();
        let template = doc.states[0].actions[0].clone();
        doc.states[0].actions = (0..3)
            .map(|i| {
                let mut a = template.clone();
                a.label = format!("c{}", 3 - i);
                a.costs[0].g = (3 - i) as f64;
                a
            })
            .collect();
        let inst = MdpInstance::from_doc(&doc).unwrap();
        let mu = StationaryPolicy::new(vec![0]);
        let j = evaluate_policy_exact(&inst, &mu).unwrap();
        let argmin = improvement_step(&inst, &mu, &j, 0, &OnlineConfig::default()).unwrap();
        assert_eq!(argmin.action, 2);
        let first = OnlineConfig { improvement_rule: ImprovementRule::FirstImproving, ..OnlineConfig::default() };
        assert_eq!(improvement_step(&inst, &mu, &j, 0, &first).unwrap(), Improvement { action: 1, changed: true });
    }

    #[test]
    fn single_action_state_never_changes() {
        let inst = build_counterexample();
        let mut doc = inst.to_doc();
        doc.states[0].actions.truncate(1);
        let inst = MdpInstance::from_doc(&doc).unwrap();
        let mu = StationaryPolicy::new(vec![0, 0, 1]);
        let j = evaluate_policy_exact(&inst, &mu).unwrap();
        assert_eq!(
            improvement_step(&inst, &mu, &j, 0, &OnlineConfig::default()).unwrap(),
            Improvement { action: 0, changed: false }
        );
    }

    #[test]
    fn plain_run_stalls_on_counterexample() {
        let inst = build_counterexample();
        let mubar = counterexample_mubar(&inst).unwrap();
        for seed in [0, 5, 99] {
            let log = run_online_pi(&inst, 0, &mubar, &plain(200, seed)).unwrap();
            assert_eq!(log.policy_changes(), 0);
            assert_eq!(log.final_policy, mubar);
            let path = log.trajectory();
            for (i, x) in path.iter().enumerate() {
                assert_eq!(*x, i % 2);
            }
            assert!(log.converged());
            assert_eq!(log.recurrent_estimate, vec![0, 1]);
        }
    }

    #[test]
    fn zero_steps_is_empty() {
        let inst = build_counterexample();
        let mubar = counterexample_mubar(&inst).unwrap();
        let log = run_online_pi(&inst, 0, &mubar, &plain(0, 1)).unwrap();
        assert!(log.steps.is_empty());
        assert_eq!(log.final_policy, mubar);
        assert_eq!(log.termination, Termination::MaxSteps);
    }

    #[test]
    fn exploration_reaches_optimum() {
        let inst = build_counterexample();
        let mubar = counterexample_mubar(&inst).unwrap();
        let cfg = OnlineConfig { mode: OnlineMode::Exploration, ..plain(500, 1) };
        let log = run_online_pi(&inst, 0, &mubar, &cfg).unwrap();
        assert!(log.converged());
        assert!(check_global_optimality(&inst, &log.final_policy, OPTIMALITY_TOL).unwrap());
        assert!(log.final_cost.sup_norm() <= 1e-12);
        for s in &log.steps {
            let e = s.exploration.as_ref().unwrap();
            assert_ne!(e.state, s.state);
        }
    }

    #[test]
    fn rollout_keeps_base_policy() {
        let inst = build_counterexample();
        let mubar = counterexample_mubar(&inst).unwrap();
        let cfg = OnlineConfig { mode: OnlineMode::Rollout, ..plain(50, 3) };
        let log = run_online_pi(&inst, 2, &mubar, &cfg).unwrap();
        assert_eq!(log.final_policy, mubar);
        assert_eq!(log.policy_changes(), 0);
        // From state 3 the rollout control against J_mubar is to2.
        assert_eq!(log.steps[0].action, inst.action_index(2, "to2").unwrap());
        assert_eq!(log.steps[0].next_state, 1);
    }

    #[test]
    fn invalid_inputs_rejected() {
        let inst = build_counterexample();
        let mubar = counterexample_mubar(&inst).unwrap();
        assert!(run_online_pi(&inst, 3, &mubar, &plain(10, 0)).is_err());
        assert!(run_online_pi(&inst, 0, &StationaryPolicy::new(vec![0, 0, 2]), &plain(10, 0)).is_err());
        let bad = OnlineConfig { stable_window: Some(0), ..plain(10, 0) };
        assert!(run_online_pi(&inst, 0, &mubar, &bad).is_err());
        let bad = OnlineConfig { epsilon_improve: -1.0, ..plain(10, 0) };
        assert!(run_online_pi(&inst, 0, &mubar, &bad).is_err());
    }

    #[test]
    fn runs_are_deterministic() {
        let params = GeneratorParams { n: 8, max_actions: 4, branching: 3, cost_range: (0.0, 1.0), discount: 0.9, seed: 17 };
        let inst = generate_random(&params).unwrap();
        let mu0 = StationaryPolicy::first_actions(&inst);
        let cfg = OnlineConfig { mode: OnlineMode::Exploration, ..plain(300, 9) };
        let a = run_online_pi(&inst, 0, &mu0, &cfg).unwrap();
        let b = run_online_pi(&inst, 0, &mu0, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
