//! Post-hoc checks on recorded runs: monotone improvement of evaluated costs,
//! single-state edits, trajectory consistency, and the local/global optimality
//! guarantees of converged runs.

use std::fmt;

use crate::bellman::{
    check_global_optimality, check_invariant_set, check_local_optimality, evaluate_unchecked, OPTIMALITY_TOL,
};
use crate::classical::PiTrace;
use crate::model::{CostVector, MdpInstance, StationaryPolicy};
use crate::online::{OnlineMode, OnlineRunLog};

/// Slack allowed on componentwise non-increase of successive cost vectors.
pub const MONOTONE_SLACK: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Finding {
    pub check: &'static str,
    pub passed: bool,
    /// Step (or PI iteration) of the first violation.
    pub step: Option<usize>,
    pub detail: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        match self.step {
            Some(k) => write!(f, "{} {} (step {}): {}", status, self.check, k, self.detail),
            None => write!(f, "{} {}: {}", status, self.check, self.detail),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerificationReport {
    pub findings: Vec<Finding>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.findings.iter().all(|f| f.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| !f.passed)
    }

    pub fn get(&self, check: &str) -> Option<&Finding> {
        self.findings.iter().find(|f| f.check == check)
    }

    fn ok(&mut self, check: &'static str, detail: impl Into<String>) {
        self.findings.push(Finding { check, passed: true, step: None, detail: detail.into() });
    }

    fn fail(&mut self, check: &'static str, step: Option<usize>, detail: impl Into<String>) {
        self.findings.push(Finding { check, passed: false, step, detail: detail.into() });
    }

    fn record(&mut self, check: &'static str, first_violation: Option<(Option<usize>, String)>, ok_detail: &str) {
        match first_violation {
            None => self.ok(check, ok_detail),
            Some((step, detail)) => self.fail(check, step, detail),
        }
    }

    pub fn push(&mut self, finding: Finding) {
        self.findings.push(finding);
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for finding in &self.findings {
            writeln!(f, "{}", finding)?;
        }
        Ok(())
    }
}

fn exact_tol(j: &CostVector) -> f64 {
    1e-8 * (1.0 + j.sup_norm())
}

fn first_increase(old: &CostVector, new: &CostVector) -> Option<usize> {
    (0..old.len()).find(|&x| new[x] > old[x] + MONOTONE_SLACK)
}

fn set_label(states: &[usize]) -> String {
    let parts: Vec<String> = states.iter().map(|x| (x + 1).to_string()).collect();
    format!("{{{}}}", parts.join(","))
}

/// Checks an on-line run log against the instance it was produced on.
pub fn verify_run(instance: &MdpInstance, log: &OnlineRunLog) -> VerificationReport {
    let mut report = VerificationReport::default();
    let n = instance.n();
    let mode = log.config.mode;
    let eps = log.config.epsilon_improve;

    if let Err(e) = log.initial_policy.check(instance) {
        report.fail("structure", None, format!("initial policy invalid: {}", e));
        return report;
    }

    let mut structure = None;
    let mut successor = None;
    let mut monotone = None;
    let mut strict = None;
    let mut exact = None;
    let mut edits = None;

    let initial_exact = evaluate_unchecked(instance, &log.initial_policy);
    if log.initial_cost.len() != n || log.initial_cost.sup_distance(&initial_exact) > exact_tol(&initial_exact) {
        exact = Some((None, "initial cost is not J of the initial policy".to_string()));
    }

    let mut policy = log.initial_policy.clone();
    let mut cost = log.initial_cost.clone();
    let mut expected_state = log.x0;
    for (i, s) in log.steps.iter().enumerate() {
        let k = Some(s.k);
        if structure.is_none() {
            if s.k != i {
                structure = Some((k, format!("step index {} at position {}", s.k, i)));
            } else if s.state != expected_state {
                structure = Some((k, format!("state {} does not continue the trajectory", s.state + 1)));
            } else if s.state >= n || s.action >= instance.num_actions(s.state) || s.next_state >= n {
                structure = Some((k, "state or action out of range".to_string()));
            } else if s.q_factors.len() != instance.num_actions(s.state) {
                structure = Some((k, "Q-factor row has wrong length".to_string()));
            } else if s.cost_snapshot.is_some() != s.policy_changed() {
                structure = Some((k, "cost snapshot present iff the policy changed".to_string()));
            }
        }
        if structure.is_some() {
            break;
        }
        expected_state = s.next_state;

        // Edits against mu^k.
        let prev = policy.clone();
        let mut changed_states = Vec::new();
        match mode {
            OnlineMode::Rollout => {
                if s.changed || s.exploration.is_some() {
                    edits.get_or_insert((k, "rollout step edits the policy".to_string()));
                }
            }
            OnlineMode::Plain | OnlineMode::Exploration => {
                if s.changed != (s.action != prev.action(s.state)) {
                    edits.get_or_insert((k, "changed flag disagrees with the recorded action".to_string()));
                }
                policy.set(s.state, s.action);
                if s.changed {
                    changed_states.push(s.state);
                }
                match (&s.exploration, mode) {
                    (Some(_), OnlineMode::Plain) => {
                        edits.get_or_insert((k, "plain step carries an exploration edit".to_string()));
                    }
                    (Some(e), _) => {
                        if e.state == s.state || e.state >= n || e.action >= instance.num_actions(e.state) {
                            edits.get_or_insert((k, "exploration state invalid".to_string()));
                        } else {
                            if e.changed != (e.action != prev.action(e.state)) {
                                edits.get_or_insert((k, "exploration changed flag disagrees".to_string()));
                            }
                            policy.set(e.state, e.action);
                            if e.changed {
                                changed_states.push(e.state);
                            }
                        }
                    }
                    (None, _) => {}
                }
                let limit = if mode == OnlineMode::Plain { 1 } else { 2 };
                if policy.diff(&prev).len() > limit {
                    edits.get_or_insert((k, format!("more than {} states edited", limit)));
                }
            }
        }

        let followed = instance.action(s.state, s.action);
        if !followed.outcomes.iter().any(|o| o.to == s.next_state && o.p > 0.0) && successor.is_none() {
            successor = Some((k, format!("{} -> {} has zero probability", s.state + 1, s.next_state + 1)));
        }

        if let Some(snap) = &s.cost_snapshot {
            if snap.len() != n {
                exact.get_or_insert((k, "snapshot has wrong length".to_string()));
                continue;
            }
            if let Some(x) = first_increase(&cost, snap) {
                monotone.get_or_insert((k, format!("J increased at state {}", x + 1)));
            }
            for &x in &changed_states {
                if !(snap[x] < cost[x] - eps / 2.0) {
                    strict.get_or_insert((k, format!("no strict decrease at edited state {}", x + 1)));
                }
            }
            let true_cost = evaluate_unchecked(instance, &policy);
            if snap.sup_distance(&true_cost) > exact_tol(&true_cost) {
                exact.get_or_insert((k, "snapshot differs from exact evaluation".to_string()));
            }
            cost = snap.clone();
        }
    }

    report.record("structure", structure, "trajectory and records consistent");
    report.record("policy-edits", edits, "edits confined to the examined states");
    report.record("successor", successor, "every transition has positive probability");
    report.record("monotone", monotone, "evaluated costs are componentwise non-increasing");
    report.record("strict-decrease", strict, "every edit strictly lowered the edited state's cost");
    report.record("snapshot-exact", exact, "snapshots match exact evaluation");
    if report.get("structure").is_some_and(|f| !f.passed) {
        return report;
    }

    if policy != log.final_policy {
        report.fail("final-policy", None, "replayed edits do not yield the recorded final policy");
    } else {
        report.ok("final-policy", "replayed edits yield the final policy");
    }

    let mut since_change = vec![false; n];
    for s in &log.steps {
        if s.policy_changed() {
            since_change.fill(false);
        } else {
            since_change[s.state] = true;
        }
    }
    let estimate: Vec<usize> = (0..n).filter(|&x| since_change[x]).collect();
    if estimate != log.recurrent_estimate {
        report.fail(
            "recurrent-estimate",
            None,
            format!("recorded {} but log implies {}", set_label(&log.recurrent_estimate), set_label(&estimate)),
        );
    } else {
        report.ok("recurrent-estimate", format!("X̂ = {}", set_label(&estimate)));
    }

    if log.converged() {
        match mode {
            OnlineMode::Plain => {
                let local = check_local_optimality(instance, &log.final_policy, &estimate, OPTIMALITY_TOL);
                let invariant = check_invariant_set(instance, &log.final_policy, &estimate);
                match local {
                    Ok(true) => report.ok("local-optimality", format!("locally optimal over {}", set_label(&estimate))),
                    _ => report.fail("local-optimality", None, format!("not locally optimal over {}", set_label(&estimate))),
                }
                match invariant {
                    Ok(true) => report.ok("invariant-set", format!("{} is invariant", set_label(&estimate))),
                    _ => report.fail("invariant-set", None, format!("{} is not invariant", set_label(&estimate))),
                }
            }
            OnlineMode::Exploration => match check_global_optimality(instance, &log.final_policy, OPTIMALITY_TOL) {
                Ok(true) => report.ok("global-optimality", "final policy is optimal"),
                _ => report.fail("global-optimality", None, "final policy is not optimal"),
            },
            OnlineMode::Rollout => {}
        }
    }
    if mode == OnlineMode::Rollout {
        if log.final_policy == log.initial_policy {
            report.ok("rollout-unchanged", "base policy unchanged");
        } else {
            report.fail("rollout-unchanged", None, "rollout run modified the base policy");
        }
    }
    report
}

/// Checks a classical PI trace: exact evaluations, monotone costs, and global
/// optimality of the final policy when the run converged.
pub fn verify_pi_trace(instance: &MdpInstance, trace: &PiTrace) -> VerificationReport {
    let mut report = VerificationReport::default();
    let mut exact = None;
    let mut monotone = None;
    for (k, it) in trace.iterates.iter().enumerate() {
        if it.policy.check(instance).is_err() || it.cost.len() != instance.n() {
            report.fail("structure", Some(k), "iterate does not fit the instance");
            return report;
        }
        let true_cost = evaluate_unchecked(instance, &it.policy);
        if it.cost.sup_distance(&true_cost) > exact_tol(&true_cost) {
            exact.get_or_insert((Some(k), "cost differs from exact evaluation".to_string()));
        }
        if k > 0 {
            if let Some(x) = first_increase(&trace.iterates[k - 1].cost, &it.cost) {
                monotone.get_or_insert((Some(k), format!("J increased at state {}", x + 1)));
            }
        }
    }
    report.record("snapshot-exact", exact, "costs match exact evaluation");
    report.record("monotone", monotone, "costs are componentwise non-increasing");
    if trace.converged() && !trace.iterates.is_empty() {
        let policy: &StationaryPolicy = trace.final_policy();
        match check_global_optimality(instance, policy, OPTIMALITY_TOL) {
            Ok(true) => report.ok("global-optimality", "final policy is optimal"),
            _ => report.fail("global-optimality", None, "final policy is not optimal"),
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::run_classical_pi;
    use crate::instances::{build_counterexample, counterexample_mubar, generate_random, GeneratorParams};
    use crate::online::{run_online_pi, OnlineConfig};

    #[test]
    fn plain_counterexample_run_verifies() {
        let inst = build_counterexample();
        let mubar = counterexample_mubar(&inst).unwrap();
        let log = run_online_pi(&inst, 0, &mubar, &OnlineConfig { max_steps: 100, seed: 4, ..Default::default() }).unwrap();
        let report = verify_run(&inst, &log);
        assert!(report.passed(), "{}", report);
        assert!(report.get("local-optimality").unwrap().passed);
        assert!(report.get("invariant-set").unwrap().passed);
    }

    #[test]
    fn exploration_run_verifies_global() {
        let inst = build_counterexample();
        let mubar = counterexample_mubar(&inst).unwrap();
        let cfg = OnlineConfig { mode: OnlineMode::Exploration, max_steps: 500, seed: 1, ..Default::default() };
        let log = run_online_pi(&inst, 0, &mubar, &cfg).unwrap();
        let report = verify_run(&inst, &log);
        assert!(report.passed(), "{}", report);
        assert!(report.get("global-optimality").unwrap().passed);
    }

    #[test]
    fn rollout_run_verifies() {
        let inst = build_counterexample();
        let mubar = counterexample_mubar(&inst).unwrap();
        let cfg = OnlineConfig { mode: OnlineMode::Rollout, max_steps: 100, seed: 2, ..Default::default() };
        let log = run_online_pi(&inst, 0, &mubar, &cfg).unwrap();
        let report = verify_run(&inst, &log);
        assert!(report.passed(), "{}", report);
        assert!(report.get("rollout-unchanged").unwrap().passed);
    }

    fn changing_run() -> (MdpInstance, OnlineRunLog) {
        let params = GeneratorParams { n: 6, max_actions: 4, branching: 2, cost_range: (0.0, 1.0), discount: 0.9, seed: 3 };
        let inst = generate_random(&params).unwrap();
        let mu0 = StationaryPolicy::first_actions(&inst);
        let log = run_online_pi(&inst, 0, &mu0, &OnlineConfig { max_steps: 500, seed: 8, ..Default::default() }).unwrap();
        assert!(log.policy_changes() > 0);
        (inst, log)
    }

    #[test]
    fn corrupted_snapshot_names_step() {
        let (inst, mut log) = changing_run();
        assert!(verify_run(&inst, &log).passed());
        let idx = log.steps.iter().position(|s| s.cost_snapshot.is_some()).unwrap();
        let k = log.steps[idx].k;
        let mut snap = log.steps[idx].cost_snapshot.clone().unwrap().into_vec();
        snap[0] = log.initial_cost[0] + 1.0;
        log.steps[idx].cost_snapshot = Some(snap.into());
        let report = verify_run(&inst, &log);
        let f = report.get("monotone").unwrap();
        assert!(!f.passed);
        assert_eq!(f.step, Some(k));
    }

    #[test]
    fn tampered_action_detected() {
        let (inst, mut log) = changing_run();
        let idx = log.steps.iter().position(|s| s.changed).unwrap();
        log.steps[idx].changed = false;
        let report = verify_run(&inst, &log);
        assert!(!report.passed());
    }

    #[test]
    fn pi_trace_verifies() {
        let inst = build_counterexample();
        let trace = run_classical_pi(&inst, &counterexample_mubar(&inst).unwrap(), 20).unwrap();
        assert!(verify_pi_trace(&inst, &trace).passed());
    }
}
