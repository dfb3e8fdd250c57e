//! Brute-force ground truth and cross-algorithm comparison sweeps.

use serde::Serialize;
use thiserror::Error;

use crate::bellman::{
    apply_t, check_global_optimality, check_local_optimality, evaluate_unchecked, greedy_unchecked, value_iteration,
    OPTIMALITY_TOL,
};
use crate::classical::run_classical_pi;
use crate::error::ModelError;
use crate::model::{CostVector, MdpInstance, StationaryPolicy};
use crate::online::{run_online_pi, OnlineConfig, OnlineMode, OnlineRunLog};

/// Enumeration refuses instances with more stationary policies than this.
pub const MAX_ENUMERATED_POLICIES: u128 = 1_000_000;

/// Default tolerance for membership in the optimal set.
pub const ORACLE_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance has {0} stationary policies, above the enumeration limit of {MAX_ENUMERATED_POLICIES}")]
    TooLarge(u128),
    #[error("enumerated optimum fails Bellman's equation: residual {0}")]
    Residual(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub optimal_cost: CostVector,
    /// Every policy whose cost is within `tol` of `optimal_cost`, in
    /// enumeration order.
    pub optimal_policies: Vec<StationaryPolicy>,
    pub enumerated: usize,
}

impl OracleReport {
    pub fn contains(&self, policy: &StationaryPolicy) -> bool {
        self.optimal_policies.contains(policy)
    }
}

/// Mixed-radix counter over action indices; state 0 is the least significant digit.
struct PolicyCounter {
    radix: Vec<usize>,
    current: Option<Vec<usize>>,
}

impl Iterator for PolicyCounter {
    type Item = StationaryPolicy;

    fn next(&mut self) -> Option<StationaryPolicy> {
        let digits = self.current.as_mut()?;
        let out = StationaryPolicy::new(digits.clone());
        let mut pos = 0;
        loop {
            if pos == digits.len() {
                self.current = None;
                break;
            }
            digits[pos] += 1;
            if digits[pos] < self.radix[pos] {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
        Some(out)
    }
}

pub fn all_policies(instance: &MdpInstance) -> impl Iterator<Item = StationaryPolicy> {
    PolicyCounter {
        radix: (0..instance.n()).map(|x| instance.num_actions(x)).collect(),
        current: Some(vec![0; instance.n()]),
    }
}

/// Evaluates every stationary policy exactly.
pub fn enumerate_optimal(instance: &MdpInstance, tol: f64) -> Result<OracleReport, OracleError> {
    let count = instance.policy_count();
    if count > MAX_ENUMERATED_POLICIES {
        return Err(OracleError::TooLarge(count));
    }
    let evaluated: Vec<(StationaryPolicy, CostVector)> = all_policies(instance)
        .map(|p| {
            let j = evaluate_unchecked(instance, &p);
            (p, j)
        })
        .collect();
    let n = instance.n();
    let optimal_cost: CostVector = (0..n)
        .map(|x| evaluated.iter().map(|(_, j)| j[x]).fold(f64::INFINITY, f64::min))
        .collect::<Vec<_>>()
        .into();
    let residual = apply_t(instance, &optimal_cost)?.sup_distance(&optimal_cost);
    if residual > 10.0 * tol {
        return Err(OracleError::Residual(residual));
    }
    let optimal_policies = evaluated
        .iter()
        .filter(|(_, j)| j.sup_distance(&optimal_cost) <= tol)
        .map(|(p, _)| p.clone())
        .collect();
    Ok(OracleReport { optimal_cost, optimal_policies, enumerated: evaluated.len() })
}

/// `J*` from enumeration when feasible, otherwise from tight value iteration.
pub fn reference_optimum(instance: &MdpInstance) -> Result<CostVector, OracleError> {
    match enumerate_optimal(instance, ORACLE_TOL) {
        Ok(report) => Ok(report.optimal_cost),
        Err(OracleError::TooLarge(_)) => {
            let vi = value_iteration(instance, &CostVector::zeros(instance.n()), 1e-12, 1_000_000)?;
            Ok(vi.values)
        }
        Err(e) => Err(e),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Plain,
    Exploration,
    Rollout,
    ClassicalPi,
}

impl RunKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RunKind::Plain => "plain",
            RunKind::Exploration => "exploration",
            RunKind::Rollout => "rollout",
            RunKind::ClassicalPi => "pi",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    /// `None` for the classical PI baseline.
    pub seed: Option<u64>,
    pub mode: RunKind,
    /// Steps up to and including the last policy change (PI: iterations).
    pub steps: usize,
    pub policy_changes: usize,
    pub converged: bool,
    pub final_cost: Vec<f64>,
    pub max_j_gap_vs_oracle: f64,
    pub local_opt: bool,
    pub global_opt: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub optimal_cost: Vec<f64>,
    pub rows: Vec<ComparisonRow>,
}

pub const CSV_HEADER: [&str; 7] =
    ["seed", "mode", "steps", "policy_changes", "max_J_gap_vs_oracle", "local_opt", "global_opt"];

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.seed.map(|s| s.to_string()).unwrap_or_default(),
                r.mode.as_str().to_string(),
                r.steps.to_string(),
                r.policy_changes.to_string(),
                crate::model::format_sig(r.max_j_gap_vs_oracle),
                r.local_opt.to_string(),
                r.global_opt.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv output is utf-8")
    }

    /// One JSON object per row.
    pub fn to_json_lines(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("rows serialize") + "\n")
            .collect()
    }
}

fn online_row(
    instance: &MdpInstance,
    log: &OnlineRunLog,
    kind: RunKind,
    optimum: &CostVector,
) -> Result<ComparisonRow, ModelError> {
    // Rollout is judged by the policy it actually applies.
    let applied = match kind {
        RunKind::Rollout => greedy_unchecked(instance, log.initial_cost.as_slice()),
        _ => log.final_policy.clone(),
    };
    let cost = evaluate_unchecked(instance, &applied);
    Ok(ComparisonRow {
        seed: Some(log.seed()),
        mode: kind,
        steps: log.last_change_step().map_or(0, |k| k + 1),
        policy_changes: log.policy_changes(),
        converged: log.converged(),
        max_j_gap_vs_oracle: cost.sup_distance(optimum),
        local_opt: check_local_optimality(instance, &applied, &log.recurrent_estimate, OPTIMALITY_TOL)?,
        global_opt: check_global_optimality(instance, &applied, OPTIMALITY_TOL)?,
        final_cost: cost.into_vec(),
    })
}

/// Runs plain, exploration and rollout modes for every seed, plus classical
/// PI once. Mode and seed in `template` are overridden per run.
pub fn run_comparison(
    instance: &MdpInstance,
    x0: usize,
    mu0: &StationaryPolicy,
    seeds: &[u64],
    template: &OnlineConfig,
) -> Result<ComparisonTable, OracleError> {
    let optimum = reference_optimum(instance)?;
    let mut rows = Vec::new();
    for kind in [RunKind::Plain, RunKind::Exploration, RunKind::Rollout] {
        let mode = match kind {
            RunKind::Plain => OnlineMode::Plain,
            RunKind::Exploration => OnlineMode::Exploration,
            _ => OnlineMode::Rollout,
        };
        for &seed in seeds {
            let config = OnlineConfig { mode, seed, ..template.clone() };
            let log = run_online_pi(instance, x0, mu0, &config)?;
            rows.push(online_row(instance, &log, kind, &optimum)?);
        }
    }
    let pi = run_classical_pi(instance, mu0, 10_000)?;
    rows.push(ComparisonRow {
        seed: None,
        mode: RunKind::ClassicalPi,
        steps: pi.iterates.len(),
        policy_changes: pi.iterates.len() - 1,
        converged: pi.converged(),
        max_j_gap_vs_oracle: pi.final_cost().sup_distance(&optimum),
        local_opt: check_global_optimality(instance, pi.final_policy(), OPTIMALITY_TOL)?,
        global_opt: check_global_optimality(instance, pi.final_policy(), OPTIMALITY_TOL)?,
        final_cost: pi.final_cost().as_slice().to_vec(),
    });
    Ok(ComparisonTable { optimal_cost: optimum.into_vec(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{build_counterexample, counterexample_mubar, counterexample_mustar, single_self_loop};

    #[test]
    fn counter_visits_every_policy_once() {
        let inst = build_counterexample();
        let all: Vec<_> = all_policies(&inst).collect();
        assert_eq!(all.len(), 8);
        let mut sorted = all.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 8);
    }

    #[test]
    fn counterexample_optimum() {
        let inst = build_counterexample();
        let report = enumerate_optimal(&inst, ORACLE_TOL).unwrap();
        assert_eq!(report.enumerated, 8);
        assert!(report.optimal_cost.sup_norm() <= 1e-12);
        assert!(report.contains(&counterexample_mustar(&inst).unwrap()));
        assert!(!report.contains(&counterexample_mubar(&inst).unwrap()));
    }

    #[test]
    fn single_action_oracle() {
        let inst = single_self_loop(3.0, 0.5).unwrap();
        let report = enumerate_optimal(&inst, ORACLE_TOL).unwrap();
        assert_eq!(report.optimal_policies, vec![StationaryPolicy::new(vec![0])]);
        assert!((report.optimal_cost[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn too_large_rejected() {
        let params = crate::instances::GeneratorParams {
            n: 30,
            max_actions: 4,
            branching: 2,
            cost_range: (0.0, 1.0),
            discount: 0.9,
            seed: 1,
        };
        let inst = crate::instances::generate_random(&params).unwrap();
        assert!(inst.policy_count() > MAX_ENUMERATED_POLICIES);
        assert!(matches!(enumerate_optimal(&inst, ORACLE_TOL), Err(OracleError::TooLarge(_))));
    }

    #[test]
    fn counterexample_comparison() {
        let inst = build_counterexample();
        let mubar = counterexample_mubar(&inst).unwrap();
        let seeds: Vec<u64> = (1..=20).collect();
        let template = OnlineConfig { max_steps: 500, ..Default::default() };
        let table = run_comparison(&inst, 0, &mubar, &seeds, &template).unwrap();
        assert_eq!(table.rows.len(), 61);
        for r in &table.rows {
            match r.mode {
                RunKind::Plain => {
                    assert_eq!(r.policy_changes, 0);
                    assert!(!r.global_opt);
                    assert!(r.local_opt);
                }
                RunKind::Exploration => {
                    assert!(r.converged);
                    assert!(r.global_opt);
                }
                RunKind::Rollout => assert_eq!(r.policy_changes, 0),
                RunKind::ClassicalPi => assert!(r.global_opt),
            }
        }
        let csv = table.to_csv();
        assert!(csv.starts_with("seed,mode,steps,policy_changes,max_J_gap_vs_oracle,local_opt,global_opt\n"));
        assert_eq!(csv.lines().count(), 62);
    }

    #[test]
    fn optimal_start_is_quiet() {
        let inst = build_counterexample();
        let mustar = counterexample_mustar(&inst).unwrap();
        let table = run_comparison(&inst, 0, &mustar, &[1, 2, 3], &OnlineConfig::default()).unwrap();
        for r in &table.rows {
            assert_eq!(r.policy_changes, 0, "{:?}", r);
            assert!(r.global_opt, "{:?}", r);
        }
    }
}
