//! Bellman operators `T_mu` and `T`, Q-factors, policy evaluation, value
//! iteration, greedy extraction and the optimality checkers.
//!
//! All operator variants funnel through [`q_value`], so `min_u Q(x,u,J)` and
//! `(TJ)(x)` are bit-identical, as are `Q(x,mu(x),J)` and `(T_mu J)(x)`.

use crate::error::ModelError;
use crate::linalg::solve_dense;
use crate::model::{CostVector, MdpInstance, StationaryPolicy};

/// Default absolute tolerance for the optimality checks.
pub const OPTIMALITY_TOL: f64 = 1e-8;

/// Q-factors of every action at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct QFactorRow {
    pub state: usize,
    pub values: Vec<f64>,
}

impl QFactorRow {
    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// First index attaining the minimum.
    pub fn argmin(&self) -> usize {
        argmin_first(&self.values)
    }
}

pub(crate) fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (u, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = u;
        }
    }
    best
}

/// `sum_y p_xy(u) (g(x,u,y) + alpha J(y))`, unchecked.
#[inline]
pub(crate) fn q_value(instance: &MdpInstance, x: usize, u: usize, j: &[f64]) -> f64 {
    let alpha = instance.discount();
    instance
        .action(x, u)
        .outcomes
        .iter()
        .map(|o| o.p * (o.g + alpha * j[o.to]))
        .sum()
}

#[inline]
fn min_q(instance: &MdpInstance, x: usize, j: &[f64]) -> f64 {
    (0..instance.num_actions(x))
        .map(|u| q_value(instance, x, u, j))
        .fold(f64::INFINITY, f64::min)
}

pub(crate) fn q_row_unchecked(instance: &MdpInstance, x: usize, j: &[f64]) -> QFactorRow {
    QFactorRow {
        state: x,
        values: (0..instance.num_actions(x)).map(|u| q_value(instance, x, u, j)).collect(),
    }
}

fn check_policy_and_j(
    instance: &MdpInstance,
    policy: &StationaryPolicy,
    j: &CostVector,
) -> Result<(), ModelError> {
    policy.check(instance)?;
    instance.check_cost_vector(j)
}

pub fn q_factor(instance: &MdpInstance, x: usize, u: usize, j: &CostVector) -> Result<f64, ModelError> {
    instance.check_action(x, u)?;
    instance.check_cost_vector(j)?;
    Ok(q_value(instance, x, u, j.as_slice()))
}

pub fn q_factor_row(instance: &MdpInstance, x: usize, j: &CostVector) -> Result<QFactorRow, ModelError> {
    instance.check_state(x)?;
    instance.check_cost_vector(j)?;
    Ok(q_row_unchecked(instance, x, j.as_slice()))
}

pub fn apply_tmu(
    instance: &MdpInstance,
    policy: &StationaryPolicy,
    j: &CostVector,
) -> Result<CostVector, ModelError> {
    check_policy_and_j(instance, policy, j)?;
    Ok(tmu_unchecked(instance, policy, j.as_slice()))
}

fn tmu_unchecked(instance: &MdpInstance, policy: &StationaryPolicy, j: &[f64]) -> CostVector {
    (0..instance.n())
        .map(|x| q_value(instance, x, policy.action(x), j))
        .collect::<Vec<_>>()
        .into()
}

pub fn apply_t(instance: &MdpInstance, j: &CostVector) -> Result<CostVector, ModelError> {
    instance.check_cost_vector(j)?;
    Ok(t_unchecked(instance, j.as_slice()))
}

fn t_unchecked(instance: &MdpInstance, j: &[f64]) -> CostVector {
    (0..instance.n()).map(|x| min_q(instance, x, j)).collect::<Vec<_>>().into()
}

/// Solves `(I - alpha P_mu) J = g_mu` directly.
pub fn evaluate_policy_exact(
    instance: &MdpInstance,
    policy: &StationaryPolicy,
) -> Result<CostVector, ModelError> {
    policy.check(instance)?;
    Ok(evaluate_unchecked(instance, policy))
}

pub(crate) fn evaluate_unchecked(instance: &MdpInstance, policy: &StationaryPolicy) -> CostVector {
    let n = instance.n();
    let alpha = instance.discount();
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    for x in 0..n {
        a[x * n + x] = 1.0;
        let action = instance.action(x, policy.action(x));
        for o in &action.outcomes {
            a[x * n + o.to] -= alpha * o.p;
        }
        b[x] = action.expected_cost();
    }
    // I - alpha P is strictly diagonally dominant for alpha < 1.
    solve_dense(a, b).expect("I - alpha P_mu is nonsingular").into()
}

/// Result of an iterative fixed-point computation.
#[derive(Clone, Debug, PartialEq)]
pub struct Iterated {
    pub values: CostVector,
    pub iterations: usize,
    pub converged: bool,
    /// Sup-norm change of every iteration.
    pub deltas: Vec<f64>,
}

fn iterate(
    n: usize,
    j0: CostVector,
    tol: f64,
    max_iters: usize,
    mut step: impl FnMut(&[f64]) -> CostVector,
) -> Result<Iterated, ModelError> {
    if !(tol > 0.0) {
        return Err(ModelError::InvalidArgument(format!("tolerance must be positive, got {}", tol)));
    }
    if j0.len() != n {
        return Err(ModelError::DimensionMismatch { expected: n, found: j0.len() });
    }
    let mut j = j0;
    let mut deltas = Vec::new();
    for k in 1..=max_iters {
        let next = step(j.as_slice());
        let delta = next.sup_distance(&j);
        deltas.push(delta);
        j = next;
        if delta <= tol {
            return Ok(Iterated { values: j, iterations: k, converged: true, deltas });
        }
    }
    Ok(Iterated { values: j, iterations: max_iters, converged: false, deltas })
}

/// Iterates `J <- T_mu J` from zero until the sup-norm change is at most `tol`.
pub fn evaluate_policy_iterative(
    instance: &MdpInstance,
    policy: &StationaryPolicy,
    tol: f64,
    max_iters: usize,
) -> Result<Iterated, ModelError> {
    policy.check(instance)?;
    iterate(instance.n(), CostVector::zeros(instance.n()), tol, max_iters, |j| {
        tmu_unchecked(instance, policy, j)
    })
}

/// Iterates `J <- T J` from `j0` until the sup-norm change is at most `tol`.
pub fn value_iteration(
    instance: &MdpInstance,
    j0: &CostVector,
    tol: f64,
    max_iters: usize,
) -> Result<Iterated, ModelError> {
    instance.check_cost_vector(j0)?;
    iterate(instance.n(), j0.clone(), tol, max_iters, |j| t_unchecked(instance, j))
}

/// Greedy policy for `J`; ties go to the smallest declaration index.
pub fn greedy_policy(instance: &MdpInstance, j: &CostVector) -> Result<StationaryPolicy, ModelError> {
    instance.check_cost_vector(j)?;
    Ok(greedy_unchecked(instance, j.as_slice()))
}

pub(crate) fn greedy_unchecked(instance: &MdpInstance, j: &[f64]) -> StationaryPolicy {
    StationaryPolicy::new(
        (0..instance.n())
            .map(|x| argmin_first(&q_row_unchecked(instance, x, j).values))
            .collect(),
    )
}

/// Per-state `|(T_mu J)(x) - (TJ)(x)|`.
pub fn bellman_gaps(
    instance: &MdpInstance,
    policy: &StationaryPolicy,
    j: &CostVector,
) -> Result<Vec<f64>, ModelError> {
    check_policy_and_j(instance, policy, j)?;
    let tmu = tmu_unchecked(instance, policy, j.as_slice());
    let t = t_unchecked(instance, j.as_slice());
    Ok(tmu.iter().zip(t.iter()).map(|(a, b)| (a - b).abs()).collect())
}

/// `||T_mu J_mu - T J_mu||_inf <= tol`.
pub fn check_global_optimality(
    instance: &MdpInstance,
    policy: &StationaryPolicy,
    tol: f64,
) -> Result<bool, ModelError> {
    let j = evaluate_policy_exact(instance, policy)?;
    Ok(bellman_gaps(instance, policy, &j)?.iter().all(|g| *g <= tol))
}

/// `|(T_mu J_mu)(x) - (T J_mu)(x)| <= tol` for every `x` in `states`.
pub fn check_local_optimality(
    instance: &MdpInstance,
    policy: &StationaryPolicy,
    states: &[usize],
    tol: f64,
) -> Result<bool, ModelError> {
    for &x in states {
        instance.check_state(x)?;
    }
    let j = evaluate_policy_exact(instance, policy)?;
    let gaps = bellman_gaps(instance, policy, &j)?;
    Ok(states.iter().all(|&x| gaps[x] <= tol))
}

/// True iff no state in `states` can move outside `states` under `policy`.
pub fn check_invariant_set(
    instance: &MdpInstance,
    policy: &StationaryPolicy,
    states: &[usize],
) -> Result<bool, ModelError> {
    policy.check(instance)?;
    let mut inside = vec![false; instance.n()];
    for &x in states {
        instance.check_state(x)?;
        inside[x] = true;
    }
    Ok(states.iter().all(|&x| {
        instance
            .action(x, policy.action(x))
            .outcomes
            .iter()
            .all(|o| o.p == 0.0 || inside[o.to])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{build_counterexample, counterexample_mubar, counterexample_mustar, single_self_loop};

    const MUBAR_COST: [f64; 3] = [1.0 / 0.19, 0.9 / 0.19, 100.0];

    /// Independent oracle: 500 applications of `T_mu` from zero.
    fn iterate_tmu(instance: &MdpInstance, policy: &StationaryPolicy, iters: usize) -> CostVector {
        let mut j = CostVector::zeros(instance.n());
        for _ in 0..iters {
            j = apply_tmu(instance, policy, &j).unwrap();
        }
        j
    }

    fn close(a: &CostVector, b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn tmu_at_zero_is_stage_cost() {
        let inst = build_counterexample();
        let mubar = counterexample_mubar(&inst).unwrap();
        let j = apply_tmu(&inst, &mubar, &CostVector::zeros(3)).unwrap();
        assert_eq!(j.as_slice(), &[1.0, 0.0, 10.0]);
    }

    #[test]
    fn mubar_cost_matches_oracle() {
        let inst = build_counterexample();
        let mubar = counterexample_mubar(&inst).unwrap();
        let oracle = iterate_tmu(&inst, &mubar, 500);
        assert!(close(&oracle, &MUBAR_COST, 1e-6));
        let exact = evaluate_policy_exact(&inst, &mubar).unwrap();
        assert!(close(&exact, &MUBAR_COST, 1e-12));
        assert!(exact.sup_distance(&oracle) <= 1e-6);
        let fixed = apply_tmu(&inst, &mubar, &exact).unwrap();
        assert!(fixed.sup_distance(&exact) <= 1e-8 * (1.0 + exact.sup_norm()));
    }

    #[test]
    fn mustar_cost_is_zero() {
        let inst = build_counterexample();
        let mustar = counterexample_mustar(&inst).unwrap();
        assert_eq!(evaluate_policy_exact(&inst, &mustar).unwrap().as_slice(), &[0.0, 0.0, 0.0]);
        let it = evaluate_policy_iterative(&inst, &mustar, 1e-10, 100).unwrap();
        assert_eq!(it.iterations, 1);
        assert_eq!(it.values.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn self_loop_geometric_series() {
        let inst = single_self_loop(2.5, 0.8).unwrap();
        let only = StationaryPolicy::new(vec![0]);
        let j = evaluate_policy_exact(&inst, &only).unwrap();
        assert!((j[0] - 2.5 / 0.2).abs() < 1e-12);
        let tj = apply_t(&inst, &CostVector::new(vec![3.0])).unwrap();
        assert_eq!(tj[0], 2.5 + 0.8 * 3.0);
        assert!(check_global_optimality(&inst, &only, OPTIMALITY_TOL).unwrap());

        let unit = single_self_loop(1.0, 0.9).unwrap();
        let vi = value_iteration(&unit, &CostVector::zeros(1), 1e-9, 10_000).unwrap();
        assert!(vi.converged);
        assert!((vi.values[0] - 10.0).abs() <= 1e-8);
    }

    #[test]
    fn t_on_counterexample() {
        let inst = build_counterexample();
        assert_eq!(apply_t(&inst, &CostVector::zeros(3)).unwrap().as_slice(), &[0.0, 0.0, 0.0]);
        let jbar = CostVector::new(MUBAR_COST.to_vec());
        let tj = apply_t(&inst, &jbar).unwrap();
        assert!((tj[2] - 0.9 * MUBAR_COST[1]).abs() < 1e-12);
        assert!(tj[2] < jbar[2]);
    }

    #[test]
    fn q_factor_examples() {
        let inst = build_counterexample();
        let mubar = counterexample_mubar(&inst).unwrap();
        let jbar = evaluate_policy_exact(&inst, &mubar).unwrap();
        let to2 = inst.action_index(2, "to2").unwrap();
        let stay = inst.action_index(2, "stay").unwrap();
        assert!((q_factor(&inst, 2, to2, &jbar).unwrap() - 0.9 * MUBAR_COST[1]).abs() < 1e-12);
        let zero = CostVector::zeros(3);
        assert_eq!(q_factor(&inst, 0, inst.action_index(0, "to3").unwrap(), &zero).unwrap(), 0.0);
        assert_eq!(q_factor(&inst, 2, stay, &zero).unwrap(), 10.0);
        assert!(matches!(q_factor(&inst, 2, 5, &zero), Err(ModelError::ActionOutOfRange { .. })));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let inst = build_counterexample();
        let mubar = counterexample_mubar(&inst).unwrap();
        let short = CostVector::zeros(2);
        assert!(matches!(apply_t(&inst, &short), Err(ModelError::DimensionMismatch { .. })));
        assert!(matches!(apply_tmu(&inst, &mubar, &short), Err(ModelError::DimensionMismatch { .. })));
    }

    #[test]
    fn greedy_tie_and_improvement() {
        let inst = build_counterexample();
        let g0 = greedy_policy(&inst, &CostVector::zeros(3)).unwrap();
        assert_eq!(g0.labels(&inst), vec!["to3", "to1", "to2"]);
        let jbar = CostVector::new(MUBAR_COST.to_vec());
        let g = greedy_policy(&inst, &jbar).unwrap();
        assert_eq!(g.labels(&inst)[2], "to2");
    }

    #[test]
    fn optimality_checks_on_counterexample() {
        let inst = build_counterexample();
        let mubar = counterexample_mubar(&inst).unwrap();
        let mustar = counterexample_mustar(&inst).unwrap();
        assert!(check_global_optimality(&inst, &mustar, OPTIMALITY_TOL).unwrap());
        assert!(!check_global_optimality(&inst, &mubar, OPTIMALITY_TOL).unwrap());
        assert!(check_local_optimality(&inst, &mubar, &[0, 1], OPTIMALITY_TOL).unwrap());
        assert!(!check_local_optimality(&inst, &mubar, &[0, 1, 2], OPTIMALITY_TOL).unwrap());
        assert!(check_local_optimality(&inst, &mubar, &[], OPTIMALITY_TOL).unwrap());
        assert!(check_invariant_set(&inst, &mubar, &[0, 1]).unwrap());
        assert!(!check_invariant_set(&inst, &mustar, &[0, 1]).unwrap());
        assert!(check_invariant_set(&inst, &mustar, &[0, 1, 2]).unwrap());
    }

    #[test]
    fn iterative_agrees_with_exact() {
        let inst = build_counterexample();
        let mubar = counterexample_mubar(&inst).unwrap();
        let it = evaluate_policy_iterative(&inst, &mubar, 1e-8, 100_000).unwrap();
        assert!(it.converged);
        let exact = evaluate_policy_exact(&inst, &mubar).unwrap();
        assert!(it.values.sup_distance(&exact) <= 1e-6);
        for w in it.deltas.windows(2) {
            assert!(w[1] <= 0.9 * w[0] + 1e-12);
        }
    }

    #[test]
    fn value_iteration_counterexample() {
        let inst = build_counterexample();
        let vi = value_iteration(&inst, &CostVector::zeros(3), 1e-9, 1000).unwrap();
        assert!(vi.converged);
        assert_eq!(vi.values.as_slice(), &[0.0, 0.0, 0.0]);
        assert!(value_iteration(&inst, &CostVector::zeros(3), 0.0, 10).is_err());
    }

    #[test]
    fn non_convergence_flagged() {
        let inst = single_self_loop(1.0, 0.9).unwrap();
        let vi = value_iteration(&inst, &CostVector::zeros(1), 1e-12, 5).unwrap();
        assert!(!vi.converged);
        assert_eq!(vi.iterations, 5);
    }
}
