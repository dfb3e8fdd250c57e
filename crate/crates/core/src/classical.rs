//! Classical off-line policy iteration: exact evaluation at every state
//! followed by improvement at every state.

use crate::bellman::{evaluate_unchecked, q_row_unchecked};
use crate::error::ModelError;
use crate::model::{CostVector, MdpInstance, StationaryPolicy};

/// An incumbent action is replaced only if some action beats it by more than
/// this margin.
pub const IMPROVEMENT_MARGIN: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct PiIterate {
    pub policy: StationaryPolicy,
    pub cost: CostVector,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PiTermination {
    PolicyRepeated,
    MaxIters,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PiTrace {
    /// `(mu^k, J_{mu^k})` for every evaluated policy.
    pub iterates: Vec<PiIterate>,
    pub termination: PiTermination,
}

impl PiTrace {
    pub fn last(&self) -> &PiIterate {
        self.iterates.last().expect("trace holds at least one iterate")
    }

    pub fn final_policy(&self) -> &StationaryPolicy {
        &self.last().policy
    }

    pub fn final_cost(&self) -> &CostVector {
        &self.last().cost
    }

    pub fn converged(&self) -> bool {
        self.termination == PiTermination::PolicyRepeated
    }
}

/// One all-states improvement against `j`. Each state keeps its current
/// action unless the minimum Q-factor undercuts it by more than
/// [`IMPROVEMENT_MARGIN`]; among improving actions the first minimizer wins.
pub fn improve_policy(
    instance: &MdpInstance,
    current: &StationaryPolicy,
    j: &CostVector,
) -> Result<StationaryPolicy, ModelError> {
    current.check(instance)?;
    instance.check_cost_vector(j)?;
    Ok(improve_unchecked(instance, current, j.as_slice()))
}

fn improve_unchecked(instance: &MdpInstance, current: &StationaryPolicy, j: &[f64]) -> StationaryPolicy {
    let mut next = current.clone();
    for x in 0..instance.n() {
        let row = q_row_unchecked(instance, x, j);
        let best = row.argmin();
        if row.values[best] < row.values[current.action(x)] - IMPROVEMENT_MARGIN {
            next.set(x, best);
        }
    }
    next
}

/// Alternates exact evaluation and improvement until the policy repeats.
pub fn run_classical_pi(
    instance: &MdpInstance,
    initial: &StationaryPolicy,
    max_iters: usize,
) -> Result<PiTrace, ModelError> {
    initial.check(instance)?;
    if max_iters == 0 {
        return Err(ModelError::InvalidArgument("max_iters must be positive".into()));
    }
    let mut policy = initial.clone();
    let mut iterates = Vec::new();
    for _ in 0..max_iters {
        let cost = evaluate_unchecked(instance, &policy);
        let next = improve_unchecked(instance, &policy, cost.as_slice());
        let repeated = next == policy;
        iterates.push(PiIterate { policy, cost });
        if repeated {
            return Ok(PiTrace { iterates, termination: PiTermination::PolicyRepeated });
        }
        policy = next;
    }
    Ok(PiTrace { iterates, termination: PiTermination::MaxIters })
}
