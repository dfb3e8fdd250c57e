//! Built-in instances and the seeded random generator.
//!
//! Randomness everywhere in this crate comes from `ChaCha8Rng::seed_from_u64`
//! (rand_chacha 0.3), so a seed reproduces the same instance or trajectory on
//! every platform.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::ModelError;
use crate::format::{ActionDoc, CostDoc, InstanceDoc, StateDoc, TransitionDoc};
use crate::model::{MdpInstance, StationaryPolicy};

pub type Prng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Prng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn deterministic_action(label: &str, to: usize, g: f64) -> ActionDoc {
    ActionDoc {
        label: label.to_string(),
        transitions: vec![TransitionDoc { to, p: 1.0 }],
        costs: vec![CostDoc { to, g }],
    }
}

/// The three-state deterministic instance on which on-line PI stalls at a
/// locally but not globally optimal policy.
///
/// State 1: `to2` (cost 1), `to3` (cost 0). State 2: `to1`, `to3` (cost 0).
/// State 3: `to2` (cost 0), `stay` (cost 10). Discount 0.9.
pub fn build_counterexample() -> MdpInstance {
    let doc = InstanceDoc {
        n: 3,
        discount: 0.9,
        states: vec![
            StateDoc {
                id: 1,
                actions: vec![deterministic_action("to2", 2, 1.0), deterministic_action("to3", 3, 0.0)],
            },
            StateDoc {
                id: 2,
                actions: vec![deterministic_action("to1", 1, 0.0), deterministic_action("to3", 3, 0.0)],
            },
            StateDoc {
                id: 3,
                actions: vec![deterministic_action("to2", 2, 0.0), deterministic_action("stay", 3, 10.0)],
            },
        ],
    };
    MdpInstance::from_doc(&doc).expect("counterexample is valid")
}

/// `{1->to2, 2->to1, 3->stay}`: strictly suboptimal, locally optimal over {1,2}.
pub fn counterexample_mubar(instance: &MdpInstance) -> Result<StationaryPolicy, ModelError> {
    StationaryPolicy::from_labels(instance, &["to2", "to1", "stay"])
}

/// `{1->to3, 2->to3, 3->to2}`: the optimal policy, with zero cost everywhere.
pub fn counterexample_mustar(instance: &MdpInstance) -> Result<StationaryPolicy, ModelError> {
    StationaryPolicy::from_labels(instance, &["to3", "to3", "to2"])
}

/// A single-state instance whose only action is a self-loop with cost `cost`.
pub fn single_self_loop(cost: f64, discount: f64) -> Result<MdpInstance, ModelError> {
    let doc = InstanceDoc {
        n: 1,
        discount,
        states: vec![StateDoc { id: 1, actions: vec![deterministic_action("stay", 1, cost)] }],
    };
    MdpInstance::from_doc(&doc).map_err(|r| ModelError::InvalidArgument(r.to_string()))
}

/// Parameters of [`generate_random`].
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    pub n: usize,
    pub max_actions: usize,
    pub branching: usize,
    pub cost_range: (f64, f64),
    pub discount: f64,
    pub seed: u64,
}

/// Generates a random instance as a pure function of `params`.
///
/// Each state draws its action count uniformly from `1..=max_actions`; each
/// action gets `branching` distinct successors (listed in increasing order)
/// with uniform weights normalized to sum to one, and per-successor costs
/// uniform in `cost_range`. Action labels are `a1, a2, ...`.
pub fn generate_random(params: &GeneratorParams) -> Result<MdpInstance, ModelError> {
    let GeneratorParams { n, max_actions, branching, cost_range: (lo, hi), discount, seed } =
        *params;
    if n == 0 {
        return Err(ModelError::InvalidArgument("n must be positive".into()));
    }
    if max_actions == 0 {
        return Err(ModelError::InvalidArgument("max_actions must be positive".into()));
    }
    if branching == 0 || branching > n {
        return Err(ModelError::InvalidArgument(format!(
            "branching must lie in 1..={}, got {}",
            n, branching
        )));
    }
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(ModelError::InvalidArgument(format!("invalid cost range [{}, {}]", lo, hi)));
    }
    if !(discount > 0.0 && discount < 1.0) {
        return Err(ModelError::InvalidArgument(format!("discount {} not in (0,1)", discount)));
    }

    let mut rng = seeded_rng(seed);
    let states = (1..=n)
        .map(|id| {
            let count = rng.gen_range(1..=max_actions);
            let actions = (1..=count)
                .map(|a| {
                    let mut succ = sample(&mut rng, n, branching).into_vec();
                    succ.sort_unstable();
                    // Weights in (0, 1] so no successor is dropped.
                    let weights: Vec<f64> = succ.iter().map(|_| 1.0 - rng.gen::<f64>()).collect();
                    let total: f64 = weights.iter().sum();
                    let costs: Vec<f64> = succ.iter().map(|_| rng.gen_range(lo..=hi)).collect();
                    ActionDoc {
                        label: format!("a{}", a),
                        transitions: succ
                            .iter()
                            .zip(&weights)
                            .map(|(&y, w)| TransitionDoc { to: y + 1, p: w / total })
                            .collect(),
                        costs: succ
                            .iter()
                            .zip(&costs)
                            .map(|(&y, &g)| CostDoc { to: y + 1, g })
                            .collect(),
                    }
                })
                .collect();
            StateDoc { id, actions }
        })
        .collect();
    let doc = InstanceDoc { n, discount, states };
    MdpInstance::from_doc(&doc).map_err(|r| ModelError::InvalidArgument(r.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::save_instance;

    fn params(n: usize, seed: u64) -> GeneratorParams {
        GeneratorParams { n, max_actions: 3, branching: 2, cost_range: (0.0, 1.0), discount: 0.9, seed }
    }

    #[test]
    fn counterexample_costs() {
        let inst = build_counterexample();
        let a = inst.action(0, inst.action_index(0, "to2").unwrap());
        assert_eq!(a.outcomes[0].to, 1);
        assert_eq!(a.outcomes[0].g, 1.0);
        let stay = inst.action(2, inst.action_index(2, "stay").unwrap());
        assert_eq!(stay.outcomes[0].to, 2);
        assert_eq!(stay.outcomes[0].g, 10.0);
        assert_eq!(inst.discount(), 0.9);
    }

    #[test]
    fn named_policies_resolve() {
        let inst = build_counterexample();
        assert_eq!(counterexample_mubar(&inst).unwrap().as_slice(), &[0, 0, 1]);
        assert_eq!(counterexample_mustar(&inst).unwrap().as_slice(), &[1, 1, 0]);
    }

    #[test]
    fn degenerate_generator_shape() {
        let p = GeneratorParams { n: 1, max_actions: 1, branching: 1, cost_range: (0.0, 0.0), discount: 0.9, seed: 7 };
        let inst = generate_random(&p).unwrap();
        assert_eq!(inst.n(), 1);
        assert_eq!(inst.num_actions(0), 1);
        let a = inst.action(0, 0);
        assert_eq!(a.outcomes.len(), 1);
        assert_eq!(a.outcomes[0].to, 0);
        assert_eq!(a.outcomes[0].p, 1.0);
        assert_eq!(a.outcomes[0].g, 0.0);
    }

    #[test]
    fn generator_is_deterministic() {
        let a = save_instance(&generate_random(&params(5, 42)).unwrap());
        let b = save_instance(&generate_random(&params(5, 42)).unwrap());
        let c = save_instance(&generate_random(&params(5, 43)).unwrap());
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn generator_rejects_bad_branching() {
        let mut p = params(5, 1);
        p.branching = 9;
        assert!(matches!(generate_random(&p), Err(ModelError::InvalidArgument(_))));
        p.branching = 2;
        p.n = 0;
        assert!(generate_random(&p).is_err());
    }
}
