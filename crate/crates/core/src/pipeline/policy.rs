use std::collections::BTreeMap;

use crate::bt::{BehaviorTree, LeafOrdering, NodeId};
use crate::envs::{ActionId, DiscreteEnv, Rng, StateId};
use crate::feasibility::{mask, select_constraint, FeasibilityEstimator};
use crate::rl::Controller;

/// How a state is turned into an action at execution time.
#[derive(Clone, Copy, Debug)]
pub enum ComposedPolicy<'a> {
    /// Tick the tree and run the active leaf's controller, masked by the
    /// estimator of the leaf's rank when one is present.
    Tree {
        tree: &'a BehaviorTree,
        ordering: &'a LeafOrdering,
        controllers: &'a BTreeMap<String, Controller>,
        /// Indexed by rank − 1; `None` leaves that rank unmasked.
        masks: &'a [Option<FeasibilityEstimator>],
        epsilon: f64,
    },
    /// A single controller acting everywhere.
    Flat { controller: &'a Controller },
}

/// One execution step of a composed policy.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub action: ActionId,
    pub active: Option<NodeId>,
    pub rank: Option<usize>,
    pub masked: bool,
    /// The mask was empty and its fallback action was used.
    pub fallback: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RolloutEnd {
    /// The tree returned Success or Failure, or the flat controller reached
    /// its goal; no controller runs any more.
    Halted,
    Absorbed,
    Horizon,
    /// The step callback asked to stop.
    Stopped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutStep {
    pub state: StateId,
    pub decision: Decision,
    pub next: StateId,
}

impl ComposedPolicy<'_> {
    /// The action for `s`, or `None` when no controller is active.
    pub fn decide<E: DiscreteEnv + ?Sized>(&self, env: &E, s: StateId, rng: &mut Rng) -> Option<Decision> {
        match *self {
            ComposedPolicy::Flat { controller } => Some(Decision {
                action: controller.act(env, s, None, 0.0, rng),
                active: None,
                rank: None,
                masked: false,
                fallback: false,
            }),
            ComposedPolicy::Tree { tree, ordering, controllers, masks, epsilon } => {
                let leaf = tree.active_behavior(env.valuation(s))?;
                let rank = select_constraint(tree, ordering, leaf).ok();
                let name = tree.controller_of(leaf)?;
                let controller = controllers.get(name)?;
                let est = rank.and_then(|r| masks.get(r - 1)).and_then(|m| m.as_ref());
                let m = est.map(|e| mask(e, env, s, epsilon));
                let action = controller.act(env, s, m.as_ref(), 0.0, rng);
                Some(Decision {
                    action,
                    active: Some(leaf),
                    rank,
                    masked: m.is_some(),
                    fallback: m.as_ref().is_some_and(|m| m.is_empty()),
                })
            }
        }
    }
}

/// Runs the policy from `start` for at most `horizon` steps. `halt` marks
/// states where a flat policy stops; `on_step` may end the rollout early by
/// returning `false`.
pub fn rollout<E: DiscreteEnv + ?Sized>(
    env: &E,
    policy: &ComposedPolicy,
    start: StateId,
    horizon: usize,
    halt: &dyn Fn(StateId) -> bool,
    rng: &mut Rng,
    mut on_step: impl FnMut(&RolloutStep) -> bool,
) -> (Vec<RolloutStep>, RolloutEnd) {
    let mut steps = Vec::new();
    let mut s = start;
    for _ in 0..horizon {
        if env.is_absorbing(s) {
            return (steps, RolloutEnd::Absorbed);
        }
        if matches!(policy, ComposedPolicy::Flat { .. }) && halt(s) {
            return (steps, RolloutEnd::Halted);
        }
        let Some(decision) = policy.decide(env, s, rng) else {
            return (steps, RolloutEnd::Halted);
        };
        let next = env.successor(s, decision.action, rng);
        let step = RolloutStep { state: s, decision, next };
        let keep_going = on_step(&step);
        steps.push(step);
        s = next;
        if !keep_going {
            return (steps, RolloutEnd::Stopped);
        }
    }
    let end = if env.is_absorbing(s) {
        RolloutEnd::Absorbed
    } else if match policy {
        ComposedPolicy::Flat { .. } => halt(s),
        ComposedPolicy::Tree { tree, .. } => tree.active_behavior(env.valuation(s)).is_none(),
    } {
        RolloutEnd::Halted
    } else {
        RolloutEnd::Horizon
    };
    (steps, end)
}
