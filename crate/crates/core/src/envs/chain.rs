use super::{ActionId, DiscreteEnv, EnvSpec, Rng, StateId};
use crate::bt::{AtomTable, Valuation};

/// Forced chain `0 → 1 → … → n−1` with the last state absorbing.
///
/// Atom `ok` holds everywhere except the last state. Every action has the
/// same effect. Small enough to solve by hand, which makes it the reference
/// instance for the fixed-point solvers.
#[derive(Clone, Debug)]
pub struct ForcedChain {
    len: usize,
    spec: EnvSpec,
}

impl ForcedChain {
    pub fn new(len: usize, actions: usize) -> Self {
        assert!(len >= 1 && actions >= 1);
        ForcedChain {
            len,
            spec: EnvSpec {
                name: "chain".into(),
                action_names: (0..actions).map(|a| format!("a{a}")).collect(),
                state_dimension: 1,
                atoms: AtomTable::new(["ok"]).expect("static atom table"),
                rewards: vec!["step".into()],
                horizon: 4 * len,
            },
        }
    }
}

impl DiscreteEnv for ForcedChain {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn num_states(&self) -> usize {
        self.len
    }

    fn successor(&self, s: StateId, _a: ActionId, _rng: &mut Rng) -> StateId {
        (s + 1).min(self.len as StateId - 1)
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn valuation(&self, s: StateId) -> Valuation {
        ((s as usize) + 1 < self.len) as Valuation
    }

    fn state_vector(&self, s: StateId) -> Vec<f64> {
        vec![s as f64]
    }

    /// `step`: −1 per transition.
    fn reward(&self, _reward: usize, _s: StateId, _a: ActionId, _next: StateId) -> f64 {
        -1.0
    }

    fn is_absorbing(&self, s: StateId) -> bool {
        s as usize + 1 == self.len
    }

    fn base_states(&self) -> &[StateId] {
        &[0]
    }
}
