//! Benchmark environments behind a common discrete contract.
//!
//! Learners, estimators and oracles operate on [`DiscreteEnv`]: a finite set
//! of integer state ids with a (usually deterministic) successor function.
//! The continuous 2D world is exposed directly through [`Goal2d`] and, for
//! tabular work, through its snapped grid twin [`Grid2d`].

mod chain;
mod goal2d;
mod warehouse;

use std::io::Write;

use rand::Rng as _;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bt::{AtomTable, NodeId, Valuation};

pub use chain::ForcedChain;
pub use goal2d::{
    action_acceleration, GoalShaping, Goal2d, Goal2dParams, Grid2d, Rect, Sampler2d, State2d,
    StepInfo2d, ACTIONS_2D,
};
pub use warehouse::{
    ForkliftMode, ItemLoc, Warehouse, WarehouseAction, WarehouseParams, WarehouseState,
};

/// Index of an enumerated state.
pub type StateId = u32;
/// Index into an environment's action table.
pub type ActionId = usize;
/// Random source used by every stochastic component.
pub type Rng = ChaCha8Rng;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("action {action} out of range for {count} actions")]
    ActionOutOfRange { action: ActionId, count: usize },
    #[error("state {0} out of range")]
    StateOutOfRange(StateId),
    #[error("unknown reward `{0}`")]
    UnknownReward(String),
    #[error("state out of bounds: {0}")]
    OutOfBounds(String),
    #[error("invalid environment parameters: {0}")]
    InvalidParams(String),
    #[error("empty initial-state set")]
    EmptySampler,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Static description of an environment.
#[derive(Clone, Debug)]
pub struct EnvSpec {
    pub name: String,
    pub action_names: Vec<String>,
    pub state_dimension: usize,
    pub atoms: AtomTable,
    pub rewards: Vec<String>,
    pub horizon: usize,
}

impl EnvSpec {
    pub fn action_count(&self) -> usize {
        self.action_names.len()
    }

    pub fn reward_id(&self, name: &str) -> Result<usize, EnvError> {
        self.rewards
            .iter()
            .position(|r| r == name)
            .ok_or_else(|| EnvError::UnknownReward(name.to_string()))
    }
}

/// Finite environment over state ids `0..num_states()`.
///
/// Absorbing states map to themselves under every action; episodes end
/// there.
pub trait DiscreteEnv: Send + Sync {
    fn spec(&self) -> &EnvSpec;
    fn num_states(&self) -> usize;
    /// Successor of `s` under `a`. Deterministic environments ignore `rng`.
    /// Callers guarantee `a` is in range; see [`step`] for the checked form.
    fn successor(&self, s: StateId, a: ActionId, rng: &mut Rng) -> StateId;
    fn is_deterministic(&self) -> bool;
    fn valuation(&self, s: StateId) -> Valuation;
    /// Real-valued state vector, used for features and trajectory dumps.
    fn state_vector(&self, s: StateId) -> Vec<f64>;
    /// Value of registered reward `reward` (index into `spec().rewards`).
    fn reward(&self, reward: usize, s: StateId, a: ActionId, next: StateId) -> f64;
    fn is_absorbing(&self, s: StateId) -> bool;
    /// Support of the base initial distribution (sampled uniformly).
    fn base_states(&self) -> &[StateId];
}

/// Checked single step.
pub fn step<E: DiscreteEnv + ?Sized>(
    env: &E,
    s: StateId,
    a: ActionId,
    rng: &mut Rng,
) -> Result<StateId, EnvError> {
    let count = env.spec().action_count();
    if a >= count {
        return Err(EnvError::ActionOutOfRange { action: a, count });
    }
    if s as usize >= env.num_states() {
        return Err(EnvError::StateOutOfRange(s));
    }
    Ok(env.successor(s, a, rng))
}

/// Looks up a registered reward and evaluates it.
pub fn subtask_reward<E: DiscreteEnv + ?Sized>(
    env: &E,
    name: &str,
    s: StateId,
    a: ActionId,
    next: StateId,
) -> Result<f64, EnvError> {
    let id = env.spec().reward_id(name)?;
    Ok(env.reward(id, s, a, next))
}

/// Initial-state distribution over state ids.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialSampler {
    Fixed(StateId),
    Uniform(Vec<StateId>),
    /// The environment's base distribution.
    Base,
}

/// Draws an initial state, rejecting ids outside the environment.
pub fn reset<E: DiscreteEnv + ?Sized>(
    env: &E,
    sampler: &InitialSampler,
    rng: &mut Rng,
) -> Result<StateId, EnvError> {
    let pick = |set: &[StateId], rng: &mut Rng| -> Result<StateId, EnvError> {
        if set.is_empty() {
            return Err(EnvError::EmptySampler);
        }
        Ok(set[rng.gen_range(0..set.len())])
    };
    let s = match sampler {
        InitialSampler::Fixed(s) => *s,
        InitialSampler::Uniform(set) => pick(set, rng)?,
        InitialSampler::Base => pick(env.base_states(), rng)?,
    };
    if s as usize >= env.num_states() {
        return Err(EnvError::OutOfBounds(format!(
            "sampled state id {s} but the environment has {} states",
            env.num_states()
        )));
    }
    Ok(s)
}

/// One environment transition, the unit of replay datasets.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionRecord<S = StateId> {
    pub state: S,
    pub action: ActionId,
    pub reward: f64,
    pub next_state: S,
    pub terminated: bool,
    pub truncated: bool,
    pub active_node: Option<NodeId>,
}

/// Writes transitions as CSV, expanding both states into their vectors.
/// Floats use the shortest representation that round-trips exactly.
pub fn write_trajectory_csv<E: DiscreteEnv + ?Sized, W: Write>(
    env: &E,
    records: &[TransitionRecord],
    mut out: W,
) -> Result<(), EnvError> {
    let dim = env.spec().state_dimension;
    let mut header = vec!["state".to_string()];
    header.extend((0..dim).map(|k| format!("x{k}")));
    header.extend(["action".into(), "reward".into(), "next_state".into()]);
    header.extend((0..dim).map(|k| format!("next_x{k}")));
    header.extend(["terminated".into(), "truncated".into(), "active_node".into()]);
    writeln!(out, "{}", header.join(","))?;
    for r in records {
        let mut row = vec![r.state.to_string()];
        row.extend(env.state_vector(r.state).iter().map(|x| x.to_string()));
        row.extend([r.action.to_string(), r.reward.to_string(), r.next_state.to_string()]);
        row.extend(env.state_vector(r.next_state).iter().map(|x| x.to_string()));
        row.extend([
            r.terminated.to_string(),
            r.truncated.to_string(),
            r.active_node.map(|n| n.to_string()).unwrap_or_default(),
        ]);
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
