//! Q-learning controllers with invalid-action masking, and the reward
//! transformations used by the baselines.

mod learner;
mod train;

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bt::{Predicate, Valuation};
use crate::envs::{ActionId, DiscreteEnv, EnvError, Rng, StateId};
use crate::exec::ExecMode;
use crate::feasibility::ActionMask;
use crate::nn::Mlp;

pub use learner::{Learner, ReplayBuffer, ReplayItem};
pub use train::{
    evaluate_subtask, train, write_eval_csv, write_learning_curve_csv, CurveRow, EvalPoint, MaskStats, Subtask,
    TrainOutput,
};

#[derive(Debug, Error)]
pub enum RlError {
    #[error("non-finite loss {loss} at update {update}")]
    NonFinite { loss: f64, update: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("controller does not match the environment: {0}")]
    Mismatch(String),
    #[error("malformed controller file: {0}")]
    Format(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Linear ε decay from `start` to `end` over `decay_steps` environment steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: usize,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule { start: 1.0, end: 0.05, decay_steps: 20_000 }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, step: usize) -> f64 {
        if step >= self.decay_steps {
            return self.end;
        }
        self.start + (self.end - self.start) * step as f64 / self.decay_steps as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Tabular,
    Fitted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learner: LearnerKind,
    pub gamma: f64,
    pub learning_rate: f64,
    /// Initial tabular action value.
    pub initial_value: f64,
    pub epsilon: EpsilonSchedule,
    pub replay_capacity: usize,
    /// Replayed transitions per environment step, on top of the fresh one.
    pub batch_size: usize,
    /// Fitted learner only: updates between target refreshes.
    pub target_sync: usize,
    /// Fitted learner only.
    pub hidden: Vec<usize>,
    pub total_steps: usize,
    pub seed: u64,
    /// Penalty per constraint-violating transition (penalty baseline only).
    pub penalty_lambda: f64,
    /// Environment steps between greedy evaluations (0 disables them).
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub mode: ExecMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learner: LearnerKind::Tabular,
            gamma: 0.99,
            learning_rate: 0.5,
            initial_value: 0.0,
            epsilon: EpsilonSchedule::default(),
            replay_capacity: 100_000,
            batch_size: 8,
            target_sync: 500,
            hidden: vec![64, 64],
            total_steps: 100_000,
            seed: 0,
            penalty_lambda: 10.0,
            eval_every: 2_000,
            eval_episodes: 64,
            mode: ExecMode::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::InvalidConfig(m.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon.start) || !(0.0..=1.0).contains(&self.epsilon.end) {
            return bad("epsilon must lie in [0, 1]");
        }
        if self.replay_capacity == 0 || self.target_sync == 0 {
            return bad("replay capacity and target sync must be positive");
        }
        if self.penalty_lambda.is_nan() || self.penalty_lambda <= 0.0 {
            return bad("penalty lambda must be positive");
        }
        Ok(())
    }
}

/// Action values for a learned controller.
#[derive(Clone, Debug, PartialEq)]
pub enum QStore {
    Tabular { num_states: usize, num_actions: usize, q: Vec<f64> },
    Fitted { net: Mlp, mean: Vec<f64>, scale: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Controller {
    pub name: String,
    pub store: QStore,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    name: String,
    kind: LearnerKind,
    num_states: Option<usize>,
    num_actions: usize,
    layers: Option<Vec<usize>>,
    mean: Option<Vec<f64>>,
    scale: Option<Vec<f64>>,
    payload_len: usize,
}

const FORMAT: &str = "pcbt-controller-v1";

impl Controller {
    pub fn tabular(name: &str, num_states: usize, num_actions: usize) -> Self {
        Self::tabular_with(name, num_states, num_actions, 0.0)
    }

    pub fn tabular_with(name: &str, num_states: usize, num_actions: usize, initial: f64) -> Self {
        Controller {
            name: name.to_string(),
            store: QStore::Tabular { num_states, num_actions, q: vec![initial; num_states * num_actions] },
        }
    }

    /// Network controller over the environment's state vector, normalized
    /// by statistics of (a stride of) the state space.
    pub fn fitted<E: DiscreteEnv + ?Sized>(name: &str, env: &E, hidden: &[usize], rng: &mut Rng) -> Self {
        let n = env.num_states();
        let stride = (n / 50_000).max(1);
        let xs: Vec<Vec<f64>> = (0..n).step_by(stride).map(|s| env.state_vector(s as StateId)).collect();
        let d = env.spec().state_dimension;
        let mut mean = vec![0.0; d];
        let mut scale = vec![0.0; d];
        for x in &xs {
            for k in 0..d {
                mean[k] += x[k] / xs.len() as f64;
            }
        }
        for x in &xs {
            for k in 0..d {
                scale[k] += (x[k] - mean[k]).powi(2) / xs.len() as f64;
            }
        }
        let scale = scale.into_iter().map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        let mut sizes = vec![d];
        sizes.extend(hidden);
        sizes.push(env.spec().action_count());
        Controller { name: name.to_string(), store: QStore::Fitted { net: Mlp::new(&sizes, rng), mean, scale } }
    }

    pub fn num_actions(&self) -> usize {
        match &self.store {
            QStore::Tabular { num_actions, .. } => *num_actions,
            QStore::Fitted { net, .. } => net.output_size(),
        }
    }

    pub(crate) fn features<E: DiscreteEnv + ?Sized>(&self, env: &E, s: StateId) -> Vec<f64> {
        match &self.store {
            QStore::Tabular { .. } => vec![s as f64],
            QStore::Fitted { mean, scale, .. } => {
                env.state_vector(s).iter().zip(mean).zip(scale).map(|((x, m), k)| (x - m) / k).collect()
            }
        }
    }

    pub fn values<E: DiscreteEnv + ?Sized>(&self, env: &E, s: StateId) -> Vec<f64> {
        match &self.store {
            QStore::Tabular { num_actions, q, .. } => {
                let k = s as usize * num_actions;
                q[k..k + num_actions].to_vec()
            }
            QStore::Fitted { net, .. } => net.forward(&self.features(env, s)),
        }
    }

    /// ε-greedy action for `s`, restricted to `mask` when given.
    pub fn act<E: DiscreteEnv + ?Sized>(
        &self,
        env: &E,
        s: StateId,
        mask: Option<&ActionMask>,
        epsilon: f64,
        rng: &mut Rng,
    ) -> ActionId {
        select_action(&self.values(env, s), mask, epsilon, rng)
    }

    pub fn check_env<E: DiscreteEnv + ?Sized>(&self, env: &E) -> Result<(), RlError> {
        let na = env.spec().action_count();
        if self.num_actions() != na {
            return Err(RlError::Mismatch(format!("{} actions, environment has {na}", self.num_actions())));
        }
        match &self.store {
            QStore::Tabular { num_states, .. } if *num_states != env.num_states() => Err(RlError::Mismatch(
                format!("{num_states} states, environment has {}", env.num_states()),
            )),
            QStore::Fitted { net, .. } if net.input_size() != env.spec().state_dimension => {
                Err(RlError::Mismatch("input size differs from the state dimension".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), RlError> {
        let (header, payload) = match &self.store {
            QStore::Tabular { num_states, num_actions, q } => (
                Header {
                    format: FORMAT.into(),
                    name: self.name.clone(),
                    kind: LearnerKind::Tabular,
                    num_states: Some(*num_states),
                    num_actions: *num_actions,
                    layers: None,
                    mean: None,
                    scale: None,
                    payload_len: q.len(),
                },
                q.as_slice(),
            ),
            QStore::Fitted { net, mean, scale } => (
                Header {
                    format: FORMAT.into(),
                    name: self.name.clone(),
                    kind: LearnerKind::Fitted,
                    num_states: None,
                    num_actions: net.output_size(),
                    layers: Some(net.sizes().to_vec()),
                    mean: Some(mean.clone()),
                    scale: Some(scale.clone()),
                    payload_len: net.params().len(),
                },
                net.params(),
            ),
        };
        let line = serde_json::to_string(&header).map_err(|e| RlError::Format(e.to_string()))?;
        writeln!(out, "{line}")?;
        crate::io::write_f64s(&mut out, payload)?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self, RlError> {
        let (line, payload) = crate::io::read_header_and_payload(input)?;
        let h: Header = serde_json::from_str(&line).map_err(|e| RlError::Format(e.to_string()))?;
        if h.format != FORMAT {
            return Err(RlError::Format(format!("unexpected format `{}`", h.format)));
        }
        if payload.len() != h.payload_len {
            return Err(RlError::Format("payload length differs from header".into()));
        }
        let missing = |what: &str| RlError::Format(format!("missing `{what}`"));
        let store = match h.kind {
            LearnerKind::Tabular => {
                let num_states = h.num_states.ok_or_else(|| missing("num_states"))?;
                if num_states * h.num_actions != payload.len() {
                    return Err(RlError::Format("table size mismatch".into()));
                }
                QStore::Tabular { num_states, num_actions: h.num_actions, q: payload }
            }
            LearnerKind::Fitted => {
                let layers = h.layers.ok_or_else(|| missing("layers"))?;
                let net = Mlp::from_parts(layers, payload)
                    .ok_or_else(|| RlError::Format("parameter count mismatch".into()))?;
                QStore::Fitted {
                    net,
                    mean: h.mean.ok_or_else(|| missing("mean"))?,
                    scale: h.scale.ok_or_else(|| missing("scale"))?,
                }
            }
        };
        Ok(Controller { name: h.name, store })
    }

    pub fn save(&self, path: &Path) -> Result<(), RlError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RlError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// With probability `epsilon` a uniformly random allowed action, otherwise
/// the best allowed action (lowest index on ties). An empty mask yields its
/// fallback action.
pub fn select_action(values: &[f64], mask: Option<&ActionMask>, epsilon: f64, rng: &mut Rng) -> ActionId {
    let allowed: Vec<ActionId> = match mask {
        Some(m) if m.is_empty() => return m.fallback,
        Some(m) => (0..values.len()).filter(|&a| m.allows(a)).collect(),
        None => (0..values.len()).collect(),
    };
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return allowed[rng.gen_range(0..allowed.len())];
    }
    let mut best = allowed[0];
    for &a in &allowed[1..] {
        if values[a] > values[best] {
            best = a;
        }
    }
    best
}

/// Highest value among allowed actions (all actions without a mask; the
/// fallback action's value for an empty mask).
pub fn masked_max(values: &[f64], mask: Option<&ActionMask>) -> f64 {
    match mask {
        Some(m) if m.is_empty() => values[m.fallback],
        Some(m) => values
            .iter()
            .enumerate()
            .filter(|(a, _)| m.allows(*a))
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max),
        None => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// `reward − λ` on violating transitions.
pub fn wrap_penalty(reward: f64, violated: bool, lambda: f64) -> f64 {
    if violated {
        reward - lambda
    } else {
        reward
    }
}

/// `−1` for every subtask condition not satisfied in `v`.
pub fn flat_reward(v: Valuation, conditions: &[Predicate]) -> f64 {
    -(conditions.iter().filter(|c| !c.eval(v)).count() as f64)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn greedy_selection() {
        let mut rng = Rng::seed_from_u64(0);
        assert_eq!(select_action(&[1.0, 5.0, 3.0], None, 0.0, &mut rng), 1);
        let m = ActionMask { allowed: vec![true, false, true], fallback: 1 };
        assert_eq!(select_action(&[1.0, 5.0, 3.0], Some(&m), 0.0, &mut rng), 2);
        assert_eq!(select_action(&[2.0, 2.0], None, 0.0, &mut rng), 0);
        let empty = ActionMask { allowed: vec![false; 3], fallback: 2 };
        assert_eq!(select_action(&[9.0, 0.0, 0.0], Some(&empty), 1.0, &mut rng), 2);
    }

    #[test]
    fn exploration_is_uniform_over_allowed() {
        let mut rng = Rng::seed_from_u64(7);
        let m = ActionMask { allowed: vec![true, false, true], fallback: 0 };
        let n = 100_000;
        let zeros = (0..n).filter(|_| select_action(&[0.0, 1.0, 2.0], Some(&m), 1.0, &mut rng) == 0).count();
        let freq = zeros as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.02, "{freq}");
    }

    #[test]
    fn masked_backup_value() {
        let m = ActionMask { allowed: vec![true, false, true], fallback: 1 };
        assert_eq!(masked_max(&[1.0, 5.0, 3.0], Some(&m)), 3.0);
        assert_eq!(masked_max(&[1.0, 5.0, 3.0], None), 5.0);
    }

    #[test]
    fn penalty_and_flat_rewards() {
        assert_eq!(wrap_penalty(0.0, true, 10.0), -10.0);
        assert_eq!(wrap_penalty(-0.3, false, 10.0), -0.3);
        let conds = [Predicate::atom(0), Predicate::atom(1)];
        assert_eq!(flat_reward(0b11, &conds), 0.0);
        assert_eq!(flat_reward(0b01, &conds), -1.0);
    }

    #[test]
    fn epsilon_schedule() {
        let e = EpsilonSchedule { start: 1.0, end: 0.1, decay_steps: 10 };
        assert_eq!(e.at(0), 1.0);
        assert!((e.at(5) - 0.55).abs() < 1e-12);
        assert_eq!(e.at(100), 0.1);
    }

    #[test]
    fn controller_round_trip() {
        let mut c = Controller::tabular("Goal", 2, 3);
        if let QStore::Tabular { q, .. } = &mut c.store {
            q[4] = -0.125;
        }
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(Controller::read_from(buf.as_slice()).unwrap(), c);
    }
}
