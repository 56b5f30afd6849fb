//! Feasibility estimation for progress constraints.
//!
//! A constraint set `K` is given as a region predicate and turned into a
//! `±1` label. The discounted reach-avoid value
//! `Q(s, u) = (1 − γ) l(s) + γ min(l(s), max_u' Q(f(s, u), u'))`
//! is then solved exactly over an enumerable environment
//! ([`solve_tabular`]) or fitted from transitions ([`fit`]). Actions with
//! `Q ≥ ε` form the action mask.

mod fitted;
mod tabular;

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bt::{BehaviorTree, LeafOrdering, NodeId, Predicate, Valuation};
use crate::envs::{ActionId, DiscreteEnv, EnvError, StateId};
use crate::nn::Mlp;

pub use fitted::{fit, samples_from_records, FitConfig, FitReport, FitSample};
pub use tabular::{bellman_residual, solve_tabular, SolveConfig, SolveStats};

#[derive(Debug, Error)]
pub enum FeasibilityError {
    #[error("tabular solving needs deterministic dynamics")]
    NonDeterministic,
    #[error("no convergence after {iterations} sweeps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("fitting diverged: {0}")]
    Divergent(String),
    #[error("behavior leaf {0} is not in the ordering")]
    LeafNotInOrdering(NodeId),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("estimator does not match the environment: {0}")]
    Mismatch(String),
    #[error("malformed estimator file: {0}")]
    Format(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `+1` inside the wrapped set, `−1` outside.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelFunction {
    pub predicate: Predicate,
}

impl LabelFunction {
    pub fn label(&self, v: Valuation) -> f64 {
        if self.predicate.eval(v) {
            1.0
        } else {
            -1.0
        }
    }
}

pub fn make_label(constraint: Predicate) -> LabelFunction {
    LabelFunction { predicate: constraint }
}

/// Allowed actions for one state, plus the action to take if none is.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionMask {
    pub allowed: Vec<bool>,
    /// `argmax_u Q(s, u)`, lowest index on ties.
    pub fallback: ActionId,
}

impl ActionMask {
    /// `allowed[u] = q[u] ≥ epsilon`.
    pub fn from_values(q: &[f64], epsilon: f64) -> Self {
        ActionMask { allowed: q.iter().map(|&v| v >= epsilon).collect(), fallback: argmax(q) }
    }

    /// Mask that allows every action.
    pub fn all(n: usize) -> Self {
        ActionMask { allowed: vec![true; n], fallback: 0 }
    }

    pub fn is_empty(&self) -> bool {
        !self.allowed.iter().any(|&a| a)
    }

    pub fn allows(&self, a: ActionId) -> bool {
        self.allowed.get(a).copied().unwrap_or(false)
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// How a fitted estimator turns a state id into network input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    /// The environment's state vector.
    StateVector,
    /// One-hot encoding over `n` states (a table in network form).
    OneHot(usize),
}

impl FeatureMap {
    pub fn features<E: DiscreteEnv + ?Sized>(&self, env: &E, s: StateId) -> Vec<f64> {
        match self {
            FeatureMap::StateVector => env.state_vector(s),
            FeatureMap::OneHot(n) => {
                let mut x = vec![0.0; *n];
                x[s as usize] = 1.0;
                x
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EstimatorStore {
    Tabular {
        num_states: usize,
        num_actions: usize,
        /// Row-major `[state][action]`.
        q: Vec<f64>,
    },
    Fitted {
        net: Mlp,
        features: FeatureMap,
        mean: Vec<f64>,
        scale: Vec<f64>,
    },
}

/// Maps `(state, action)` to a feasibility value in `[−1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityEstimator {
    pub constraint: String,
    pub gamma: f64,
    pub store: EstimatorStore,
    /// Free-form description of the data or solver that produced it.
    pub provenance: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    kind: String,
    constraint: String,
    gamma: f64,
    provenance: String,
    num_states: Option<usize>,
    num_actions: usize,
    layers: Option<Vec<usize>>,
    features: Option<FeatureMap>,
    mean: Option<Vec<f64>>,
    scale: Option<Vec<f64>>,
    payload_len: usize,
}

const FORMAT: &str = "pcbt-feasibility-v1";

impl FeasibilityEstimator {
    pub fn num_actions(&self) -> usize {
        match &self.store {
            EstimatorStore::Tabular { num_actions, .. } => *num_actions,
            EstimatorStore::Fitted { net, .. } => net.output_size(),
        }
    }

    /// `Q(s, ·)` for a state of `env`.
    pub fn q_row<E: DiscreteEnv + ?Sized>(&self, env: &E, s: StateId) -> Vec<f64> {
        match &self.store {
            EstimatorStore::Tabular { num_actions, q, .. } => {
                let k = s as usize * num_actions;
                q[k..k + num_actions].to_vec()
            }
            EstimatorStore::Fitted { features, .. } => self.q_row_features(&features.features(env, s)),
        }
    }

    /// `Q(x, ·)` for a raw feature vector (fitted estimators only; tabular
    /// estimators read the first component as a state id).
    pub fn q_row_features(&self, x: &[f64]) -> Vec<f64> {
        match &self.store {
            EstimatorStore::Tabular { num_actions, q, .. } => {
                let k = x[0] as usize * num_actions;
                q[k..k + num_actions].to_vec()
            }
            EstimatorStore::Fitted { net, mean, scale, .. } => {
                let z: Vec<f64> = x.iter().zip(mean).zip(scale).map(|((x, m), s)| (x - m) / s).collect();
                net.forward(&z).into_iter().map(|v| v.clamp(-1.0, 1.0)).collect()
            }
        }
    }

    /// `V(s) = max_u Q(s, u)`.
    pub fn value<E: DiscreteEnv + ?Sized>(&self, env: &E, s: StateId) -> f64 {
        self.q_row(env, s).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Checks that the estimator can be queried on `env`.
    pub fn check_env<E: DiscreteEnv + ?Sized>(&self, env: &E) -> Result<(), FeasibilityError> {
        let na = env.spec().action_count();
        if self.num_actions() != na {
            return Err(FeasibilityError::Mismatch(format!(
                "{} actions, environment has {na}",
                self.num_actions()
            )));
        }
        match &self.store {
            EstimatorStore::Tabular { num_states, .. } if *num_states != env.num_states() => {
                Err(FeasibilityError::Mismatch(format!(
                    "{num_states} states, environment has {}",
                    env.num_states()
                )))
            }
            EstimatorStore::Fitted { net, .. } if net.input_size() == 0 => {
                Err(FeasibilityError::Mismatch("network has no inputs".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), FeasibilityError> {
        let (header, payload) = match &self.store {
            EstimatorStore::Tabular { num_states, num_actions, q } => (
                Header {
                    format: FORMAT.into(),
                    kind: "tabular".into(),
                    constraint: self.constraint.clone(),
                    gamma: self.gamma,
                    provenance: self.provenance.clone(),
                    num_states: Some(*num_states),
                    num_actions: *num_actions,
                    layers: None,
                    features: None,
                    mean: None,
                    scale: None,
                    payload_len: q.len(),
                },
                q.as_slice(),
            ),
            EstimatorStore::Fitted { net, features, mean, scale } => (
                Header {
                    format: FORMAT.into(),
                    kind: "fitted".into(),
                    constraint: self.constraint.clone(),
                    gamma: self.gamma,
                    provenance: self.provenance.clone(),
                    num_states: None,
                    num_actions: net.output_size(),
                    layers: Some(net.sizes().to_vec()),
                    features: Some(features.clone()),
                    mean: Some(mean.clone()),
                    scale: Some(scale.clone()),
                    payload_len: net.params().len(),
                },
                net.params(),
            ),
        };
        let line = serde_json::to_string(&header).map_err(|e| FeasibilityError::Format(e.to_string()))?;
        writeln!(out, "{line}")?;
        crate::io::write_f64s(&mut out, payload)?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self, FeasibilityError> {
        let (line, payload) = crate::io::read_header_and_payload(input)?;
        let h: Header = serde_json::from_str(&line).map_err(|e| FeasibilityError::Format(e.to_string()))?;
        if h.format != FORMAT {
            return Err(FeasibilityError::Format(format!("unexpected format `{}`", h.format)));
        }
        if payload.len() != h.payload_len {
            return Err(FeasibilityError::Format(format!(
                "payload has {} values, header says {}",
                payload.len(),
                h.payload_len
            )));
        }
        let missing = |what: &str| FeasibilityError::Format(format!("missing `{what}`"));
        let store = match h.kind.as_str() {
            "tabular" => {
                let num_states = h.num_states.ok_or_else(|| missing("num_states"))?;
                if num_states * h.num_actions != payload.len() {
                    return Err(FeasibilityError::Format("table size mismatch".into()));
                }
                EstimatorStore::Tabular { num_states, num_actions: h.num_actions, q: payload }
            }
            "fitted" => {
                let layers = h.layers.ok_or_else(|| missing("layers"))?;
                let net = Mlp::from_parts(layers, payload)
                    .ok_or_else(|| FeasibilityError::Format("parameter count mismatch".into()))?;
                EstimatorStore::Fitted {
                    net,
                    features: h.features.ok_or_else(|| missing("features"))?,
                    mean: h.mean.ok_or_else(|| missing("mean"))?,
                    scale: h.scale.ok_or_else(|| missing("scale"))?,
                }
            }
            other => return Err(FeasibilityError::Format(format!("unknown kind `{other}`"))),
        };
        Ok(FeasibilityEstimator { constraint: h.constraint, gamma: h.gamma, store, provenance: h.provenance })
    }

    pub fn save(&self, path: &Path) -> Result<(), FeasibilityError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FeasibilityError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

/// Mask for state `s` with threshold `epsilon`.
pub fn mask<E: DiscreteEnv + ?Sized>(
    estimator: &FeasibilityEstimator,
    env: &E,
    s: StateId,
    epsilon: f64,
) -> ActionMask {
    ActionMask::from_values(&estimator.q_row(env, s), epsilon)
}

/// Rank of the constraint that applies while `active` runs: the rank of the
/// active leaf itself, so a controller shared by several leaves is masked
/// by the set belonging to the leaf that invoked it.
pub fn select_constraint(
    tree: &BehaviorTree,
    ordering: &LeafOrdering,
    active: NodeId,
) -> Result<usize, FeasibilityError> {
    if !tree.is_behavior(active) {
        return Err(FeasibilityError::LeafNotInOrdering(active));
    }
    ordering.rank_of(active).ok_or(FeasibilityError::LeafNotInOrdering(active))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bt::fixtures::fig1_tree;
    use crate::bt::{derive_ordering, OrderingPattern, Regions};

    #[test]
    fn labels_follow_membership() {
        let l = make_label(Predicate::atom(0));
        assert_eq!(l.label(0b1), 1.0);
        assert_eq!(l.label(0b0), -1.0);
    }

    #[test]
    fn grasp_label_matches_convergence_set() {
        let tree = fig1_tree();
        let ord = derive_ordering(&tree, OrderingPattern::ImplicitSequence).unwrap();
        let regions = Regions::new(&tree);
        let grasp = ord.rank_of(tree.find_label("Grasp").unwrap()).unwrap();
        let c = regions.convergence_set(&ord, grasp).unwrap();
        let vals = tree.atoms().all_valuations();
        let bits = c.materialize(&vals);
        let label = make_label(c);
        for (k, &v) in vals.iter().enumerate() {
            assert_eq!(label.label(v) > 0.0, bits.contains(k));
        }
    }

    #[test]
    fn mask_sign_test() {
        let m = ActionMask::from_values(&[-0.5, 0.2, 0.0], 0.0);
        assert_eq!(m.allowed, vec![false, true, true]);
        let m = ActionMask::from_values(&[-0.5, -0.2, -0.9], 0.0);
        assert!(m.is_empty());
        assert_eq!(m.fallback, 1);
        let m = ActionMask::from_values(&[0.1, 0.3], 0.2);
        assert_eq!(m.allowed, vec![false, true]);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn shared_controller_uses_invoking_leaf() {
        let tree = fig1_tree();
        let ord = derive_ordering(&tree, OrderingPattern::ImplicitSequence).unwrap();
        let to_item = tree.find_label("MoveToItem").unwrap();
        let to_goal = tree.find_label("MoveToGoal").unwrap();
        assert_eq!(select_constraint(&tree, &ord, to_item).unwrap(), 1);
        assert_eq!(select_constraint(&tree, &ord, to_goal).unwrap(), 3);
        let grasp = tree.find_label("Grasp").unwrap();
        assert_eq!(select_constraint(&tree, &ord, grasp).unwrap(), 2);
        assert!(select_constraint(&tree, &ord, 0).is_err());
        // HaveItem without AtGoal: Move runs as MoveToGoal, masked by C_3
        let v = tree
            .atoms()
            .valuation(&[("Safe", true), ("HaveItem", true), ("AtGoal", false)])
            .unwrap();
        let active = tree.active_behavior(v).unwrap();
        assert_eq!(select_constraint(&tree, &ord, active).unwrap(), 3);
    }

    #[test]
    fn serialization_round_trip() {
        let est = FeasibilityEstimator {
            constraint: "C_2".into(),
            gamma: 0.99,
            store: EstimatorStore::Tabular { num_states: 2, num_actions: 2, q: vec![0.1, -1.0, 1.0 / 3.0, 1e-300] },
            provenance: "test".into(),
        };
        let mut buf = Vec::new();
        est.write_to(&mut buf).unwrap();
        let back = FeasibilityEstimator::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, est);
        buf.truncate(buf.len() - 3);
        assert!(FeasibilityEstimator::read_from(buf.as_slice()).is_err());
    }
}
