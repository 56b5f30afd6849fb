//! Brute-force reference implementations for checking the solvers.
//!
//! The oracles are deliberately naive and share no code with the modules
//! they check: a closure-built explicit MDP with nested adjacency
//! lists, greatest-fixed-point viability kernels, in-place value iteration,
//! and a direct tick over the nested tree description. [`check_feasibility`]
//! runs the tabular solver against them.

mod check;

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::bt::{BehaviorTree, BtNode, NodeId, NodeKind, ReturnStatus, Valuation};
use crate::envs::{DiscreteEnv, Rng, StateId};

pub use check::{check_feasibility, RankCheck};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracles need deterministic dynamics")]
    NonDeterministic,
    #[error("successor {next} of state {state} is out of range")]
    BadSuccessor { state: usize, next: usize },
    #[error("unknown reward `{0}`")]
    UnknownReward(String),
    #[error("table shapes disagree: {0}")]
    Shape(String),
}

/// Explicit finite deterministic MDP.
#[derive(Clone, Debug)]
pub struct EnumeratedMdp {
    /// Environment state id of each local index.
    pub states: Vec<StateId>,
    /// `succ[s][a]`, local indices.
    pub succ: Vec<Vec<usize>>,
    pub terminal: Vec<bool>,
    pub valuations: Vec<Valuation>,
    /// `rewards[name][s][a]`.
    pub rewards: HashMap<String, Vec<Vec<f64>>>,
}

impl EnumeratedMdp {
    /// Breadth-first closure of `roots` under every action.
    pub fn from_env<E: DiscreteEnv + ?Sized>(env: &E, roots: &[StateId]) -> Result<Self, OracleError> {
        use rand::SeedableRng;
        if !env.is_deterministic() {
            return Err(OracleError::NonDeterministic);
        }
        let na = env.spec().action_count();
        let mut rng = Rng::seed_from_u64(0);
        let mut index: HashMap<StateId, usize> = HashMap::new();
        let mut states = Vec::new();
        let mut queue = VecDeque::new();
        for &r in roots {
            if let std::collections::hash_map::Entry::Vacant(e) = index.entry(r) {
                e.insert(states.len());
                states.push(r);
                queue.push_back(r);
            }
        }
        let mut raw: HashMap<StateId, Vec<StateId>> = HashMap::new();
        while let Some(s) = queue.pop_front() {
            let row: Vec<StateId> = (0..na).map(|a| env.successor(s, a, &mut rng)).collect();
            for &t in &row {
                if let std::collections::hash_map::Entry::Vacant(e) = index.entry(t) {
                    e.insert(states.len());
                    states.push(t);
                    queue.push_back(t);
                }
            }
            raw.insert(s, row);
        }
        let succ: Vec<Vec<usize>> = states.iter().map(|s| raw[s].iter().map(|t| index[t]).collect()).collect();
        let mut rewards = HashMap::new();
        for (id, name) in env.spec().rewards.iter().enumerate() {
            let table = states
                .iter()
                .map(|&s| (0..na).map(|a| env.reward(id, s, a, raw[&s][a])).collect())
                .collect();
            rewards.insert(name.clone(), table);
        }
        Ok(EnumeratedMdp {
            terminal: states.iter().map(|&s| env.is_absorbing(s)).collect(),
            valuations: states.iter().map(|&s| env.valuation(s)).collect(),
            states,
            succ,
            rewards,
        })
    }

    /// Builds an MDP from explicit tables; states are numbered `0..n`.
    pub fn from_tables(
        succ: Vec<Vec<usize>>,
        terminal: Vec<bool>,
        valuations: Vec<Valuation>,
        rewards: HashMap<String, Vec<Vec<f64>>>,
    ) -> Result<Self, OracleError> {
        let n = succ.len();
        if terminal.len() != n || valuations.len() != n {
            return Err(OracleError::Shape("terminal/valuation length".into()));
        }
        for (s, row) in succ.iter().enumerate() {
            if let Some(&t) = row.iter().find(|&&t| t >= n) {
                return Err(OracleError::BadSuccessor { state: s, next: t });
            }
        }
        for (name, table) in &rewards {
            if table.len() != n || table.iter().zip(&succ).any(|(r, s)| r.len() != s.len()) {
                return Err(OracleError::Shape(format!("reward `{name}`")));
            }
        }
        Ok(EnumeratedMdp { states: (0..n as StateId).collect(), succ, terminal, valuations, rewards })
    }

    pub fn len(&self) -> usize {
        self.succ.len()
    }

    pub fn is_empty(&self) -> bool {
        self.succ.is_empty()
    }

    /// Local index of an environment state.
    pub fn local(&self, s: StateId) -> Option<usize> {
        self.states.iter().position(|&x| x == s)
    }
}

/// States from which entering `failure` can be avoided forever.
pub fn viability_kernel(mdp: &EnumeratedMdp, failure: &[bool]) -> Vec<bool> {
    let mut keep: Vec<bool> = failure.iter().map(|f| !f).collect();
    loop {
        let mut changed = false;
        for s in 0..mdp.len() {
            if keep[s] && !mdp.succ[s].iter().any(|&t| keep[t]) {
                keep[s] = false;
                changed = true;
            }
        }
        if !changed {
            return keep;
        }
    }
}

/// Optimal state values and greedy policy for one reward. Terminal states
/// have value zero and transitions into them do not bootstrap.
pub fn exact_value_iteration(
    mdp: &EnumeratedMdp,
    reward: &str,
    gamma: f64,
    tol: f64,
) -> Result<(Vec<f64>, Vec<usize>), OracleError> {
    let r = mdp.rewards.get(reward).ok_or_else(|| OracleError::UnknownReward(reward.into()))?;
    let q = |v: &[f64], s: usize, a: usize| {
        let t = mdp.succ[s][a];
        r[s][a] + if mdp.terminal[t] { 0.0 } else { gamma * v[t] }
    };
    let mut v = vec![0.0; mdp.len()];
    loop {
        let mut delta: f64 = 0.0;
        for s in 0..mdp.len() {
            if mdp.terminal[s] {
                continue;
            }
            let best = (0..mdp.succ[s].len()).map(|a| q(&v, s, a)).fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((best - v[s]).abs());
            v[s] = best;
        }
        if delta < tol {
            break;
        }
    }
    let policy = (0..mdp.len())
        .map(|s| {
            let mut best = 0;
            for a in 1..mdp.succ[s].len() {
                if q(&v, s, a) > q(&v, s, best) {
                    best = a;
                }
            }
            best
        })
        .collect();
    Ok((v, policy))
}

/// Reach-avoid state values `V(s) = (1−γ) l + γ min(l, max_a V(s'))`,
/// iterated in place in reverse state order.
pub fn feasibility_fixed_point(mdp: &EnumeratedMdp, labels: &[f64], gamma: f64, tol: f64) -> Vec<f64> {
    let mut v = labels.to_vec();
    loop {
        let mut delta: f64 = 0.0;
        for s in (0..mdp.len()).rev() {
            let best = mdp.succ[s].iter().map(|&t| v[t]).fold(f64::NEG_INFINITY, f64::max);
            let new = (1.0 - gamma) * labels[s] + gamma * labels[s].min(best);
            delta = delta.max((new - v[s]).abs());
            v[s] = new;
        }
        if delta < tol {
            return v;
        }
    }
}

/// Ticks the nested tree description directly. Node ids are pre-order
/// positions, counted independently of [`BehaviorTree`].
pub fn tick_oracle(root: &BtNode, v: Valuation) -> (ReturnStatus, Option<NodeId>) {
    fn size(n: &BtNode) -> usize {
        1 + n.children.iter().map(size).sum::<usize>()
    }
    fn go(n: &BtNode, id: NodeId, v: Valuation) -> (ReturnStatus, Option<NodeId>) {
        match &n.kind {
            NodeKind::Condition { atom } => {
                let ok = v & (1 << atom) != 0;
                (if ok { ReturnStatus::Success } else { ReturnStatus::Failure }, None)
            }
            NodeKind::Behavior { success, failure, .. } => match (success.eval(v), failure.eval(v)) {
                (true, _) => (ReturnStatus::Success, None),
                (false, true) => (ReturnStatus::Failure, None),
                _ => (ReturnStatus::Running, Some(id)),
            },
            NodeKind::Sequence | NodeKind::Fallback => {
                let pass = if matches!(n.kind, NodeKind::Sequence) { ReturnStatus::Success } else { ReturnStatus::Failure };
                let mut child_id = id + 1;
                for c in &n.children {
                    let r = go(c, child_id, v);
                    if r.0 != pass {
                        return r;
                    }
                    child_id += size(c);
                }
                (pass, None)
            }
        }
    }
    go(root, 0, v)
}

/// For every behavior leaf, the valuations in which it is the one running.
pub fn operating_sets_by_tick(tree: &BehaviorTree) -> HashMap<NodeId, Vec<Valuation>> {
    let mut out: HashMap<NodeId, Vec<Valuation>> = tree.behaviors().into_iter().map(|b| (b, Vec::new())).collect();
    for v in 0..(1u64 << tree.atoms().len()) {
        if let (ReturnStatus::Running, Some(leaf)) = tick_oracle(tree.source(), v) {
            out.entry(leaf).or_default().push(v);
        }
    }
    out
}
