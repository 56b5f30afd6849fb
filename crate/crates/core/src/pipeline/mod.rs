//! Rank-by-rank training of a behavior tree's controllers.
//!
//! For each rank `j` of the leaf ordering: estimate the feasibility of the
//! convergence set `C_j` (from all data gathered so far, or exactly on an
//! enumerable environment), train the rank's controller with its actions
//! masked to that estimate, and append the collected transitions to the
//! dataset. Baselines reuse the same loop without masks.

mod data;
mod policy;

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bt::{BehaviorTree, BtError, LeafOrdering, NodeId, Predicate, Regions};
use crate::envs::{DiscreteEnv, EnvError, InitialSampler, Rng, StateId, TransitionRecord};
use crate::exec::split_rng;
use crate::feasibility::{
    fit, make_label, samples_from_records, solve_tabular, FeasibilityError, FeasibilityEstimator, FeatureMap,
    FitConfig, SolveConfig,
};
use crate::rl::{flat_reward, Controller, LearnerKind, Learner, RlError, Subtask, TrainConfig, TrainOutput};

pub use data::{collect_uniform, dataset_hash, record_bytes, write_records_csv, DatasetHasher};
pub use policy::{rollout, ComposedPolicy, Decision, RolloutEnd, RolloutStep};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error("rank {rank} is constrained and no prior dataset is available")]
    MissingDataset { rank: usize },
    #[error("no episode reached rank {rank} ({leaf}) within {attempts} attempts")]
    UnreachedRank { rank: usize, leaf: String, attempts: usize },
    #[error("no trained controller `{0}`")]
    MissingController(String),
    #[error(transparent)]
    Bt(#[from] BtError),
    #[error(transparent)]
    Feasibility(#[from] FeasibilityError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Masked training with feasibility estimators.
    Cbtrl,
    /// Unconstrained per-leaf training.
    Btrl,
    /// Unconstrained training with a penalty on leaving `C_j`.
    BtPenalty,
    /// One controller on a flat reward, no tree.
    StandardRl,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Cbtrl, Method::Btrl, Method::BtPenalty, Method::StandardRl];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cbtrl => "cbtrl",
            Method::Btrl => "btrl",
            Method::BtPenalty => "bt_penalty",
            Method::StandardRl => "standard_rl",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| PipelineError::InvalidSpec(format!("unknown method `{s}`")))
    }
}

/// Where a subtask's training episodes start.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialRecipe {
    /// The environment's base distribution.
    Base,
    /// Uniform over every non-absorbing state satisfying the predicate.
    Region(Predicate),
    /// States where executing the already trained prefix first hands
    /// control to this rank.
    Induced,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubtaskSpec {
    pub leaf: NodeId,
    /// Registered environment reward.
    pub reward: String,
    /// Episode success condition.
    pub done: Predicate,
    pub initial: InitialRecipe,
    pub train: TrainConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Tabular,
    Fitted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeasibilitySpec {
    pub estimator: EstimatorKind,
    /// Mask threshold: actions with `Q ≥ epsilon` are allowed.
    pub epsilon: f64,
    pub solve: SolveConfig,
    pub fit: FitConfig,
    /// Uniform-random episodes collected as the prior dataset `D_0`.
    pub prior_episodes: usize,
}

impl Default for FeasibilitySpec {
    fn default() -> Self {
        FeasibilitySpec {
            estimator: EstimatorKind::Tabular,
            epsilon: 0.0,
            solve: SolveConfig::default(),
            fit: FitConfig::default(),
            prior_episodes: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InduceSpec {
    /// Initial states to collect per induced rank.
    pub count: usize,
    pub max_attempts: usize,
}

impl Default for InduceSpec {
    fn default() -> Self {
        InduceSpec { count: 256, max_attempts: 20_000 }
    }
}

/// The flat baseline: one controller, `−1` per unmet condition.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatSpec {
    pub conditions: Vec<Predicate>,
    pub done: Predicate,
    pub train: TrainConfig,
}

/// Everything one training run needs.
pub struct Experiment<'a, E: ?Sized> {
    pub env: &'a E,
    pub tree: &'a BehaviorTree,
    pub ordering: LeafOrdering,
    /// One spec per behavior leaf.
    pub subtasks: Vec<SubtaskSpec>,
    pub feasibility: FeasibilitySpec,
    pub induce: InduceSpec,
    pub flat: Option<FlatSpec>,
    pub seed: u64,
}

/// Per-rank training results.
#[derive(Clone, Debug, PartialEq)]
pub struct RankArtifacts {
    pub rank: usize,
    pub leaf: NodeId,
    pub label: String,
    pub controller: String,
    /// Hash of the data the rank's estimator was built from, `D_0‖…‖D_{j−1}`.
    pub estimator_data_hash: String,
    pub estimator_data_len: usize,
    pub initial_states: Vec<StateId>,
    pub output: TrainOutput,
    /// Hash of this rank's own dataset `D_j`.
    pub dataset_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunArtifacts {
    pub method: Method,
    pub seed: u64,
    pub controllers: BTreeMap<String, Controller>,
    /// Training-time masks, indexed by rank − 1.
    pub estimators: Vec<Option<FeasibilityEstimator>>,
    pub prior: Vec<TransitionRecord>,
    pub ranks: Vec<RankArtifacts>,
}

impl<'a, E: DiscreteEnv + ?Sized> Experiment<'a, E> {
    /// Checks that atoms match and the subtasks cover each behavior leaf once.
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.tree.atoms().names() != self.env.spec().atoms.names() {
            return Err(PipelineError::InvalidSpec(format!(
                "tree atoms {:?} differ from environment atoms {:?}",
                self.tree.atoms().names(),
                self.env.spec().atoms.names()
            )));
        }
        let mut leaves: Vec<NodeId> = self.subtasks.iter().map(|s| s.leaf).collect();
        leaves.sort_unstable();
        if leaves != self.tree.behaviors() {
            return Err(PipelineError::InvalidSpec("subtasks must cover every behavior leaf exactly once".into()));
        }
        for s in &self.subtasks {
            s.train.validate()?;
            self.env.spec().reward_id(&s.reward)?;
        }
        Ok(())
    }

    fn spec_for(&self, leaf: NodeId) -> &SubtaskSpec {
        self.subtasks.iter().find(|s| s.leaf == leaf).expect("validated subtask list")
    }

    fn rank_seed(&self, rank: usize) -> u64 {
        split_rng(self.seed, rank as u64).gen()
    }

    fn is_unconstrained(&self, c: &Predicate) -> bool {
        self.tree.atoms().all_valuations().into_iter().all(|v| c.eval(v))
    }

    fn new_controller(&self, name: &str, cfg: &TrainConfig, seed: u64) -> Controller {
        match cfg.learner {
            LearnerKind::Tabular => {
                Controller::tabular_with(name, self.env.num_states(), self.env.spec().action_count(), cfg.initial_value)
            }
            LearnerKind::Fitted => Controller::fitted(name, self.env, &cfg.hidden, &mut Rng::seed_from_u64(seed)),
        }
    }

    /// States satisfying `p` that are not absorbing.
    pub fn region_states(&self, p: &Predicate) -> Vec<StateId> {
        (0..self.env.num_states() as StateId)
            .filter(|&s| !self.env.is_absorbing(s) && p.eval(self.env.valuation(s)))
            .collect()
    }

    /// Builds the mask estimator for rank `rank` from `data`.
    fn estimate(
        &self,
        rank: usize,
        c: &Predicate,
        data: &[&[TransitionRecord]],
    ) -> Result<FeasibilityEstimator, PipelineError> {
        let label = make_label(c.clone());
        let name = format!("C_{rank}");
        match self.feasibility.estimator {
            EstimatorKind::Tabular => Ok(solve_tabular(self.env, &label, &name, &self.feasibility.solve)?.0),
            EstimatorKind::Fitted => {
                let records: Vec<TransitionRecord> = data.iter().flat_map(|d| d.iter().cloned()).collect();
                if records.is_empty() {
                    return Err(PipelineError::MissingDataset { rank });
                }
                let samples = samples_from_records(self.env, &records, &label, &FeatureMap::StateVector);
                let cfg = FitConfig { seed: self.rank_seed(rank) ^ 0x5eed, ..self.feasibility.fit.clone() };
                let (est, _) =
                    fit(&samples, self.env.spec().action_count(), &name, FeatureMap::StateVector, &cfg)?;
                Ok(est)
            }
        }
    }

    /// Initial states for `rank`: episodes from the base distribution run
    /// the trained prefix greedily and contribute the first state at which
    /// the active leaf has rank `rank`. Episodes that never get there are
    /// discarded.
    pub fn induce_initial_states(
        &self,
        policy: &ComposedPolicy,
        rank: usize,
        seed: u64,
    ) -> Result<Vec<StateId>, PipelineError> {
        let mut out = Vec::new();
        let mut attempts = 0;
        while out.len() < self.induce.count {
            if attempts >= self.induce.max_attempts {
                let leaf = self.ordering.leaf_at(rank).map(|l| self.tree.node_name(l)).unwrap_or_default();
                return Err(PipelineError::UnreachedRank { rank, leaf, attempts });
            }
            let mut rng = split_rng(seed, attempts as u64);
            attempts += 1;
            let start = crate::envs::reset(self.env, &InitialSampler::Base, &mut rng)?;
            let mut found = None;
            let probe = |s: StateId| {
                self.tree.active_behavior(self.env.valuation(s)).and_then(|l| self.ordering.rank_of(l))
            };
            if probe(start) == Some(rank) {
                out.push(start);
                continue;
            }
            rollout(self.env, policy, start, self.env.spec().horizon, &|_| false, &mut rng, |step| {
                match probe(step.next) {
                    Some(r) if r == rank => {
                        found = Some(step.next);
                        false
                    }
                    Some(r) if r > rank => false,
                    None => false,
                    _ => !self.env.is_absorbing(step.next),
                }
            });
            if let Some(s) = found {
                out.push(s);
            }
        }
        Ok(out)
    }

    /// Trains with the given method. Ranks run strictly in order.
    pub fn run(&self, method: Method) -> Result<RunArtifacts, PipelineError> {
        if method == Method::StandardRl {
            return self.run_flat();
        }
        self.validate()?;
        let regions = Regions::new(self.tree);
        let n = self.ordering.len();
        let mut art = RunArtifacts {
            method,
            seed: self.seed,
            controllers: BTreeMap::new(),
            estimators: vec![None; n],
            prior: Vec::new(),
            ranks: Vec::new(),
        };
        let mut learners: BTreeMap<String, Learner> = BTreeMap::new();
        let needs_prior = method == Method::Cbtrl
            && self.feasibility.estimator == EstimatorKind::Fitted
            && !self.is_unconstrained(&regions.convergence_set(&self.ordering, 1)?);
        if needs_prior || self.feasibility.prior_episodes > 0 {
            if self.feasibility.prior_episodes == 0 {
                return Err(PipelineError::MissingDataset { rank: 1 });
            }
            art.prior = collect_uniform(self.env, self.feasibility.prior_episodes, self.env.spec().horizon, self.rank_seed(0))?;
        }

        for rank in 1..=n {
            let leaf = self.ordering.leaf_at(rank).expect("rank in range");
            let spec = self.spec_for(leaf);
            let controller = self.tree.controller_of(leaf).expect("behavior leaf").to_string();
            let c = regions.convergence_set(&self.ordering, rank)?;
            let seed = self.rank_seed(rank);

            let mut data: Vec<&[TransitionRecord]> = vec![&art.prior];
            data.extend(art.ranks.iter().map(|r| r.output.records.as_slice()));
            let mut hasher = DatasetHasher::default();
            for d in &data {
                hasher.update(d);
            }
            let estimator_data_len = data.iter().map(|d| d.len()).sum();
            let estimator_data_hash = hasher.finish_hex();
            if method == Method::Cbtrl && !self.is_unconstrained(&c) {
                art.estimators[rank - 1] = Some(self.estimate(rank, &c, &data)?);
            }

            let initial_states = {
                let policy = ComposedPolicy::Tree {
                    tree: self.tree,
                    ordering: &self.ordering,
                    controllers: &art.controllers,
                    masks: &art.estimators,
                    epsilon: self.feasibility.epsilon,
                };
                match &spec.initial {
                    InitialRecipe::Base => self.env.base_states().to_vec(),
                    InitialRecipe::Region(p) => self.region_states(p),
                    InitialRecipe::Induced if rank == 1 => self.env.base_states().to_vec(),
                    InitialRecipe::Induced => self.induce_initial_states(&policy, rank, seed ^ 0x1d)?,
                }
            };
            if initial_states.is_empty() {
                return Err(PipelineError::InvalidSpec(format!("no initial states for rank {rank}")));
            }

            let cfg = TrainConfig { seed, ..spec.train.clone() };
            let learner = learners
                .entry(controller.clone())
                .or_insert_with(|| Learner::new(self.new_controller(&controller, &cfg, seed), &cfg));
            learner.reconfigure(&cfg);
            let env = self.env;
            let reward_id = env.spec().reward_id(&spec.reward)?;
            let est = art.estimators[rank - 1].as_ref();
            let eps = self.feasibility.epsilon;
            let done = spec.done.clone();
            let (c1, c2) = (c.clone(), c.clone());
            let task = Subtask {
                name: self.tree.node_name(leaf),
                node: Some(leaf),
                reward: Box::new(move |s, a, t| env.reward(reward_id, s, a, t)),
                done: Box::new(move |s| done.eval(env.valuation(s))),
                violation: Box::new(move |s, t| c1.eval(env.valuation(s)) && !c2.eval(env.valuation(t))),
                mask: est.map(|e| {
                    let f: Box<dyn Fn(StateId) -> crate::feasibility::ActionMask + Sync> =
                        Box::new(move |s| crate::feasibility::mask(e, env, s, eps));
                    (rank, f)
                }),
                penalize: method == Method::BtPenalty,
                initial: InitialSampler::Uniform(initial_states.clone()),
                horizon: env.spec().horizon,
            };
            let output = crate::rl::train(env, learner, &task, &cfg)?;
            art.controllers.insert(controller.clone(), learner.controller.clone());
            let dataset_hash = dataset_hash(&output.records);
            art.ranks.push(RankArtifacts {
                rank,
                leaf,
                label: self.tree.node_name(leaf),
                controller,
                estimator_data_hash,
                estimator_data_len,
                initial_states,
                output,
                dataset_hash,
            });
        }
        Ok(art)
    }

    fn run_flat(&self) -> Result<RunArtifacts, PipelineError> {
        let flat = self
            .flat
            .as_ref()
            .ok_or_else(|| PipelineError::InvalidSpec("the flat baseline needs a flat spec".into()))?;
        flat.train.validate()?;
        let env = self.env;
        let seed = self.rank_seed(1);
        let cfg = TrainConfig { seed, ..flat.train.clone() };
        let mut learner = Learner::new(self.new_controller("flat", &cfg, seed), &cfg);
        let conds = flat.conditions.clone();
        let checks = flat.conditions.clone();
        let done = flat.done.clone();
        let task = Subtask {
            name: "flat".into(),
            node: None,
            reward: Box::new(move |s, _, _| flat_reward(env.valuation(s), &conds)),
            done: Box::new(move |s| done.eval(env.valuation(s))),
            violation: Box::new(move |s, t| {
                let (vs, vt) = (env.valuation(s), env.valuation(t));
                checks.iter().any(|c| c.eval(vs) && !c.eval(vt))
            }),
            mask: None,
            penalize: false,
            initial: InitialSampler::Base,
            horizon: env.spec().horizon,
        };
        let output = crate::rl::train(env, &mut learner, &task, &cfg)?;
        let dataset_hash = dataset_hash(&output.records);
        let mut controllers = BTreeMap::new();
        controllers.insert("flat".to_string(), learner.into_controller());
        Ok(RunArtifacts {
            method: Method::StandardRl,
            seed: self.seed,
            controllers,
            estimators: Vec::new(),
            prior: Vec::new(),
            ranks: vec![RankArtifacts {
                rank: 1,
                leaf: 0,
                label: "flat".into(),
                controller: "flat".into(),
                estimator_data_hash: DatasetHasher::default().finish_hex(),
                estimator_data_len: 0,
                initial_states: env.base_states().to_vec(),
                output,
                dataset_hash,
            }],
        })
    }

    /// Masks for evaluating a baseline's controllers with the constraints
    /// applied after training: one exact estimator per constrained rank.
    pub fn posthoc_masks(&self) -> Result<Vec<Option<FeasibilityEstimator>>, PipelineError> {
        let regions = Regions::new(self.tree);
        (1..=self.ordering.len())
            .map(|rank| {
                let c = regions.convergence_set(&self.ordering, rank)?;
                if self.is_unconstrained(&c) {
                    return Ok(None);
                }
                let label = make_label(c);
                Ok(Some(solve_tabular(self.env, &label, &format!("C_{rank}"), &self.feasibility.solve)?.0))
            })
            .collect()
    }
}

/// Evaluation-time composition of a baseline's controllers with masks it
/// was not trained with.
pub fn apply_posthoc_mask<'a>(
    tree: &'a BehaviorTree,
    ordering: &'a LeafOrdering,
    controllers: &'a BTreeMap<String, Controller>,
    masks: &'a [Option<FeasibilityEstimator>],
    epsilon: f64,
) -> Result<ComposedPolicy<'a>, PipelineError> {
    if masks.len() != ordering.len() {
        return Err(PipelineError::InvalidSpec(format!(
            "{} masks for {} ranks",
            masks.len(),
            ordering.len()
        )));
    }
    for name in tree.controllers() {
        if !controllers.contains_key(&name) {
            return Err(PipelineError::MissingController(name));
        }
    }
    Ok(ComposedPolicy::Tree { tree, ordering, controllers, masks, epsilon })
}

/// Controllers and masks read back from a directory written by
/// [`RunArtifacts::save`].
#[derive(Clone, Debug, PartialEq)]
pub struct SavedRun {
    pub method: Method,
    pub controllers: BTreeMap<String, Controller>,
    pub estimators: Vec<Option<FeasibilityEstimator>>,
}

impl SavedRun {
    pub fn load<E: DiscreteEnv + ?Sized>(
        env: &E,
        dir: &Path,
        method: Method,
        ranks: usize,
    ) -> Result<Self, PipelineError> {
        let mut controllers = BTreeMap::new();
        let mut entries: Vec<_> = std::fs::read_dir(dir.join("controllers"))?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let path = entry.path();
            if path.extension().is_some_and(|x| x == "bin") {
                let c = Controller::load(&path)?;
                c.check_env(env)?;
                controllers.insert(c.name.clone(), c);
            }
        }
        let mut estimators = vec![None; ranks];
        for (k, slot) in estimators.iter_mut().enumerate() {
            let path = dir.join(format!("estimators/rank{}.bin", k + 1));
            if path.exists() {
                let est = FeasibilityEstimator::load(&path)?;
                est.check_env(env)?;
                *slot = Some(est);
            }
        }
        Ok(SavedRun { method, controllers, estimators })
    }

    pub fn policy<'a>(&'a self, tree: &'a BehaviorTree, ordering: &'a LeafOrdering, epsilon: f64) -> Result<ComposedPolicy<'a>, PipelineError> {
        match self.method {
            Method::StandardRl => Ok(ComposedPolicy::Flat {
                controller: self.controllers.get("flat").ok_or_else(|| PipelineError::MissingController("flat".into()))?,
            }),
            _ => apply_posthoc_mask(tree, ordering, &self.controllers, &self.estimators, epsilon),
        }
    }
}

impl RunArtifacts {
    /// The policy this run trained, masked as during training.
    pub fn policy<'a>(&'a self, tree: &'a BehaviorTree, ordering: &'a LeafOrdering, epsilon: f64) -> ComposedPolicy<'a> {
        match self.method {
            Method::StandardRl => ComposedPolicy::Flat { controller: &self.controllers["flat"] },
            _ => ComposedPolicy::Tree { tree, ordering, controllers: &self.controllers, masks: &self.estimators, epsilon },
        }
    }

    /// Writes the artifact directory: `estimators/`, `controllers/`,
    /// `logs/` and, when `datasets` is set, `datasets/`. The lineage log
    /// records dataset sizes and hashes either way. Returns the written paths
    /// relative to `dir`.
    pub fn save<E: DiscreteEnv + ?Sized>(&self, env: &E, dir: &Path, datasets: bool) -> Result<Vec<String>, PipelineError> {
        let mut written = Vec::new();
        for sub in ["estimators", "controllers", "datasets", "logs"] {
            if sub == "datasets" && !datasets {
                continue;
            }
            std::fs::create_dir_all(dir.join(sub))?;
        }
        for (rank, est) in self.estimators.iter().enumerate() {
            if let Some(est) = est {
                let rel = format!("estimators/rank{}.bin", rank + 1);
                est.save(&dir.join(&rel))?;
                written.push(rel);
            }
        }
        for (name, c) in &self.controllers {
            let rel = format!("controllers/{name}.bin");
            c.save(&dir.join(&rel))?;
            written.push(rel);
        }
        let mut files: Vec<(String, &[TransitionRecord])> = Vec::new();
        if datasets && !self.prior.is_empty() {
            files.push(("datasets/D0.csv".into(), &self.prior));
        }
        for r in self.ranks.iter().filter(|_| datasets) {
            files.push((format!("datasets/D{}.csv", r.rank), &r.output.records));
        }
        for (rel, records) in files {
            write_records_csv(env, records, &dir.join(&rel))?;
            written.push(rel);
        }
        for r in &self.ranks {
            let slug = r.label.replace(|c: char| !c.is_ascii_alphanumeric(), "_");
            let rel = format!("logs/curve_rank{}_{slug}.csv", r.rank);
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(&rel))?);
            crate::rl::write_learning_curve_csv(&r.output.curve, &mut f)?;
            written.push(rel);
            let rel = format!("logs/eval_rank{}_{slug}.csv", r.rank);
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(&rel))?);
            crate::rl::write_eval_csv(&r.output.evals, &mut f)?;
            written.push(rel);
        }
        let lineage: Vec<serde_json::Value> = self
            .ranks
            .iter()
            .map(|r| {
                serde_json::json!({
                    "rank": r.rank,
                    "leaf": r.label,
                    "controller": r.controller,
                    "estimator_data_len": r.estimator_data_len,
                    "estimator_data_sha256": r.estimator_data_hash,
                    "dataset_len": r.output.records.len(),
                    "dataset_sha256": r.dataset_hash,
                    "violations": r.output.violations,
                    "mask_fallback_steps": r.output.mask_stats.fallback_steps,
                    "mask_noncompliant_steps": r.output.mask_stats.noncompliant_steps,
                })
            })
            .collect();
        let rel = "logs/lineage.json".to_string();
        let text = serde_json::to_string_pretty(&serde_json::json!({
            "method": self.method.name(),
            "seed": self.seed,
            "prior_len": self.prior.len(),
            "prior_sha256": dataset_hash(&self.prior),
            "ranks": lineage,
        }))
        .map_err(|e| PipelineError::InvalidSpec(e.to_string()))?;
        std::fs::write(dir.join(&rel), text + "\n")?;
        written.push(rel);
        Ok(written)
    }
}
