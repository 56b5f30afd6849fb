//! TOML experiment configuration.
//!
//! One document describes the tree, the environment, the estimator, every
//! subtask and the evaluation. A `[train]` table holds learner defaults;
//! each subtask (and the flat baseline) may override individual keys.
//! `docs/config.md` walks through an annotated example.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bt::fixtures::{fig1_tree, goal2d_tree};
use crate::bt::{derive_ordering, parse_predicate, parse_tree, BehaviorTree, BtError, LeafOrdering, Predicate};
use crate::envs::{DiscreteEnv, EnvError, Goal2dParams, Grid2d, Warehouse, WarehouseParams};
use crate::exec::ExecMode;
use crate::pipeline::{
    Experiment, FeasibilitySpec, FlatSpec, InduceSpec, InitialRecipe, Method, SubtaskSpec,
};
use crate::rl::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Tree(#[from] BtError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    /// Output directory; relative paths resolve against the working directory.
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Write every collected transition as CSV next to the run.
    #[serde(default = "default_true")]
    pub save_datasets: bool,
    /// Methods `train` runs, in order. Empty means every applicable method.
    #[serde(default)]
    pub methods: Vec<Method>,
    pub tree: TreeConfig,
    pub env: EnvConfig,
    #[serde(default)]
    pub feasibility: FeasibilitySpec,
    #[serde(default)]
    pub induce: InduceSpec,
    /// Learner defaults shared by all subtasks.
    #[serde(default)]
    pub train: toml::Table,
    pub subtasks: Vec<SubtaskConfig>,
    #[serde(default)]
    pub flat: Option<FlatConfig>,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_true() -> bool {
    true
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    /// `fig1` or `goal2d`.
    pub builtin: Option<String>,
    /// Tree file in the s-expression syntax, relative to the config file.
    pub file: Option<PathBuf>,
    /// `backward_chained` or `implicit_sequence`.
    pub pattern: Option<String>,
    /// Explicit progression as behavior labels, first rank first.
    pub order: Option<Vec<String>>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Goal2d,
    Warehouse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    #[serde(default)]
    pub goal2d: Goal2dParams,
    #[serde(default)]
    pub warehouse: WarehouseParams,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Base,
    #[default]
    Induced,
    Region,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubtaskConfig {
    /// Behavior label in the tree.
    pub leaf: String,
    /// Registered environment reward.
    pub reward: String,
    /// Predicate ending a training episode successfully.
    pub done: String,
    #[serde(default)]
    pub initial: InitialKind,
    /// Predicate for `initial = "region"`.
    pub region: Option<String>,
    /// Overrides of the `[train]` defaults.
    #[serde(default)]
    pub train: toml::Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatConfig {
    pub conditions: Vec<String>,
    pub done: String,
    #[serde(default)]
    pub train: toml::Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    pub seed: u64,
    /// Conditions whose violations are reported.
    pub conditions: Vec<String>,
    /// Also evaluate the baselines with the training-free masks applied.
    pub posthoc: bool,
    /// Exploration rate of the composed policy (0 is greedy).
    pub epsilon: f64,
    pub mode: ExecMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 1000,
            seed: 7,
            conditions: Vec::new(),
            posthoc: false,
            epsilon: 0.0,
            mode: ExecMode::default(),
        }
    }
}

impl Config {
    pub fn from_str(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_path_buf(), message: e.to_string() })
    }

    /// Reads a config file; a relative tree file resolves against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_str(&text, path)?;
        if let Some(file) = &cfg.tree.file {
            if file.is_relative() {
                let dir = path.parent().unwrap_or(Path::new("."));
                cfg.tree.file = Some(dir.join(file));
            }
        }
        Ok(cfg)
    }

    /// The canonical TOML form written next to run artifacts.
    pub fn snapshot(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Methods `train` runs: the configured list, or all methods that apply.
    pub fn methods(&self) -> Vec<Method> {
        if !self.methods.is_empty() {
            return self.methods.clone();
        }
        Method::ALL.into_iter().filter(|m| *m != Method::StandardRl || self.flat.is_some()).collect()
    }

    /// Builds the environment, tree and ordering, then checks every subtask.
    pub fn build(&self) -> Result<Setup, ConfigError> {
        let env: Box<dyn DiscreteEnv> = match self.env.kind {
            EnvKind::Goal2d => Box::new(Grid2d::new(self.env.goal2d.clone())?),
            EnvKind::Warehouse => Box::new(Warehouse::new(self.env.warehouse.clone())?),
        };
        let tree = match (&self.tree.builtin, &self.tree.file) {
            (Some(name), None) => match name.as_str() {
                "fig1" => fig1_tree(),
                "goal2d" => goal2d_tree(),
                other => return Err(ConfigError::Invalid(format!("unknown builtin tree `{other}`"))),
            },
            (None, Some(file)) => {
                let text = std::fs::read_to_string(file)
                    .map_err(|source| ConfigError::Read { path: file.clone(), source })?;
                let atoms = env.spec().atoms.clone();
                let root = parse_tree(&text, &atoms)?;
                BehaviorTree::new(root, atoms)?
            }
            _ => return Err(ConfigError::Invalid("set exactly one of tree.builtin and tree.file".into())),
        };
        let ordering = match (&self.tree.pattern, &self.tree.order) {
            (Some(p), None) => derive_ordering(&tree, p.parse()?)?,
            (None, Some(labels)) => LeafOrdering::from_labels(&tree, labels)?,
            _ => return Err(ConfigError::Invalid("set exactly one of tree.pattern and tree.order".into())),
        };
        let mut setup = Setup { env, tree, ordering, subtasks: Vec::new(), flat: None, conditions: Vec::new() };
        let pred = |text: &str| parse_predicate(text, setup.tree.atoms());
        let mut subtasks = Vec::new();
        for s in &self.subtasks {
            let leaf = setup
                .tree
                .find_label(&s.leaf)
                .ok_or_else(|| ConfigError::Invalid(format!("no behavior labelled `{}`", s.leaf)))?;
            let initial = match (s.initial, &s.region) {
                (InitialKind::Base, None) => InitialRecipe::Base,
                (InitialKind::Induced, None) => InitialRecipe::Induced,
                (InitialKind::Region, Some(r)) => InitialRecipe::Region(pred(r)?),
                _ => {
                    return Err(ConfigError::Invalid(format!(
                        "subtask `{}`: `region` is required exactly when initial = \"region\"",
                        s.leaf
                    )))
                }
            };
            subtasks.push(SubtaskSpec {
                leaf,
                reward: s.reward.clone(),
                done: pred(&s.done)?,
                initial,
                train: self.train_config(&s.train)?,
            });
        }
        let flat = match &self.flat {
            Some(f) => Some(FlatSpec {
                conditions: f.conditions.iter().map(|c| pred(c)).collect::<Result<_, _>>()?,
                done: pred(&f.done)?,
                train: self.train_config(&f.train)?,
            }),
            None => None,
        };
        let conditions = self
            .eval
            .conditions
            .iter()
            .map(|c| Ok((c.clone(), pred(c)?)))
            .collect::<Result<Vec<_>, ConfigError>>()?;
        setup.subtasks = subtasks;
        setup.flat = flat;
        setup.conditions = conditions;
        setup.experiment(self.seed, self).validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(setup)
    }

    /// `[train]` overlaid with `overrides`.
    fn train_config(&self, overrides: &toml::Table) -> Result<TrainConfig, ConfigError> {
        let mut merged = self.train.clone();
        for (k, v) in overrides {
            match (merged.get_mut(k), v) {
                (Some(toml::Value::Table(base)), toml::Value::Table(over)) => {
                    for (k2, v2) in over {
                        base.insert(k2.clone(), v2.clone());
                    }
                }
                _ => {
                    merged.insert(k.clone(), v.clone());
                }
            }
        }
        let cfg: TrainConfig =
            toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string()))?;
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }
}

/// Everything a config describes, built and checked.
pub struct Setup {
    pub env: Box<dyn DiscreteEnv>,
    pub tree: BehaviorTree,
    pub ordering: LeafOrdering,
    pub subtasks: Vec<SubtaskSpec>,
    pub flat: Option<FlatSpec>,
    pub conditions: Vec<(String, Predicate)>,
}

impl Setup {
    pub fn experiment<'a>(&'a self, seed: u64, cfg: &Config) -> Experiment<'a, dyn DiscreteEnv> {
        Experiment {
            env: self.env.as_ref(),
            tree: &self.tree,
            ordering: self.ordering.clone(),
            subtasks: self.subtasks.clone(),
            feasibility: cfg.feasibility.clone(),
            induce: cfg.induce.clone(),
            flat: self.flat.clone(),
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3
[tree]
builtin = "goal2d"
pattern = "backward_chained"
[env]
kind = "goal2d"
[env.goal2d]
resolution = [10, 10, 3, 3]
[train]
total_steps = 100
learning_rate = 0.3
[train.epsilon]
decay_steps = 50
[[subtasks]]
leaf = "Safety"
reward = "safe"
done = "Safe"
initial = "region"
region = "(not Safe)"
[[subtasks]]
leaf = "Goal"
reward = "goal"
done = "AtGoal"
[subtasks.train]
total_steps = 200
[subtasks.train.epsilon]
end = 0.1
"#;

    #[test]
    fn overrides_merge_over_defaults() {
        let cfg = Config::from_str(MINIMAL, Path::new("x.toml")).unwrap();
        let setup = cfg.build().unwrap();
        let goal = &setup.subtasks[1].train;
        assert_eq!(goal.total_steps, 200);
        assert_eq!(goal.learning_rate, 0.3);
        assert_eq!((goal.epsilon.decay_steps, goal.epsilon.end), (50, 0.1));
        assert_eq!(setup.subtasks[0].train.total_steps, 100);
        assert_eq!(cfg.methods(), vec![Method::Cbtrl, Method::Btrl, Method::BtPenalty]);
    }

    #[test]
    fn snapshot_round_trips() {
        let cfg = Config::from_str(MINIMAL, Path::new("x.toml")).unwrap();
        let again = Config::from_str(&cfg.snapshot(), Path::new("snap")).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn rejects_unknown_keys_and_labels() {
        let bad = MINIMAL.replace("seed = 3", "seed = 3\nsede = 4");
        assert!(matches!(Config::from_str(&bad, Path::new("x")), Err(ConfigError::Parse { .. })));
        let bad = MINIMAL.replace("leaf = \"Goal\"", "leaf = \"Goul\"");
        assert!(matches!(Config::from_str(&bad, Path::new("x")).unwrap().build(), Err(ConfigError::Invalid(_))));
        let bad = MINIMAL.replace("learning_rate = 0.3", "learning_rate = -1.0");
        assert!(Config::from_str(&bad, Path::new("x")).unwrap().build().is_err());
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = Config::load(Path::new("/nonexistent/cfg.toml")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/cfg.toml"));
    }
}
