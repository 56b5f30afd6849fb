use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;

use super::{Learner, ReplayBuffer, ReplayItem, RlError, TrainConfig};
use crate::bt::NodeId;
use crate::envs::{reset, ActionId, DiscreteEnv, InitialSampler, Rng, StateId, TransitionRecord};
use crate::exec::{split_rng, ExecMode};
use crate::feasibility::ActionMask;

type RewardFn<'a> = Box<dyn Fn(StateId, ActionId, StateId) -> f64 + Sync + 'a>;
type StateFn<'a> = Box<dyn Fn(StateId) -> bool + Sync + 'a>;
type PairFn<'a> = Box<dyn Fn(StateId, StateId) -> bool + Sync + 'a>;
type MaskFn<'a> = Box<dyn Fn(StateId) -> ActionMask + Sync + 'a>;

/// The episodic learning problem of one controller.
pub struct Subtask<'a> {
    pub name: String,
    /// Behavior node recorded as active in every transition.
    pub node: Option<NodeId>,
    pub reward: RewardFn<'a>,
    /// Reaching a state where this holds ends the episode successfully.
    pub done: StateFn<'a>,
    /// Transitions that leave the constraint set.
    pub violation: PairFn<'a>,
    /// Action mask and the rank it belongs to.
    pub mask: Option<(usize, MaskFn<'a>)>,
    /// Subtract the configured penalty on violating transitions.
    pub penalize: bool,
    pub initial: InitialSampler,
    pub horizon: usize,
}

impl Subtask<'_> {
    fn mask_at(&self, s: StateId) -> Option<ActionMask> {
        self.mask.as_ref().map(|(_, f)| f(s))
    }
}

/// One row per training episode.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    /// Environment steps taken when the episode ended.
    pub env_steps: usize,
    pub episode_return: f64,
    pub success: bool,
    pub violations: usize,
    pub epsilon: f64,
    /// Mean TD loss over the episode's updates.
    pub loss: f64,
}

/// Greedy evaluation taken during training.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPoint {
    pub env_steps: usize,
    /// Fraction of episodes that finished the subtask with no violation.
    pub success_rate: f64,
    pub mean_return: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MaskStats {
    pub masked_steps: usize,
    /// Steps taken with an empty mask, using its fallback action.
    pub fallback_steps: usize,
    /// Executed actions outside a non-empty mask; always zero.
    pub noncompliant_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    pub curve: Vec<CurveRow>,
    pub evals: Vec<EvalPoint>,
    pub records: Vec<TransitionRecord>,
    /// Mask rank in force at each recorded step.
    pub mask_ranks: Vec<Option<usize>>,
    pub mask_stats: MaskStats,
    pub violations: usize,
}

impl TrainOutput {
    /// First evaluation step at which the success rate reached `threshold`.
    pub fn steps_to(&self, threshold: f64) -> Option<usize> {
        self.evals.iter().find(|e| e.success_rate >= threshold).map(|e| e.env_steps)
    }
}

/// Trains `learner` on `task` for `cfg.total_steps` environment steps with
/// ε-greedy exploration, one fresh plus `cfg.batch_size` replayed
/// transitions per update, and periodic greedy evaluation.
pub fn train<E: DiscreteEnv + ?Sized>(
    env: &E,
    learner: &mut Learner,
    task: &Subtask,
    cfg: &TrainConfig,
) -> Result<TrainOutput, RlError> {
    cfg.validate()?;
    learner.controller.check_env(env)?;
    if task.horizon == 0 {
        return Err(RlError::InvalidConfig("horizon must be positive".into()));
    }
    let mut rng = Rng::seed_from_u64(cfg.seed);
    let eval_starts = eval_starts(env, &task.initial, cfg)?;
    let mut replay = ReplayBuffer::new(cfg.replay_capacity);
    let mut out = TrainOutput {
        curve: Vec::new(),
        evals: Vec::new(),
        records: Vec::new(),
        mask_ranks: Vec::new(),
        mask_stats: MaskStats::default(),
        violations: 0,
    };
    let rank = task.mask.as_ref().map(|(r, _)| *r);
    let mut t = 0;
    while t < cfg.total_steps {
        let mut s = reset(env, &task.initial, &mut rng)?;
        let (mut ret, mut violations, mut loss_sum, mut updates) = (0.0, 0, 0.0, 0);
        let mut success = false;
        let epsilon = cfg.epsilon.at(t);
        for k in 0..task.horizon {
            let eps = cfg.epsilon.at(t);
            let m = task.mask_at(s);
            let a = learner.controller.act(env, s, m.as_ref(), eps, &mut rng);
            if let Some(m) = &m {
                out.mask_stats.masked_steps += 1;
                if m.is_empty() {
                    out.mask_stats.fallback_steps += 1;
                } else if !m.allows(a) {
                    out.mask_stats.noncompliant_steps += 1;
                }
            }
            let next = env.successor(s, a, &mut rng);
            let violated = (task.violation)(s, next);
            let base = (task.reward)(s, a, next);
            let r = if task.penalize { super::wrap_penalty(base, violated, cfg.penalty_lambda) } else { base };
            let reached = (task.done)(next);
            let terminated = reached || env.is_absorbing(next);
            let record = TransitionRecord {
                state: s,
                action: a,
                reward: r,
                next_state: next,
                terminated,
                truncated: !terminated && k + 1 == task.horizon,
                active_node: task.node,
            };
            let item = ReplayItem { record: record.clone(), next_mask: if terminated { None } else { task.mask_at(next) } };
            let mut batch = vec![item.clone()];
            batch.extend(replay.sample(cfg.batch_size, &mut rng));
            replay.push(item);
            loss_sum += learner.train_step(env, &batch)?;
            updates += 1;
            out.records.push(record);
            out.mask_ranks.push(rank);
            ret += r;
            violations += violated as usize;
            t += 1;
            if cfg.eval_every > 0 && t % cfg.eval_every == 0 {
                let (success_rate, mean_return) = evaluate_subtask(env, learner, task, &eval_starts, cfg.seed, cfg.mode);
                out.evals.push(EvalPoint { env_steps: t, success_rate, mean_return });
            }
            s = next;
            if terminated {
                success = reached && violations == 0;
                break;
            }
            if t >= cfg.total_steps {
                break;
            }
        }
        out.violations += violations;
        out.curve.push(CurveRow {
            env_steps: t,
            episode_return: ret,
            success,
            violations,
            epsilon,
            loss: if updates > 0 { loss_sum / updates as f64 } else { 0.0 },
        });
    }
    Ok(out)
}

fn eval_starts<E: DiscreteEnv + ?Sized>(
    env: &E,
    initial: &InitialSampler,
    cfg: &TrainConfig,
) -> Result<Vec<StateId>, RlError> {
    let support: Vec<StateId> = match initial {
        InitialSampler::Fixed(s) => vec![*s],
        InitialSampler::Uniform(set) => set.clone(),
        InitialSampler::Base => env.base_states().to_vec(),
    };
    if support.is_empty() {
        return Err(RlError::Env(crate::envs::EnvError::EmptySampler));
    }
    if support.len() <= cfg.eval_episodes {
        return Ok(support);
    }
    let mut rng = split_rng(cfg.seed, u64::MAX);
    Ok(support.choose_multiple(&mut rng, cfg.eval_episodes).copied().collect())
}

/// Greedy rollouts of the learner's controller from each start; returns
/// the success rate and the mean unpenalized return.
pub fn evaluate_subtask<E: DiscreteEnv + ?Sized>(
    env: &E,
    learner: &Learner,
    task: &Subtask,
    starts: &[StateId],
    seed: u64,
    mode: ExecMode,
) -> (f64, f64) {
    let results = mode.map_range(starts.len(), |k| {
        let mut rng = split_rng(seed, k as u64);
        let mut s = starts[k];
        let mut ret = 0.0;
        let mut clean = true;
        for _ in 0..task.horizon {
            let m = task.mask_at(s);
            let a = learner.controller.act(env, s, m.as_ref(), 0.0, &mut rng);
            let next = env.successor(s, a, &mut rng);
            clean &= !(task.violation)(s, next);
            ret += (task.reward)(s, a, next);
            s = next;
            if (task.done)(s) {
                return (clean, ret);
            }
            if env.is_absorbing(s) {
                break;
            }
        }
        (false, ret)
    });
    let n = results.len().max(1) as f64;
    let wins = results.iter().filter(|r| r.0).count() as f64;
    (wins / n, results.iter().map(|r| r.1).sum::<f64>() / n)
}

pub fn write_learning_curve_csv<W: Write>(rows: &[CurveRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "env_steps,episode_return,success,violations,epsilon,loss")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.env_steps, r.episode_return, r.success as u8, r.violations, r.epsilon, r.loss
        )?;
    }
    Ok(())
}

pub fn write_eval_csv<W: Write>(points: &[EvalPoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "env_steps,success_rate,mean_return")?;
    for p in points {
        writeln!(out, "{},{},{}", p.env_steps, p.success_rate, p.mean_return)?;
    }
    Ok(())
}
