//! Episode metrics for composed policies, aggregated reports, and plots.

pub mod plot;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use thiserror::Error;

use crate::bt::{BehaviorTree, BtError, LeafOrdering, Predicate, Regions};
use crate::envs::{reset, DiscreteEnv, EnvError, InitialSampler, StateId};
use crate::exec::{split_rng, ExecMode};
use crate::pipeline::{rollout, ComposedPolicy, RolloutStep};

pub use plot::{
    feasibility_heatmap_svg, learning_curve_svg, trajectory_svg, CurveBundle, HeatmapGrid, PlotError, Polyline,
    TrajectoryScene,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no controller for behavior `{0}`")]
    MissingController(String),
    #[error("tree atoms differ from environment atoms")]
    AtomMismatch,
    #[error(transparent)]
    Bt(#[from] BtError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    Success,
    Timeout,
    Failure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeMetrics {
    pub steps: usize,
    pub outcome: Outcome,
    /// Violations per monitored condition.
    pub violations: BTreeMap<String, usize>,
    /// Entries into the complement of each condition, exemptions ignored.
    pub exits: BTreeMap<String, usize>,
    /// Changes of the active leaf between consecutive steps.
    pub switches: usize,
    /// Steps spent with each leaf active.
    pub dwell: BTreeMap<String, usize>,
}

/// What to monitor during evaluation.
pub struct EvalSetup<'a> {
    pub tree: &'a BehaviorTree,
    pub ordering: &'a LeafOrdering,
    /// Monitored conditions by name.
    pub conditions: Vec<(String, Predicate)>,
    /// Task success: the tree's root Success region.
    pub success: Predicate,
    convergence: Vec<Predicate>,
}

impl<'a> EvalSetup<'a> {
    pub fn new(
        tree: &'a BehaviorTree,
        ordering: &'a LeafOrdering,
        conditions: Vec<(String, Predicate)>,
    ) -> Result<Self, EvalError> {
        let regions = Regions::new(tree);
        let convergence =
            (1..=ordering.len()).map(|r| regions.convergence_set(ordering, r)).collect::<Result<Vec<_>, _>>()?;
        Ok(EvalSetup { tree, ordering, conditions, success: regions.root_success(), convergence })
    }

    /// Whether `s → next` violates `c`: `c` held and stops holding, and (for
    /// tree policies) `next` left the convergence set of the rank running
    /// in `s`, so handing over to a later rank is not counted.
    pub fn violates(&self, c: &Predicate, step: &RolloutStep, vs: u64, vn: u64) -> bool {
        if !(c.eval(vs) && !c.eval(vn)) {
            return false;
        }
        match step.decision.rank {
            Some(r) => !self.convergence[r - 1].eval(vn),
            None => true,
        }
    }
}

/// Runs one episode and scores it.
pub fn run_episode<E: DiscreteEnv + ?Sized>(
    env: &E,
    policy: &ComposedPolicy,
    setup: &EvalSetup,
    start: StateId,
    rng: &mut crate::envs::Rng,
) -> (EpisodeMetrics, Vec<RolloutStep>) {
    let success = &setup.success;
    let halt = |s: StateId| success.eval(env.valuation(s));
    let (steps, _) = rollout(env, policy, start, env.spec().horizon, &halt, rng, |_| true);
    let mut m = EpisodeMetrics {
        steps: steps.len(),
        outcome: Outcome::Timeout,
        violations: setup.conditions.iter().map(|(n, _)| (n.clone(), 0)).collect(),
        exits: setup.conditions.iter().map(|(n, _)| (n.clone(), 0)).collect(),
        switches: 0,
        dwell: BTreeMap::new(),
    };
    let mut prev_leaf = None;
    for step in &steps {
        let (vs, vn) = (env.valuation(step.state), env.valuation(step.next));
        for (name, c) in &setup.conditions {
            if setup.violates(c, step, vs, vn) {
                *m.violations.get_mut(name).expect("initialized") += 1;
            }
            if c.eval(vs) && !c.eval(vn) {
                *m.exits.get_mut(name).expect("initialized") += 1;
            }
        }
        let leaf = step.decision.active;
        if prev_leaf.is_some() && leaf.is_some() && leaf != prev_leaf {
            m.switches += 1;
        }
        prev_leaf = leaf;
        let key = leaf.map(|l| setup.tree.node_name(l)).unwrap_or_else(|| "flat".into());
        *m.dwell.entry(key).or_default() += 1;
    }
    let last = steps.last().map(|s| s.next).unwrap_or(start);
    m.outcome = if success.eval(env.valuation(last)) {
        Outcome::Success
    } else if env.is_absorbing(last) || (matches!(policy, ComposedPolicy::Tree { .. }) && steps.len() < env.spec().horizon) {
        Outcome::Failure
    } else {
        Outcome::Timeout
    };
    (m, steps)
}

/// `n` episodes from the base distribution. Episode `k` uses the ChaCha
/// stream `k` of `seed` for its start state and any environment noise.
pub fn evaluate<E: DiscreteEnv + ?Sized>(
    env: &E,
    policy: &ComposedPolicy,
    setup: &EvalSetup,
    n: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<Vec<EpisodeMetrics>, EvalError> {
    if setup.tree.atoms().names() != env.spec().atoms.names() {
        return Err(EvalError::AtomMismatch);
    }
    if let ComposedPolicy::Tree { controllers, .. } = policy {
        for name in setup.tree.controllers() {
            if !controllers.contains_key(&name) {
                return Err(EvalError::MissingController(name));
            }
        }
    }
    let results = mode.map_range(n, |k| -> Result<EpisodeMetrics, EvalError> {
        let mut rng = split_rng(seed, k as u64);
        let start = reset(env, &InitialSampler::Base, &mut rng)?;
        Ok(run_episode(env, policy, setup, start, &mut rng).0)
    });
    results.into_iter().collect()
}

/// Aggregates for one method, in column order.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodReport {
    pub method: String,
    pub episodes: usize,
    /// Mean and standard deviation of steps over successful episodes.
    pub steps_mean: f64,
    pub steps_std: f64,
    pub success_rate: f64,
    pub timeout_rate: f64,
    pub failure_rate: f64,
    /// Per condition: total violations and percent of episodes with any.
    pub violations: Vec<(String, usize, f64)>,
    pub switches_mean: f64,
    pub switches_median: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

impl MethodReport {
    pub fn from_episodes(method: &str, conditions: &[String], eps: &[EpisodeMetrics]) -> Self {
        let n = eps.len();
        let rate = |o: Outcome| if n == 0 { 0.0 } else { eps.iter().filter(|e| e.outcome == o).count() as f64 / n as f64 };
        let wins: Vec<f64> = eps.iter().filter(|e| e.outcome == Outcome::Success).map(|e| e.steps as f64).collect();
        let steps_mean = if wins.is_empty() { 0.0 } else { wins.iter().sum::<f64>() / wins.len() as f64 };
        let steps_std = if wins.is_empty() {
            0.0
        } else {
            (wins.iter().map(|x| (x - steps_mean).powi(2)).sum::<f64>() / wins.len() as f64).sqrt()
        };
        let violations = conditions
            .iter()
            .map(|c| {
                let total = eps.iter().map(|e| e.violations.get(c).copied().unwrap_or(0)).sum();
                let with = eps.iter().filter(|e| e.violations.get(c).copied().unwrap_or(0) > 0).count();
                (c.clone(), total, if n == 0 { 0.0 } else { 100.0 * with as f64 / n as f64 })
            })
            .collect();
        let switches: Vec<f64> = eps.iter().map(|e| e.switches as f64).collect();
        MethodReport {
            method: method.to_string(),
            episodes: n,
            steps_mean,
            steps_std,
            success_rate: rate(Outcome::Success),
            timeout_rate: rate(Outcome::Timeout),
            failure_rate: rate(Outcome::Failure),
            violations,
            switches_mean: if n == 0 { 0.0 } else { switches.iter().sum::<f64>() / n as f64 },
            switches_median: median(switches),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub conditions: Vec<String>,
    pub rows: Vec<MethodReport>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Text,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,episodes,steps_mean,steps_std,success_rate,timeout_rate,failure_rate");
        for c in &self.conditions {
            write!(out, ",{c}_violations,{c}_violation_pct").expect("string write");
        }
        out.push_str(",switches_mean,switches_median\n");
        for r in &self.rows {
            write!(
                out,
                "{},{},{:.4},{:.4},{:.4},{:.4},{:.4}",
                r.method, r.episodes, r.steps_mean, r.steps_std, r.success_rate, r.timeout_rate, r.failure_rate
            )
            .expect("string write");
            for (_, total, pct) in &r.violations {
                write!(out, ",{total},{pct:.2}").expect("string write");
            }
            writeln!(out, ",{:.4},{:.1}", r.switches_mean, r.switches_median).expect("string write");
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut header = vec![
            "Method".to_string(),
            "Steps to Complete".into(),
            "Success".into(),
            "Timeout".into(),
            "Failure".into(),
        ];
        header.extend(self.conditions.iter().map(|c| format!("{c} Violations # : %")));
        header.push("Switches (median)".into());
        let mut rows = vec![header];
        for r in &self.rows {
            let mut row = vec![
                r.method.clone(),
                format!("{:.1} ± {:.1}", r.steps_mean, r.steps_std),
                format!("{:.1}%", 100.0 * r.success_rate),
                format!("{:.1}%", 100.0 * r.timeout_rate),
                format!("{:.1}%", 100.0 * r.failure_rate),
            ];
            row.extend(r.violations.iter().map(|(_, t, p)| format!("{t} : {p:.2}%")));
            row.push(format!("{:.1}", r.switches_median));
            rows.push(row);
        }
        let widths: Vec<usize> =
            (0..rows[0].len()).map(|k| rows.iter().map(|r| r[k].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            let cells: Vec<String> =
                row.iter().zip(&widths).map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count()))).collect();
            writeln!(out, "| {} |", cells.join(" | ")).expect("string write");
            if i == 0 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                writeln!(out, "|-{}-|", rule.join("-|-")).expect("string write");
            }
        }
        out
    }

    pub fn emit<W: Write>(&self, format: ReportFormat, mut out: W) -> std::io::Result<()> {
        let text = match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Text => self.to_text(),
        };
        out.write_all(text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn episode(outcome: Outcome, steps: usize, v: usize, switches: usize) -> EpisodeMetrics {
        EpisodeMetrics {
            steps,
            outcome,
            violations: BTreeMap::from([("Safe".to_string(), v)]),
            exits: BTreeMap::new(),
            switches,
            dwell: BTreeMap::new(),
        }
    }

    #[test]
    fn aggregates() {
        let eps = [episode(Outcome::Success, 10, 0, 1), episode(Outcome::Success, 20, 3, 5), episode(Outcome::Timeout, 100, 1, 9)];
        let r = MethodReport::from_episodes("m", &["Safe".into()], &eps);
        assert_eq!(r.steps_mean, 15.0);
        assert_eq!(r.steps_std, 5.0);
        assert!((r.success_rate + r.timeout_rate + r.failure_rate - 1.0).abs() < 1e-12);
        assert_eq!(r.violations, vec![("Safe".to_string(), 4, 200.0 / 3.0)]);
        assert_eq!(r.switches_median, 5.0);
    }

    #[test]
    fn empty_report_is_header_only() {
        let rep = EvalReport { conditions: vec!["Safe".into()], rows: vec![] };
        assert_eq!(rep.to_csv().lines().count(), 1);
        let one = EvalReport {
            conditions: vec!["Safe".into()],
            rows: vec![MethodReport::from_episodes("m", &["Safe".into()], &[episode(Outcome::Failure, 3, 0, 0)])],
        };
        assert_eq!(one.to_csv().lines().count(), 2);
        assert!(one.to_text().contains("0 : 0.00%"));
    }
}
