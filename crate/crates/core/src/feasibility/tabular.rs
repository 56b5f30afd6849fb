use serde::{Deserialize, Serialize};

use super::{EstimatorStore, FeasibilityError, FeasibilityEstimator, LabelFunction};
use crate::envs::{DiscreteEnv, Rng};
use crate::exec::ExecMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub gamma: f64,
    /// Stop once the sup-norm change of one sweep drops below this.
    pub tol: f64,
    pub max_sweeps: usize,
    pub mode: ExecMode,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig { gamma: 0.99, tol: 1e-10, max_sweeps: 100_000, mode: ExecMode::Parallel }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveStats {
    pub sweeps: usize,
    pub residual: f64,
}

fn rng() -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(0)
}

/// Solves the discounted reach-avoid fixed point over every state of a
/// deterministic environment by synchronous sweeps starting from `Q = l`.
pub fn solve_tabular<E: DiscreteEnv + ?Sized>(
    env: &E,
    label: &LabelFunction,
    constraint: &str,
    cfg: &SolveConfig,
) -> Result<(FeasibilityEstimator, SolveStats), FeasibilityError> {
    if !env.is_deterministic() {
        return Err(FeasibilityError::NonDeterministic);
    }
    if !(cfg.gamma > 0.0 && cfg.gamma < 1.0) || cfg.tol <= 0.0 {
        return Err(FeasibilityError::InvalidConfig("gamma must lie in (0, 1) and tol be positive".into()));
    }
    let n = env.num_states();
    let na = env.spec().action_count();
    let labels: Vec<f64> = cfg.mode.map_range(n, |s| label.label(env.valuation(s as u32)));
    let succ: Vec<u32> = cfg.mode.map_range(n * na, |k| {
        env.successor((k / na) as u32, k % na, &mut rng())
    });
    let g = cfg.gamma;
    let mut q: Vec<f64> = (0..n * na).map(|k| labels[k / na]).collect();
    let mut v: Vec<f64> = labels.clone();
    let mut stats = SolveStats { sweeps: 0, residual: f64::INFINITY };
    while stats.sweeps < cfg.max_sweeps {
        let chunk = na * 512;
        let q_prev = q.clone();
        cfg.mode.for_each_chunk_mut(&mut q, chunk, |start, out| {
            for (k, slot) in out.iter_mut().enumerate() {
                let idx = start + k;
                let l = labels[idx / na];
                *slot = (1.0 - g) * l + g * l.min(v[succ[idx] as usize]);
            }
        });
        let residual = cfg
            .mode
            .map_range(n, |s| {
                (0..na).map(|a| (q[s * na + a] - q_prev[s * na + a]).abs()).fold(0.0, f64::max)
            })
            .into_iter()
            .fold(0.0, f64::max);
        v = cfg.mode.map_range(n, |s| q[s * na..(s + 1) * na].iter().copied().fold(f64::NEG_INFINITY, f64::max));
        stats.sweeps += 1;
        stats.residual = residual;
        if residual < cfg.tol {
            let est = FeasibilityEstimator {
                constraint: constraint.to_string(),
                gamma: g,
                store: EstimatorStore::Tabular { num_states: n, num_actions: na, q },
                provenance: format!("tabular fixed point, {} sweeps", stats.sweeps),
            };
            return Ok((est, stats));
        }
    }
    Err(FeasibilityError::NoConvergence { iterations: stats.sweeps, residual: stats.residual })
}

/// Sup-norm residual of the Bellman equation for a tabular estimator.
pub fn bellman_residual<E: DiscreteEnv + ?Sized>(
    env: &E,
    label: &LabelFunction,
    est: &FeasibilityEstimator,
) -> f64 {
    let g = est.gamma;
    let na = env.spec().action_count();
    let mut worst: f64 = 0.0;
    for s in 0..env.num_states() as u32 {
        let l = label.label(env.valuation(s));
        let row = est.q_row(env, s);
        for (a, q) in row.iter().enumerate().take(na) {
            let next = env.successor(s, a, &mut rng());
            let target = (1.0 - g) * l + g * l.min(est.value(env, next));
            worst = worst.max((q - target).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bt::Predicate;
    use crate::envs::ForcedChain;

    #[test]
    fn chain_values() {
        let env = ForcedChain::new(3, 1);
        let label = super::super::make_label(Predicate::atom(0));
        let cfg = SolveConfig { gamma: 0.9, ..Default::default() };
        let (est, stats) = solve_tabular(&env, &label, "ok", &cfg).unwrap();
        let v: Vec<f64> = (0..3).map(|s| est.value(&env, s)).collect();
        for (got, want) in v.iter().zip([-0.62, -0.8, -1.0]) {
            assert!((got - want).abs() < 1e-9, "{v:?}");
        }
        assert!(stats.residual < 1e-9);
        assert!(bellman_residual(&env, &label, &est) < 1e-9);
    }

    #[test]
    fn absorbing_states_keep_their_label() {
        let env = ForcedChain::new(3, 1);
        let all_ok = super::super::make_label(Predicate::True);
        let (est, _) = solve_tabular(&env, &all_ok, "all", &SolveConfig::default()).unwrap();
        for s in 0..3 {
            assert_eq!(est.value(&env, s), 1.0);
        }
    }

    #[test]
    fn rejects_bad_gamma() {
        let env = ForcedChain::new(3, 1);
        let label = super::super::make_label(Predicate::atom(0));
        let cfg = SolveConfig { gamma: 1.0, ..Default::default() };
        assert!(matches!(
            solve_tabular(&env, &label, "x", &cfg),
            Err(FeasibilityError::InvalidConfig(_))
        ));
    }
}
