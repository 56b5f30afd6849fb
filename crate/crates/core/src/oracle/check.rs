//! Solver-versus-oracle comparison over every rank of a tree.

use super::{feasibility_fixed_point, viability_kernel, EnumeratedMdp, OracleError};
use crate::bt::{BehaviorTree, LeafOrdering, Regions};
use crate::envs::{DiscreteEnv, StateId};
use crate::feasibility::{make_label, mask, solve_tabular, SolveConfig};

/// Discrepancies found for one rank. A clean rank has all counters at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct RankCheck {
    pub rank: usize,
    pub leaf: String,
    pub states: usize,
    /// States with `V < 0`.
    pub infeasible: usize,
    /// Largest `|V_solver − V_oracle|`.
    pub max_value_error: f64,
    pub bellman_residual: f64,
    /// States where `V ≥ 0` disagrees with viability-kernel membership.
    pub kernel_mismatches: usize,
    /// Feasible states with a mask-allowed action leading to an infeasible state.
    pub invariance_counterexamples: usize,
}

impl RankCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_value_error < tol && self.kernel_mismatches == 0 && self.invariance_counterexamples == 0
    }
}

/// Solves every rank's convergence set tabularly and compares the result with
/// the reach-avoid fixed point, the viability kernel and masked invariance,
/// over all states of `env`.
pub fn check_feasibility<E: DiscreteEnv + ?Sized>(
    env: &E,
    tree: &BehaviorTree,
    ordering: &LeafOrdering,
    cfg: &SolveConfig,
) -> Result<Vec<RankCheck>, OracleError> {
    let regions = Regions::new(tree);
    let all: Vec<StateId> = (0..env.num_states() as StateId).collect();
    let mdp = EnumeratedMdp::from_env(env, &all)?;
    let mut out = Vec::new();
    for rank in 1..=ordering.len() {
        let c = regions.convergence_set(ordering, rank).map_err(|e| OracleError::Shape(e.to_string()))?;
        let label = make_label(c);
        let (est, stats) =
            solve_tabular(env, &label, "check", cfg).map_err(|e| OracleError::Shape(e.to_string()))?;
        let labels: Vec<f64> = mdp.valuations.iter().map(|&v| label.label(v)).collect();
        let failure: Vec<bool> = labels.iter().map(|&l| l < 0.0).collect();
        let kernel = viability_kernel(&mdp, &failure);
        let oracle_v = feasibility_fixed_point(&mdp, &labels, cfg.gamma, 1e-13);
        let mut check = RankCheck {
            rank,
            leaf: ordering.leaf_at(rank).map(|l| tree.node_name(l)).unwrap_or_default(),
            states: mdp.len(),
            infeasible: 0,
            max_value_error: 0.0,
            bellman_residual: stats.residual,
            kernel_mismatches: 0,
            invariance_counterexamples: 0,
        };
        for (k, &s) in mdp.states.iter().enumerate() {
            let v = est.value(env, s);
            check.max_value_error = check.max_value_error.max((v - oracle_v[k]).abs());
            check.infeasible += (v < 0.0) as usize;
            check.kernel_mismatches += ((v >= 0.0) != kernel[k]) as usize;
            if v >= 0.0 {
                let m = mask(&est, env, s, 0.0);
                check.invariance_counterexamples += m
                    .allowed
                    .iter()
                    .enumerate()
                    .filter(|&(a, &ok)| ok && est.value(env, mdp.states[mdp.succ[k][a]]) < 0.0)
                    .count();
            }
        }
        out.push(check);
    }
    Ok(out)
}
