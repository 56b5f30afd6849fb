//! Exhaustive cross-checks of the tabular feasibility solver against the
//! brute-force oracles on the shipped enumerable instances.

use pcbt::bt::fixtures::{fig1_tree, goal2d_tree};
use pcbt::bt::{derive_ordering, BehaviorTree, OrderingPattern, Regions};
use pcbt::envs::{DiscreteEnv, Goal2dParams, Grid2d, StateId, Warehouse, WarehouseParams};
use pcbt::feasibility::{make_label, mask, solve_tabular, SolveConfig};
use pcbt::oracle::{feasibility_fixed_point, viability_kernel, EnumeratedMdp};

fn all_states<E: DiscreteEnv>(env: &E) -> Vec<StateId> {
    (0..env.num_states() as StateId).collect()
}

/// Checks duality and masked invariance for every rank of `tree` on `env`.
fn check_instance<E: DiscreteEnv>(env: &E, tree: &BehaviorTree, pattern: OrderingPattern) {
    let ordering = derive_ordering(tree, pattern).unwrap();
    let regions = Regions::new(tree);
    let mdp = EnumeratedMdp::from_env(env, &all_states(env)).unwrap();
    for rank in 1..=ordering.len() {
        let c = regions.convergence_set(&ordering, rank).unwrap();
        let label = make_label(c);
        let (est, stats) = solve_tabular(env, &label, "c", &SolveConfig::default()).unwrap();
        assert!(stats.residual < 1e-9);

        let labels: Vec<f64> = mdp.valuations.iter().map(|&v| label.label(v)).collect();
        let failure: Vec<bool> = labels.iter().map(|&l| l < 0.0).collect();
        let kernel = viability_kernel(&mdp, &failure);
        let oracle_v = feasibility_fixed_point(&mdp, &labels, 0.99, 1e-13);
        let mut counterexamples = 0;
        for (k, &s) in mdp.states.iter().enumerate() {
            let v = est.value(env, s);
            assert!((-1.0..=1.0).contains(&v));
            assert!((v - oracle_v[k]).abs() < 1e-9, "rank {rank} state {s}: {v} vs {}", oracle_v[k]);
            assert_eq!(v >= 0.0, kernel[k], "rank {rank} state {s}: V = {v}");
            if v >= 0.0 {
                let m = mask(&est, env, s, 0.0);
                for (a, &ok) in m.allowed.iter().enumerate() {
                    if ok && est.value(env, mdp.states[mdp.succ[k][a]]) < 0.0 {
                        counterexamples += 1;
                    }
                }
            }
        }
        assert_eq!(counterexamples, 0, "rank {rank}");
    }
}

#[test]
fn grid_world_duality_and_invariance() {
    let env = Grid2d::new(Goal2dParams::default()).unwrap();
    check_instance(&env, &goal2d_tree(), OrderingPattern::BackwardChained);
}

#[test]
fn warehouse_duality_and_invariance() {
    let env = Warehouse::new(WarehouseParams::default()).unwrap();
    check_instance(&env, &fig1_tree(), OrderingPattern::ImplicitSequence);
}

#[test]
fn slope_is_infeasible() {
    let env = Grid2d::new(Goal2dParams::default()).unwrap();
    let tree = goal2d_tree();
    let ordering = derive_ordering(&tree, OrderingPattern::BackwardChained).unwrap();
    let c = Regions::new(&tree).convergence_set(&ordering, 2).unwrap();
    let (est, _) = solve_tabular(&env, &make_label(c), "c", &SolveConfig::default()).unwrap();
    let mut slope_states = 0;
    for s in all_states(&env) {
        if env.valuation(s) & 0b100 != 0 {
            slope_states += 1;
            assert!(est.value(&env, s) < 0.0);
        }
    }
    assert!(slope_states > 0);
}
