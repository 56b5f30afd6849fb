//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Criteria 5 to 9 train on the shipped configurations in `docs/configs/`,
//! so what passes here is what `pcbt train` produces from those files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pcbt::bt::fixtures::{fig1_tree, goal2d_tree};
use pcbt::bt::{derive_ordering, parse_predicate, OrderingPattern, ReturnStatus, Regions, Valuation};
use pcbt::config::{Config, Setup};
use pcbt::envs::{DiscreteEnv, ForcedChain, Goal2dParams, Grid2d, StateId, Warehouse, WarehouseParams};
use pcbt::eval::{evaluate, EpisodeMetrics, EvalSetup, MethodReport, Outcome};
use pcbt::feasibility::{make_label, solve_tabular, SolveConfig};
use pcbt::oracle::{check_feasibility, operating_sets_by_tick, tick_oracle};
use pcbt::pipeline::{apply_posthoc_mask, Method};

/// Seeds used by the multi-seed criteria.
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
/// Tolerance for exact value comparisons.
const VALUE_TOL: f64 = 1e-9;
/// Steps-to-threshold ratio CBTRL must beat against BT-Penalty.
const EFFICIENCY_RATIO: f64 = 5.0;
const SUCCESS_THRESHOLD: f64 = 0.95;
const BTRL_MAX_SUCCESS: f64 = 0.20;
const SWITCH_FACTOR: f64 = 10.0;
const SHORTCUT_FRACTION: f64 = 0.5;
const POSTHOC_VIOLATION_FRACTION: f64 = 0.05;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn docs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/configs")
}

fn load(name: &str) -> (Config, Setup) {
    let cfg = Config::load(&docs().join(name)).expect("shipped config loads");
    let setup = cfg.build().expect("shipped config builds");
    (cfg, setup)
}

fn criterion_1() -> Verdict {
    let tree = fig1_tree();
    let ordering = derive_ordering(&tree, OrderingPattern::ImplicitSequence).unwrap();
    let regions = Regions::new(&tree);
    let by_tick = operating_sets_by_tick(&tree);
    let valuations: Vec<Valuation> = (0..1u64 << tree.atoms().len()).collect();
    let mut mismatches = 0;
    for leaf in tree.behaviors() {
        let omega = regions.operating(leaf).unwrap();
        let expected = &by_tick[&leaf];
        mismatches += valuations.iter().filter(|&&v| omega.eval(v) != expected.contains(&v)).count();
    }
    // C_i from simulation: some leaf of rank >= i runs, or the root succeeds.
    let mut previous: Option<Vec<bool>> = None;
    let mut nesting_failures = 0;
    for rank in 1..=ordering.len() {
        let c = regions.convergence_set(&ordering, rank).unwrap();
        let members: Vec<bool> = valuations.iter().map(|&v| c.eval(v)).collect();
        for (&v, &m) in valuations.iter().zip(&members) {
            let (status, active) = tick_oracle(tree.source(), v);
            let expected = match active {
                Some(leaf) => ordering.rank_of(leaf).unwrap() >= rank,
                None => status == ReturnStatus::Success,
            };
            mismatches += (m != expected) as usize;
        }
        if let Some(prev) = &previous {
            nesting_failures += members.iter().zip(prev).filter(|&(&now, &before)| now && !before).count();
        }
        previous = Some(members);
    }
    let labels: Vec<String> = ordering.leaves().iter().map(|&l| tree.node_name(l)).collect();
    let order_ok = labels == ["MoveToItem", "Grasp", "MoveToGoal", "Place"];
    verdict(
        mismatches == 0 && nesting_failures == 0 && order_ok,
        format!("{mismatches} region mismatches, {nesting_failures} nesting failures, order {labels:?}"),
    )
}

fn criterion_2() -> Verdict {
    let env = ForcedChain::new(3, 1);
    let ok = parse_predicate("ok", &env.spec().atoms).unwrap();
    let cfg = SolveConfig { gamma: 0.9, tol: 1e-13, ..Default::default() };
    let (est, stats) = solve_tabular(&env, &make_label(ok), "chain", &cfg).unwrap();
    // Listed from the absorbing failure state back to the start.
    let values: Vec<f64> = (0..3).rev().map(|s| est.value(&env, s)).collect();
    let err = values.iter().zip([-1.0, -0.8, -0.62]).map(|(v, e)| (v - e).abs()).fold(0.0, f64::max);
    verdict(
        stats.residual < VALUE_TOL && err < VALUE_TOL,
        format!("values {values:?}, max error {err:.1e}, residual {:.1e}", stats.residual),
    )
}

/// Oracle checks for both enumerable instances, shared by criteria 3 and 4.
fn oracle_checks() -> (Vec<pcbt::oracle::RankCheck>, usize, usize) {
    let grid = Grid2d::new(Goal2dParams::default()).unwrap();
    let tree = goal2d_tree();
    let ordering = derive_ordering(&tree, OrderingPattern::BackwardChained).unwrap();
    let mut checks = check_feasibility(&grid, &tree, &ordering, &SolveConfig::default()).unwrap();

    let c = Regions::new(&tree).convergence_set(&ordering, 2).unwrap();
    let (est, _) = solve_tabular(&grid, &make_label(c), "goal", &SolveConfig::default()).unwrap();
    let on_slope = parse_predicate("OnSlope", tree.atoms()).unwrap();
    let slope: Vec<StateId> =
        (0..grid.num_states() as StateId).filter(|&s| on_slope.eval(grid.valuation(s))).collect();
    let feasible_slope = slope.iter().filter(|&&s| est.value(&grid, s) >= 0.0).count();

    let wh = Warehouse::new(WarehouseParams::default()).unwrap();
    let tree = fig1_tree();
    let ordering = derive_ordering(&tree, OrderingPattern::ImplicitSequence).unwrap();
    checks.extend(check_feasibility(&wh, &tree, &ordering, &SolveConfig::default()).unwrap());
    (checks, slope.len(), feasible_slope)
}

fn criterion_3(checks: &[pcbt::oracle::RankCheck], slope: usize, feasible_slope: usize) -> Verdict {
    let mismatches: usize = checks.iter().map(|c| c.kernel_mismatches).sum();
    let value_err = checks.iter().map(|c| c.max_value_error).fold(0.0, f64::max);
    verdict(
        mismatches == 0 && value_err < VALUE_TOL && slope > 0 && feasible_slope == 0,
        format!(
            "{} ranks, {mismatches} kernel mismatches, max value error {value_err:.1e}, {feasible_slope}/{slope} slope states feasible",
            checks.len()
        ),
    )
}

fn criterion_4(checks: &[pcbt::oracle::RankCheck]) -> Verdict {
    let counter: usize = checks.iter().map(|c| c.invariance_counterexamples).sum();
    let states: usize = checks.iter().map(|c| c.states).sum();
    verdict(counter == 0, format!("{counter} counterexamples over {states} rank-states"))
}

/// What the 2D criteria need from one seed.
struct SeedResult {
    goal_unsafe_entries: usize,
    cbtrl_steps: Option<usize>,
    penalty_steps: Option<usize>,
    btrl: MethodReport,
    cbtrl: MethodReport,
    flat_successes: usize,
    flat_shortcuts: usize,
}

fn unsafe_entries(env: &dyn DiscreteEnv, safe: &pcbt::bt::Predicate, records: &[pcbt::envs::TransitionRecord]) -> usize {
    records
        .iter()
        .filter(|r| safe.eval(env.valuation(r.state)) && !safe.eval(env.valuation(r.next_state)))
        .count()
}

fn run_goal2d_seed(cfg: &Config, setup: &Setup, seed: u64) -> SeedResult {
    let env = setup.env.as_ref();
    let safe = parse_predicate("Safe", setup.tree.atoms()).unwrap();
    let names = vec!["Safe".to_string()];
    let es = EvalSetup::new(&setup.tree, &setup.ordering, vec![("Safe".into(), safe.clone())]).unwrap();
    let exp = setup.experiment(seed, cfg);
    let goal_rank = setup.ordering.len();
    let eval = |art: &pcbt::pipeline::RunArtifacts| -> Vec<EpisodeMetrics> {
        let policy = art.policy(&setup.tree, &setup.ordering, 0.0);
        evaluate(env, &policy, &es, 100, cfg.eval.seed, cfg.eval.mode).unwrap()
    };

    let art = exp.run(Method::Cbtrl).unwrap();
    let goal = &art.ranks[goal_rank - 1].output;
    let goal_unsafe_entries = unsafe_entries(env, &safe, &goal.records);
    let cbtrl_steps = goal.steps_to(SUCCESS_THRESHOLD);
    let cbtrl = MethodReport::from_episodes("cbtrl", &names, &eval(&art));
    drop(art);

    let art = exp.run(Method::BtPenalty).unwrap();
    let penalty_steps = art.ranks[goal_rank - 1].output.steps_to(SUCCESS_THRESHOLD);
    drop(art);

    let art = exp.run(Method::Btrl).unwrap();
    let btrl = MethodReport::from_episodes("btrl", &names, &eval(&art));
    drop(art);

    let art = exp.run(Method::StandardRl).unwrap();
    let eps = eval(&art);
    let wins: Vec<&EpisodeMetrics> = eps.iter().filter(|e| e.outcome == Outcome::Success).collect();
    let flat_shortcuts = wins.iter().filter(|e| e.exits["Safe"] > 0).count();
    SeedResult {
        goal_unsafe_entries,
        cbtrl_steps,
        penalty_steps,
        btrl,
        cbtrl,
        flat_successes: wins.len(),
        flat_shortcuts,
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn criterion_5(results: &[SeedResult]) -> Verdict {
    let per_seed: Vec<usize> = results.iter().map(|r| r.goal_unsafe_entries).collect();
    verdict(per_seed.iter().all(|&n| n == 0), format!("unsafe entries during Goal training per seed {per_seed:?}"))
}

fn criterion_6(results: &[SeedResult]) -> Verdict {
    // A run that never reaches the threshold counts as needing infinitely many steps.
    let steps = |f: fn(&SeedResult) -> Option<usize>| {
        median(results.iter().map(|r| f(r).map_or(f64::INFINITY, |s| s as f64)).collect())
    };
    let cbtrl = steps(|r| r.cbtrl_steps);
    let penalty = steps(|r| r.penalty_steps);
    verdict(
        cbtrl.is_finite() && cbtrl * EFFICIENCY_RATIO <= penalty,
        format!("median steps to {SUCCESS_THRESHOLD}: cbtrl {cbtrl}, bt_penalty {penalty} (ratio {:.1})", penalty / cbtrl),
    )
}

fn criterion_7(results: &[SeedResult]) -> Verdict {
    let success = median(results.iter().map(|r| r.btrl.success_rate).collect());
    let btrl_sw = median(results.iter().map(|r| r.btrl.switches_median).collect());
    let cbtrl_sw = median(results.iter().map(|r| r.cbtrl.switches_median).collect());
    let switches_ok = btrl_sw >= SWITCH_FACTOR * cbtrl_sw && btrl_sw > cbtrl_sw;
    verdict(
        success < BTRL_MAX_SUCCESS && switches_ok,
        format!(
            "btrl success median {success:.2} (per seed {:?}), median switches btrl {btrl_sw} vs cbtrl {cbtrl_sw}",
            results.iter().map(|r| r.btrl.success_rate).collect::<Vec<_>>()
        ),
    )
}

fn criterion_8(results: &[SeedResult]) -> Verdict {
    let wins: usize = results.iter().map(|r| r.flat_successes).sum();
    let shortcuts: usize = results.iter().map(|r| r.flat_shortcuts).sum();
    let frac = if wins == 0 { 0.0 } else { shortcuts as f64 / wins as f64 };
    verdict(
        wins > 0 && frac >= SHORTCUT_FRACTION,
        format!("{shortcuts}/{wins} successful standard_rl episodes entered the unsafe region"),
    )
}

fn criterion_9() -> Verdict {
    let (cfg, setup) = load("warehouse.toml");
    let env = setup.env.as_ref();
    let names: Vec<String> = setup.conditions.iter().map(|(n, _)| n.clone()).collect();
    let es = EvalSetup::new(&setup.tree, &setup.ordering, setup.conditions.clone()).unwrap();
    let exp = setup.experiment(cfg.seed, &cfg);
    let masks = exp.posthoc_masks().unwrap();
    let mut reports = BTreeMap::new();
    for method in [Method::Cbtrl, Method::BtPenalty, Method::Btrl] {
        let art = exp.run(method).unwrap();
        let policy = art.policy(&setup.tree, &setup.ordering, 0.0);
        let eps = evaluate(env, &policy, &es, cfg.eval.episodes, cfg.eval.seed, cfg.eval.mode).unwrap();
        reports.insert(method.name().to_string(), MethodReport::from_episodes(method.name(), &names, &eps));
        if method == Method::Btrl {
            let policy = apply_posthoc_mask(&setup.tree, &setup.ordering, &art.controllers, &masks, 0.0).unwrap();
            let eps = evaluate(env, &policy, &es, cfg.eval.episodes, cfg.eval.seed, cfg.eval.mode).unwrap();
            reports.insert("btrl_pc".into(), MethodReport::from_episodes("btrl_pc", &names, &eps));
        }
    }
    let have_item = |m: &str| reports[m].violations.iter().find(|v| v.0 == "HaveItem").map_or(0, |v| v.1);
    let (c, p, b, pc) = (&reports["cbtrl"], &reports["bt_penalty"], &reports["btrl"], &reports["btrl_pc"]);
    let ordering_ok = c.success_rate >= p.success_rate && p.success_rate >= b.success_rate;
    let violations_ok = (have_item("btrl_pc") as f64) < POSTHOC_VIOLATION_FRACTION * have_item("btrl") as f64;
    let timeout_ok = pc.timeout_rate > c.timeout_rate;
    verdict(
        ordering_ok && violations_ok && timeout_ok,
        format!(
            "success cbtrl {:.3} >= bt_penalty {:.3} >= btrl {:.3}; HaveItem violations btrl {} vs btrl_pc {}; timeout btrl_pc {:.3} vs cbtrl {:.3}",
            c.success_rate,
            p.success_rate,
            b.success_rate,
            have_item("btrl"),
            have_item("btrl_pc"),
            pc.timeout_rate,
            c.timeout_rate
        ),
    )
}

/// Relative path and contents of every file below `root`, sorted.
fn snapshot_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_10() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let config = docs().join("warehouse.toml");
    let mut runs = Vec::new();
    for _ in 0..2 {
        for cmd in ["train", "eval"] {
            let args = ["pcbt", cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
            let (mut so, mut se) = (Vec::new(), Vec::new());
            let code = pcbt::cli::run(args, &mut so, &mut se);
            if code != 0 {
                return verdict(false, format!("`{cmd}` exited {code}: {}", String::from_utf8_lossy(&se)));
            }
        }
        runs.push(snapshot_tree(&out));
        std::fs::remove_dir_all(&out).unwrap();
    }
    let differing: Vec<&PathBuf> = runs[0]
        .iter()
        .filter(|(path, bytes)| runs[1].get(*path) != Some(*bytes))
        .map(|(path, _)| path)
        .collect();
    let same_files = runs[0].keys().eq(runs[1].keys());
    verdict(
        same_files && differing.is_empty() && !runs[0].is_empty(),
        format!("{} files compared, {} differ {differing:?}", runs[0].len(), differing.len()),
    )
}

fn report(number: usize, limit_secs: Option<f64>, started: Instant, v: Verdict) -> bool {
    let secs = started.elapsed().as_secs_f64();
    let in_time = limit_secs.is_none_or(|l| secs < l);
    let pass = v.pass && in_time;
    let limit = limit_secs.map(|l| format!(", limit {l}s")).unwrap_or_default();
    println!("criterion {number:>2}: {} ({}) [{secs:.1}s{limit}]", if pass { "PASS" } else { "FAIL" }, v.detail);
    pass
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; only a filter
    // that excludes this target matters.
    if std::env::args().skip(1).any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut all = true;

    let t = Instant::now();
    all &= report(1, Some(1.0), t, criterion_1());
    let t = Instant::now();
    all &= report(2, Some(1.0), t, criterion_2());

    let t = Instant::now();
    let (checks, slope, feasible_slope) = oracle_checks();
    let oracle_secs = t.elapsed().as_secs_f64();
    all &= report(3, Some(300.0), t, criterion_3(&checks, slope, feasible_slope));
    // Both criteria share one exhaustive pass; each is held to the full limit.
    let t = Instant::now() - std::time::Duration::from_secs_f64(oracle_secs);
    all &= report(4, Some(300.0), t, criterion_4(&checks));

    let t = Instant::now();
    let (cfg, setup) = load("goal2d.toml");
    let results: Vec<SeedResult> = SEEDS.iter().map(|&s| run_goal2d_seed(&cfg, &setup, s)).collect();
    let per_seed = t.elapsed().as_secs_f64() / SEEDS.len() as f64;
    println!("  (2D world: {} seeds, {per_seed:.1}s per seed for all four methods)", SEEDS.len());
    let t = Instant::now();
    all &= report(5, None, t, verdict(per_seed < 900.0, "").and(criterion_5(&results)));
    all &= report(6, None, t, criterion_6(&results));
    all &= report(7, None, t, criterion_7(&results));
    all &= report(8, None, t, criterion_8(&results));

    let t = Instant::now();
    all &= report(9, Some(1800.0), t, criterion_9());
    let t = Instant::now();
    all &= report(10, None, t, criterion_10());

    if !all {
        std::process::exit(1);
    }
}

impl Verdict {
    fn and(self, other: Verdict) -> Verdict {
        let detail = if self.pass { other.detail } else { format!("{} (over the per-seed time limit)", other.detail) };
        Verdict { pass: self.pass && other.pass, detail }
    }
}
