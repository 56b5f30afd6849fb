//! Command-line front end. `main` only forwards to [`run`].
//!
//! Runs live under `<out>/seed<N>/`: one directory per method plus the
//! config snapshot and evaluation reports. Plots go to `<out>/plots/` and
//! aggregate every seed directory found under `<out>`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::bt::Regions;
use crate::config::{Config, ConfigError, EnvKind, Setup};
use crate::envs::{DiscreteEnv, Grid2d, InitialSampler, StateId};
use crate::eval::plot::{
    feasibility_heatmap_svg, learning_curve_svg, trajectory_svg, CurveBundle, HeatmapGrid, Polyline, TrajectoryScene,
};
use crate::eval::{evaluate, EvalReport, EvalSetup, MethodReport, ReportFormat};
use crate::exec::split_rng;
use crate::feasibility::{make_label, solve_tabular};
use crate::oracle::{check_feasibility, operating_sets_by_tick};
use crate::pipeline::{apply_posthoc_mask, rollout, Method, SavedRun};

#[derive(Parser, Debug)]
#[command(name = "pcbt", version, about = "Train and evaluate progress-constrained behavior-tree controllers")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train every configured method and save the artifacts.
    Train,
    /// Evaluate saved runs and write report.csv and report.txt.
    Eval,
    /// Render learning curves, trajectories and feasibility heatmaps.
    Plot {
        #[arg(long, value_enum, default_value_t = PlotKind::All)]
        kind: PlotKind,
    },
    /// Cross-check the region calculus and the feasibility solver against
    /// brute-force oracles.
    Oracle,
    /// Print influence, operating and convergence sets of every behavior.
    Regions,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum PlotKind {
    All,
    LearningCurve,
    Trajectory,
    Heatmap,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Runs the CLI and returns the process exit code: 0 on success, 1 on a
/// usage or configuration error, 2 when the command itself fails.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(Failure::Config(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
        Err(Failure::Runtime(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            2
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<(), Failure> {
    let path = cli.config.ok_or_else(|| Failure::Config("--config PATH is required".into()))?;
    let mut cfg = Config::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = cli.out {
        cfg.out = dir;
    }
    let setup = cfg.build()?;
    match cli.command {
        Command::Train => train(&cfg, &setup, out),
        Command::Eval => eval(&cfg, &setup, out),
        Command::Plot { kind } => plot(&cfg, &setup, kind, out),
        Command::Oracle => oracle(&cfg, &setup, out),
        Command::Regions => regions(&setup, out),
    }
}

fn seed_dir(cfg: &Config) -> PathBuf {
    cfg.out.join(format!("seed{}", cfg.seed))
}

fn say(out: &mut dyn Write, line: String) -> Result<(), Failure> {
    writeln!(out, "{line}").map_err(runtime)
}

fn train(cfg: &Config, setup: &Setup, out: &mut dyn Write) -> Result<(), Failure> {
    let dir = seed_dir(cfg);
    std::fs::create_dir_all(&dir).map_err(runtime)?;
    std::fs::write(dir.join("config.snapshot"), cfg.snapshot()).map_err(runtime)?;
    let exp = setup.experiment(cfg.seed, cfg);
    for method in cfg.methods() {
        let art = exp.run(method).map_err(runtime)?;
        art.save(setup.env.as_ref(), &dir.join(method.name()), cfg.save_datasets).map_err(runtime)?;
        for r in &art.ranks {
            let last = r.output.evals.last().map(|e| e.success_rate).unwrap_or(0.0);
            say(
                out,
                format!(
                    "{}: rank {} {}: {} transitions, {} violations, final success {:.2}",
                    method.name(),
                    r.rank,
                    r.label,
                    r.output.records.len(),
                    r.output.violations,
                    last
                ),
            )?;
        }
    }
    say(out, format!("artifacts written to {}", dir.display()))
}

fn eval(cfg: &Config, setup: &Setup, out: &mut dyn Write) -> Result<(), Failure> {
    let dir = seed_dir(cfg);
    let env = setup.env.as_ref();
    let names: Vec<String> = setup.conditions.iter().map(|(n, _)| n.clone()).collect();
    let es = EvalSetup::new(&setup.tree, &setup.ordering, setup.conditions.clone()).map_err(runtime)?;
    let mut report = EvalReport { conditions: names.clone(), rows: Vec::new() };
    let mut posthoc = None;
    for method in cfg.methods() {
        let mdir = dir.join(method.name());
        if !mdir.is_dir() {
            return Err(Failure::Runtime(format!("no trained artifacts at {} (run `train` first)", mdir.display())));
        }
        let saved = SavedRun::load(env, &mdir, method, setup.ordering.len()).map_err(runtime)?;
        let policy = saved.policy(&setup.tree, &setup.ordering, cfg.eval.epsilon).map_err(runtime)?;
        let eps = evaluate(env, &policy, &es, cfg.eval.episodes, cfg.eval.seed, cfg.eval.mode).map_err(runtime)?;
        report.rows.push(MethodReport::from_episodes(method.name(), &names, &eps));
        if cfg.eval.posthoc && matches!(method, Method::Btrl | Method::BtPenalty) {
            if posthoc.is_none() {
                posthoc = Some(setup.experiment(cfg.seed, cfg).posthoc_masks().map_err(runtime)?);
            }
            let masks = posthoc.as_ref().expect("just computed");
            let policy = apply_posthoc_mask(&setup.tree, &setup.ordering, &saved.controllers, masks, cfg.eval.epsilon)
                .map_err(runtime)?;
            let eps = evaluate(env, &policy, &es, cfg.eval.episodes, cfg.eval.seed, cfg.eval.mode).map_err(runtime)?;
            report.rows.push(MethodReport::from_episodes(&format!("{}_pc", method.name()), &names, &eps));
        }
    }
    for (file, format) in [("report.csv", ReportFormat::Csv), ("report.txt", ReportFormat::Text)] {
        let f = std::fs::File::create(dir.join(file)).map_err(runtime)?;
        report.emit(format, std::io::BufWriter::new(f)).map_err(runtime)?;
    }
    write!(out, "{}", report.to_text()).map_err(runtime)
}

/// Seed directories under `out`, sorted by seed.
fn seed_dirs(out: &Path) -> Vec<PathBuf> {
    let mut dirs: Vec<(u64, PathBuf)> = std::fs::read_dir(out)
        .into_iter()
        .flatten()
        .flatten()
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().to_string();
            let seed = name.strip_prefix("seed")?.parse().ok()?;
            e.path().is_dir().then(|| (seed, e.path()))
        })
        .collect();
    dirs.sort();
    dirs.into_iter().map(|(_, p)| p).collect()
}

/// `(env_steps, success_rate)` pairs from an evaluation log.
fn read_eval_log(path: &Path) -> Result<Vec<(f64, f64)>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            let parse = |k: usize| cols.get(k).and_then(|c| c.parse::<f64>().ok());
            match (parse(0), parse(1)) {
                (Some(x), Some(y)) => Ok((x, y)),
                _ => Err(Failure::Runtime(format!("{}: malformed row `{l}`", path.display()))),
            }
        })
        .collect()
}

fn slug(label: &str) -> String {
    label.replace(|c: char| !c.is_ascii_alphanumeric(), "_")
}

fn plot(cfg: &Config, setup: &Setup, kind: PlotKind, out: &mut dyn Write) -> Result<(), Failure> {
    let plots = cfg.out.join("plots");
    std::fs::create_dir_all(&plots).map_err(runtime)?;
    let mut written = Vec::new();
    let grid = match cfg.env.kind {
        EnvKind::Goal2d => Some(Grid2d::new(cfg.env.goal2d.clone()).map_err(runtime)?),
        EnvKind::Warehouse => None,
    };
    if matches!(kind, PlotKind::All | PlotKind::LearningCurve) {
        let seeds = seed_dirs(&cfg.out);
        if seeds.is_empty() {
            return Err(Failure::Runtime(format!("no seed directories under {}", cfg.out.display())));
        }
        for (k, &leaf) in setup.ordering.leaves().iter().enumerate() {
            let label = setup.tree.node_name(leaf);
            let file = format!("eval_rank{}_{}.csv", k + 1, slug(&label));
            let mut bundles = Vec::new();
            for method in cfg.methods().into_iter().filter(|m| *m != Method::StandardRl) {
                let logs: Vec<Vec<(f64, f64)>> = seeds
                    .iter()
                    .map(|d| d.join(method.name()).join("logs").join(&file))
                    .filter(|p| p.exists())
                    .map(|p| read_eval_log(&p))
                    .collect::<Result<_, _>>()?;
                let len = logs.iter().map(|l| l.len()).min().unwrap_or(0);
                if len == 0 {
                    continue;
                }
                bundles.push(CurveBundle {
                    label: method.name().to_string(),
                    xs: logs[0][..len].iter().map(|p| p.0).collect(),
                    runs: logs.iter().map(|l| l[..len].iter().map(|p| p.1).collect()).collect(),
                });
            }
            if bundles.is_empty() {
                continue;
            }
            let max = bundles.iter().flat_map(|b| b.xs.last().copied()).fold(0.0, f64::max);
            let split = (max > 1e5).then_some(1e5);
            let svg = learning_curve_svg(&bundles, split, &format!("{label} success rate")).map_err(runtime)?;
            let name = format!("curve_rank{}_{}.svg", k + 1, slug(&label));
            std::fs::write(plots.join(&name), svg).map_err(runtime)?;
            written.push(name);
        }
    }
    if let (Some(grid), true) = (&grid, matches!(kind, PlotKind::All | PlotKind::Trajectory)) {
        let dir = seed_dir(cfg);
        let prm = grid.world().params();
        let mut scene = TrajectoryScene {
            rects: vec![
                (prm.unsafe_region.lo, prm.unsafe_region.hi, "#d62728".into(), "unsafe".into()),
                (prm.slope.lo, prm.slope.hi, "#ff9896".into(), "slope".into()),
            ],
            goal: (prm.goal, prm.goal_radius),
            paths: Vec::new(),
        };
        let start = {
            let mut rng = split_rng(cfg.eval.seed, 0);
            crate::envs::reset(grid, &InitialSampler::Base, &mut rng).map_err(runtime)?
        };
        for method in cfg.methods() {
            let mdir = dir.join(method.name());
            if !mdir.is_dir() {
                continue;
            }
            let saved = SavedRun::load(grid, &mdir, method, setup.ordering.len()).map_err(runtime)?;
            let policy = saved.policy(&setup.tree, &setup.ordering, 0.0).map_err(runtime)?;
            let mut rng = split_rng(cfg.eval.seed, 1);
            let success = EvalSetup::new(&setup.tree, &setup.ordering, Vec::new()).map_err(runtime)?.success;
            let halt = |s: StateId| success.eval(grid.valuation(s));
            let (steps, _) = rollout(grid, &policy, start, grid.spec().horizon, &halt, &mut rng, |_| true);
            let mut points = vec![grid.state(start).pos()];
            points.extend(steps.iter().map(|s| grid.state(s.next).pos()));
            scene.paths.push(Polyline { label: method.name().to_string(), points });
        }
        if !scene.paths.is_empty() {
            std::fs::write(plots.join("trajectories.svg"), trajectory_svg(&scene).map_err(runtime)?).map_err(runtime)?;
            written.push("trajectories.svg".into());
        }
    }
    if let (Some(grid), true) = (&grid, matches!(kind, PlotKind::All | PlotKind::Heatmap)) {
        let regions = Regions::new(&setup.tree);
        let [nx, ny, nvx, nvy] = grid.resolution();
        for rank in 1..=setup.ordering.len() {
            let c = regions.convergence_set(&setup.ordering, rank).map_err(runtime)?;
            let (est, _) = solve_tabular(grid, &make_label(c), &format!("C_{rank}"), &cfg.feasibility.solve)
                .map_err(runtime)?;
            let values: Vec<f64> = (0..ny)
                .flat_map(|j| (0..nx).map(move |i| (i, j)))
                .map(|(i, j)| est.value(grid, grid.index([i, j, nvx / 2, nvy / 2])))
                .collect();
            if values.iter().all(|&v| v >= 0.0) {
                continue;
            }
            let label = setup.ordering.leaf_at(rank).map(|l| setup.tree.node_name(l)).unwrap_or_default();
            let svg = feasibility_heatmap_svg(
                &HeatmapGrid { nx, ny, values },
                &format!("max_u Q for C_{rank} ({label}), zero velocity"),
            )
            .map_err(runtime)?;
            let name = format!("feasibility_rank{rank}.svg");
            std::fs::write(plots.join(&name), svg).map_err(runtime)?;
            written.push(name);
        }
    }
    for name in written {
        say(out, format!("wrote {}", plots.join(name).display()))?;
    }
    Ok(())
}

fn oracle(cfg: &Config, setup: &Setup, out: &mut dyn Write) -> Result<(), Failure> {
    let regions = Regions::new(&setup.tree);
    let by_tick = operating_sets_by_tick(&setup.tree);
    let all = setup.tree.atoms().all_valuations();
    let mut failed = false;
    for &leaf in setup.ordering.leaves() {
        let op = regions.operating(leaf).map_err(runtime)?;
        let from_tick = &by_tick[&leaf];
        let mismatches = all.iter().filter(|&&v| op.eval(v) != from_tick.contains(&v)).count();
        failed |= mismatches > 0;
        say(
            out,
            format!("regions {}: {} valuations, {} tick mismatches", setup.tree.node_name(leaf), from_tick.len(), mismatches),
        )?;
    }
    let checks = check_feasibility(setup.env.as_ref(), &setup.tree, &setup.ordering, &cfg.feasibility.solve)
        .map_err(runtime)?;
    for c in &checks {
        failed |= !c.passes(1e-9);
        say(
            out,
            format!(
                "feasibility rank {} {}: {} states, {} infeasible, max |V - oracle| {:.1e}, {} kernel mismatches, {} invariance counterexamples",
                c.rank, c.leaf, c.states, c.infeasible, c.max_value_error, c.kernel_mismatches, c.invariance_counterexamples
            ),
        )?;
    }
    if failed {
        Err(Failure::Runtime("oracle checks failed".into()))
    } else {
        say(out, "all oracle checks passed".into())
    }
}

fn regions(setup: &Setup, out: &mut dyn Write) -> Result<(), Failure> {
    let regions = Regions::new(&setup.tree);
    let atoms = setup.tree.atoms();
    let env = setup.env.as_ref();
    let count = |p: &crate::bt::Predicate| {
        (0..env.num_states() as StateId).filter(|&s| p.eval(env.valuation(s))).count()
    };
    for (k, &leaf) in setup.ordering.leaves().iter().enumerate() {
        let name = setup.tree.node_name(leaf);
        let i = regions.influence(leaf).map_err(runtime)?;
        let o = regions.operating(leaf).map_err(runtime)?;
        let c = regions.convergence_set(&setup.ordering, k + 1).map_err(runtime)?;
        say(out, format!("rank {} {name}", k + 1))?;
        say(out, format!("  I_{name} = {}  [{} states]", i.display(atoms), count(&i)))?;
        say(out, format!("  Omega_{name} = {}  [{} states]", o.display(atoms), count(&o)))?;
        say(out, format!("  C_{name} = {}  [{} states]", c.display(atoms), count(&c)))?;
    }
    let s0 = regions.root_success();
    say(out, format!("S_0 = {}  [{} states]", s0.display(atoms), count(&s0)))
}
