//! Runs the `pcbt` binary end to end.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pcbt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcbt")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/configs")
}

/// A copy of the warehouse config with a short training budget.
fn quick_config(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(configs().join("warehouse.toml")).unwrap();
    let text = text
        .replace("total_steps = 100000", "total_steps = 3000")
        .replace("eval_every = 5000", "eval_every = 1000")
        .replace("episodes = 1000", "episodes = 50")
        .replace("../trees/fig1.bt", configs().join("../trees/fig1.bt").to_str().unwrap());
    let path = dir.join("quick.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn missing_config_names_the_path() {
    let o = pcbt(&["train", "--config", "missing.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.toml"), "{}", stderr(&o));
}

#[test]
fn config_flag_is_required() {
    let o = pcbt(&["regions"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--config"));
}

#[test]
fn unknown_flags_and_subcommands_print_usage() {
    for args in [&["train", "--bogus"][..], &["frobnicate"][..]] {
        let o = pcbt(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    }
}

#[test]
fn help_exits_cleanly() {
    let o = pcbt(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("regions"));
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "seed = \"zero\"\n").unwrap();
    let o = pcbt(&["regions", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.toml"));
}

#[test]
fn eval_without_training_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let out = dir.path().join("runs");
    let o = pcbt(&["eval", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train"));
}

#[test]
fn regions_lists_the_four_convergence_sets() {
    let o = pcbt(&["regions", "--config", configs().join("warehouse.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    for leaf in ["MoveToItem", "Grasp", "MoveToGoal", "Place"] {
        assert!(text.contains(&format!("C_{leaf}")), "missing C_{leaf} in\n{text}");
    }
    assert!(text.contains("S_0"));
}

#[test]
fn oracle_passes_on_the_warehouse() {
    let o = pcbt(&["oracle", "--config", configs().join("warehouse.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
}

#[test]
fn train_eval_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let out = dir.path().join("runs");
    let common = ["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "3"];
    let run = |cmd: &str| {
        let mut args = vec![cmd];
        args.extend(common);
        let o = pcbt(&args);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", stderr(&o));
        o
    };
    run("train");
    let seed = out.join("seed3");
    for f in ["config.snapshot", "cbtrl/logs/lineage.json", "cbtrl/estimators/rank2.bin", "btrl/controllers/Move.bin"] {
        assert!(seed.join(f).is_file(), "missing {f}");
    }

    run("eval");
    let first = std::fs::read(seed.join("report.csv")).unwrap();
    let first_txt = std::fs::read(seed.join("report.txt")).unwrap();
    run("eval");
    assert_eq!(std::fs::read(seed.join("report.csv")).unwrap(), first);
    assert_eq!(std::fs::read(seed.join("report.txt")).unwrap(), first_txt);
    let csv = String::from_utf8(first).unwrap();
    for row in ["cbtrl", "btrl", "bt_penalty", "btrl_pc", "bt_penalty_pc"] {
        assert!(csv.lines().any(|l| l.starts_with(&format!("{row},"))), "no {row} row in\n{csv}");
    }

    run("plot");
    let plots: Vec<String> = std::fs::read_dir(out.join("plots"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(plots.iter().any(|p| p.starts_with("curve_rank")), "{plots:?}");
    for p in &plots {
        let svg = std::fs::read_to_string(out.join("plots").join(p)).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"), "{p}");
    }
}
