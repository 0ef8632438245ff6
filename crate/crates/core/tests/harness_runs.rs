use std::path::{Path, PathBuf};
use std::process::Command;

use regrasp::curves::{check_schema, BASE_COLUMNS, BC_COLUMNS, GAIL_COLUMNS};
use regrasp::harness::{self, Algorithm, ExperimentConfig, Manifest, SWEEP_COLUMNS};
use regrasp::policy::EvalMode;
use regrasp::EnvConfig;

fn small(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        episodes: 12,
        eval_episodes: 5,
        demos: 2,
        seeds: vec![4],
        out: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Curve text with the wall-clock column blanked.
fn mask_wall(csv: &str) -> String {
    let wall = BASE_COLUMNS.iter().position(|c| *c == "wall_ms").unwrap();
    csv.lines()
        .skip(1)
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f[wall] = "-";
            f.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&read(&dir.join("manifest.json"))).unwrap()
}

#[test]
fn every_algorithm_writes_a_complete_run_dir() {
    let tmp = tempfile::tempdir().unwrap();
    for algo in Algorithm::ALL {
        let cfg = ExperimentConfig {
            algorithm: algo,
            ..small(tmp.path())
        };
        let runs = harness::cmd_train(&cfg).unwrap();
        assert_eq!(runs.len(), 1);
        let dir = &runs[0].dir;
        for f in ["manifest.json", "curves.csv", "policy_final.rgnn", "policy_best.rgnn", "eval.jsonl"] {
            assert!(dir.join(f).exists(), "{algo}: missing {f}");
        }
        assert_eq!(dir.join("demos.jsonl").exists(), algo.uses_demos());
        assert_eq!(dir.join("disc_final.rgnn").exists(), algo == Algorithm::Gail);
        assert_eq!(dir.join("value_final.rgnn").exists(), algo != Algorithm::Bc);

        let cols = check_schema(&read(&dir.join("curves.csv"))).unwrap();
        let extra: &[&str] = match algo {
            Algorithm::Gail => &GAIL_COLUMNS,
            Algorithm::Bc => &BC_COLUMNS,
            Algorithm::Ppo => &[],
        };
        let want: Vec<String> = BASE_COLUMNS.iter().chain(extra).map(|c| c.to_string()).collect();
        assert_eq!(cols, want);
        assert_eq!(read(&dir.join("curves.csv")).lines().count(), 13);

        let evals = read(&dir.join("eval.jsonl"));
        assert_eq!(evals.lines().count(), 5);
        for l in evals.lines() {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            assert!(v.get("outcome").is_some());
        }
        let m = manifest(dir);
        assert_eq!((m.algorithm, m.seed), (algo, 4));
        assert_eq!(m.eval_seed, harness::eval_seed(4));
        assert_eq!(m.env_config_hash, EnvConfig::default().config_hash());
    }

    let dirs: Vec<PathBuf> = Algorithm::ALL.iter().map(|a| tmp.path().join(format!("{a}-seed4"))).collect();
    let merged = harness::cmd_curves(&dirs, &tmp.path().join("merged.csv")).unwrap();
    let header = merged.lines().next().unwrap();
    assert!(header.starts_with("run,episode,"));
    assert_eq!(merged.lines().count(), 1 + 3 * 12);
}

#[test]
fn a_run_repeats_from_its_manifest() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for algo in Algorithm::ALL {
        let cfg = ExperimentConfig {
            algorithm: algo,
            ..small(a.path())
        };
        let first = &harness::cmd_train(&cfg).unwrap()[0].dir;
        let mut again = ExperimentConfig::load(&first.join("manifest.json")).unwrap();
        assert_eq!(again.algorithm, algo);
        again.out = b.path().to_path_buf();
        let second = &harness::cmd_train(&again).unwrap()[0].dir;

        let mut files: Vec<_> = std::fs::read_dir(first)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        files.sort();
        for f in files {
            let (p, q) = (first.join(&f), second.join(&f));
            match f.to_str().unwrap() {
                "curves.csv" => assert_eq!(mask_wall(&read(&p)), mask_wall(&read(&q))),
                "manifest.json" => {
                    let (mut m1, mut m2) = (manifest(first), manifest(second));
                    m1.wall_time_s = 0.0;
                    m2.wall_time_s = 0.0;
                    m2.config.out = m1.config.out.clone();
                    assert_eq!(m1, m2);
                }
                _ => assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap(), "{algo}: {f:?}"),
            }
        }
    }
}

#[test]
fn eval_and_demos_repeat_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path());
    let run = &harness::cmd_train(&cfg).unwrap()[0].dir;
    let ckpt = run.join("policy_final.rgnn");
    for mode in [EvalMode::Sample, EvalMode::Greedy] {
        let (p, q) = (tmp.path().join("e1.jsonl"), tmp.path().join("e2.jsonl"));
        harness::cmd_eval(&ckpt, &cfg.env, mode, 7, 9, Some(&p)).unwrap();
        harness::cmd_eval(&ckpt, &cfg.env, mode, 7, 9, Some(&q)).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }
    let (p, q) = (tmp.path().join("d1.jsonl"), tmp.path().join("d2.jsonl"));
    harness::cmd_demos(&cfg.env, 3, 2, &p).unwrap();
    harness::cmd_demos(&cfg.env, 3, 2, &q).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
}

#[test]
fn sweep_writes_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        eval_episodes: 2,
        ..small(tmp.path())
    };
    let report = harness::cmd_sweep(&cfg).unwrap();
    let csv = read(&tmp.path().join("sweep.csv"));
    assert_eq!(csv.lines().next().unwrap(), SWEEP_COLUMNS);
    assert_eq!(csv.lines().count(), 1 + 3 * 18);
    for algo in Algorithm::ALL {
        assert_eq!(report.cells_for(algo).count(), 18);
    }
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_regrasp")).args(args).output().unwrap()
}

#[test]
fn cli_runs_and_reports_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let r = cli(&["train", "--algo", "bc", "--episodes", "3", "--seed", "1", "--out", out]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let ckpt = tmp.path().join("bc-seed1/policy_final.rgnn");
    let r = cli(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--episodes", "3", "--delay-ticks", "2"]);
    assert!(r.status.success());
    assert!(String::from_utf8_lossy(&r.stdout).contains("over 3 episodes"));
    let demos = tmp.path().join("d.jsonl");
    let r = cli(&["demos", "--episodes", "2", "--out", demos.to_str().unwrap()]);
    assert!(r.status.success());
    assert_eq!(regrasp::demos::load_trajectories(&demos).unwrap().len(), 2);

    let r = cli(&["train", "--algo", "dagger"]);
    assert!(!r.status.success());
    let r = cli(&["eval", "--checkpoint", "/nonexistent.rgnn"]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).starts_with("error: "));
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "episodes = 5\nfrobnicate = 1\n").unwrap();
    let r = cli(&["train", "--config", bad.to_str().unwrap()]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("frobnicate"));
}
