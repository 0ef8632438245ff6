use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use regrasp::harness::{self, Algorithm, ExperimentConfig};
use regrasp::policy::EvalMode;
use regrasp::teleop::{self, ServeOptions, TeleopServer};

#[derive(Parser)]
#[command(name = "regrasp", version, about = "Sliding re-grasp simulator and trainers")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    delay_ticks: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one or more seeds and write run directories.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        algo: Option<Algorithm>,
    },
    /// Evaluate a saved policy.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// sample (default) or greedy.
        #[arg(long)]
        mode: Option<EvalMode>,
    },
    /// Generate scripted demonstrations (--episodes is the count).
    Demos {
        #[command(flatten)]
        common: Common,
    },
    /// Train or reuse one policy per algorithm and evaluate the transfer grid.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Merge the learning curves of several run directories.
    Curves {
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "curves_merged.csv")]
        out: PathBuf,
    },
    /// Serve teleoperation sessions over WebSocket.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = teleop::DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

fn load(common: &Common) -> regrasp::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(d) = common.delay_ticks {
        cfg.env.obs_delay_ticks = d;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> regrasp::Result<()> {
    match cli.cmd {
        Cmd::Train { common, algo } => {
            let mut cfg = load(&common)?;
            if let Some(a) = algo {
                cfg.algorithm = a;
            }
            if let Some(e) = common.episodes {
                cfg.episodes = e;
            }
            for r in harness::cmd_train(&cfg)? {
                println!(
                    "{} seed {}: eval success {:.2} -> {}",
                    r.algorithm,
                    r.seed,
                    r.success,
                    r.dir.display()
                );
            }
        }
        Cmd::Eval {
            common,
            checkpoint,
            mode,
        } => {
            let cfg = load(&common)?;
            let n = common.episodes.unwrap_or(cfg.eval_episodes);
            let (rate, logs) = harness::cmd_eval(
                &checkpoint,
                &cfg.env,
                mode.unwrap_or(cfg.eval_mode),
                n,
                cfg.seeds[0],
                common.out.as_deref(),
            )?;
            println!("success {rate:.3} over {} episodes", logs.len());
        }
        Cmd::Demos { common } => {
            let cfg = load(&common)?;
            let n = common.episodes.unwrap_or(cfg.demos);
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("demos.jsonl"));
            let set = harness::cmd_demos(&cfg.env, n, cfg.seeds[0], &out)?;
            println!(
                "{} demos, mean length {:.1}, {} failed attempts -> {}",
                set.count(),
                set.mean_len(),
                set.failures,
                out.display()
            );
        }
        Cmd::Sweep { common } => {
            let mut cfg = load(&common)?;
            if let Some(e) = common.episodes {
                cfg.episodes = e;
            }
            let report = harness::cmd_sweep(&cfg)?;
            for a in Algorithm::ALL {
                print!("{}", report.table(a));
            }
        }
        Cmd::Curves { runs, out } => {
            harness::cmd_curves(&runs, &out)?;
            println!("merged {} runs -> {}", runs.len(), out.display());
        }
        Cmd::Serve { common, port, host } => {
            let cfg = load(&common)?;
            let opts = ServeOptions {
                env: teleop::teleop_env_config(&cfg.env),
                save_dir: common.out.clone().unwrap_or_else(|| PathBuf::from("teleop")),
            };
            let server = TeleopServer::bind((host.as_str(), port), opts)?;
            println!("teleop listening on ws://{}", server.local_addr());
            server.run()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
