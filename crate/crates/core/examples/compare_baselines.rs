//! Train GAIL, BC and PPO on the training cuboid and compare eval success.
//!
//! cargo run --release --example compare_baselines -- [episodes] [seed]

use std::time::Instant;

use regrasp::env::success_fraction;
use regrasp::harness::{eval_seed, train, Algorithm, ExperimentConfig};
use regrasp::policy::evaluate_policy;

fn main() -> regrasp::Result<()> {
    let mut args = std::env::args().skip(1);
    let episodes: usize = args.next().map_or(500, |s| s.parse().expect("episodes"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let cfg = ExperimentConfig {
        episodes,
        ..ExperimentConfig::default()
    };
    let demos = cfg.demo_set()?;
    for algo in Algorithm::ALL {
        let t = Instant::now();
        let (out, _) = train(&cfg, algo, seed, Some(&demos))?;
        let logs = evaluate_policy(&out.policy, cfg.eval_mode, &cfg.env, cfg.eval_episodes, eval_seed(seed))?;
        println!(
            "{algo:4} eval {:.2}  final rolling {:.2}  {:.1} s",
            success_fraction(&logs),
            out.curve.last_rolling_success(),
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
