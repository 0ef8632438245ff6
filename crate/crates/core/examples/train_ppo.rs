//! PPO from the environment reward alone.
//!
//! cargo run --release --example train_ppo -- [episodes] [seed]

use regrasp::harness::eval_seed;
use regrasp::env::success_fraction;
use regrasp::policy::{evaluate_policy, EvalMode};
use regrasp::ppo::{train_ppo, PpoConfig};
use regrasp::EnvConfig;

fn main() -> regrasp::Result<()> {
    let mut args = std::env::args().skip(1);
    let episodes: usize = args.next().map_or(500, |s| s.parse().expect("episodes"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let cfg = EnvConfig::default();

    let out = train_ppo(&cfg, &PpoConfig::default(), episodes, seed)?;
    for row in out.curve.rows.iter().step_by(50) {
        println!(
            "ep {:4}  return {:10.1}  rolling success {:.2}",
            row.episode, row.return_raw, row.success_rolling_50
        );
    }
    let logs = evaluate_policy(&out.policy, EvalMode::Sample, &cfg, 50, eval_seed(seed))?;
    println!("eval success {:.2}", success_fraction(&logs));
    out.policy.net.save(std::path::Path::new("ppo_policy.rgnn"))?;
    Ok(())
}
