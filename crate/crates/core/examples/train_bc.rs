//! Behavior cloning on six scripted demonstrations.
//!
//! cargo run --release --example train_bc -- [epochs] [seed]

use regrasp::demos::generate_demos;
use regrasp::env::success_fraction;
use regrasp::harness::eval_seed;
use regrasp::imitation::{train_bc, BcConfig};
use regrasp::policy::{evaluate_policy, EvalMode};
use regrasp::EnvConfig;

fn main() -> regrasp::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(500, |s| s.parse().expect("epochs"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let cfg = EnvConfig::default();
    let demos = generate_demos(&cfg, 6, 0)?;
    println!("{} state-action pairs", demos.total_pairs());

    let out = train_bc(&cfg, &demos, &BcConfig::default(), epochs, seed)?;
    for row in out.curve.rows.iter().step_by(100) {
        println!("epoch {:4}  bc loss {:.4}", row.episode, row.extra[0]);
    }
    for mode in [EvalMode::Sample, EvalMode::Greedy] {
        let logs = evaluate_policy(&out.policy, mode, &cfg, 50, eval_seed(seed))?;
        println!("{mode:?} eval success {:.2}", success_fraction(&logs));
    }
    Ok(())
}
