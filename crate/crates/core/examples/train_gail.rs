//! GAIL: the discriminator's opinion is the only reward the policy sees.
//!
//! cargo run --release --example train_gail -- [episodes] [seed] [literal]
//!
//! Pass `literal` to descend the discriminator loss exactly as written
//! instead of the default non-saturating form, and watch it stall.

use regrasp::demos::generate_demos;
use regrasp::env::success_fraction;
use regrasp::harness::eval_seed;
use regrasp::imitation::{train_gail, DiscObjective, GailConfig};
use regrasp::policy::{evaluate_policy, EvalMode};
use regrasp::EnvConfig;

fn main() -> regrasp::Result<()> {
    let mut args = std::env::args().skip(1);
    let episodes: usize = args.next().map_or(500, |s| s.parse().expect("episodes"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let objective = match args.next().as_deref() {
        Some("literal") => DiscObjective::Literal,
        _ => DiscObjective::NonSaturating,
    };
    let cfg = EnvConfig::default();
    let demos = generate_demos(&cfg, 6, 0)?;
    let gail = GailConfig {
        disc_objective: objective,
        ..GailConfig::default()
    };

    let (out, _disc) = train_gail(&cfg, &demos, &gail, episodes, seed)?;
    println!("  ep   env return  surrogate  D loss  D acc  rolling");
    for row in out.curve.rows.iter().step_by(50) {
        let [loss, acc, surrogate] = [row.extra[0], row.extra[1], row.extra[2]];
        println!(
            "{:4} {:12.1} {:10.2} {:7.3} {:6.2} {:8.2}",
            row.episode, row.return_raw, surrogate, loss, acc, row.success_rolling_50
        );
    }
    let logs = evaluate_policy(&out.policy, EvalMode::Sample, &cfg, 50, eval_seed(seed))?;
    println!("eval success {:.2} (best checkpoint from episode {:?})", success_fraction(&logs), out.best_episode);
    Ok(())
}
