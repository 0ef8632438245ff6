//! Generate the canonical demonstrations, check them, and replay one.
//!
//! cargo run --example scripted_expert -- [n] [out.jsonl]

use std::path::PathBuf;

use regrasp::demos::{generate_demos, replay, validate_text, ScriptedExpert};
use regrasp::env::success_rate;
use regrasp::EnvConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(6, |s| s.parse().expect("n"));
    let out = args.next().map_or_else(|| PathBuf::from("demos.jsonl"), PathBuf::from);
    let cfg = EnvConfig::default();

    let rate = success_rate(&mut ScriptedExpert::new(&cfg), &cfg, 100, 0)?;
    println!("expert success over 100 goals: {rate:.2}");

    let set = generate_demos(&cfg, n, 0)?;
    set.save(&out)?;
    println!(
        "{} demos, mean length {:.1} steps, {} discarded -> {}",
        set.count(),
        set.mean_len(),
        set.failures,
        out.display()
    );

    let report = validate_text(&std::fs::read_to_string(&out)?, &cfg);
    println!("valid: {} ({} records)", report.is_ok(), report.records);
    let (dev, outcome) = replay(&set.trajectories[0], &cfg)?;
    println!("replay of the first demo: {outcome:?}, max deviation {dev:e} m");
    Ok(())
}
