//! Train once on the cuboid, then test on other shapes, frictions and masses.
//!
//! cargo run --release --example transfer_sweep -- [episodes]

use regrasp::harness::{eval_seed, sweep_policies, train, Algorithm, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let episodes: usize = std::env::args().nth(1).map_or(500, |s| s.parse().expect("episodes"));
    let cfg = ExperimentConfig {
        episodes,
        ..ExperimentConfig::default()
    };
    let demos = cfg.demo_set()?;
    let mut policies = Vec::new();
    for algo in Algorithm::ALL {
        let (out, _) = train(&cfg, algo, 0, Some(&demos))?;
        policies.push((algo, out.policy));
    }
    let report = sweep_policies(&policies, &cfg.env, &cfg.sweep, cfg.eval_mode, cfg.eval_episodes, eval_seed(0))?;
    for algo in Algorithm::ALL {
        print!("{}", report.table(algo));
    }
    std::fs::write("sweep.csv", report.to_csv())?;
    Ok(())
}
