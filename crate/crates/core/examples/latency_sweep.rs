//! Scripted-expert success as the observation lags further behind.
//!
//! cargo run --example latency_sweep

use regrasp::demos::ScriptedExpert;
use regrasp::env::{evaluate, success_fraction};
use regrasp::{EnvConfig, Outcome};

fn main() -> regrasp::Result<()> {
    println!("delay  ms  success  dropped");
    for delay in [0, 2, 3, 4, 5, 6, 8] {
        let cfg = EnvConfig::default().with_delay(delay);
        let logs = evaluate(&mut ScriptedExpert::new(&cfg), &cfg, 200, 1)?;
        let dropped = logs.iter().filter(|l| l.outcome == Outcome::Dropped).count();
        println!(
            "{delay:5} {:3}  {:7.3}  {dropped:7}",
            (delay as f64 * cfg.control_dt_s * 1e3) as u32,
            success_fraction(&logs)
        );
    }

    // Sensor noise on the observed offset, no delay.
    for sd_mm in [1.0, 3.0, 5.0] {
        let cfg = EnvConfig {
            obs_noise_sd_mm: sd_mm,
            ..EnvConfig::default()
        };
        let logs = evaluate(&mut ScriptedExpert::new(&cfg), &cfg, 200, 1)?;
        println!("noise {sd_mm} mm: success {:.3}", success_fraction(&logs));
    }
    Ok(())
}
