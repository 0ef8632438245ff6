//! Backprop against central finite differences for the three network shapes.
//!
//! cargo run --release --example gradient_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regrasp::nn::{gradient_check, NetParams};

fn main() -> regrasp::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (name, input, output) in [("policy", 4, 3), ("value", 4, 1), ("discriminator", 7, 1)] {
        let net = NetParams::mlp(input, output, &mut rng);
        let x: Vec<f64> = (0..input).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let up: Vec<f64> = (0..output).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = gradient_check(&net, &x, &up, 1e-5)?;
        println!(
            "{name:14} {} params  max rel err {:.2e}  ({} checked, {} skipped at ReLU kinks)",
            net.param_count(),
            c.max_rel_err,
            c.checked,
            c.skipped
        );
    }
    Ok(())
}
