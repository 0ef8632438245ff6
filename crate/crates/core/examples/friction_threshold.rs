//! Where the object starts to slide, and how far it goes in one second.
//!
//! cargo run --example friction_threshold

use regrasp::physics::{integrate_constant_tilt, slide_threshold, substep};
use regrasp::{ObjectSpec, PhysicsConfig, SimState};

fn main() -> regrasp::Result<()> {
    let cfg = PhysicsConfig::default();
    for mu in [0.1, 0.3, 0.5] {
        let spec = ObjectSpec::sweep_cylinder(150.0, mu);
        let onset = slide_threshold(mu);
        println!("mu {mu}: slides above {onset:.4} rad ({:.1} deg)", onset.to_degrees());
        for theta in [onset - 0.01, onset + 0.01, onset + 0.1, 0.88] {
            let mut s = SimState { theta, ..Default::default() };
            for _ in 0..1000 {
                s = substep(&s, &spec, &cfg)?;
            }
            let (exact, _) = integrate_constant_tilt(theta, &spec, 1.0, &cfg)?;
            println!("  theta {theta:.3}: y after 1 s {:8.2} mm (closed form {:8.2} mm)", s.y * 1e3, exact * 1e3);
        }
    }
    Ok(())
}
