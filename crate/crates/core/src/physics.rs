//! One-degree-of-freedom sliding of a rigid object along a tilting palm.
//!
//! The object is a point mass constrained to the palm's long axis. Gravity
//! pulls it along the axis with `g·sinθ`; Coulomb friction resists with at
//! most `μ·g·cosθ`. Static and kinetic coefficients are the same. Mass cancels
//! out of the acceleration, so it only travels along as metadata.
//!
//! Integration is semi-implicit Euler (velocity first, then position) at a
//! fixed physics substep. A velocity that friction would push through zero
//! inside one substep is captured to exactly zero, so an object decelerating
//! on a sub-threshold slope comes to rest instead of chattering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRAVITY: f64 = 9.81;
/// Wrist rotation limit in radians.
pub const THETA_MAX: f64 = 0.88;
pub const DEFAULT_DT_PHYSICS: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Cuboid,
    Cylinder,
    Hammer,
}

impl Shape {
    pub fn as_str(self) -> &'static str {
        match self {
            Shape::Cuboid => "cuboid",
            Shape::Cylinder => "cylinder",
            Shape::Hammer => "hammer",
        }
    }

    /// Number of dimensions expected in [`ObjectSpec::dims_mm`].
    pub fn dim_count(self) -> usize {
        match self {
            Shape::Cuboid | Shape::Hammer => 3,
            Shape::Cylinder => 2,
        }
    }
}

impl std::str::FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cuboid" => Ok(Shape::Cuboid),
            "cylinder" => Ok(Shape::Cylinder),
            "hammer" => Ok(Shape::Hammer),
            other => Err(Error::InvalidConfig(format!(
                "unknown shape {other:?} (expected cuboid, cylinder or hammer)"
            ))),
        }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Physical description of the grasped object.
///
/// `dims_mm` is `[length, breadth, height]` for cuboids and hammers and
/// `[radius, height]` for cylinders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub dims_mm: Vec<f64>,
    pub mass_g: f64,
    pub mu: f64,
}

impl ObjectSpec {
    pub fn new(shape: Shape, dims_mm: Vec<f64>, mass_g: f64, mu: f64) -> Result<Self> {
        let spec = ObjectSpec {
            shape,
            dims_mm,
            mass_g,
            mu,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The cuboid every policy is trained on: 180×40×30 mm, 156 g, μ = 0.3.
    pub fn training_cuboid() -> Self {
        ObjectSpec {
            shape: Shape::Cuboid,
            dims_mm: vec![180.0, 40.0, 30.0],
            mass_g: 156.0,
            mu: 0.3,
        }
    }

    /// Cylinder used in the friction/mass transfer grid (r = 15 mm, h = 200 mm).
    pub fn sweep_cylinder(mass_g: f64, mu: f64) -> Self {
        ObjectSpec {
            shape: Shape::Cylinder,
            dims_mm: vec![15.0, 200.0],
            mass_g,
            mu,
        }
    }

    /// Catalogue rows of the physical test objects. The hammer is a single
    /// body carrying the combined handle and head mass.
    pub fn catalogue() -> Vec<(&'static str, ObjectSpec)> {
        vec![
            (
                "hammer",
                ObjectSpec {
                    shape: Shape::Hammer,
                    dims_mm: vec![270.0, 24.0, 17.0],
                    mass_g: 47.5 + 207.5,
                    mu: 0.3,
                },
            ),
            (
                "cuboid",
                ObjectSpec {
                    shape: Shape::Cuboid,
                    dims_mm: vec![320.0, 40.0, 20.0],
                    mass_g: 161.3,
                    mu: 0.3,
                },
            ),
            (
                "cylinder",
                ObjectSpec {
                    shape: Shape::Cylinder,
                    dims_mm: vec![11.0, 300.0],
                    mass_g: 125.7,
                    mu: 0.3,
                },
            ),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass_g.is_finite() && self.mass_g > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "object mass must be > 0 g, got {}",
                self.mass_g
            )));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "friction coefficient must be >= 0, got {}",
                self.mu
            )));
        }
        if self.dims_mm.len() != self.shape.dim_count() {
            return Err(Error::InvalidConfig(format!(
                "{} needs {} dimensions, got {}",
                self.shape,
                self.shape.dim_count(),
                self.dims_mm.len()
            )));
        }
        if let Some(d) = self.dims_mm.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "object dimensions must be > 0 mm, got {d}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsConfig {
    pub g: f64,
    pub dt_physics: f64,
    pub theta_max: f64,
    /// Meters.
    pub drop_radius: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            g: GRAVITY,
            dt_physics: DEFAULT_DT_PHYSICS,
            theta_max: THETA_MAX,
            drop_radius: 0.200,
        }
    }
}

impl PhysicsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_physics.is_finite() && self.dt_physics > 0.0) {
            return Err(Error::InvalidConfig("dt_physics must be > 0".into()));
        }
        if !(self.drop_radius.is_finite() && self.drop_radius > 0.0) {
            return Err(Error::InvalidConfig("drop_radius must be > 0".into()));
        }
        if !(self.theta_max.is_finite() && self.theta_max > 0.0) {
            return Err(Error::InvalidConfig("theta_max must be > 0".into()));
        }
        Ok(())
    }
}

/// Palm and object state. `theta` is the wrist angle, `y` the object
/// center's offset along the palm axis (meters), `v` its velocity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SimState {
    pub theta: f64,
    pub y: f64,
    pub v: f64,
    pub grasped: bool,
    pub dropped: bool,
}

impl SimState {
    fn check_finite(&self) -> Result<()> {
        if !self.theta.is_finite() {
            return Err(Error::NonFinite("state.theta"));
        }
        if !self.y.is_finite() {
            return Err(Error::NonFinite("state.y"));
        }
        if !self.v.is_finite() {
            return Err(Error::NonFinite("state.v"));
        }
        Ok(())
    }
}

/// Tilt angle at which a resting object starts to slide: `atan(μ)`.
pub fn slide_threshold(mu: f64) -> f64 {
    mu.atan()
}

/// True if an object at rest stays put at this tilt.
#[inline]
pub fn holds_static(theta: f64, mu: f64) -> bool {
    theta.abs().tan() <= mu
}

/// Acceleration along the palm axis while sliding in direction `dir` (±1).
#[inline]
fn sliding_accel(theta: f64, mu: f64, dir: f64, g: f64) -> f64 {
    g * (theta.sin() - dir * mu * theta.cos())
}

/// Advance the object by one physics substep. The wrist angle is not
/// touched. A grasped object is frozen.
pub fn substep(state: &SimState, spec: &ObjectSpec, cfg: &PhysicsConfig) -> Result<SimState> {
    state.check_finite()?;
    if state.theta.abs() > cfg.theta_max {
        return Err(Error::Precondition(format!(
            "|theta| = {} exceeds the wrist limit {}",
            state.theta.abs(),
            cfg.theta_max
        )));
    }
    if state.grasped {
        return Ok(SimState { v: 0.0, ..*state });
    }

    let mut next = *state;
    if state.v == 0.0 && holds_static(state.theta, spec.mu) {
        return Ok(next);
    }

    // Friction opposes the motion, or the impending motion when at rest.
    let dir = if state.v != 0.0 {
        state.v.signum()
    } else {
        state.theta.signum()
    };
    let a = sliding_accel(state.theta, spec.mu, dir, cfg.g);
    let mut v = state.v + a * cfg.dt_physics;
    if state.v != 0.0 && v * state.v < 0.0 {
        v = 0.0;
    }
    next.v = v;
    next.y = state.y + v * cfg.dt_physics;
    Ok(next)
}

/// Closed-form motion from rest under a constant tilt: `(½·a·t², a·t)`, or
/// `(0, 0)` when friction holds the object.
pub fn integrate_constant_tilt(
    theta: f64,
    spec: &ObjectSpec,
    duration: f64,
    cfg: &PhysicsConfig,
) -> Result<(f64, f64)> {
    let a = constant_tilt_accel(theta, spec, cfg)?;
    Ok((0.5 * a * duration * duration, a * duration))
}

/// Closed form of `steps` semi-implicit Euler substeps from rest under a
/// constant tilt. Differs from [`integrate_constant_tilt`] by exactly
/// `½·a·dt·t`, the first-order discretization offset.
pub fn integrate_constant_tilt_discrete(
    theta: f64,
    spec: &ObjectSpec,
    steps: u64,
    cfg: &PhysicsConfig,
) -> Result<(f64, f64)> {
    let a = constant_tilt_accel(theta, spec, cfg)?;
    let n = steps as f64;
    let dt = cfg.dt_physics;
    Ok((a * dt * dt * n * (n + 1.0) * 0.5, a * dt * n))
}

fn constant_tilt_accel(theta: f64, spec: &ObjectSpec, cfg: &PhysicsConfig) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::NonFinite("theta"));
    }
    if theta.abs() > cfg.theta_max {
        return Err(Error::Precondition(format!(
            "|theta| = {} exceeds the wrist limit {}",
            theta.abs(),
            cfg.theta_max
        )));
    }
    if holds_static(theta, spec.mu) {
        return Ok(0.0);
    }
    Ok(sliding_accel(theta, spec.mu, theta.signum(), cfg.g))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_mu(mu: f64) -> ObjectSpec {
        ObjectSpec {
            mu,
            ..ObjectSpec::training_cuboid()
        }
    }

    fn at_rest(theta: f64) -> SimState {
        SimState {
            theta,
            ..SimState::default()
        }
    }

    #[test]
    fn threshold_values() {
        assert_eq!(slide_threshold(0.0), 0.0);
        assert!((slide_threshold(1.0) - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert!((slide_threshold(0.3) - 0.29146).abs() < 1e-5);
    }

    #[test]
    fn level_palm_is_static() {
        let cfg = PhysicsConfig::default();
        for mu in [0.0, 0.3, 1.0] {
            let s = at_rest(0.0);
            assert_eq!(substep(&s, &spec_mu(mu), &cfg).unwrap(), s);
        }
    }

    #[test]
    fn below_threshold_is_static() {
        let s = at_rest(0.2);
        let next = substep(&s, &spec_mu(0.3), &PhysicsConfig::default()).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn first_substep_above_threshold() {
        let s = at_rest(0.4);
        let next = substep(&s, &spec_mu(0.3), &PhysicsConfig::default()).unwrap();
        assert!((next.v - 1.109_511_432_697_371e-3).abs() < 1e-15);
        assert!((next.y - 1.109_511_432_697_371e-6).abs() < 1e-18);
        assert_eq!(next.theta, 0.4);
    }

    #[test]
    fn negative_tilt_slides_toward_negative_y() {
        let next = substep(&at_rest(-0.4), &spec_mu(0.3), &PhysicsConfig::default()).unwrap();
        assert!(next.v < 0.0 && next.y < 0.0);
    }

    #[test]
    fn stiction_capture_on_level_palm() {
        let cfg = PhysicsConfig::default();
        let s = SimState {
            v: 1e-4,
            ..SimState::default()
        };
        // 2.943 m/s² of friction removes 1e-4 m/s well within one substep.
        let next = substep(&s, &spec_mu(0.3), &cfg).unwrap();
        assert_eq!(next.v, 0.0);
        assert_eq!(next.y, 0.0);
        assert_eq!(substep(&next, &spec_mu(0.3), &cfg).unwrap(), next);
    }

    #[test]
    fn grasped_object_is_frozen() {
        let s = SimState {
            theta: 0.8,
            y: 0.01,
            grasped: true,
            ..SimState::default()
        };
        assert_eq!(substep(&s, &spec_mu(0.0), &PhysicsConfig::default()).unwrap(), s);
    }

    #[test]
    fn rejects_bad_state() {
        let cfg = PhysicsConfig::default();
        let spec = spec_mu(0.3);
        let nan = SimState {
            y: f64::NAN,
            ..SimState::default()
        };
        assert!(matches!(substep(&nan, &spec, &cfg), Err(Error::NonFinite(_))));
        assert!(matches!(
            substep(&at_rest(0.9), &spec, &cfg),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn constant_tilt_examples() {
        let cfg = PhysicsConfig::default();
        let spec = spec_mu(0.3);
        assert_eq!(integrate_constant_tilt(0.29, &spec, 1.0, &cfg).unwrap(), (0.0, 0.0));
        let (y, _) = integrate_constant_tilt(0.4, &spec, 0.268, &cfg).unwrap();
        assert!((y - 0.039_844_774_571).abs() < 1e-9);
        assert!(integrate_constant_tilt(std::f64::consts::FRAC_PI_2, &spec, 1.0, &cfg).is_err());
    }

    #[test]
    fn object_spec_validation() {
        assert!(ObjectSpec::new(Shape::Cuboid, vec![1.0, 2.0, 3.0], 10.0, 0.3).is_ok());
        assert!(ObjectSpec::new(Shape::Cuboid, vec![1.0, 2.0], 10.0, 0.3).is_err());
        assert!(ObjectSpec::new(Shape::Cylinder, vec![1.0, 2.0], 0.0, 0.3).is_err());
        assert!(ObjectSpec::new(Shape::Cylinder, vec![1.0, 2.0], 1.0, -0.1).is_err());
        assert!(ObjectSpec::new(Shape::Cylinder, vec![1.0, -2.0], 1.0, 0.1).is_err());
        for (_, spec) in ObjectSpec::catalogue() {
            spec.validate().unwrap();
        }
        assert_eq!("Cylinder".parse::<Shape>().unwrap(), Shape::Cylinder);
    }
}
