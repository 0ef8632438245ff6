pub mod config;
pub mod curves;
pub mod demos;
pub mod env;
pub mod error;
pub mod harness;
pub mod imitation;
pub mod nn;
pub mod physics;
pub mod policy;
pub mod ppo;
pub mod teleop;

pub use config::EnvConfig;
pub use env::{Action, Observation, Outcome, Policy, RegraspEnv, Transition};
pub use error::{Error, Result};
pub use nn::{AdamConfig, NetGrad, NetParams};
pub use physics::{ObjectSpec, PhysicsConfig, Shape, SimState};
