//! Serve teleoperation on ws://127.0.0.1:8701 and save finished sessions.
//!
//! cargo run --example teleop_server -- [save_dir]
//!
//! Any WebSocket client can drive it, e.g. with websocat:
//!   {"type":"start","seed":3}
//!   {"type":"action","code":1}     tilt toward +y, held until the next action
//!   {"type":"action","code":0}
//!   {"type":"save"}                after the episode ends

use std::path::PathBuf;

use regrasp::teleop::{teleop_env_config, ServeOptions, TeleopServer, DEFAULT_PORT};
use regrasp::EnvConfig;

fn main() -> regrasp::Result<()> {
    let save_dir = std::env::args().nth(1).map_or_else(|| PathBuf::from("teleop"), PathBuf::from);
    let opts = ServeOptions {
        env: teleop_env_config(&EnvConfig::default()),
        save_dir,
    };
    let server = TeleopServer::bind(("127.0.0.1", DEFAULT_PORT), opts)?;
    println!("listening on ws://{}", server.local_addr());
    server.run()
}
