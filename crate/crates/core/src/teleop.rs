//! Human teleoperation over WebSocket.
//!
//! Each connection owns one [`Session`]: an environment stepped at a fixed
//! tick rate while the last commanded wrist action is held between
//! messages. Finished episodes can be saved in the demonstration file format.
//!
//! Client → server (JSON text frames):
//!
//! ```text
//! {"type":"start","config":{"object.mu":0.5},"seed":3}   config and seed optional
//! {"type":"action","code":1}                               0 stop, 1 tilt +, 2 tilt -
//! {"type":"save"}
//! {"type":"reset"}
//! ```
//!
//! Server → client:
//!
//! ```text
//! {"type":"state","tick":0,"obs":[w,o,g,r],"theta":..,"y":..,"g_p":..,"outcome":"running"}
//! {"type":"saved","path":"..."}
//! {"type":"error","msg":"..."}
//! ```

use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use tungstenite::handshake::server::{Request, Response};
use tungstenite::{Message, WebSocket};

use crate::config::{unknown_keys, EnvConfig, ENV_KEYS};
use crate::demos::{DemoSource, TrajRecord, Trajectory, TrajectoryHeader};
use crate::env::{Action, Outcome, RegraspEnv};
use crate::error::{Error, Result};

pub const DEFAULT_PORT: u16 = 8701;
pub const TELEOP_CONTROL_DT: f64 = 0.02;

/// The training environment re-timed for a human operator (50 Hz).
pub fn teleop_env_config(base: &EnvConfig) -> EnvConfig {
    EnvConfig {
        control_dt_s: TELEOP_CONTROL_DT,
        ..base.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMsg {
    Start {
        #[serde(default)]
        config: Option<serde_json::Map<String, serde_json::Value>>,
        #[serde(default)]
        seed: Option<u64>,
    },
    Action {
        code: i64,
    },
    Save,
    Reset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMsg {
    State {
        tick: usize,
        obs: [f64; 4],
        theta: f64,
        y: f64,
        g_p: f64,
        outcome: Outcome,
    },
    Saved {
        path: String,
    },
    Error {
        msg: String,
    },
}

impl ServerMsg {
    pub fn error(msg: impl Into<String>) -> Self {
        ServerMsg::Error { msg: msg.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Idle,
    Running,
    Finished,
}

/// Apply flat dotted overrides such as `{"object.mu": 0.5}` to `base`.
pub fn config_overrides(
    base: &EnvConfig,
    overrides: &serde_json::Map<String, serde_json::Value>,
) -> Result<EnvConfig> {
    let mut text = base.to_kv_string();
    let mut table: toml::Table = text.parse()?;
    for (key, value) in overrides {
        if !ENV_KEYS.contains(&key.as_str()) {
            return Err(Error::InvalidConfig(format!("unknown config key {key:?}")));
        }
        let v: toml::Value = serde_json::from_value(value.clone())
            .map_err(|e| Error::InvalidConfig(format!("{key}: {e}")))?;
        match key.split_once('.') {
            Some((outer, inner)) => {
                table
                    .entry(outer)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .expect("object keys form a table")
                    .insert(inner.to_string(), v);
            }
            None => {
                table.insert(key.clone(), v);
            }
        }
    }
    debug_assert!(unknown_keys(&table, ENV_KEYS).is_empty());
    text = toml::to_string(&table).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let cfg = EnvConfig::from_kv_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// One operator's episode state. Transport-free: the server feeds it text
/// frames and clock ticks.
#[derive(Debug)]
pub struct Session {
    id: String,
    base: EnvConfig,
    save_dir: PathBuf,
    env: Option<RegraspEnv>,
    phase: Phase,
    held: Action,
    seed: u64,
    next_seed: u64,
    records: Vec<TrajRecord>,
    saves: usize,
}

impl Session {
    pub fn new(id: impl Into<String>, base: EnvConfig, save_dir: impl Into<PathBuf>) -> Self {
        Session {
            id: id.into(),
            base,
            save_dir: save_dir.into(),
            env: None,
            phase: Phase::Idle,
            held: Action::Stop,
            seed: 0,
            next_seed: 0,
            records: Vec::new(),
            saves: 0,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn tick_count(&self) -> usize {
        self.records.len()
    }

    pub fn held_action(&self) -> Action {
        self.held
    }

    pub fn env(&self) -> Option<&RegraspEnv> {
        self.env.as_ref()
    }

    pub fn tick_period(&self) -> Duration {
        let dt = self.env.as_ref().map_or(self.base.control_dt_s, |e| e.config().control_dt_s);
        Duration::from_secs_f64(dt)
    }

    fn state_msg(&self) -> ServerMsg {
        let env = self.env.as_ref().expect("state only exists once started");
        let st = env.state();
        ServerMsg::State {
            tick: env.tick(),
            obs: env.last_observation().to_array(),
            theta: st.theta,
            y: st.y,
            g_p: env.goal(),
            outcome: env.outcome(),
        }
    }

    fn begin(&mut self, cfg: EnvConfig, seed: Option<u64>) -> Result<ServerMsg> {
        let mut env = RegraspEnv::new(cfg)?;
        self.seed = seed.unwrap_or(self.next_seed);
        self.next_seed = self.seed.wrapping_add(1);
        env.reset(self.seed);
        self.env = Some(env);
        self.phase = Phase::Running;
        self.held = Action::Stop;
        self.records.clear();
        Ok(self.state_msg())
    }

    /// Handle one text frame; every frame gets exactly one reply.
    pub fn handle_text(&mut self, text: &str) -> ServerMsg {
        let msg: ClientMsg = match serde_json::from_str(text) {
            Ok(m) => m,
            Err(e) => {
                let kind = serde_json::from_str::<serde_json::Value>(text)
                    .ok()
                    .and_then(|v| v.get("type").and_then(|t| t.as_str()).map(str::to_string));
                return ServerMsg::error(match kind {
                    Some(t) if !["start", "action", "save", "reset"].contains(&t.as_str()) => {
                        format!("unknown message type {t:?}")
                    }
                    _ => format!("malformed message: {e}"),
                });
            }
        };
        self.handle(msg).unwrap_or_else(|e| ServerMsg::error(e.to_string()))
    }

    pub fn handle(&mut self, msg: ClientMsg) -> Result<ServerMsg> {
        match msg {
            ClientMsg::Start { config, seed } => {
                let cfg = match config {
                    Some(o) => config_overrides(&self.base, &o)?,
                    None => self.base.clone(),
                };
                self.begin(cfg, seed)
            }
            ClientMsg::Reset => {
                let cfg = self.env.as_ref().map_or(self.base.clone(), |e| e.config().clone());
                self.begin(cfg, None)
            }
            ClientMsg::Action { code } => {
                let action = usize::try_from(code)
                    .ok()
                    .and_then(|c| Action::from_index(c).ok())
                    .ok_or(Error::InvalidAction(code))?;
                match self.phase {
                    Phase::Idle => Err(Error::Precondition("no episode running; send start".into())),
                    Phase::Finished => Err(Error::EpisodeFinished),
                    Phase::Running => {
                        self.held = action;
                        Ok(self.state_msg())
                    }
                }
            }
            ClientMsg::Save => match self.phase {
                Phase::Finished => {
                    let path = self.save()?;
                    Ok(ServerMsg::Saved {
                        path: path.display().to_string(),
                    })
                }
                _ => Err(Error::Precondition(
                    "only finished episodes can be saved".into(),
                )),
            },
        }
    }

    /// Advance one control tick with the held action. Returns the new state,
    /// or `None` when no episode is running.
    pub fn tick(&mut self) -> Result<Option<ServerMsg>> {
        if self.phase != Phase::Running {
            return Ok(None);
        }
        let env = self.env.as_mut().expect("running implies an env");
        let obs = env.last_observation();
        let tr = env.step(self.held)?;
        self.records.push(TrajRecord {
            t: self.records.len(),
            obs: obs.to_array(),
            action: self.held as u8,
            reward: tr.reward,
            done: tr.done,
        });
        if tr.done {
            self.phase = Phase::Finished;
        }
        Ok(Some(self.state_msg()))
    }

    /// The finished episode as a demonstration trajectory.
    pub fn trajectory(&self) -> Result<Trajectory> {
        let env = self
            .env
            .as_ref()
            .filter(|_| self.phase == Phase::Finished)
            .ok_or_else(|| Error::Precondition("no finished episode".into()))?;
        let mut header = TrajectoryHeader::new(DemoSource::Teleop, env.config(), self.seed, env.goal());
        header.session = Some(self.id.clone());
        header.timestamp = Some(
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs())
                .to_string(),
        );
        Ok(Trajectory {
            header,
            records: self.records.clone(),
        })
    }

    pub fn save(&mut self) -> Result<PathBuf> {
        let traj = self.trajectory()?;
        std::fs::create_dir_all(&self.save_dir).map_err(|e| Error::io(&self.save_dir, e))?;
        let path = self
            .save_dir
            .join(format!("teleop-{}-{}.jsonl", self.id, self.saves));
        std::fs::write(&path, traj.to_jsonl()).map_err(|e| Error::io(&path, e))?;
        self.saves += 1;
        Ok(path)
    }
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub env: EnvConfig,
    pub save_dir: PathBuf,
}

/// A bound teleop listener. [`TeleopServer::run`] blocks, serving each
/// connection on its own thread.
pub struct TeleopServer {
    listener: TcpListener,
    opts: Arc<ServeOptions>,
    sessions: Arc<AtomicU64>,
}

impl TeleopServer {
    pub fn bind(addr: impl ToSocketAddrs, opts: ServeOptions) -> Result<Self> {
        opts.env.validate()?;
        let listener = TcpListener::bind(addr)
            .map_err(|e| Error::Precondition(format!("cannot bind teleop server: {e}")))?;
        Ok(TeleopServer {
            listener,
            opts: Arc::new(opts),
            sessions: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn local_addr(&self) -> std::net::SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn run(self) -> Result<()> {
        for stream in self.listener.incoming() {
            let Ok(stream) = stream else { continue };
            let id = self.sessions.fetch_add(1, Ordering::Relaxed);
            let opts = Arc::clone(&self.opts);
            thread::spawn(move || {
                let _ = serve_connection(stream, format!("s{id}"), &opts);
            });
        }
        Ok(())
    }

    /// Serve on a background thread; returns the bound address.
    pub fn spawn(self) -> std::net::SocketAddr {
        let addr = self.local_addr();
        thread::spawn(move || self.run());
        addr
    }
}

fn serve_connection(stream: TcpStream, id: String, opts: &ServeOptions) -> Result<()> {
    stream
        .set_read_timeout(Some(Duration::from_secs(5)))
        .map_err(|e| Error::io(Path::new("socket"), e))?;
    let cors = |_: &Request, mut resp: Response| {
        resp.headers_mut()
            .insert("Access-Control-Allow-Origin", "*".parse().expect("static header"));
        Ok(resp)
    };
    let mut ws = tungstenite::accept_hdr(stream, cors)
        .map_err(|e| Error::Precondition(format!("handshake failed: {e}")))?;
    let mut session = Session::new(id, opts.env.clone(), opts.save_dir.clone());
    let mut next_tick = Instant::now();
    loop {
        let wait = next_tick
            .saturating_duration_since(Instant::now())
            .max(Duration::from_millis(1));
        ws.get_ref()
            .set_read_timeout(Some(wait))
            .map_err(|e| Error::io(Path::new("socket"), e))?;
        match ws.read() {
            Ok(Message::Text(text)) => {
                let was_running = session.phase() == Phase::Running;
                let reply = session.handle_text(&text);
                send(&mut ws, &reply)?;
                if !was_running && session.phase() == Phase::Running {
                    next_tick = Instant::now() + session.tick_period();
                }
            }
            Ok(Message::Binary(_)) => send(&mut ws, &ServerMsg::error("binary frames are not supported"))?,
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::Utf8) => send(&mut ws, &ServerMsg::error("text frame is not UTF-8"))?,
            Err(_) => return Ok(()),
        }
        if Instant::now() >= next_tick {
            if let Some(state) = session.tick()? {
                send(&mut ws, &state)?;
            }
            next_tick += session.tick_period();
            if next_tick < Instant::now() {
                next_tick = Instant::now() + session.tick_period();
            }
        }
    }
}

fn send(ws: &mut WebSocket<TcpStream>, msg: &ServerMsg) -> Result<()> {
    ws.send(Message::Text(msg.to_json()))
        .map_err(|e| Error::Precondition(format!("send failed: {e}")))
}
