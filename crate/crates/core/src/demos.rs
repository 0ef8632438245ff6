//! Expert demonstrations: the scripted expert, the JSONL trajectory format
//! shared by the scripted generator, the teleop bridge and both imitation
//! trainers, and validation/replay of recorded files.
//!
//! A trajectory file is one JSON object per line. The first line is a
//! header (it carries `version`), every following line is one control tick
//! `{t, obs:[4], action, reward, done}`. A demo set is several trajectories
//! concatenated; each new header line starts the next trajectory.

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::EnvConfig;
use crate::env::{Action, Observation, Outcome, Policy, RegraspEnv};
use crate::error::{Error, Result};
use crate::physics::{self, ObjectSpec};

pub const TRAJECTORY_VERSION: u32 = 1;

/// Tilt-scheduling expert.
///
/// Tilts toward the goal until the object moves, accelerates it up to a
/// cruise speed, then counter-tilts once the remaining distance drops below
/// the braking distance. Velocity is a first difference of the observed
/// offset, so the expert keeps one observation of memory.
#[derive(Debug, Clone)]
pub struct ScriptedExpert {
    tol: f64,
    dt: f64,
    slide_angle: f64,
    brake_accel: f64,
    cruise_speed: f64,
    prev_o_p: Option<f64>,
}

impl ScriptedExpert {
    /// Object speed the expert stops accelerating at, m/s.
    pub const CRUISE_SPEED: f64 = 0.08;
    /// How far below the slide angle the brake tilts, radians.
    const BRAKE_MARGIN: f64 = 0.05;

    pub fn new(cfg: &EnvConfig) -> Self {
        let mu = cfg.object.mu;
        let counter = physics::THETA_MAX;
        ScriptedExpert {
            tol: cfg.success_tol(),
            dt: cfg.control_dt_s,
            slide_angle: physics::slide_threshold(mu),
            brake_accel: physics::GRAVITY * (counter.sin() + mu * counter.cos()),
            cruise_speed: Self::CRUISE_SPEED,
            prev_o_p: None,
        }
    }

    /// Distance the object covers before stopping if braking starts now:
    /// the wrist first has to swing back under the slide angle at one step
    /// per tick, then decelerates at `brake_accel`.
    pub fn braking_distance(&self, speed: f64, tilt_toward_goal: f64) -> f64 {
        let lag_ticks = ((tilt_toward_goal - self.slide_angle) / crate::env::WRIST_STEP).max(0.0);
        speed * lag_ticks * self.dt + speed * speed / (2.0 * self.brake_accel)
    }

    /// Pure decision rule given the previous observed offset.
    pub fn decide(&self, obs: &Observation, prev_o_p: Option<f64>) -> Action {
        let err = obs.g_p - obs.o_p;
        if err.abs() <= self.tol {
            return Action::Stop;
        }
        let side = if obs.g_p >= 0.0 { 1.0 } else { -1.0 };
        let remaining = side * err;
        let speed = prev_o_p.map_or(0.0, |p| side * (obs.o_p - p) / self.dt);
        let tilt = side * obs.w_p;

        if speed > 0.0 && remaining - self.tol <= self.braking_distance(speed, tilt) {
            return if tilt > self.slide_angle - Self::BRAKE_MARGIN {
                Action::toward(-side)
            } else {
                Action::Stop
            };
        }
        if speed < self.cruise_speed && tilt < physics::THETA_MAX {
            Action::toward(side)
        } else {
            Action::Stop
        }
    }
}

impl Policy for ScriptedExpert {
    fn reset(&mut self) {
        self.prev_o_p = None;
    }

    fn act(&mut self, obs: &Observation) -> Action {
        let a = self.decide(obs, self.prev_o_p);
        self.prev_o_p = Some(obs.o_p);
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoSource {
    Scripted,
    Teleop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub version: u32,
    pub source: DemoSource,
    pub object: ObjectSpec,
    pub config_hash: String,
    pub seed: u64,
    pub goal_m: f64,
    pub control_dt_s: f64,
    pub tick_hz: f64,
    /// What the actions command: `scripted-expert` or `wrist-delta`.
    pub control: String,
    pub env: EnvConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl TrajectoryHeader {
    pub fn new(source: DemoSource, env: &EnvConfig, seed: u64, goal_m: f64) -> Self {
        TrajectoryHeader {
            version: TRAJECTORY_VERSION,
            source,
            object: env.object.clone(),
            config_hash: env.config_hash(),
            seed,
            goal_m,
            control_dt_s: env.control_dt_s,
            tick_hz: 1.0 / env.control_dt_s,
            control: match source {
                DemoSource::Scripted => "scripted-expert".into(),
                DemoSource::Teleop => "wrist-delta".into(),
            },
            env: env.clone(),
            session: None,
            timestamp: None,
        }
    }
}

/// One control tick. `action` is kept as the raw code so invalid files can
/// be reported rather than rejected at parse time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajRecord {
    pub t: usize,
    pub obs: [f64; 4],
    pub action: u8,
    pub reward: f64,
    pub done: bool,
}

impl TrajRecord {
    pub fn observation(&self) -> Observation {
        Observation::from_array(self.obs)
    }

    pub fn action(&self) -> Result<Action> {
        Action::try_from(self.action)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub header: TrajectoryHeader,
    pub records: Vec<TrajRecord>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Every `(observation, action)` pair.
    pub fn pairs(&self) -> impl Iterator<Item = (Observation, Action)> + '_ {
        self.records
            .iter()
            .filter_map(|r| r.action().ok().map(|a| (r.observation(), a)))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// The same episode reflected through `y → -y`: goal and offsets negated,
    /// actions 1 and 2 swapped.
    pub fn mirrored(&self) -> Trajectory {
        let mut header = self.header.clone();
        header.goal_m = -header.goal_m;
        let records = self
            .records
            .iter()
            .map(|r| TrajRecord {
                obs: Observation::from_array(r.obs).mirrored().to_array(),
                action: r.action().map(|a| a.mirrored() as u8).unwrap_or(r.action),
                ..*r
            })
            .collect();
        Trajectory { header, records }
    }
}

/// Parse one or more concatenated trajectories. Fails on the first
/// malformed line; use [`validate_text`] to list every problem.
pub fn parse_trajectories(text: &str) -> Result<Vec<Trajectory>> {
    let (trajs, issues) = parse_lenient(text);
    if let Some(issue) = issues.into_iter().next() {
        return Err(Error::Format {
            what: "trajectory",
            line: issue.line,
            msg: issue.msg,
        });
    }
    Ok(trajs)
}

pub fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectories(&text)
}

/// A parsed trajectory plus the source line of its header and records.
struct Located {
    traj: Trajectory,
    header_line: usize,
    record_lines: Vec<usize>,
}

fn parse_lenient(text: &str) -> (Vec<Trajectory>, Vec<Issue>) {
    let (located, issues) = parse_located(text);
    (located.into_iter().map(|l| l.traj).collect(), issues)
}

fn parse_located(text: &str) -> (Vec<Located>, Vec<Issue>) {
    let mut trajs: Vec<Located> = Vec::new();
    let mut issues = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                issues.push(Issue::new(line_no, format!("invalid JSON: {e}")));
                continue;
            }
        };
        if value.get("version").is_some() {
            match serde_json::from_value::<TrajectoryHeader>(value) {
                Ok(header) => trajs.push(Located {
                    traj: Trajectory {
                        header,
                        records: Vec::new(),
                    },
                    header_line: line_no,
                    record_lines: Vec::new(),
                }),
                Err(e) => issues.push(Issue::new(line_no, format!("bad header: {e}"))),
            }
            continue;
        }
        match serde_json::from_value::<TrajRecord>(value) {
            Ok(rec) => match trajs.last_mut() {
                Some(l) => {
                    l.traj.records.push(rec);
                    l.record_lines.push(line_no);
                }
                None => issues.push(Issue::new(line_no, "record before any header")),
            },
            Err(e) => issues.push(Issue::new(line_no, format!("bad record: {e}"))),
        }
    }
    if trajs.is_empty() && issues.is_empty() {
        issues.push(Issue::new(1, "no trajectory header found"));
    }
    (trajs, issues)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub line: usize,
    pub msg: String,
}

impl Issue {
    fn new(line: usize, msg: impl Into<String>) -> Self {
        Issue {
            line,
            msg: msg.into(),
        }
    }
}

impl std::fmt::Display for Issue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.msg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub trajectories: usize,
    pub records: usize,
    pub issues: Vec<Issue>,
    /// Every header's config hash equals the reference environment's.
    pub hash_matches: bool,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty() && self.hash_matches
    }
}

/// Check a trajectory file's text against the format invariants and against
/// `cfg`'s config hash. Every problem is reported with its line number.
pub fn validate_text(text: &str, cfg: &EnvConfig) -> ValidationReport {
    let (located, mut issues) = parse_located(text);
    let expected = cfg.config_hash();
    let hash_matches =
        !located.is_empty() && located.iter().all(|l| l.traj.header.config_hash == expected);
    let mut records = 0;
    for l in &located {
        issues.extend(check_trajectory(&l.traj, l.header_line, &l.record_lines));
        records += l.traj.records.len();
    }
    issues.sort_by_key(|i| i.line);
    issues.dedup();
    ValidationReport {
        trajectories: located.len(),
        records,
        issues,
        hash_matches,
    }
}

/// Format invariants of one in-memory trajectory, numbered as if it were
/// written to its own file.
pub fn validate_trajectory(traj: &Trajectory) -> Vec<Issue> {
    let lines: Vec<usize> = (2..traj.records.len() + 2).collect();
    check_trajectory(traj, 1, &lines)
}

fn check_trajectory(traj: &Trajectory, header_line: usize, record_lines: &[usize]) -> Vec<Issue> {
    let mut issues = Vec::new();
    let h = &traj.header;
    if h.version != TRAJECTORY_VERSION {
        issues.push(Issue::new(header_line, format!("unsupported version {}", h.version)));
    }
    if let Err(e) = h.env.validate() {
        issues.push(Issue::new(header_line, e.to_string()));
    }
    if h.env.config_hash() != h.config_hash {
        issues.push(Issue::new(
            header_line,
            "config_hash does not match the embedded env config",
        ));
    }
    if h.object != h.env.object {
        issues.push(Issue::new(header_line, "object differs from env.object"));
    }
    if traj.records.is_empty() {
        issues.push(Issue::new(header_line, "trajectory has no records"));
    }
    let last = traj.records.len().saturating_sub(1);
    for (i, (r, &line)) in traj.records.iter().zip(record_lines).enumerate() {
        if r.t != i {
            issues.push(Issue::new(line, format!("t = {} but expected {i}", r.t)));
        }
        if r.action().is_err() {
            issues.push(Issue::new(
                line,
                format!("action {} is not one of 0, 1, 2", r.action),
            ));
        }
        if !r.obs.iter().all(|v| v.is_finite()) || r.obs[3] < 0.0 {
            issues.push(Issue::new(line, "observation must be finite with r_p >= 0"));
        }
        if !(r.reward.is_finite() && r.reward <= 0.0) {
            issues.push(Issue::new(line, format!("reward {} must be finite and <= 0", r.reward)));
        }
        if r.done != (i == last) {
            issues.push(Issue::new(
                line,
                if r.done {
                    "done before the final record"
                } else {
                    "final record is not done"
                },
            ));
        }
    }
    issues
}

/// Re-run the recorded actions from the recorded seed and goal. Returns the
/// largest `|o_p(recorded) - o_p(replayed)|` in meters, and the outcome the
/// replay ended with.
pub fn replay(traj: &Trajectory, cfg: &EnvConfig) -> Result<(f64, Outcome)> {
    if cfg.config_hash() != traj.header.config_hash {
        return Err(Error::ConfigHashMismatch {
            expected: cfg.config_hash(),
            found: traj.header.config_hash.clone(),
        });
    }
    if traj.records.is_empty() {
        return Err(Error::Precondition("cannot replay an empty trajectory".into()));
    }
    let mut env = RegraspEnv::new(cfg.clone())?;
    let mut obs = env.reset_with_goal(traj.header.seed, traj.header.goal_m)?;
    let mut worst: f64 = 0.0;
    for (i, rec) in traj.records.iter().enumerate() {
        if env.is_done() {
            return Err(Error::Format {
                what: "trajectory",
                line: i + 2,
                msg: "replayed episode ended before the recording".into(),
            });
        }
        worst = worst.max((rec.obs[1] - obs.o_p).abs());
        obs = env.step(rec.action()?)?.next_obs;
    }
    if !env.is_done() {
        return Err(Error::Format {
            what: "trajectory",
            line: traj.records.len() + 1,
            msg: "recording ended before the replayed episode finished".into(),
        });
    }
    Ok((worst, env.outcome()))
}

/// Run `policy` for one episode and record it.
pub fn record_episode(
    env: &mut RegraspEnv,
    policy: &mut dyn Policy,
    source: DemoSource,
    seed: u64,
    goal: f64,
) -> Result<(Trajectory, Outcome)> {
    policy.reset();
    let mut obs = env.reset_with_goal(seed, goal)?;
    let mut records = Vec::new();
    loop {
        let action = policy.act(&obs);
        let tr = env.step(action)?;
        records.push(TrajRecord {
            t: records.len(),
            obs: obs.to_array(),
            action: action as u8,
            reward: tr.reward,
            done: tr.done,
        });
        obs = tr.next_obs;
        if tr.done {
            let header = TrajectoryHeader::new(source, env.config(), seed, goal);
            return Ok((Trajectory { header, records }, tr.outcome));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub trajectories: Vec<Trajectory>,
    pub attempts: usize,
    pub failures: usize,
}

impl DemoSet {
    pub fn from_trajectories(trajectories: Vec<Trajectory>) -> Self {
        DemoSet {
            attempts: trajectories.len(),
            failures: 0,
            trajectories,
        }
    }

    pub fn count(&self) -> usize {
        self.trajectories.len()
    }

    pub fn mean_len(&self) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        self.total_pairs() as f64 / self.trajectories.len() as f64
    }

    pub fn total_pairs(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Fraction of trajectories whose last record ends within tolerance.
    pub fn success_fraction(&self) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        let ok = self
            .trajectories
            .iter()
            .filter(|t| {
                t.records.last().is_some_and(|r| r.done)
                    && replay(t, &t.header.env).is_ok_and(|(_, o)| o == Outcome::Success)
            })
            .count();
        ok as f64 / self.trajectories.len() as f64
    }

    pub fn pairs(&self) -> Vec<(Observation, Action)> {
        self.trajectories.iter().flat_map(|t| t.pairs()).collect()
    }

    pub fn to_jsonl(&self) -> String {
        self.trajectories.iter().map(Trajectory::to_jsonl).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_trajectories(load_trajectories(path)?))
    }

    /// Refuse demonstrations recorded under a different environment config.
    pub fn check_compatible(&self, cfg: &EnvConfig) -> Result<()> {
        let expected = cfg.config_hash();
        for t in &self.trajectories {
            if t.header.config_hash != expected {
                return Err(Error::ConfigHashMismatch {
                    expected,
                    found: t.header.config_hash.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Collect `n` successful scripted-expert episodes, alternating goal sides
/// starting with +y (so sides split ⌈n/2⌉ / ⌊n/2⌋). Failed episodes are
/// discarded; generation aborts once more than half of at least `n`
/// attempts have failed.
pub fn generate_demos(cfg: &EnvConfig, n: usize, seed: u64) -> Result<DemoSet> {
    if n == 0 {
        return Err(Error::Precondition("need at least one demonstration".into()));
    }
    let mut env = RegraspEnv::new(cfg.clone())?;
    let mut expert = ScriptedExpert::new(cfg);
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut trajectories = Vec::with_capacity(n);
    let (mut attempts, mut failures) = (0, 0);
    while trajectories.len() < n {
        let side = if trajectories.len() % 2 == 0 { 1.0 } else { -1.0 };
        let ep_seed = seeds.next_u64();
        let goal = side * RegraspEnv::sample_goal(cfg, ep_seed).abs();
        let (traj, outcome) =
            record_episode(&mut env, &mut expert, DemoSource::Scripted, ep_seed, goal)?;
        attempts += 1;
        if outcome == Outcome::Success {
            trajectories.push(traj);
        } else {
            failures += 1;
            if attempts >= n && failures * 2 > attempts {
                return Err(Error::ExpertMismatch { failures, attempts });
            }
        }
    }
    Ok(DemoSet {
        trajectories,
        attempts,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(w_p: f64, o_p: f64, g_p: f64) -> Observation {
        Observation {
            w_p,
            o_p,
            g_p,
            r_p: o_p.abs(),
        }
    }

    #[test]
    fn expert_examples() {
        let e = ScriptedExpert::new(&EnvConfig::default());
        assert_eq!(e.decide(&obs(0.0, 0.0, 0.040), None), Action::StepPlus);
        assert_eq!(e.decide(&obs(0.0, 0.0, -0.040), None), Action::StepMinus);
        assert_eq!(e.decide(&obs(0.3, 0.035, 0.040), Some(0.03)), Action::Stop);
        assert_eq!(e.decide(&obs(-0.3, -0.045, -0.040), Some(0.0)), Action::Stop);
    }

    #[test]
    fn expert_sign_convention_matches_physics() {
        let cfg = EnvConfig::default();
        let mut env = RegraspEnv::new(cfg).unwrap();
        env.reset_with_goal(0, 0.04).unwrap();
        for _ in 0..40 {
            env.step(Action::StepPlus).unwrap();
        }
        assert!(env.state().y > 0.0);
    }

    #[test]
    fn expert_brakes_when_close_and_fast() {
        let e = ScriptedExpert::new(&EnvConfig::default());
        // 12 mm out, moving 0.2 m/s toward the goal, tilted well past the
        // slide angle: must counter-tilt.
        let a = e.decide(&obs(0.45, 0.028, 0.040), Some(0.026));
        assert_eq!(a, Action::StepMinus);
    }

    #[test]
    fn generated_demos_are_balanced_and_valid() {
        let cfg = EnvConfig::default();
        let set = generate_demos(&cfg, 6, 42).unwrap();
        assert_eq!(set.count(), 6);
        let pos = set.trajectories.iter().filter(|t| t.header.goal_m > 0.0).count();
        assert_eq!(pos, 3);
        let text = set.to_jsonl();
        let report = validate_text(&text, &cfg);
        assert!(report.is_ok(), "{:?}", report.issues);
        assert_eq!(report.trajectories, 6);
        for t in &set.trajectories {
            let (dev, outcome) = replay(t, &cfg).unwrap();
            assert_eq!(dev, 0.0);
            assert_eq!(outcome, Outcome::Success);
        }
        assert_eq!(set.success_fraction(), 1.0);
    }

    #[test]
    fn file_round_trip_is_byte_identical() {
        let cfg = EnvConfig::default();
        let set = generate_demos(&cfg, 2, 9).unwrap();
        let text = set.to_jsonl();
        let back = parse_trajectories(&text).unwrap();
        assert_eq!(back, set.trajectories);
        assert_eq!(DemoSet::from_trajectories(back).to_jsonl(), text);
    }

    #[test]
    fn validation_names_bad_records() {
        let cfg = EnvConfig::default();
        let set = generate_demos(&cfg, 1, 3).unwrap();
        let mut traj = set.trajectories[0].clone();
        traj.records[2].action = 5;
        let report = validate_text(&traj.to_jsonl(), &cfg);
        assert!(!report.is_ok());
        assert_eq!(report.issues.len(), 1);
        assert_eq!(report.issues[0].line, 4);
        assert!(report.issues[0].msg.contains("action 5"));

        let mut lines: Vec<String> = set.trajectories[0]
            .to_jsonl()
            .lines()
            .map(String::from)
            .collect();
        lines[3] = "{\"t\": 2, \"obs\": [0, 0], \"action\": 1}".into();
        lines.insert(5, "not json".into());
        let report = validate_text(&lines.join("\n"), &cfg);
        let bad: Vec<usize> = report.issues.iter().map(|i| i.line).collect();
        assert!(bad.contains(&4) && bad.contains(&6), "{bad:?}");
    }

    #[test]
    fn hash_mismatch_is_reported() {
        let cfg = EnvConfig::default();
        let set = generate_demos(&cfg, 1, 3).unwrap();
        let other = EnvConfig {
            control_dt_s: 0.02,
            ..EnvConfig::default()
        };
        let report = validate_text(&set.to_jsonl(), &other);
        assert!(report.issues.is_empty() && !report.hash_matches);
        assert!(matches!(
            replay(&set.trajectories[0], &other),
            Err(Error::ConfigHashMismatch { .. })
        ));
        assert!(set.check_compatible(&other).is_err());
    }

    #[test]
    fn mirrored_demo_replays() {
        let cfg = EnvConfig::default();
        let set = generate_demos(&cfg, 2, 5).unwrap();
        for t in &set.trajectories {
            let m = t.mirrored();
            assert!(validate_trajectory(&m).is_empty());
            let (dev, outcome) = replay(&m, &cfg).unwrap();
            assert!(dev <= 1e-12, "{dev}");
            assert_eq!(outcome, Outcome::Success);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = EnvConfig::default();
        assert_eq!(
            generate_demos(&cfg, 1, 77).unwrap().to_jsonl(),
            generate_demos(&cfg, 1, 77).unwrap().to_jsonl()
        );
    }

    #[test]
    fn hopeless_config_aborts() {
        // μ = 2 cannot slide within the wrist limit (atan 2 ≈ 1.107 > 0.88).
        let cfg = EnvConfig {
            object: ObjectSpec {
                mu: 2.0,
                ..ObjectSpec::training_cuboid()
            },
            horizon: 150,
            ..EnvConfig::default()
        };
        assert!(matches!(
            generate_demos(&cfg, 2, 0),
            Err(Error::ExpertMismatch { .. })
        ));
    }
}
