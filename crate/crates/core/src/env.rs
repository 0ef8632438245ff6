//! The re-grasp decision process: discrete wrist steps over the sliding
//! physics, the distance/drop reward, goal sampling and termination.

use std::collections::VecDeque;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::EnvConfig;
use crate::error::{Error, Result};
use crate::physics::{self, PhysicsConfig, SimState};

/// Wrist increment per non-stop action, radians.
pub const WRIST_STEP: f64 = 0.01;

/// Fixed input scaling applied before any network sees an observation:
/// the wrist angle is divided by its limit and positions by 50 mm.
pub const FEATURE_SCALE: [f64; 4] = [1.0 / physics::THETA_MAX, 20.0, 20.0, 20.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Action {
    Stop = 0,
    StepPlus = 1,
    StepMinus = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Stop, Action::StepPlus, Action::StepMinus];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Action::Stop),
            1 => Ok(Action::StepPlus),
            2 => Ok(Action::StepMinus),
            _ => Err(Error::InvalidAction(i as i64)),
        }
    }

    pub fn wrist_delta(self) -> f64 {
        match self {
            Action::Stop => 0.0,
            Action::StepPlus => WRIST_STEP,
            Action::StepMinus => -WRIST_STEP,
        }
    }

    /// The same command under the `y → -y` reflection.
    pub fn mirrored(self) -> Self {
        match self {
            Action::Stop => Action::Stop,
            Action::StepPlus => Action::StepMinus,
            Action::StepMinus => Action::StepPlus,
        }
    }

    /// Tilt toward the side `sign` (positive → +y).
    pub fn toward(sign: f64) -> Self {
        if sign >= 0.0 {
            Action::StepPlus
        } else {
            Action::StepMinus
        }
    }
}

impl From<Action> for u8 {
    fn from(a: Action) -> u8 {
        a as u8
    }
}

impl TryFrom<u8> for Action {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Action::from_index(v as usize)
    }
}

/// `[wrist angle, object offset, goal, |object offset|]` in radians and meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Observation {
    pub w_p: f64,
    pub o_p: f64,
    pub g_p: f64,
    pub r_p: f64,
}

impl Observation {
    pub fn to_array(self) -> [f64; 4] {
        [self.w_p, self.o_p, self.g_p, self.r_p]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Observation {
            w_p: a[0],
            o_p: a[1],
            g_p: a[2],
            r_p: a[3],
        }
    }

    /// Network input: the observation scaled by [`FEATURE_SCALE`].
    pub fn features(&self) -> [f64; 4] {
        let a = self.to_array();
        std::array::from_fn(|i| a[i] * FEATURE_SCALE[i])
    }

    pub fn mirrored(&self) -> Self {
        Observation {
            w_p: -self.w_p,
            o_p: -self.o_p,
            g_p: -self.g_p,
            r_p: self.r_p,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Ground-truth observation of a physics state.
pub fn observe(state: &SimState, goal: f64) -> Observation {
    Observation {
        w_p: state.theta,
        o_p: state.y,
        g_p: goal,
        r_p: state.y.abs(),
    }
}

/// Per-step reward: minus the object-goal distance in millimeters, or minus
/// `lambda` once the object is dropped.
pub fn reward(o_p: f64, g_p: f64, dropped: bool, lambda: f64) -> f64 {
    if dropped {
        -lambda
    } else {
        -(o_p - g_p).abs() * 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Running,
    Success,
    Dropped,
    Timeout,
}

impl Outcome {
    pub fn is_terminal(self) -> bool {
        self != Outcome::Running
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Running => "running",
            Outcome::Success => "success",
            Outcome::Dropped => "dropped",
            Outcome::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Observation,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Observation,
    pub done: bool,
    pub outcome: Outcome,
}

/// Delivers observations to the agent, optionally `delay` control ticks
/// late (holding the first observation until enough history exists) and
/// with Gaussian noise on the object offset.
#[derive(Debug, Clone)]
pub struct ObsChannel {
    delay: usize,
    noise: Option<Normal<f64>>,
    history: VecDeque<Observation>,
}

impl ObsChannel {
    pub fn new(delay: usize, noise_sd: f64) -> Self {
        ObsChannel {
            delay,
            noise: (noise_sd > 0.0).then(|| Normal::new(0.0, noise_sd).expect("sd > 0")),
            history: VecDeque::with_capacity(delay + 1),
        }
    }

    pub fn reset(&mut self, initial: Observation, rng: &mut impl Rng) -> Observation {
        self.history.clear();
        self.history.push_back(initial);
        self.deliver(initial, rng)
    }

    pub fn push(&mut self, truth: Observation, rng: &mut impl Rng) -> Observation {
        self.history.push_back(truth);
        while self.history.len() > self.delay + 1 {
            self.history.pop_front();
        }
        let seen = *self.history.front().expect("history is never empty after reset");
        self.deliver(seen, rng)
    }

    fn deliver(&self, mut obs: Observation, rng: &mut impl Rng) -> Observation {
        if let Some(noise) = &self.noise {
            obs.o_p += noise.sample(rng);
            obs.r_p = obs.o_p.abs();
        }
        obs
    }
}

/// Single-episode environment. Not `Sync`-shared: give each worker its own.
#[derive(Debug, Clone)]
pub struct RegraspEnv {
    cfg: EnvConfig,
    physics: PhysicsConfig,
    substeps: usize,
    state: SimState,
    goal: f64,
    tick: usize,
    channel: ObsChannel,
    rng: ChaCha8Rng,
    last_obs: Observation,
    outcome: Outcome,
    seed: u64,
}

impl RegraspEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let physics = cfg.physics();
        physics.validate()?;
        let channel = ObsChannel::new(cfg.obs_delay_ticks, cfg.obs_noise_sd());
        Ok(RegraspEnv {
            substeps: cfg.substeps(),
            cfg,
            physics,
            state: SimState::default(),
            goal: 0.0,
            tick: 0,
            channel,
            rng: ChaCha8Rng::seed_from_u64(0),
            last_obs: Observation::default(),
            // Stepping before the first reset is an error.
            outcome: Outcome::Timeout,
            seed: 0,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn goal(&self) -> f64 {
        self.goal
    }

    pub fn tick(&self) -> usize {
        self.tick
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn outcome(&self) -> Outcome {
        self.outcome
    }

    pub fn is_done(&self) -> bool {
        self.outcome.is_terminal()
    }

    pub fn last_observation(&self) -> Observation {
        self.last_obs
    }

    /// Sample a goal for `seed`: a fair coin picks the side, then the
    /// magnitude is uniform over `[goal_min_mm, goal_max_mm]`.
    pub fn sample_goal(cfg: &EnvConfig, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::draw_goal(cfg, &mut rng)
    }

    fn draw_goal(cfg: &EnvConfig, rng: &mut ChaCha8Rng) -> f64 {
        let positive = rng.gen_bool(0.5);
        let mag_mm = rng.gen_range(cfg.goal_min_mm..=cfg.goal_max_mm);
        let g = mag_mm * 1e-3;
        if positive {
            g
        } else {
            -g
        }
    }

    pub fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let goal = Self::draw_goal(&self.cfg, &mut rng);
        self.start(seed, goal, rng)
    }

    /// Reset with an explicit goal (meters). The seed still drives the
    /// observation noise.
    pub fn reset_with_goal(&mut self, seed: u64, goal: f64) -> Result<Observation> {
        if !goal.is_finite() {
            return Err(Error::NonFinite("goal"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Burn the goal draws so noise streams line up with `reset`.
        let _ = Self::draw_goal(&self.cfg, &mut rng);
        Ok(self.start(seed, goal, rng))
    }

    fn start(&mut self, seed: u64, goal: f64, mut rng: ChaCha8Rng) -> Observation {
        self.seed = seed;
        self.goal = goal;
        self.state = SimState::default();
        self.tick = 0;
        self.outcome = Outcome::Running;
        let obs = self.channel.reset(observe(&self.state, goal), &mut rng);
        self.rng = rng;
        self.last_obs = obs;
        obs
    }

    pub fn step(&mut self, action: Action) -> Result<Transition> {
        if self.is_done() {
            return Err(Error::EpisodeFinished);
        }
        let obs = self.last_obs;
        let limit = self.physics.theta_max;
        self.state.theta = (self.state.theta + action.wrist_delta()).clamp(-limit, limit);

        let tol = self.cfg.success_tol();
        let drop_radius = self.cfg.drop_radius();
        let ideal = self.cfg.ideal_channel();
        let mut success = false;
        let mut dropped = false;
        for _ in 0..self.substeps {
            self.state = physics::substep(&self.state, &self.cfg.object, &self.physics)?;
            let err = (self.state.y - self.goal).abs();
            if err > drop_radius {
                dropped = true;
                break;
            }
            if ideal && err <= tol {
                success = true;
                break;
            }
        }
        self.tick += 1;

        let truth = observe(&self.state, self.goal);
        let next_obs = self.channel.push(truth, &mut self.rng);
        // With a lagging or noisy sensor the grasp fires on what the sensor
        // reports, and only catches the object if it is really there too.
        if !ideal
            && !dropped
            && (next_obs.o_p - self.goal).abs() <= tol
            && (self.state.y - self.goal).abs() <= tol
        {
            success = true;
        }
        if success {
            self.state.grasped = true;
            self.state.v = 0.0;
        }
        self.state.dropped = dropped;

        let r = reward(self.state.y, self.goal, dropped, self.cfg.lambda);
        self.outcome = if success {
            Outcome::Success
        } else if dropped {
            Outcome::Dropped
        } else if self.tick >= self.cfg.horizon {
            Outcome::Timeout
        } else {
            Outcome::Running
        };
        self.last_obs = next_obs;
        Ok(Transition {
            obs,
            action,
            reward: r,
            next_obs,
            done: self.outcome.is_terminal(),
            outcome: self.outcome,
        })
    }
}

/// Anything that maps observations to wrist commands.
pub trait Policy {
    /// Called at the start of every episode.
    fn reset(&mut self) {}
    fn act(&mut self, obs: &Observation) -> Action;
}

impl<F: FnMut(&Observation) -> Action> Policy for F {
    fn act(&mut self, obs: &Observation) -> Action {
        self(obs)
    }
}

/// One line of an evaluation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub seed: u64,
    pub goal_m: f64,
    pub outcome: Outcome,
    pub steps: usize,
    pub return_raw: f64,
    pub final_error_mm: f64,
}

pub fn run_episode(
    env: &mut RegraspEnv,
    policy: &mut dyn Policy,
    seed: u64,
    episode: usize,
) -> Result<EpisodeLog> {
    policy.reset();
    let mut obs = env.reset(seed);
    let mut ret = 0.0;
    loop {
        let tr = env.step(policy.act(&obs))?;
        ret += tr.reward;
        obs = tr.next_obs;
        if tr.done {
            return Ok(EpisodeLog {
                episode,
                seed,
                goal_m: env.goal(),
                outcome: tr.outcome,
                steps: env.tick(),
                return_raw: ret,
                final_error_mm: (env.state().y - env.goal()).abs() * 1000.0,
            });
        }
    }
}

/// Per-episode seeds derived from one evaluation seed.
pub fn episode_seeds(seed: u64, episodes: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..episodes).map(|_| rng.next_u64()).collect()
}

pub fn evaluate(
    policy: &mut dyn Policy,
    cfg: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<Vec<EpisodeLog>> {
    if episodes == 0 {
        return Err(Error::Precondition("episodes must be >= 1".into()));
    }
    let mut env = RegraspEnv::new(cfg.clone())?;
    episode_seeds(seed, episodes)
        .into_iter()
        .enumerate()
        .map(|(i, s)| run_episode(&mut env, policy, s, i))
        .collect()
}

/// Fraction of logged episodes that ended in success.
pub fn success_fraction(logs: &[EpisodeLog]) -> f64 {
    if logs.is_empty() {
        return 0.0;
    }
    logs.iter().filter(|l| l.outcome == Outcome::Success).count() as f64 / logs.len() as f64
}

pub fn success_rate(
    policy: &mut dyn Policy,
    cfg: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    Ok(success_fraction(&evaluate(policy, cfg, episodes, seed)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stop(_: &Observation) -> Action {
        Action::Stop
    }

    #[test]
    fn reset_samples_goal_in_bands() {
        let mut env = RegraspEnv::new(EnvConfig::default()).unwrap();
        let (mut pos, mut neg) = (0, 0);
        for seed in 0..400 {
            let obs = env.reset(seed);
            let g = obs.g_p.abs();
            assert!((0.030..=0.050).contains(&g), "goal {g}");
            if obs.g_p > 0.0 {
                pos += 1
            } else {
                neg += 1
            }
            assert_eq!(obs, Observation { g_p: obs.g_p, ..Default::default() });
        }
        assert!(pos > 150 && neg > 150);
        let a = env.reset(7);
        let b = env.reset(7);
        assert_eq!(a, b);
    }

    #[test]
    fn reward_examples() {
        assert!((reward(0.030, 0.050, false, 10_000.0) + 20.0).abs() < 1e-12);
        assert_eq!(reward(0.04, 0.04, false, 10_000.0), 0.0);
        assert_eq!(reward(0.5, 0.04, true, 10_000.0), -10_000.0);
        assert_eq!(reward(0.04, 0.04, true, 10_000.0), -10_000.0);
    }

    #[test]
    fn wrist_is_clamped() {
        let mut env = RegraspEnv::new(EnvConfig {
            horizon: 2000,
            object: crate::physics::ObjectSpec {
                mu: 5.0,
                ..crate::physics::ObjectSpec::training_cuboid()
            },
            ..EnvConfig::default()
        })
        .unwrap();
        env.reset(1);
        for _ in 0..200 {
            env.step(Action::StepPlus).unwrap();
        }
        assert_eq!(env.state().theta, physics::THETA_MAX);
        for _ in 0..400 {
            env.step(Action::StepMinus).unwrap();
        }
        assert_eq!(env.state().theta, -physics::THETA_MAX);
    }

    #[test]
    fn always_stop_times_out() {
        let cfg = EnvConfig::default();
        let logs = evaluate(&mut stop, &cfg, 5, 3).unwrap();
        assert!(logs.iter().all(|l| l.outcome == Outcome::Timeout && l.steps == 600));
        assert_eq!(success_rate(&mut stop, &cfg, 5, 3).unwrap(), 0.0);
    }

    #[test]
    fn stepping_finished_episode_errors() {
        let mut env = RegraspEnv::new(EnvConfig {
            horizon: 1,
            ..EnvConfig::default()
        })
        .unwrap();
        env.reset(0);
        let tr = env.step(Action::Stop).unwrap();
        assert!(tr.done && tr.outcome == Outcome::Timeout);
        assert!(matches!(env.step(Action::Stop), Err(Error::EpisodeFinished)));
    }

    #[test]
    fn tilting_toward_goal_succeeds() {
        let mut env = RegraspEnv::new(EnvConfig::default()).unwrap();
        let obs = env.reset(11);
        let a = Action::toward(obs.g_p);
        loop {
            let tr = env.step(a).unwrap();
            assert!(tr.reward <= 0.0);
            if tr.done {
                assert_eq!(tr.outcome, Outcome::Success);
                assert!((env.state().y - env.goal()).abs() <= 0.010);
                break;
            }
        }
    }

    #[test]
    fn tilting_away_drops() {
        let mut env = RegraspEnv::new(EnvConfig::default()).unwrap();
        let obs = env.reset(11);
        let a = Action::toward(-obs.g_p);
        let tr = loop {
            let tr = env.step(a).unwrap();
            if tr.done {
                break tr;
            }
        };
        assert_eq!(tr.outcome, Outcome::Dropped);
        assert_eq!(tr.reward, -10_000.0);
    }

    #[test]
    fn identity_channel() {
        let truth = Observation {
            w_p: 0.3,
            o_p: 0.02,
            g_p: 0.04,
            r_p: 0.02,
        };
        let s = SimState {
            theta: 0.3,
            y: 0.02,
            ..Default::default()
        };
        assert_eq!(observe(&s, 0.04), truth);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ch = ObsChannel::new(0, 0.0);
        ch.reset(Observation::default(), &mut rng);
        assert_eq!(ch.push(truth, &mut rng), truth);
    }

    #[test]
    fn delayed_channel_holds_initial() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ch = ObsChannel::new(3, 0.0);
        let init = Observation {
            g_p: 0.04,
            ..Default::default()
        };
        ch.reset(init, &mut rng);
        let obs_at = |k: usize| Observation {
            w_p: k as f64,
            ..init
        };
        for k in 1..=3 {
            assert_eq!(ch.push(obs_at(k), &mut rng), init);
        }
        assert_eq!(ch.push(obs_at(4), &mut rng), obs_at(1));
        assert_eq!(ch.push(obs_at(5), &mut rng), obs_at(2));
    }

    #[test]
    fn delayed_success_needs_the_object_in_the_band() {
        let mut successes = 0;
        for delay in [3, 6] {
            let cfg = EnvConfig::default().with_delay(delay);
            let mut env = RegraspEnv::new(cfg.clone()).unwrap();
            let mut expert = crate::demos::ScriptedExpert::new(&cfg);
            for seed in 0..20 {
                expert.reset();
                let mut obs = env.reset(seed);
                loop {
                    let tr = env.step(expert.act(&obs)).unwrap();
                    obs = tr.next_obs;
                    if tr.outcome == Outcome::Success {
                        successes += 1;
                        assert!((env.state().y - env.goal()).abs() <= cfg.success_tol());
                        assert!((obs.o_p - env.goal()).abs() <= cfg.success_tol());
                    }
                    if tr.done {
                        break;
                    }
                }
            }
        }
        assert!(successes >= 20);
    }

    #[test]
    fn noisy_channel_keeps_r_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ch = ObsChannel::new(0, 0.005);
        ch.reset(Observation::default(), &mut rng);
        let mut moved = false;
        for _ in 0..100 {
            let o = ch.push(Observation::default(), &mut rng);
            assert!(o.r_p >= 0.0 && o.r_p == o.o_p.abs());
            moved |= o.o_p != 0.0;
        }
        assert!(moved);
    }

    #[test]
    fn action_codes() {
        for a in Action::ALL {
            assert_eq!(Action::from_index(a.index()).unwrap(), a);
            assert_eq!(a.mirrored().mirrored(), a);
        }
        assert!(Action::from_index(5).is_err());
        assert_eq!(serde_json::to_string(&Action::StepMinus).unwrap(), "2");
        assert!(serde_json::from_str::<Action>("7").is_err());
    }
}
