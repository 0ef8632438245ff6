//! Behavior cloning and adversarial imitation from expert demonstrations.
//!
//! The discriminator outputs `D(s, a)`, read as the probability that a pair
//! came from the expert. It minimizes
//! `E_gen[log D] + E_expert[log(1 - D)]`, so generated pairs are pushed
//! toward 0 and expert pairs toward 1, and the generator is paid
//! `-log(1 - D)`.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::EnvConfig;
use crate::curves::{Curve, CurveRow, RollingSuccess, BC_COLUMNS, GAIL_COLUMNS};
use crate::demos::DemoSet;
use crate::env::{run_episode, Action, Observation, Outcome, RegraspEnv};
use crate::error::{Error, Result};
use crate::nn::{self, Activations, AdamConfig, NetGrad, NetParams};
use crate::policy::{check_shape, PolicyNet, ValueNet, OBS_DIM};
use crate::ppo::{collect_episode, ppo_update, BestTracker, PpoConfig, RolloutBatch, RunRngs, TrainOutput};

pub const DISC_INPUT: usize = OBS_DIM + Action::COUNT;
pub const PROB_CLAMP: f64 = 1e-7;

/// A state-action pair in network units.
pub type Pair = ([f64; OBS_DIM], Action);

pub fn pair(obs: &Observation, action: Action) -> Pair {
    (obs.features(), action)
}

fn clamp_prob(d: f64) -> f64 {
    d.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Mean negative log-likelihood of the expert actions.
pub fn bc_loss(policy: &PolicyNet, pairs: &[Pair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Precondition("no demonstration pairs".into()));
    }
    let mut total = 0.0;
    for (x, a) in pairs {
        total -= nn::log_softmax(&policy.logits(x))[a.index()];
    }
    Ok(total / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub net: NetParams,
}

impl Discriminator {
    pub fn new(rng: &mut impl Rng) -> Self {
        Discriminator {
            net: NetParams::mlp(DISC_INPUT, 1, rng),
        }
    }

    pub fn from_params(net: NetParams) -> Result<Self> {
        check_shape(&net, DISC_INPUT, 1)?;
        Ok(Discriminator { net })
    }

    pub fn input(p: &Pair) -> [f64; DISC_INPUT] {
        let mut x = [0.0; DISC_INPUT];
        x[..OBS_DIM].copy_from_slice(&p.0);
        x[OBS_DIM + p.1.index()] = 1.0;
        x
    }

    pub fn logit(&self, p: &Pair) -> f64 {
        self.net.forward(&Self::input(p)).expect("discriminator input is 7-wide")[0]
    }

    /// Probability that the pair is expert, unclamped.
    pub fn prob(&self, p: &Pair) -> f64 {
        nn::sigmoid(self.logit(p))
    }

    pub fn reward(&self, p: &Pair, clip: f64) -> f64 {
        gail_reward(self.prob(p), clip)
    }
}

/// `E_gen[log D] + E_expert[log(1 - D)]` from precomputed probabilities,
/// each clamped to `[1e-7, 1 - 1e-7]`.
pub fn disc_loss_from_probs(gen: &[f64], expert: &[f64]) -> Result<f64> {
    if gen.is_empty() || expert.is_empty() {
        return Err(Error::Precondition(
            "discriminator loss needs generated and expert pairs".into(),
        ));
    }
    let g = gen.iter().map(|d| clamp_prob(*d).ln()).sum::<f64>() / gen.len() as f64;
    let e = expert.iter().map(|d| (1.0 - clamp_prob(*d)).ln()).sum::<f64>() / expert.len() as f64;
    Ok(g + e)
}

pub fn discriminator_loss(disc: &Discriminator, gen: &[Pair], expert: &[Pair]) -> Result<f64> {
    let g: Vec<f64> = gen.iter().map(|p| disc.prob(p)).collect();
    let e: Vec<f64> = expert.iter().map(|p| disc.prob(p)).collect();
    disc_loss_from_probs(&g, &e)
}

/// Fraction of pairs on the correct side of 0.5.
pub fn discriminator_accuracy(disc: &Discriminator, gen: &[Pair], expert: &[Pair]) -> f64 {
    let right = gen.iter().filter(|p| disc.prob(p) < 0.5).count()
        + expert.iter().filter(|p| disc.prob(p) >= 0.5).count();
    right as f64 / (gen.len() + expert.len()).max(1) as f64
}

/// `-ln(1 - D)` with D clamped, then clipped to `[0, clip]`.
pub fn gail_reward(d: f64, clip: f64) -> f64 {
    (-(1.0 - clamp_prob(d)).ln()).clamp(0.0, clip)
}

/// Which gradient drives the discriminator. Both share the same targets
/// (generated pairs toward 0, expert pairs toward 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DiscObjective {
    /// Descend the loss as written. Its gradient vanishes on exactly the
    /// pairs the discriminator gets most wrong, and in practice D collapses
    /// to 1 everywhere.
    Literal,
    /// Descend `-log(1 - D)` on generated and `-log D` on expert pairs.
    #[default]
    NonSaturating,
}

/// One Adam step on the discriminator. Returns the loss (always the
/// written form, whatever objective drives the step) and accuracy, both
/// measured before the step.
pub fn discriminator_step(
    disc: &mut Discriminator,
    gen: &[Pair],
    expert: &[Pair],
    label_smoothing: f64,
    objective: DiscObjective,
    adam: &AdamConfig,
) -> Result<(f64, f64)> {
    if gen.is_empty() || expert.is_empty() {
        return Err(Error::Precondition(
            "discriminator step needs generated and expert pairs".into(),
        ));
    }
    let s = label_smoothing;
    let mut grad = NetGrad::zeros_like(&disc.net);
    let mut acts = Activations::default();
    let (mut loss, mut right) = (0.0, 0usize);
    for (set, expert_side) in [(gen, false), (expert, true)] {
        let inv = 1.0 / set.len() as f64;
        for p in set {
            let z = disc.net.forward_cached(&Discriminator::input(p), &mut acts)?[0];
            let raw = nn::sigmoid(z);
            let d = clamp_prob(raw);
            // Weight on log D and on log(1 - D) for this side.
            let (w_log_d, w_log_1md) = if expert_side { (s, 1.0 - s) } else { (1.0 - s, s) };
            loss += inv * (w_log_d * d.ln() + w_log_1md * (1.0 - d).ln());
            if (raw >= 0.5) == expert_side {
                right += 1;
            }
            let up = match objective {
                // d/dz log D = 1 - D, d/dz log(1 - D) = -D; flat past the clamp.
                DiscObjective::Literal if raw > PROB_CLAMP && raw < 1.0 - PROB_CLAMP => {
                    inv * (w_log_d * (1.0 - raw) - w_log_1md * raw)
                }
                DiscObjective::Literal => 0.0,
                // Cross-entropy toward target t: d/dz = D - t.
                DiscObjective::NonSaturating => {
                    let target = if expert_side { 1.0 - s } else { s };
                    inv * (raw - target)
                }
            };
            if up != 0.0 {
                disc.net.accumulate_grad(&mut acts, &[up], &mut grad);
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::Diverged(format!("discriminator loss {loss}")));
    }
    disc.net.adam_step(&grad, adam)?;
    Ok((loss, right as f64 / (gen.len() + expert.len()) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcConfig {
    pub minibatch: usize,
    pub adam: AdamConfig,
    pub reward_scale: f64,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            minibatch: 64,
            adam: AdamConfig::default(),
            reward_scale: 100.0,
        }
    }
}

/// Supervised training; one curve row per epoch over the demonstrations,
/// each scored by a single sampled episode on a fresh goal.
pub fn train_bc(
    env_cfg: &EnvConfig,
    demos: &DemoSet,
    cfg: &BcConfig,
    epochs: usize,
    seed: u64,
) -> Result<TrainOutput> {
    if cfg.minibatch == 0 || !(cfg.adam.lr > 0.0) {
        return Err(Error::InvalidConfig("bc minibatch and lr must be positive".into()));
    }
    let pairs: Vec<Pair> = demos.pairs().iter().map(|(o, a)| pair(o, *a)).collect();
    if pairs.is_empty() {
        return Err(Error::Precondition("no demonstration pairs".into()));
    }
    let mut env = RegraspEnv::new(env_cfg.clone())?;
    let mut rngs = RunRngs::new(seed);
    let mut policy = PolicyNet::new(&mut rngs.init);
    let mut best = BestTracker::new(&policy, epochs);
    let mut rolling = RollingSuccess::default();
    let mut curve = Curve::new(&BC_COLUMNS);
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    let mut grad = NetGrad::zeros_like(&policy.net);
    let mut acts = Activations::default();
    let start = Instant::now();
    for epoch in 0..epochs {
        idx.shuffle(&mut rngs.update);
        for mb in idx.chunks(cfg.minibatch) {
            grad.clear();
            let inv = 1.0 / mb.len() as f64;
            for &i in mb {
                let (x, a) = &pairs[i];
                let logits = policy.net.forward_cached(x, &mut acts)?;
                let p = nn::softmax(logits);
                let up: Vec<f64> = (0..Action::COUNT)
                    .map(|k| inv * (p[k] - if k == a.index() { 1.0 } else { 0.0 }))
                    .collect();
                policy.net.accumulate_grad(&mut acts, &up, &mut grad);
            }
            policy.net.adam_step(&grad, &cfg.adam)?;
        }
        let loss = bc_loss(&policy, &pairs)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("bc loss {loss} at epoch {epoch}")));
        }
        let mut actor = |obs: &Observation| policy.sample(obs, &mut rngs.act).0;
        let log = run_episode(&mut env, &mut actor, rngs.env.gen(), epoch)?;
        let success = rolling.push(log.outcome == Outcome::Success);
        best.offer(epoch, success, &policy);
        curve.rows.push(CurveRow {
            episode: epoch,
            return_raw: log.return_raw,
            return_scaled: log.return_raw / cfg.reward_scale,
            success_rolling_50: success,
            wall_ms: start.elapsed().as_millis() as u64,
            extra: vec![loss],
        });
    }
    Ok(TrainOutput {
        policy,
        value: None,
        best: best.policy,
        best_episode: best.episode,
        curve,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GailConfig {
    pub disc_steps: usize,
    pub disc_batch: usize,
    pub reward_clip: f64,
    pub label_smoothing: f64,
    pub disc_objective: DiscObjective,
    pub disc_adam: AdamConfig,
    pub ppo: PpoConfig,
}

impl Default for GailConfig {
    fn default() -> Self {
        GailConfig {
            disc_steps: 2,
            disc_batch: 64,
            reward_clip: 10.0,
            label_smoothing: 0.0,
            disc_objective: DiscObjective::NonSaturating,
            disc_adam: AdamConfig::default(),
            ppo: PpoConfig::default(),
        }
    }
}

impl GailConfig {
    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        if self.disc_batch == 0 {
            return Err(Error::InvalidConfig("disc_batch must be positive".into()));
        }
        if !(self.reward_clip > 0.0) {
            return Err(Error::InvalidConfig("reward_clip must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return Err(Error::InvalidConfig("label_smoothing must lie in [0, 0.5)".into()));
        }
        Ok(())
    }
}

fn sample_pairs(from: &[Pair], n: usize, rng: &mut impl Rng) -> Vec<Pair> {
    (0..n).map(|_| from[rng.gen_range(0..from.len())]).collect()
}

/// Per episode: roll out the generator, score its pairs with the current
/// discriminator, train the discriminator, then update the generator on the
/// surrogate reward alone. Environment returns are only logged.
pub fn train_gail(
    env_cfg: &EnvConfig,
    demos: &DemoSet,
    cfg: &GailConfig,
    episodes: usize,
    seed: u64,
) -> Result<(TrainOutput, Discriminator)> {
    cfg.validate()?;
    let expert: Vec<Pair> = demos.pairs().iter().map(|(o, a)| pair(o, *a)).collect();
    if expert.is_empty() {
        return Err(Error::Precondition("no demonstration pairs".into()));
    }
    let mut env = RegraspEnv::new(env_cfg.clone())?;
    let mut rngs = RunRngs::new(seed);
    let mut policy = PolicyNet::new(&mut rngs.init);
    let mut value = ValueNet::new(&mut rngs.init);
    let mut disc = Discriminator::new(&mut rngs.init);
    let mut best = BestTracker::new(&policy, episodes);
    let mut rolling = RollingSuccess::default();
    let mut curve = Curve::new(&GAIL_COLUMNS);
    let start = Instant::now();
    for episode in 0..episodes {
        let ep = collect_episode(&mut env, &policy, &value, rngs.env.gen(), &mut rngs.act)?;
        let gen: Vec<Pair> = ep
            .observations
            .iter()
            .zip(&ep.actions)
            .map(|(o, a)| pair(o, *a))
            .collect();
        let surrogate: Vec<f64> = gen.iter().map(|p| disc.reward(p, cfg.reward_clip)).collect();
        let surrogate_return = surrogate.iter().sum();

        let (mut d_loss, mut d_acc) = (f64::NAN, f64::NAN);
        for step in 0..cfg.disc_steps {
            let g = sample_pairs(&gen, cfg.disc_batch, &mut rngs.update);
            let e = sample_pairs(&expert, cfg.disc_batch, &mut rngs.update);
            let (l, a) = discriminator_step(
                &mut disc,
                &g,
                &e,
                cfg.label_smoothing,
                cfg.disc_objective,
                &cfg.disc_adam,
            )?;
            if step == 0 {
                d_loss = l;
                d_acc = a;
            }
        }

        let batch = RolloutBatch::from_episode(&ep, surrogate, &cfg.ppo)?;
        ppo_update(&mut policy, &mut value, &batch, &cfg.ppo, &mut rngs.update)?;

        let return_raw = ep.return_raw();
        let success = rolling.push(ep.outcome == Outcome::Success);
        best.offer(episode, success, &policy);
        curve.rows.push(CurveRow {
            episode,
            return_raw,
            return_scaled: return_raw / cfg.ppo.reward_scale,
            success_rolling_50: success,
            wall_ms: start.elapsed().as_millis() as u64,
            extra: vec![d_loss, d_acc, surrogate_return],
        });
    }
    Ok((
        TrainOutput {
            policy,
            value: Some(value),
            best: best.policy,
            best_episode: best.episode,
            curve,
        },
        disc,
    ))
}
