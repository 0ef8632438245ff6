//! Clipped-ratio policy optimization with generalized advantage estimation.
//!
//! One training iteration is one full episode: roll out the stochastic
//! policy, estimate advantages, then run a few epochs of minibatch Adam on
//! the clipped objective. The same update drives the GAIL generator, which
//! only swaps the reward signal.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::EnvConfig;
use crate::curves::{Curve, CurveRow, RollingSuccess, ROLLING_WINDOW};
use crate::env::{Action, Observation, Outcome, RegraspEnv};
use crate::error::{Error, Result};
use crate::nn::{self, Activations, AdamConfig, NetGrad};
use crate::policy::{PolicyNet, ValueNet, OBS_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub adam: AdamConfig,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// Environment rewards are divided by this before optimization.
    pub reward_scale: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_eps: 0.2,
            gamma: 0.95,
            gae_lambda: 0.95,
            epochs: 4,
            minibatch: 64,
            adam: AdamConfig::default(),
            value_coef: 0.5,
            entropy_coef: 0.01,
            reward_scale: 100.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if self.epochs == 0 || self.minibatch == 0 {
            return bad("epochs and minibatch must be positive");
        }
        if !(self.adam.lr > 0.0) || !(self.reward_scale > 0.0) {
            return bad("lr and reward_scale must be positive");
        }
        if !(self.value_coef >= 0.0) || !(self.entropy_coef >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        Ok(())
    }
}

/// `(1+ε)Â` for non-negative advantages, `(1−ε)Â` otherwise.
pub fn clip_g(eps: f64, a_hat: f64) -> f64 {
    if a_hat >= 0.0 {
        (1.0 + eps) * a_hat
    } else {
        (1.0 - eps) * a_hat
    }
}

pub fn ppo_objective(ratio: f64, a_hat: f64, eps: f64) -> f64 {
    (ratio * a_hat).min(clip_g(eps, a_hat))
}

/// Advantages and returns for one trajectory. `last_value` is V of the state
/// after the final step; it is used only when that step is not terminal
/// (a timeout).
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: if values.len() != n { values.len() } else { dones.len() },
        });
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        adv[t] = delta + gamma * lambda * live * next_adv;
        next_adv = adv[t];
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shift and scale to mean 0, sd 1 (population). A constant batch maps to
/// all zeros.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.len() < 2 {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    adv.iter_mut().for_each(|a| *a -= mean);
    let sd = (adv.iter().map(|a| a * a).sum::<f64>() / n).sqrt();
    if sd > 0.0 {
        adv.iter_mut().for_each(|a| *a /= sd);
    } else {
        adv.iter_mut().for_each(|a| *a = 0.0);
    }
}

/// One episode as seen by the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub seed: u64,
    pub observations: Vec<Observation>,
    pub actions: Vec<Action>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub env_rewards: Vec<f64>,
    pub outcome: Outcome,
    /// V of the final observation when the episode timed out, else 0.
    pub bootstrap_value: f64,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn return_raw(&self) -> f64 {
        self.env_rewards.iter().sum()
    }

    /// Per-step terminal flags; a timeout is not terminal.
    pub fn dones(&self) -> Vec<bool> {
        let n = self.len();
        (0..n)
            .map(|t| t + 1 == n && self.outcome != Outcome::Timeout)
            .collect()
    }
}

/// Roll out the sampled policy for one episode.
pub fn collect_episode(
    env: &mut RegraspEnv,
    policy: &PolicyNet,
    value: &ValueNet,
    seed: u64,
    rng: &mut impl Rng,
) -> Result<Episode> {
    let mut obs = env.reset(seed);
    let mut ep = Episode {
        seed,
        observations: Vec::new(),
        actions: Vec::new(),
        log_probs: Vec::new(),
        values: Vec::new(),
        env_rewards: Vec::new(),
        outcome: Outcome::Running,
        bootstrap_value: 0.0,
    };
    loop {
        let (action, logp) = policy.sample(&obs, rng);
        ep.observations.push(obs);
        ep.actions.push(action);
        ep.log_probs.push(logp);
        ep.values.push(value.value(&obs));
        let tr = env.step(action)?;
        ep.env_rewards.push(tr.reward);
        obs = tr.next_obs;
        if tr.done {
            ep.outcome = tr.outcome;
            if tr.outcome == Outcome::Timeout {
                ep.bootstrap_value = value.value(&obs);
            }
            return Ok(ep);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub features: Vec<[f64; OBS_DIM]>,
    pub actions: Vec<Action>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    /// Build a batch from an episode using the given (already scaled)
    /// per-step rewards.
    pub fn from_episode(ep: &Episode, rewards: Vec<f64>, cfg: &PpoConfig) -> Result<Self> {
        if rewards.len() != ep.len() {
            return Err(Error::DimensionMismatch {
                expected: ep.len(),
                got: rewards.len(),
            });
        }
        let dones = ep.dones();
        let (advantages, returns) = gae(
            &rewards,
            &ep.values,
            &dones,
            ep.bootstrap_value,
            cfg.gamma,
            cfg.gae_lambda,
        )?;
        let batch = RolloutBatch {
            features: ep.observations.iter().map(Observation::features).collect(),
            actions: ep.actions.clone(),
            log_probs: ep.log_probs.clone(),
            rewards,
            values: ep.values.clone(),
            dones,
            advantages,
            returns,
        };
        batch.check()?;
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.len();
        for len in [
            self.features.len(),
            self.log_probs.len(),
            self.rewards.len(),
            self.values.len(),
            self.dones.len(),
            self.advantages.len(),
            self.returns.len(),
        ] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        if self.advantages.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("advantage"));
        }
        if self.log_probs.iter().any(|l| !(*l <= 0.0)) {
            return Err(Error::Precondition("log-probs must be <= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Largest |ratio − 1| seen in the first minibatch, before any step.
    pub first_ratio_dev: f64,
    pub clip_fraction: f64,
    pub minibatches: usize,
}

/// Minibatch Adam on the clipped objective, value regression and entropy
/// bonus. Advantages are normalized across the whole batch first.
pub fn ppo_update(
    policy: &mut PolicyNet,
    value: &mut ValueNet,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    rng: &mut impl Rng,
) -> Result<UpdateStats> {
    if batch.is_empty() {
        return Err(Error::Precondition("empty rollout batch".into()));
    }
    batch.check()?;
    let mut adv = batch.advantages.clone();
    normalize_advantages(&mut adv);

    let mut pgrad = NetGrad::zeros_like(&policy.net);
    let mut vgrad = NetGrad::zeros_like(&value.net);
    let mut pacts = Activations::default();
    let mut vacts = Activations::default();
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    let mut stats = UpdateStats::default();
    let (mut sum_pl, mut sum_vl, mut sum_h, mut clipped, mut seen) = (0.0, 0.0, 0.0, 0usize, 0usize);

    for epoch in 0..cfg.epochs {
        idx.shuffle(rng);
        for (mb_index, mb) in idx.chunks(cfg.minibatch).enumerate() {
            pgrad.clear();
            vgrad.clear();
            let inv = 1.0 / mb.len() as f64;
            let (mut pl, mut vl, mut ent) = (0.0, 0.0, 0.0);
            for &i in mb {
                let x = &batch.features[i];
                let a = batch.actions[i].index();
                let logits = policy.net.forward_cached(x, &mut pacts)?;
                let logp = nn::log_softmax(logits);
                let ratio = (logp[a] - batch.log_probs[i]).exp();
                if epoch == 0 && mb_index == 0 {
                    stats.first_ratio_dev = stats.first_ratio_dev.max((ratio - 1.0).abs());
                }
                let obj = ppo_objective(ratio, adv[i], cfg.clip_eps);
                let h: f64 = -logp.iter().map(|l| l.exp() * l).sum::<f64>();
                pl -= obj;
                ent += h;
                // The unclipped branch carries the gradient; the clipped one is constant.
                let active = ratio * adv[i] <= clip_g(cfg.clip_eps, adv[i]);
                if !active {
                    clipped += 1;
                }
                let mut up = [0.0; Action::COUNT];
                for (k, u) in up.iter_mut().enumerate() {
                    let p = logp[k].exp();
                    let onehot = if k == a { 1.0 } else { 0.0 };
                    if active {
                        *u -= adv[i] * ratio * (onehot - p);
                    }
                    *u += cfg.entropy_coef * p * (logp[k] + h);
                    *u *= inv;
                }
                policy.net.accumulate_grad(&mut pacts, &up, &mut pgrad);

                let v = value.net.forward_cached(x, &mut vacts)?[0];
                let err = v - batch.returns[i];
                vl += err * err;
                value
                    .net
                    .accumulate_grad(&mut vacts, &[cfg.value_coef * 2.0 * err * inv], &mut vgrad);
            }
            pl *= inv;
            vl *= inv;
            ent *= inv;
            let total = pl + cfg.value_coef * vl - cfg.entropy_coef * ent;
            if !total.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss at epoch {epoch}, minibatch {mb_index}: policy {pl}, value {vl}, entropy {ent}"
                )));
            }
            policy.net.adam_step(&pgrad, &cfg.adam)?;
            value.net.adam_step(&vgrad, &cfg.adam)?;
            sum_pl += pl;
            sum_vl += vl;
            sum_h += ent;
            seen += mb.len();
            stats.minibatches += 1;
        }
    }
    let m = stats.minibatches as f64;
    stats.policy_loss = sum_pl / m;
    stats.value_loss = sum_vl / m;
    stats.entropy = sum_h / m;
    stats.clip_fraction = clipped as f64 / seen as f64;
    Ok(stats)
}

/// Independent random streams for one training run.
pub(crate) struct RunRngs {
    pub init: ChaCha8Rng,
    pub act: ChaCha8Rng,
    pub env: ChaCha8Rng,
    pub update: ChaCha8Rng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        RunRngs {
            init: stream(0),
            act: stream(1),
            env: stream(2),
            update: stream(3),
        }
    }
}

/// Result of any trainer: the final policy, the policy at the best rolling
/// success once the window is full, and the learning curve.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policy: PolicyNet,
    pub value: Option<ValueNet>,
    pub best: PolicyNet,
    pub best_episode: Option<usize>,
    pub curve: Curve,
}

/// Keeps the best-so-far snapshot by rolling success.
pub(crate) struct BestTracker {
    min_episode: usize,
    score: f64,
    pub episode: Option<usize>,
    pub policy: PolicyNet,
}

impl BestTracker {
    pub fn new(initial: &PolicyNet, episodes: usize) -> Self {
        BestTracker {
            min_episode: ROLLING_WINDOW.min(episodes).saturating_sub(1),
            score: f64::NEG_INFINITY,
            episode: None,
            policy: initial.clone(),
        }
    }

    pub fn offer(&mut self, episode: usize, rolling: f64, policy: &PolicyNet) {
        if episode >= self.min_episode && rolling >= self.score {
            self.score = rolling;
            self.episode = Some(episode);
            self.policy = policy.clone();
        }
    }
}

pub fn train_ppo(
    env_cfg: &EnvConfig,
    cfg: &PpoConfig,
    episodes: usize,
    seed: u64,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let mut env = RegraspEnv::new(env_cfg.clone())?;
    let mut rngs = RunRngs::new(seed);
    let mut policy = PolicyNet::new(&mut rngs.init);
    let mut value = ValueNet::new(&mut rngs.init);
    let mut best = BestTracker::new(&policy, episodes);
    let mut rolling = RollingSuccess::default();
    let mut curve = Curve::new(&[]);
    let start = Instant::now();
    for episode in 0..episodes {
        let ep = collect_episode(&mut env, &policy, &value, rngs.env.gen(), &mut rngs.act)?;
        let scaled: Vec<f64> = ep.env_rewards.iter().map(|r| r / cfg.reward_scale).collect();
        let return_scaled = scaled.iter().sum();
        let batch = RolloutBatch::from_episode(&ep, scaled, cfg)?;
        ppo_update(&mut policy, &mut value, &batch, cfg, &mut rngs.update)?;
        let success = rolling.push(ep.outcome == Outcome::Success);
        best.offer(episode, success, &policy);
        curve.rows.push(CurveRow {
            episode,
            return_raw: ep.return_raw(),
            return_scaled,
            success_rolling_50: success,
            wall_ms: start.elapsed().as_millis() as u64,
            extra: Vec::new(),
        });
    }
    Ok(TrainOutput {
        policy,
        value: Some(value),
        best: best.policy,
        best_episode: best.episode,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_objective(ratio: f64, a: f64, eps: f64) -> f64 {
        let unclipped = ratio * a;
        let g = if a >= 0.0 { (1.0 + eps) * a } else { (1.0 - eps) * a };
        if unclipped < g {
            unclipped
        } else {
            g
        }
    }

    #[test]
    fn clip_g_examples() {
        assert_eq!(clip_g(0.2, 1.0), 1.2);
        assert_eq!(clip_g(0.2, -1.0), -0.8);
        assert_eq!(clip_g(0.3, 0.0), 0.0);
        assert_eq!(ppo_objective(2.0, 1.0, 0.2), 1.2);
        assert_eq!(ppo_objective(0.5, -1.0, 0.2), -0.8);
        for a in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            assert_eq!(ppo_objective(1.0, a, 0.2), a);
        }
    }

    #[test]
    fn objective_matches_brute_force_grid() {
        for i in 0..1000 {
            let ratio = 0.05 + 2.5 * (i as f64) / 999.0;
            let a = -3.0 + 6.0 * ((i * 37 % 1000) as f64) / 999.0;
            let eps = 0.05 + 0.9 * ((i * 101 % 1000) as f64) / 999.0;
            assert_eq!(ppo_objective(ratio, a, eps), brute_objective(ratio, a, eps));
        }
    }

    #[test]
    fn gae_hand_unrolled() {
        let (g, l) = (0.95, 0.95);
        let r = [1.0, -0.5, 2.0];
        let v = [0.3, 0.1, -0.2];
        let (adv, ret) = gae(&r, &v, &[false, false, true], 9.0, g, l).unwrap();
        let d2 = 2.0 - (-0.2);
        let d1 = -0.5 + g * -0.2 - 0.1;
        let d0 = 1.0 + g * 0.1 - 0.3;
        let a2 = d2;
        let a1 = d1 + g * l * a2;
        let a0 = d0 + g * l * a1;
        for (x, y) in adv.iter().zip([a0, a1, a2]) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((ret[0] - (a0 + 0.3)).abs() < 1e-12);
    }

    #[test]
    fn gae_lambda_zero_is_td_error() {
        let r = [0.5, 1.0];
        let v = [0.2, 0.4];
        let (adv, _) = gae(&r, &v, &[false, false], 0.7, 0.9, 0.0).unwrap();
        assert!((adv[0] - (0.5 + 0.9 * 0.4 - 0.2)).abs() < 1e-15);
        assert!((adv[1] - (1.0 + 0.9 * 0.7 - 0.4)).abs() < 1e-15);
        let (zero, _) = gae(&[0.0; 4], &[0.0; 4], &[false, false, false, true], 0.0, 0.95, 0.95)
            .unwrap();
        assert!(zero.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn gae_lambda_one_is_reward_to_go() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.gen_range(1..40);
            let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..1.0)).collect();
            let mut dones = vec![false; n];
            dones[n - 1] = true;
            let (adv, _) = gae(&r, &vec![0.0; n], &dones, 0.0, 0.95, 1.0).unwrap();
            for t in 0..n {
                let direct: f64 = (t..n).map(|k| 0.95f64.powi((k - t) as i32) * r[k]).sum();
                assert!((adv[t] - direct).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn normalization_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut a: Vec<f64> = (0..257).map(|_| rng.gen_range(-40.0..3.0)).collect();
        normalize_advantages(&mut a);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let sd = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() <= 1e-9);
        assert!((sd - 1.0).abs() <= 1e-9);
        let mut c = vec![2.5; 10];
        normalize_advantages(&mut c);
        assert!(c.iter().all(|x| *x == 0.0));
    }

    fn toy_batch(policy: &PolicyNet, value: &ValueNet, n: usize, adv: f64) -> RolloutBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut b = RolloutBatch {
            features: vec![],
            actions: vec![],
            log_probs: vec![],
            rewards: vec![],
            values: vec![],
            dones: vec![],
            advantages: vec![],
            returns: vec![],
        };
        for _ in 0..n {
            let obs = Observation {
                w_p: rng.gen_range(-0.8..0.8),
                o_p: rng.gen_range(-0.05..0.05),
                g_p: 0.04,
                r_p: 0.0,
            };
            let (a, lp) = policy.sample(&obs, &mut rng);
            b.features.push(obs.features());
            b.actions.push(a);
            b.log_probs.push(lp);
            b.rewards.push(0.0);
            b.values.push(value.value(&obs));
            b.dones.push(false);
            b.advantages.push(adv);
            b.returns.push(0.1);
        }
        b
    }

    #[test]
    fn first_ratio_is_one_and_zero_advantage_is_inert() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut policy = PolicyNet::new(&mut rng);
        let mut value = ValueNet::new(&mut rng);
        let before = policy.clone();
        let batch = toy_batch(&policy, &value, 100, 0.0);
        let cfg = PpoConfig {
            entropy_coef: 0.0,
            ..PpoConfig::default()
        };
        let stats = ppo_update(&mut policy, &mut value, &batch, &cfg, &mut rng).unwrap();
        assert_eq!(stats.first_ratio_dev, 0.0);
        assert_eq!(policy.net.layers(), before.net.layers());
    }

    #[test]
    fn positive_advantage_raises_taken_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut policy = PolicyNet::new(&mut rng);
        let mut value = ValueNet::new(&mut rng);
        let batch = toy_batch(&policy, &value, 1, 1.0);
        let obs = Observation::from_array([
            batch.features[0][0] * 0.88,
            batch.features[0][1] / 20.0,
            batch.features[0][2] / 20.0,
            batch.features[0][3] / 20.0,
        ]);
        let a = batch.actions[0].index();
        let lp_before = policy.log_probs(&obs)[a];
        let cfg = PpoConfig {
            epochs: 1,
            ..PpoConfig::default()
        };
        ppo_update(&mut policy, &mut value, &batch, &cfg, &mut rng).unwrap();
        assert!(policy.log_probs(&obs)[a] > lp_before);
    }

    #[test]
    fn zero_episodes_returns_initial_policy() {
        let cfg = EnvConfig::default();
        let out = train_ppo(&cfg, &PpoConfig::default(), 0, 3).unwrap();
        let mut rngs = RunRngs::new(3);
        assert_eq!(out.policy, PolicyNet::new(&mut rngs.init));
        assert!(out.curve.rows.is_empty());
    }

    #[test]
    fn short_run_is_deterministic() {
        let cfg = EnvConfig::default();
        let a = train_ppo(&cfg, &PpoConfig::default(), 3, 17).unwrap();
        let b = train_ppo(&cfg, &PpoConfig::default(), 3, 17).unwrap();
        assert_eq!(a.policy, b.policy);
        let strip = |c: &Curve| {
            c.rows
                .iter()
                .map(|r| (r.return_raw, r.success_rolling_50))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a.curve), strip(&b.curve));
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = PpoConfig {
            clip_eps: 1.0,
            ..PpoConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
