//! Network-backed policy and value heads over the 4-feature observation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::EnvConfig;
use crate::env::{evaluate, Action, EpisodeLog, Observation, Policy};
use crate::error::Result;
use crate::nn::{self, NetParams};

pub const OBS_DIM: usize = 4;

/// Softmax policy over the three wrist commands.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub net: NetParams,
}

impl PolicyNet {
    pub fn new(rng: &mut impl Rng) -> Self {
        PolicyNet {
            net: NetParams::mlp(OBS_DIM, Action::COUNT, rng),
        }
    }

    pub fn from_params(net: NetParams) -> Result<Self> {
        check_shape(&net, OBS_DIM, Action::COUNT)?;
        Ok(PolicyNet { net })
    }

    pub fn logits(&self, features: &[f64; OBS_DIM]) -> Vec<f64> {
        self.net.forward(features).expect("policy input is 4-wide")
    }

    pub fn log_probs(&self, obs: &Observation) -> Vec<f64> {
        nn::log_softmax(&self.logits(&obs.features()))
    }

    pub fn probs(&self, obs: &Observation) -> Vec<f64> {
        nn::softmax(&self.logits(&obs.features()))
    }

    /// Sample an action; returns it with its log-probability.
    pub fn sample(&self, obs: &Observation, rng: &mut impl Rng) -> (Action, f64) {
        let logp = self.log_probs(obs);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = Action::COUNT - 1;
        for (i, lp) in logp.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                pick = i;
                break;
            }
        }
        (Action::from_index(pick).expect("index < 3"), logp[pick])
    }

    /// Most probable action; ties go to the lowest code.
    pub fn greedy(&self, obs: &Observation) -> Action {
        let logits = self.logits(&obs.features());
        let mut best = 0;
        for (i, z) in logits.iter().enumerate() {
            if *z > logits[best] {
                best = i;
            }
        }
        Action::from_index(best).expect("index < 3")
    }
}

/// Always takes the most probable action.
#[derive(Debug, Clone)]
pub struct Greedy<'a>(pub &'a PolicyNet);

impl Policy for Greedy<'_> {
    fn act(&mut self, obs: &Observation) -> Action {
        self.0.greedy(obs)
    }
}

/// Samples each action from the policy with its own seeded stream.
#[derive(Debug, Clone)]
pub struct Sampled<'a> {
    pub policy: &'a PolicyNet,
    rng: ChaCha8Rng,
}

impl<'a> Sampled<'a> {
    pub fn new(policy: &'a PolicyNet, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(7);
        Sampled { policy, rng }
    }
}

impl Policy for Sampled<'_> {
    fn act(&mut self, obs: &Observation) -> Action {
        self.policy.sample(obs, &mut self.rng).0
    }
}

/// How a trained policy picks actions when it is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Draw from the action distribution, as during training.
    #[default]
    Sample,
    /// Take the most probable action.
    Greedy,
}

impl std::str::FromStr for EvalMode {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(EvalMode::Sample),
            "greedy" => Ok(EvalMode::Greedy),
            other => Err(crate::error::Error::InvalidConfig(format!(
                "unknown eval mode {other:?}; expected sample or greedy"
            ))),
        }
    }
}

/// Score `policy` over `episodes` seeded episodes. Sampled evaluation draws
/// its actions from a stream derived from the same seed.
pub fn evaluate_policy(
    policy: &PolicyNet,
    mode: EvalMode,
    cfg: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<Vec<EpisodeLog>> {
    match mode {
        EvalMode::Greedy => evaluate(&mut Greedy(policy), cfg, episodes, seed),
        EvalMode::Sample => evaluate(&mut Sampled::new(policy, seed), cfg, episodes, seed),
    }
}

/// Scalar state-value head.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    pub net: NetParams,
}

impl ValueNet {
    pub fn new(rng: &mut impl Rng) -> Self {
        ValueNet {
            net: NetParams::mlp(OBS_DIM, 1, rng),
        }
    }

    pub fn from_params(net: NetParams) -> Result<Self> {
        check_shape(&net, OBS_DIM, 1)?;
        Ok(ValueNet { net })
    }

    pub fn value(&self, obs: &Observation) -> f64 {
        self.net.forward(&obs.features()).expect("value input is 4-wide")[0]
    }
}

pub(crate) fn check_shape(net: &NetParams, input: usize, output: usize) -> Result<()> {
    use crate::error::Error;
    if net.input_dim() != input {
        return Err(Error::DimensionMismatch {
            expected: input,
            got: net.input_dim(),
        });
    }
    if net.output_dim() != output {
        return Err(Error::DimensionMismatch {
            expected: output,
            got: net.output_dim(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_policy_is_near_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = PolicyNet::new(&mut rng);
        let obs = Observation {
            w_p: 0.3,
            o_p: 0.01,
            g_p: 0.04,
            r_p: 0.01,
        };
        for q in p.probs(&obs) {
            assert!((q - 1.0 / 3.0).abs() < 0.05, "{q}");
        }
    }

    #[test]
    fn sampling_frequencies_follow_probs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = PolicyNet::new(&mut rng);
        p.net.layers_mut()[2].b = vec![0.0, 1.0, -1.0];
        let obs = Observation::default();
        let probs = p.probs(&obs);
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            let (a, lp) = p.sample(&obs, &mut rng);
            assert!((lp - probs[a.index()].ln()).abs() < 1e-12);
            counts[a.index()] += 1;
        }
        for i in 0..3 {
            assert!((counts[i] as f64 / 30_000.0 - probs[i]).abs() < 0.015);
        }
        assert_eq!(p.greedy(&obs), Action::StepPlus);
    }

    #[test]
    fn sampled_evaluation_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = PolicyNet::new(&mut rng);
        let cfg = EnvConfig::default();
        let a = evaluate_policy(&p, EvalMode::Sample, &cfg, 3, 9).unwrap();
        let b = evaluate_policy(&p, EvalMode::Sample, &cfg, 3, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!("greedy".parse::<EvalMode>().unwrap(), EvalMode::Greedy);
        assert!("argmax".parse::<EvalMode>().is_err());
    }

    #[test]
    fn shape_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(PolicyNet::from_params(NetParams::mlp(4, 4, &mut rng)).is_err());
        assert!(ValueNet::from_params(NetParams::mlp(4, 3, &mut rng)).is_err());
        assert!(ValueNet::from_params(NetParams::mlp(4, 1, &mut rng)).is_ok());
    }
}
