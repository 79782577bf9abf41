use serde::{Deserialize, Serialize};

use super::evaluate::{play_episode, Player};
use super::{mean_std, EvalConfig};
use crate::agents::AgentNet;
use crate::attacks::AttackSpec;
use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::interval::epsilon_max;
use crate::nn::Tensor;

/// Certified radii over one clean episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertEpisode {
    pub seed: u64,
    pub score: f64,
    pub steps: usize,
    /// ε_max of every certified state, in visiting order.
    pub radii: Vec<f64>,
    pub mean: f64,
    pub mean_x255: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertSummary {
    pub episodes: Vec<CertEpisode>,
    /// Mean and sample standard deviation over all certified states.
    pub mean: f64,
    pub std: f64,
    pub mean_x255: f64,
    pub std_x255: f64,
    pub states: usize,
    /// Mean clean score of the certification episodes.
    pub score: f64,
}

/// Plays clean episodes with `net` and records ε_max at every
/// `stride`-th state.
pub fn certify(env: EnvKind, net: &AgentNet, config: &EvalConfig) -> Result<CertSummary> {
    if !net.is_dueling() {
        return Err(Error::Config(
            "certification needs a dueling network (the advantage head is certified)".into(),
        ));
    }
    let stride = config.certify_stride.max(1);
    let mut episodes = Vec::new();
    for i in 0..config.certify_episodes {
        let seed = config.base_seed + i;
        let mut radii = Vec::new();
        let mut visited = 0usize;
        let stats = play_episode(env, Player::Network(net), &AttackSpec::none(), config.epsilon, seed, |obs| {
            if visited % stride == 0 {
                radii.push(epsilon_max(net, &Tensor::vector(obs.to_vec()))?);
            }
            visited += 1;
            Ok(())
        })?;
        let (mean, _) = mean_std(&radii);
        episodes.push(CertEpisode {
            seed,
            score: stats.score,
            steps: stats.steps,
            mean,
            mean_x255: mean * 255.0,
            radii,
        });
    }
    Ok(summarize(episodes))
}

pub fn summarize(episodes: Vec<CertEpisode>) -> CertSummary {
    let all: Vec<f64> = episodes.iter().flat_map(|e| e.radii.iter().copied()).collect();
    let (mean, std) = mean_std(&all);
    let scores: Vec<f64> = episodes.iter().map(|e| e.score).collect();
    CertSummary {
        states: all.len(),
        score: mean_std(&scores).0,
        mean,
        std,
        mean_x255: mean * 255.0,
        std_x255: std * 255.0,
        episodes,
    }
}
