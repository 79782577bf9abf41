use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mean_std, EvalConfig};
use crate::agents::{epsilon_greedy_in, AgentNet, Mode};
use crate::attacks::{perturb_for_agent, AttackSpec};
use crate::envs::{EnvKind, EpisodeStats, StackedEnv};
use crate::error::{Error, Result};

/// Who plays an evaluation episode.
#[derive(Debug, Clone, Copy)]
pub enum Player<'a> {
    /// A network, greedy with noise off plus the configured ε-greedy.
    Network(&'a AgentNet),
    /// The game's hand-written controller; cannot be attacked.
    Scripted,
}

/// Random stream of episode `seed`, shared by ε-greedy draws and attacks.
fn episode_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    rng
}

/// Plays one episode on game seed `seed`, calling `visit` with every
/// observation the agent acts on.
pub fn play_episode(
    env: EnvKind,
    player: Player<'_>,
    attack: &AttackSpec,
    epsilon: f64,
    seed: u64,
    mut visit: impl FnMut(&[f64]) -> Result<()>,
) -> Result<EpisodeStats> {
    let mut game = StackedEnv::new(env);
    let mut rng = episode_rng(seed);
    let mut obs = game.reset(seed);
    if let Player::Network(net) = player {
        if net.input_dim() != obs.len() || net.actions() != game.actions() {
            return Err(Error::Config(format!(
                "network expects {} inputs and {} actions, {env} has {} and {}",
                net.input_dim(),
                net.actions(),
                obs.len(),
                game.actions()
            )));
        }
    }
    loop {
        let action = match player {
            Player::Network(net) => {
                let seen = perturb_for_agent(attack, net, &obs, Mode::Eval, &mut rng)?;
                visit(&seen)?;
                epsilon_greedy_in(net, &seen, epsilon, Mode::Eval, &mut rng)?
            }
            Player::Scripted => {
                if !attack.is_none() {
                    return Err(Error::Config("the scripted controller cannot be attacked".into()));
                }
                visit(&obs)?;
                game.inner().scripted_action()
            }
        };
        let step = game.step(action)?;
        if step.done {
            return Ok(game.stats());
        }
        obs = step.observation;
    }
}

/// Scores of one attack over the evaluation episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub attack: AttackSpec,
    pub label: String,
    pub episodes: Vec<EpisodeStats>,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl AttackRow {
    pub fn from_episodes(attack: AttackSpec, episodes: Vec<EpisodeStats>) -> Self {
        let scores: Vec<f64> = episodes.iter().map(|e| e.score).collect();
        let (mean, std) = mean_std(&scores);
        Self {
            attack,
            label: attack.to_string(),
            n: episodes.len(),
            episodes,
            mean,
            std,
        }
    }
}

/// Runs `config.episodes` seeded episodes per attack.
pub fn evaluate(env: EnvKind, player: Player<'_>, attacks: &[AttackSpec], config: &EvalConfig) -> Result<Vec<AttackRow>> {
    let mut rows = Vec::with_capacity(attacks.len());
    for attack in attacks {
        attack.validate()?;
        let mut episodes = Vec::new();
        for i in 0..config.episodes {
            let seed = config.base_seed + i;
            episodes.push(play_episode(env, player, attack, config.epsilon, seed, |_| Ok(()))?);
        }
        rows.push(AttackRow::from_episodes(*attack, episodes));
    }
    Ok(rows)
}
