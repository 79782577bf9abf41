//! Pixel-grid games and the frame-stacking wrapper agents observe them through.
//!
//! Each game renders a single grayscale frame of `H×W` values in `[0, 1]`.
//! [`StackedEnv`] keeps the last [`STACK_DEPTH`] frames and hands the agent
//! their concatenation, oldest first.

mod catch;
mod crossing;
mod stack;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use catch::Catch;
pub use crossing::Crossing;
pub use stack::{FrameStack, StackedEnv, STACK_DEPTH};

/// A single-frame game with a discrete action set.
pub trait Environment {
    fn name(&self) -> &'static str;
    fn actions(&self) -> usize;
    /// `(height, width)` of one frame.
    fn frame_shape(&self) -> (usize, usize);
    /// Upper bound on the steps of an episode.
    fn max_steps(&self) -> usize;
    /// Upper bound on `|reward|` of a single step.
    fn max_abs_reward(&self) -> f64;
    /// Starts a new episode and returns its first frame.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    /// Advances one frame. Errors on an out-of-range action or after the
    /// episode has ended.
    fn step(&mut self, action: usize) -> Result<Step>;
    /// Action of a hand-written near-optimal controller for the current state.
    fn scripted_action(&self) -> usize;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub frame: Vec<f64>,
    /// Raw (unclipped) reward.
    pub reward: f64,
    pub done: bool,
}

/// Score summary of one finished episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    /// Sum of raw rewards.
    pub score: f64,
    pub steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Catch,
    Crossing,
}

impl EnvKind {
    pub const ALL: [EnvKind; 2] = [EnvKind::Catch, EnvKind::Crossing];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Catch => "catch",
            EnvKind::Crossing => "crossing",
        }
    }

    pub fn make(self) -> Box<dyn Environment + Send> {
        match self {
            EnvKind::Catch => Box::new(Catch::new()),
            EnvKind::Crossing => Box::new(Crossing::new()),
        }
    }

    /// Length of a stacked observation.
    pub fn observation_len(self) -> usize {
        let (h, w) = self.make().frame_shape();
        STACK_DEPTH * h * w
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "catch" => Ok(EnvKind::Catch),
            "crossing" => Ok(EnvKind::Crossing),
            other => Err(Error::Config(format!("unknown environment {other:?} (expected catch or crossing)"))),
        }
    }
}

/// Sign of a raw reward, the form used inside training.
pub fn clip_reward(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_action(action: usize, actions: usize) -> Result<()> {
    if action >= actions {
        return Err(Error::Index {
            index: action,
            len: actions,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn play<F: FnMut(&dyn Environment, &mut ChaCha8Rng) -> usize>(kind: EnvKind, seed: u64, mut policy: F) -> EpisodeStats {
        let mut env = kind.make();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        env.reset(seed);
        let (mut score, mut steps) = (0.0, 0);
        loop {
            let a = policy(env.as_ref(), &mut rng);
            let s = env.step(a).unwrap();
            assert!(s.reward.abs() <= env.max_abs_reward());
            assert!(s.frame.iter().all(|v| (0.0..=1.0).contains(v)));
            score += s.reward;
            steps += 1;
            if s.done {
                break;
            }
        }
        assert!(steps <= env.max_steps());
        EpisodeStats { score, steps, seed }
    }

    #[test]
    fn reset_is_deterministic_and_in_range() {
        for kind in EnvKind::ALL {
            let mut a = kind.make();
            let mut b = kind.make();
            let fa = a.reset(7);
            assert_eq!(fa, b.reset(7));
            let (h, w) = a.frame_shape();
            assert_eq!(fa.len(), h * w);
            assert!(fa.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn fixed_actions_give_identical_trajectories() {
        for kind in EnvKind::ALL {
            let run = || {
                let mut env = kind.make();
                env.reset(3);
                let mut frames = Vec::new();
                for t in 0..150 {
                    let s = env.step(t % env.actions()).unwrap();
                    frames.push((s.frame, s.reward.to_bits(), s.done));
                    if s.done {
                        break;
                    }
                }
                frames
            };
            assert_eq!(run(), run());
        }
    }

    #[test]
    fn illegal_action_and_step_after_done() {
        for kind in EnvKind::ALL {
            let mut env = kind.make();
            env.reset(0);
            assert!(matches!(env.step(env.actions()), Err(Error::Index { .. })));
            while !env.step(0).unwrap().done {}
            assert!(matches!(env.step(0), Err(Error::State(_))));
        }
    }

    #[test]
    fn scripted_policies_reach_documented_scores() {
        for seed in 0..20 {
            let catch = play(EnvKind::Catch, seed, |e, _| e.scripted_action());
            assert_eq!(catch.score, 20.0);
            let crossing = play(EnvKind::Crossing, seed, |e, _| e.scripted_action());
            assert!(crossing.score >= 10.0, "seed {seed}: {}", crossing.score);
        }
    }

    #[test]
    fn random_policy_scores_below_scripted() {
        for kind in EnvKind::ALL {
            let mut random = 0.0;
            let mut scripted = 0.0;
            for seed in 0..100 {
                random += play(kind, seed, |e, rng| rng.random_range(0..e.actions())).score;
                scripted += play(kind, seed, |e, _| e.scripted_action()).score;
            }
            assert!(random < scripted, "{kind}: random {random} vs scripted {scripted}");
        }
    }

    #[test]
    fn reward_clipping() {
        assert_eq!(clip_reward(3.5), 1.0);
        assert_eq!(clip_reward(-0.2), -1.0);
        assert_eq!(clip_reward(0.0), 0.0);
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in EnvKind::ALL {
            assert_eq!(kind.name().parse::<EnvKind>().unwrap(), kind);
        }
        assert!("pong".parse::<EnvKind>().is_err());
    }
}
