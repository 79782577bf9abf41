use std::collections::VecDeque;

use super::{EnvKind, Environment, EpisodeStats};
use crate::error::Result;

/// Number of consecutive frames in an observation.
pub const STACK_DEPTH: usize = 4;

/// Ring of the most recent frames.
#[derive(Debug, Clone)]
pub struct FrameStack {
    frames: VecDeque<Vec<f64>>,
    depth: usize,
}

impl FrameStack {
    pub fn new(depth: usize) -> Self {
        Self {
            frames: VecDeque::with_capacity(depth),
            depth,
        }
    }

    /// Fills every slot with `frame`.
    pub fn reset(&mut self, frame: &[f64]) {
        self.frames.clear();
        for _ in 0..self.depth {
            self.frames.push_back(frame.to_vec());
        }
    }

    /// Shifts in `frame`, dropping the oldest.
    pub fn push(&mut self, frame: Vec<f64>) {
        if self.frames.len() == self.depth {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
    }

    /// Concatenated frames, oldest first.
    pub fn observation(&self) -> Vec<f64> {
        self.frames.iter().flatten().copied().collect()
    }
}

/// A game seen through a [`FrameStack`], with score bookkeeping.
pub struct StackedEnv {
    env: Box<dyn Environment + Send>,
    stack: FrameStack,
    score: f64,
    steps: usize,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedStep {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

impl StackedEnv {
    pub fn new(kind: EnvKind) -> Self {
        Self::wrap(kind.make())
    }

    pub fn wrap(env: Box<dyn Environment + Send>) -> Self {
        Self {
            env,
            stack: FrameStack::new(STACK_DEPTH),
            score: 0.0,
            steps: 0,
            seed: 0,
        }
    }

    pub fn inner(&self) -> &dyn Environment {
        self.env.as_ref()
    }

    pub fn actions(&self) -> usize {
        self.env.actions()
    }

    /// `[STACK_DEPTH, H, W]`.
    pub fn observation_shape(&self) -> [usize; 3] {
        let (h, w) = self.env.frame_shape();
        [STACK_DEPTH, h, w]
    }

    pub fn observation_len(&self) -> usize {
        self.observation_shape().iter().product()
    }

    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        let frame = self.env.reset(seed);
        self.stack.reset(&frame);
        self.score = 0.0;
        self.steps = 0;
        self.seed = seed;
        self.stack.observation()
    }

    pub fn step(&mut self, action: usize) -> Result<StackedStep> {
        let s = self.env.step(action)?;
        self.stack.push(s.frame);
        self.score += s.reward;
        self.steps += 1;
        Ok(StackedStep {
            observation: self.stack.observation(),
            reward: s.reward,
            done: s.done,
        })
    }

    /// Statistics of the episode so far.
    pub fn stats(&self) -> EpisodeStats {
        EpisodeStats {
            score: self.score,
            steps: self.steps,
            seed: self.seed,
        }
    }
}
