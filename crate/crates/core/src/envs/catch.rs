//! Catch: a ball falls one row per step from a random column of a 10×10 grid;
//! the one-pixel paddle on the bottom row moves left or right to meet it.
//! A catch scores +1, a miss −1, and the episode ends after 20 drops.
//!
//! The ball spawns on the top row and is judged when it reaches the bottom
//! row nine steps later, so the paddle can reach any column in time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_action, Environment, Step};
use crate::error::{Error, Result};

const SIZE: usize = 10;
const DROPS: usize = 20;
const BALL: f64 = 1.0;
const PADDLE: f64 = 0.5;

pub const NOOP: usize = 0;
pub const LEFT: usize = 1;
pub const RIGHT: usize = 2;

#[derive(Debug, Clone)]
pub struct Catch {
    rng: ChaCha8Rng,
    ball_row: usize,
    ball_col: usize,
    paddle: usize,
    drops: usize,
    done: bool,
}

impl Default for Catch {
    fn default() -> Self {
        Self::new()
    }
}

impl Catch {
    pub fn new() -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(0),
            ball_row: 0,
            ball_col: 0,
            paddle: SIZE / 2,
            drops: 0,
            done: true,
        }
    }

    fn spawn(&mut self) {
        self.ball_row = 0;
        self.ball_col = self.rng.random_range(0..SIZE);
    }

    fn render(&self) -> Vec<f64> {
        let mut frame = vec![0.0; SIZE * SIZE];
        frame[(SIZE - 1) * SIZE + self.paddle] = PADDLE;
        frame[self.ball_row * SIZE + self.ball_col] = BALL;
        frame
    }
}

impl Environment for Catch {
    fn name(&self) -> &'static str {
        "catch"
    }

    fn actions(&self) -> usize {
        3
    }

    fn frame_shape(&self) -> (usize, usize) {
        (SIZE, SIZE)
    }

    fn max_steps(&self) -> usize {
        DROPS * (SIZE - 1)
    }

    fn max_abs_reward(&self) -> f64 {
        1.0
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.paddle = self.rng.random_range(0..SIZE);
        self.drops = 0;
        self.done = false;
        self.spawn();
        self.render()
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        check_action(action, self.actions())?;
        if self.done {
            return Err(Error::State("step called on a finished Catch episode".into()));
        }
        match action {
            LEFT => self.paddle = self.paddle.saturating_sub(1),
            RIGHT => self.paddle = (self.paddle + 1).min(SIZE - 1),
            _ => {}
        }
        self.ball_row += 1;
        let mut reward = 0.0;
        if self.ball_row == SIZE - 1 {
            reward = if self.ball_col == self.paddle { 1.0 } else { -1.0 };
            self.drops += 1;
            if self.drops == DROPS {
                self.done = true;
            } else {
                self.spawn();
            }
        }
        Ok(Step {
            frame: self.render(),
            reward,
            done: self.done,
        })
    }

    fn scripted_action(&self) -> usize {
        match self.ball_col.cmp(&self.paddle) {
            std::cmp::Ordering::Less => LEFT,
            std::cmp::Ordering::Greater => RIGHT,
            std::cmp::Ordering::Equal => NOOP,
        }
    }
}
