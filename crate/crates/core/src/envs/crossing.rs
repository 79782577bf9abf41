//! Crossing: the agent walks up a fixed column of a 12×12 grid through ten
//! lanes of horizontally moving cars. Reaching the top row scores +1 and puts
//! the agent back on the bottom row. A car hitting the agent pushes it one row
//! down. Episodes last 500 steps.
//!
//! Lane layouts (spacing, speed, phase) are drawn from the reset seed;
//! directions alternate between neighbouring lanes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_action, Environment, Step};
use crate::error::{Error, Result};

const SIZE: usize = 12;
const COLUMN: usize = 5;
const EPISODE: usize = 500;
const AGENT: f64 = 1.0;
const CAR: f64 = 0.5;

pub const NOOP: usize = 0;
pub const UP: usize = 1;
pub const DOWN: usize = 2;

#[derive(Debug, Clone, Copy)]
struct Lane {
    /// Distance between consecutive cars.
    gap: usize,
    /// The lane moves once every `period` steps.
    period: usize,
    right: bool,
    offset: usize,
}

impl Lane {
    fn occupied(&self, col: usize) -> bool {
        (col + self.offset) % self.gap == 0
    }

    fn advance(&mut self, t: usize) {
        if t % self.period == 0 {
            self.offset = if self.right {
                (self.offset + self.gap - 1) % self.gap
            } else {
                (self.offset + 1) % self.gap
            };
        }
    }
}

#[derive(Debug, Clone)]
pub struct Crossing {
    /// Lanes for rows 1..=10; rows 0 (goal) and 11 (start) are empty.
    lanes: Vec<Lane>,
    row: usize,
    t: usize,
    done: bool,
}

impl Default for Crossing {
    fn default() -> Self {
        Self::new()
    }
}

impl Crossing {
    pub fn new() -> Self {
        Self {
            lanes: Vec::new(),
            row: SIZE - 1,
            t: 0,
            done: true,
        }
    }

    fn lane(&self, row: usize) -> Option<&Lane> {
        (1..SIZE - 1).contains(&row).then(|| &self.lanes[row - 1])
    }

    fn hit(&self, row: usize) -> bool {
        self.lane(row).is_some_and(|l| l.occupied(COLUMN))
    }

    fn render(&self) -> Vec<f64> {
        let mut frame = vec![0.0; SIZE * SIZE];
        for (i, lane) in self.lanes.iter().enumerate() {
            for col in 0..SIZE {
                if lane.occupied(col) {
                    frame[(i + 1) * SIZE + col] = CAR;
                }
            }
        }
        frame[self.row * SIZE + COLUMN] = AGENT;
        frame
    }

    /// Whether `row` will hold a car after the next lane move.
    fn hit_next(&self, row: usize) -> bool {
        match self.lane(row) {
            Some(lane) => {
                let mut l = *lane;
                l.advance(self.t + 1);
                l.occupied(COLUMN)
            }
            None => false,
        }
    }
}

impl Environment for Crossing {
    fn name(&self) -> &'static str {
        "crossing"
    }

    fn actions(&self) -> usize {
        3
    }

    fn frame_shape(&self) -> (usize, usize) {
        (SIZE, SIZE)
    }

    fn max_steps(&self) -> usize {
        EPISODE
    }

    fn max_abs_reward(&self) -> f64 {
        1.0
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.lanes = (0..SIZE - 2)
            .map(|i| {
                let gap = rng.random_range(4..=6);
                Lane {
                    gap,
                    period: rng.random_range(1..=3),
                    right: i % 2 == 0,
                    offset: rng.random_range(0..gap),
                }
            })
            .collect();
        self.row = SIZE - 1;
        self.t = 0;
        self.done = false;
        self.render()
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        check_action(action, self.actions())?;
        if self.done {
            return Err(Error::State("step called on a finished Crossing episode".into()));
        }
        match action {
            UP => self.row = self.row.saturating_sub(1),
            DOWN => self.row = (self.row + 1).min(SIZE - 1),
            _ => {}
        }
        let mut reward = 0.0;
        if self.row == 0 {
            reward = 1.0;
            self.row = SIZE - 1;
        }
        self.t += 1;
        let t = self.t;
        for lane in &mut self.lanes {
            lane.advance(t);
        }
        if self.hit(self.row) {
            self.row = (self.row + 1).min(SIZE - 1);
        }
        self.done = self.t >= EPISODE;
        Ok(Step {
            frame: self.render(),
            reward,
            done: self.done,
        })
    }

    fn scripted_action(&self) -> usize {
        if !self.hit_next(self.row - 1) {
            UP
        } else if !self.hit_next(self.row) {
            NOOP
        } else {
            DOWN
        }
    }
}
