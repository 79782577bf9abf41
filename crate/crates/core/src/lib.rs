//! Robust student deep Q-learning.
//!
//! A deep Q-network is trained with the usual temporal-difference loop while a
//! second *student* network is distilled from it online. The student explores,
//! is deployed, and is the only network hardened against observation attacks,
//! either empirically (training on projected-gradient adversarial states) or
//! provably (training on interval bounds of an L∞ box around each state).
//!
//! Module map:
//!
//! - [`nn`]: tensors, dense layers, gradients, Adam, checkpoints
//! - [`agents`]: plain, dueling and noisy architectures
//! - [`interval`]: interval bound propagation, robust loss, certification
//! - [`attacks`]: FGSM, PGD and the sign-flipped training attack
//! - [`envs`]: frame-stacked pixel-grid games
//! - [`replay`]: proportional prioritized replay
//! - [`training`]: DQN and robust-student training loops
//! - [`harness`]: experiment configs, evaluation, certification, reports

pub mod agents;
pub mod attacks;
pub mod envs;
mod error;
pub mod harness;
pub mod interval;
pub mod nn;
pub mod replay;
pub mod training;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/attacks.md")]
    mod attacks {}
    #[doc = include_str!("../../../book/src/intervals.md")]
    mod intervals {}
    #[doc = include_str!("../../../book/src/games.md")]
    mod games {}
    #[doc = include_str!("../../../book/src/replay.md")]
    mod replay {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/config.md")]
    mod config {}
}
