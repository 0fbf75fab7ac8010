//! Human-in-the-loop reinforcement learning for a simulated car.
//!
//! A coach speaks natural-language instructions while a PPO policy learns to
//! drive. Instructions are classified into actions (temporary overrides of the
//! sampled action) and rewards (which reshape the reward function's weights
//! and relabel recent experience).

mod error;
pub mod jsonl;
pub mod rng;

pub mod instruction;
pub mod policy;
pub mod reward;
pub mod service;
pub mod sim;
pub mod trainer;
pub mod trajectory;

pub use error::{Error, Result};
pub use rng::RngStream;
