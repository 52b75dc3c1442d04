//! Inverse design of 2D transmissive metagratings: a frequency-domain field
//! solver, image merits, reward shaping, RL environments, a PPO agent and a
//! convolutional inverse model.

pub mod checkpoint;
pub mod env;
pub mod error;
pub mod fdfd;
pub mod fieldmap;
pub mod geometry;
pub mod merit;
pub mod optim;
pub mod pipeline;
pub mod ppo;
pub mod reward;
pub mod sl;

pub use error::{Error, Result};
