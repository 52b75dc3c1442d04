//! Episodic environments sharing one stepping interface.

mod bandit;
mod metagrating;
mod regression;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use bandit::BanditEnv;
pub use metagrating::{MetagratingEnv, MeritCache};
pub use regression::{builtin_target, builtin_targets, RegressionEnv, TARGET_NAMES};

use crate::error::{Error, Result};
use crate::geometry::N_STRIPS;
use crate::reward::RewardKind;

/// Number of actions over the 13 strips: one increase and one decrease each.
pub const N_ACTIONS: usize = 2 * N_STRIPS;

/// `0..n` increase element `k = index`, `n..2n` decrease element `k = index − n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionId(pub usize);

impl ActionId {
    pub fn element(self, n: usize) -> usize {
        self.0 % n
    }

    pub fn is_increase(self, n: usize) -> bool {
        self.0 < n
    }
}

/// Moves one element by ±`increment` and clamps it into `bounds`.
pub fn apply_action(state: &[f64], a: ActionId, increment: f64, bounds: (f64, f64)) -> Result<Vec<f64>> {
    let n = state.len();
    if a.0 >= 2 * n {
        return Err(Error::Action(a.0, 2 * n));
    }
    let mut next = state.to_vec();
    let k = a.element(n);
    let moved = if a.is_increase(n) {
        next[k] + increment
    } else {
        next[k] - increment
    };
    next[k] = moved.clamp(bounds.0, bounds.1);
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub max_timesteps: usize,
    pub reward_kind: RewardKind,
    pub initial_state: Vec<f64>,
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.max_timesteps == 0 {
            return Err(Error::Config("max_timesteps must be at least 1".into()));
        }
        if self.initial_state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("initial state must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// Merit after the step.
    pub merit: f64,
}

pub trait Environment {
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Restores the initial state and returns the first observation.
    fn reset(&mut self) -> Result<Vec<f64>>;
    fn step(&mut self, action: ActionId) -> Result<StepResult>;
    /// Merit of the current state.
    fn merit(&self) -> f64;
    fn observation(&self) -> Vec<f64>;
    fn timestep(&self) -> usize;
    /// Hex digest identifying the episode specification and target.
    fn spec_digest(&self) -> String;
}

pub(crate) fn digest_json<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("serializable spec");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Decimal text with six significant digits.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let decimals = (5 - exp).max(0) as usize;
    let value: f64 = mantissa.parse::<f64>().expect("mantissa") * 10f64.powi(exp);
    format!("{value:.decimals$}")
}

/// Tab-separated per-step episode log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeLog {
    text: String,
}

impl EpisodeLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn begin_episode(&mut self, episode: usize, spec_digest: &str) {
        self.text.push_str(&format!("# episode {episode} spec {spec_digest}\n"));
        self.text.push_str("t\taction\tmerit\treward\n");
    }

    pub fn record(&mut self, t: usize, action: ActionId, merit: f64, reward: f64) {
        self.text.push_str(&format!(
            "{t}\t{}\t{}\t{}\n",
            action.0,
            format_sig6(merit),
            format_sig6(reward)
        ));
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn into_string(self) -> String {
        self.text
    }
}
