use super::{ActionId, Environment, StepResult};
use crate::error::{Error, Result};

/// Single-step two-armed bandit: arm 0 pays +1, arm 1 pays −1.
#[derive(Debug, Clone, Default)]
pub struct BanditEnv {
    t: usize,
    last: f64,
}

impl BanditEnv {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Environment for BanditEnv {
    fn obs_dim(&self) -> usize {
        1
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        self.t = 0;
        self.last = 0.0;
        Ok(vec![1.0])
    }

    fn step(&mut self, action: ActionId) -> Result<StepResult> {
        if self.t >= 1 {
            return Err(Error::EpisodeDone);
        }
        let reward = match action.0 {
            0 => 1.0,
            1 => -1.0,
            other => return Err(Error::Action(other, 2)),
        };
        self.t = 1;
        // merit: 0 for the good arm, 1 for the bad one
        self.last = (1.0 - reward) / 2.0;
        Ok(StepResult {
            observation: vec![1.0],
            reward,
            done: true,
            merit: self.last,
        })
    }

    fn merit(&self) -> f64 {
        self.last
    }

    fn observation(&self) -> Vec<f64> {
        vec![1.0]
    }

    fn timestep(&self) -> usize {
        self.t
    }

    fn spec_digest(&self) -> String {
        "bandit".into()
    }
}
