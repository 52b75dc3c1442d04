use serde::Serialize;

use super::{apply_action, digest_json, ActionId, EpisodeSpec, Environment, StepResult};
use crate::error::{Error, Result};
use crate::geometry::N_STRIPS;
use crate::merit::mse;
use crate::reward::{reward, RewardKind};

pub const TARGET_NAMES: [&str; 6] = ["constant-0.5", "ramp", "step", "triangle", "sine", "sine2"];

/// Named 13-point target shapes, all inside [0.1, 0.9].
pub fn builtin_targets() -> Vec<(&'static str, Vec<f64>)> {
    TARGET_NAMES
        .iter()
        .map(|&name| (name, builtin_target(name).expect("known target")))
        .collect()
}

pub fn builtin_target(name: &str) -> Result<Vec<f64>> {
    let n = N_STRIPS;
    let last = (n - 1) as f64;
    let tau = std::f64::consts::TAU;
    let f: Box<dyn Fn(f64) -> f64> = match name {
        "constant-0.5" => Box::new(|_| 0.5),
        "ramp" => Box::new(|u| 0.1 + 0.8 * u),
        "step" => Box::new(|u| if u < 0.5 { 0.1 } else { 0.9 }),
        "triangle" => Box::new(|u| 0.1 + 0.8 * (1.0 - (2.0 * u - 1.0).abs())),
        "sine" => Box::new(move |u| 0.5 + 0.4 * (tau * u).sin()),
        "sine2" => Box::new(move |u| 0.5 + 0.4 * (2.0 * tau * u).sin()),
        _ => return Err(Error::Config(format!("unknown target {name:?}"))),
    };
    Ok((0..n).map(|i| f(i as f64 / last)).collect())
}

/// Continuous 13-parameter regression toward a target vector.
#[derive(Debug, Clone)]
pub struct RegressionEnv {
    spec: EpisodeSpec,
    target: Vec<f64>,
    increment: f64,
    bounds: (f64, f64),
    state: Vec<f64>,
    t: usize,
    last_merit: f64,
}

#[derive(Serialize)]
struct DigestInput<'a> {
    kind: &'static str,
    spec: &'a EpisodeSpec,
    target: &'a [f64],
    increment: f64,
    bounds: (f64, f64),
}

impl RegressionEnv {
    pub const DEFAULT_INCREMENT: f64 = 0.01;
    pub const DEFAULT_MAX_TIMESTEPS: usize = 1000;

    pub fn new(target: Vec<f64>, spec: EpisodeSpec) -> Result<Self> {
        Self::with_increment(target, spec, Self::DEFAULT_INCREMENT)
    }

    /// Default episode: 1000 steps from all-0.5.
    pub fn default_spec(reward_kind: RewardKind) -> EpisodeSpec {
        EpisodeSpec {
            max_timesteps: Self::DEFAULT_MAX_TIMESTEPS,
            reward_kind,
            initial_state: vec![0.5; N_STRIPS],
        }
    }

    pub fn with_increment(target: Vec<f64>, spec: EpisodeSpec, increment: f64) -> Result<Self> {
        spec.validate()?;
        let bounds = (0.0, 1.0);
        if target.len() != N_STRIPS {
            return Err(Error::Dimension {
                expected: N_STRIPS,
                actual: target.len(),
            });
        }
        if spec.initial_state.len() != N_STRIPS {
            return Err(Error::Dimension {
                expected: N_STRIPS,
                actual: spec.initial_state.len(),
            });
        }
        if spec.initial_state.iter().any(|&v| v < bounds.0 || v > bounds.1) {
            return Err(Error::Config("initial state outside [0, 1]".into()));
        }
        if !(increment > 0.0 && increment.is_finite()) {
            return Err(Error::Config("increment must be positive".into()));
        }
        let last_merit = mse(&spec.initial_state, &target)?;
        Ok(Self {
            state: spec.initial_state.clone(),
            spec,
            target,
            increment,
            bounds,
            t: 0,
            last_merit,
        })
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }
}

impl Environment for RegressionEnv {
    fn obs_dim(&self) -> usize {
        N_STRIPS
    }

    fn n_actions(&self) -> usize {
        2 * N_STRIPS
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        self.state = self.spec.initial_state.clone();
        self.t = 0;
        self.last_merit = mse(&self.state, &self.target)?;
        Ok(self.state.clone())
    }

    fn step(&mut self, action: ActionId) -> Result<StepResult> {
        if self.t >= self.spec.max_timesteps {
            return Err(Error::EpisodeDone);
        }
        let next = apply_action(&self.state, action, self.increment, self.bounds)?;
        let merit = mse(&next, &self.target)?;
        let r = reward(self.spec.reward_kind, merit - self.last_merit)?;
        self.state = next;
        self.last_merit = merit;
        self.t += 1;
        Ok(StepResult {
            observation: self.state.clone(),
            reward: r,
            done: self.t == self.spec.max_timesteps,
            merit,
        })
    }

    fn merit(&self) -> f64 {
        self.last_merit
    }

    fn observation(&self) -> Vec<f64> {
        self.state.clone()
    }

    fn timestep(&self) -> usize {
        self.t
    }

    fn spec_digest(&self) -> String {
        digest_json(&DigestInput {
            kind: "regression",
            spec: &self.spec,
            target: &self.target,
            increment: self.increment,
            bounds: self.bounds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets_are_in_range() {
        let all = builtin_targets();
        assert!(all.len() >= 6);
        for (name, t) in &all {
            assert_eq!(t.len(), 13, "{name}");
            assert!(t.iter().all(|&v| (0.1 - 1e-12..=0.9 + 1e-12).contains(&v)), "{name}");
        }
        let ramp = builtin_target("ramp").unwrap();
        assert!((ramp[1] - (0.1 + 0.8 / 12.0)).abs() < 1e-12);
        assert_eq!(builtin_target("constant-0.5").unwrap(), vec![0.5; 13]);
        assert!(builtin_target("spiral").is_err());
    }
}
