use std::collections::HashMap;
use std::sync::Arc;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{digest_json, ActionId, EpisodeSpec, Environment, StepResult};
use crate::error::{Error, Result};
use crate::fdfd::{SimConfig, Simulator};
use crate::fieldmap::FieldMap;
use crate::geometry::{DesignVector, N_LEVELS, N_STRIPS};
use crate::merit::{dissimilarity, SsimParams};
use crate::reward::{reward, RewardKind};

/// Dissimilarity per design for one target; repeated states are not re-simulated.
pub type MeritCache = HashMap<DesignVector, f64>;

/// Design refinement against a target field map.
#[derive(Debug, Clone)]
pub struct MetagratingEnv {
    sim: Simulator,
    target: Arc<FieldMap>,
    target_digest: String,
    ssim: SsimParams,
    spec: EpisodeSpec,
    active: usize,
    initial: DesignVector,
    state: DesignVector,
    t: usize,
    last_merit: f64,
    cache: MeritCache,
    aborted: Option<String>,
}

#[derive(Serialize)]
struct DigestInput<'a> {
    kind: &'static str,
    spec: &'a EpisodeSpec,
    target: &'a str,
    sim: &'a SimConfig,
    ssim: &'a SsimParams,
    active: usize,
}

impl MetagratingEnv {
    pub const DEFAULT_MAX_TIMESTEPS: usize = 20;

    /// 20 steps from all strips at 200 nm.
    pub fn default_spec(reward_kind: RewardKind) -> EpisodeSpec {
        EpisodeSpec {
            max_timesteps: Self::DEFAULT_MAX_TIMESTEPS,
            reward_kind,
            initial_state: vec![0.2; N_STRIPS],
        }
    }

    /// `active` strips may carry Si; the rest stay at zero width. The
    /// initial state is masked accordingly.
    pub fn new(sim: Simulator, target: Arc<FieldMap>, spec: EpisodeSpec, active: usize) -> Result<Self> {
        spec.validate()?;
        if active == 0 || active > sim.config().grid.lateral_slots {
            return Err(Error::Config(format!(
                "active strip count {active} must be in 1..={}",
                sim.config().grid.lateral_slots
            )));
        }
        let initial = DesignVector::from_widths(&spec.initial_state)?.masked(active);
        if target.shape() != sim.config().window_resolution {
            return Err(Error::Shape(target.shape(), sim.config().window_resolution));
        }
        let ssim = SsimParams::for_target(&target);
        let mut hasher = Sha256::new();
        for v in target.data() {
            hasher.update(v.to_le_bytes());
        }
        let target_digest = hex::encode(hasher.finalize());
        let mut env = Self {
            sim,
            target,
            target_digest,
            ssim,
            spec,
            active,
            initial,
            state: initial,
            t: 0,
            last_merit: f64::NAN,
            cache: MeritCache::new(),
            aborted: None,
        };
        env.last_merit = env.evaluate(&initial)?;
        Ok(env)
    }

    pub fn with_ssim(mut self, ssim: SsimParams) -> Result<Self> {
        self.ssim = ssim;
        self.cache.clear();
        let state = self.state;
        self.last_merit = self.evaluate(&state)?;
        Ok(self)
    }

    /// Dissimilarity of `d` against the target (cached).
    pub fn evaluate(&mut self, d: &DesignVector) -> Result<f64> {
        if let Some(&m) = self.cache.get(d) {
            return Ok(m);
        }
        let map = self.sim.simulate(d)?;
        let m = dissimilarity(&self.target, &map, &self.ssim)?;
        self.cache.insert(*d, m);
        Ok(m)
    }

    pub fn design(&self) -> DesignVector {
        self.state
    }

    pub fn ssim_params(&self) -> &SsimParams {
        &self.ssim
    }

    pub fn active_strips(&self) -> usize {
        self.active
    }

    pub fn simulations(&self) -> usize {
        self.cache.len()
    }

    /// Level-space action: strips outside the active set never move.
    fn next_design(&self, a: ActionId) -> Result<DesignVector> {
        if a.0 >= 2 * N_STRIPS {
            return Err(Error::Action(a.0, 2 * N_STRIPS));
        }
        let k = a.element(N_STRIPS);
        let mut levels = *self.state.levels();
        if k < self.active {
            let l = levels[k] as usize;
            levels[k] = if a.is_increase(N_STRIPS) {
                (l + 1).min(N_LEVELS - 1) as u8
            } else {
                l.saturating_sub(1) as u8
            };
        }
        DesignVector::from_levels(levels)
    }
}

impl Environment for MetagratingEnv {
    fn obs_dim(&self) -> usize {
        N_STRIPS
    }

    fn n_actions(&self) -> usize {
        2 * N_STRIPS
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        self.aborted = None;
        self.state = self.initial;
        self.t = 0;
        let initial = self.initial;
        self.last_merit = self.evaluate(&initial)?;
        Ok(self.state.to_vec())
    }

    fn step(&mut self, action: ActionId) -> Result<StepResult> {
        if let Some(reason) = &self.aborted {
            return Err(Error::Aborted(reason.clone()));
        }
        if self.t >= self.spec.max_timesteps {
            return Err(Error::EpisodeDone);
        }
        let next = self.next_design(action)?;
        let merit = match self.evaluate(&next) {
            Ok(m) => m,
            Err(e) => {
                self.aborted = Some(e.to_string());
                return Err(Error::Aborted(e.to_string()));
            }
        };
        let r = reward(self.spec.reward_kind, merit - self.last_merit)?;
        self.state = next;
        self.last_merit = merit;
        self.t += 1;
        Ok(StepResult {
            observation: self.state.to_vec(),
            reward: r,
            done: self.t == self.spec.max_timesteps,
            merit,
        })
    }

    fn merit(&self) -> f64 {
        self.last_merit
    }

    fn observation(&self) -> Vec<f64> {
        self.state.to_vec()
    }

    fn timestep(&self) -> usize {
        self.t
    }

    fn spec_digest(&self) -> String {
        digest_json(&DigestInput {
            kind: "metagrating",
            spec: &self.spec,
            target: &self.target_digest,
            sim: self.sim.config(),
            ssim: &self.ssim,
            active: self.active,
        })
    }
}
