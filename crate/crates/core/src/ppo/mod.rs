//! Proximal policy optimization with a categorical policy.

mod net;
mod update;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use net::{log_softmax, select_action, softmax, Mlp, MlpCache, PolicyValueNet};
pub use update::{
    compute_returns, discounted_returns, loss_and_grad, normalize, ppo_update, Batch, LossCoefficients, LossReport,
    Trajectory,
};

use crate::checkpoint::{config_digest, Checkpoint, PPO_MAGIC};
use crate::env::{format_sig6, ActionId, EpisodeLog, Environment};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoConfig {
    pub episodes: usize,
    pub max_timesteps: usize,
    pub update_timestep: usize,
    pub learning_rate: f64,
    pub k_epochs: usize,
    pub clip_epsilon: f64,
    pub gamma: f64,
    pub hidden_sizes: [usize; 2],
    pub entropy_coeff: f64,
    pub value_coeff: f64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            episodes: 1000,
            max_timesteps: 1000,
            update_timestep: 750,
            learning_rate: 0.004,
            k_epochs: 3,
            clip_epsilon: 0.2,
            gamma: 0.99,
            hidden_sizes: [64, 64],
            entropy_coeff: 0.01,
            value_coeff: 0.5,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.update_timestep < 1 {
            return Err(Error::Config("update_timestep must be at least 1".into()));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::Config("clip_epsilon must lie in (0, 1)".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("gamma must lie in (0, 1]".into()));
        }
        if self.k_epochs < 1 {
            return Err(Error::Config("k_epochs must be at least 1".into()));
        }
        if self.episodes < 1 || self.max_timesteps < 1 {
            return Err(Error::Config("episodes and max_timesteps must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || self.hidden_sizes.contains(&0) {
            return Err(Error::Config("learning rate and hidden sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn coefficients(&self) -> LossCoefficients {
        LossCoefficients {
            clip_epsilon: self.clip_epsilon,
            entropy_coeff: self.entropy_coeff,
            value_coeff: self.value_coeff,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.learning_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub total_reward: f64,
    pub final_merit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub episodes: Vec<EpisodeSummary>,
    /// Lowest merit seen in any visited state (including initial states).
    pub best_merit: f64,
    pub best_state: Vec<f64>,
    pub updates: Vec<LossReport>,
    /// Per-step log, when requested.
    pub steps: Option<EpisodeLog>,
    pub aborted: Option<String>,
}

impl TrainingLog {
    /// `episode\ttotal_reward\tfinal_merit` lines with a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("episode\ttotal_reward\tfinal_merit\n");
        for e in &self.episodes {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                e.episode,
                format_sig6(e.total_reward),
                format_sig6(e.final_merit)
            ));
        }
        out
    }

    pub fn final_merit(&self) -> Option<f64> {
        self.episodes.last().map(|e| e.final_merit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrainOptions {
    pub record_steps: bool,
}

/// Trained agent plus its log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: PolicyValueNet,
    pub log: TrainingLog,
}

/// Runs `cfg.episodes` episodes, updating every `update_timestep` environment
/// steps (global counter) and once more at the end if steps remain buffered.
///
/// An environment error stops training; the partial log is returned with
/// `aborted` set.
pub fn train<E: Environment + ?Sized>(env: &mut E, cfg: &PpoConfig, opts: TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = PolicyValueNet::new(env.obs_dim(), env.n_actions(), cfg.hidden_sizes, &mut rng);
    let mut opt = Adam::new(cfg.adam(), net.n_params());
    let mut traj = Trajectory::new();
    let mut log = TrainingLog {
        episodes: Vec::with_capacity(cfg.episodes),
        best_merit: f64::INFINITY,
        best_state: Vec::new(),
        updates: Vec::new(),
        steps: opts.record_steps.then(EpisodeLog::new),
        aborted: None,
    };
    let mut global_step = 0usize;

    let result = (|| -> Result<()> {
        for episode in 0..cfg.episodes {
            let mut obs = env.reset()?;
            if env.merit() < log.best_merit {
                log.best_merit = env.merit();
                log.best_state = obs.clone();
            }
            if let Some(steps) = log.steps.as_mut() {
                steps.begin_episode(episode, &env.spec_digest());
            }
            let mut total = 0.0;
            for t in 0..cfg.max_timesteps {
                let (action, log_prob) = select_action(&net, &obs, &mut rng)?;
                let res = env.step(ActionId(action))?;
                let done = res.done || t + 1 == cfg.max_timesteps;
                traj.push(obs, action, log_prob, res.reward, done);
                total += res.reward;
                global_step += 1;
                if let Some(steps) = log.steps.as_mut() {
                    steps.record(t + 1, ActionId(action), res.merit, res.reward);
                }
                if res.merit < log.best_merit {
                    log.best_merit = res.merit;
                    log.best_state = res.observation.clone();
                }
                if global_step % cfg.update_timestep == 0 {
                    log.updates.push(ppo_update(&mut net, &mut opt, &mut traj, cfg)?);
                }
                obs = res.observation;
                if done {
                    break;
                }
            }
            log.episodes.push(EpisodeSummary {
                episode,
                total_reward: total,
                final_merit: env.merit(),
            });
        }
        if !traj.is_empty() {
            log.updates.push(ppo_update(&mut net, &mut opt, &mut traj, cfg)?);
        }
        Ok(())
    })();

    match result {
        Ok(()) => Ok(TrainOutcome { net, log }),
        Err(e @ (Error::Aborted(_) | Error::Solver { .. })) => {
            log.aborted = Some(e.to_string());
            Ok(TrainOutcome { net, log })
        }
        Err(e) => Err(e),
    }
}

#[derive(Serialize)]
struct NetShape<'a> {
    config: &'a PpoConfig,
    obs_dim: usize,
    n_actions: usize,
}

/// Digest tying a checkpoint to its configuration and network shape.
pub fn checkpoint_digest(cfg: &PpoConfig, net: &PolicyValueNet) -> [u8; 32] {
    config_digest(&NetShape {
        config: cfg,
        obs_dim: net.actor.input_dim(),
        n_actions: net.actor.output_dim(),
    })
}

pub fn save_checkpoint(cfg: &PpoConfig, net: &PolicyValueNet) -> Checkpoint {
    Checkpoint::new(PPO_MAGIC, checkpoint_digest(cfg, net), net.params.clone())
}

/// Rebuilds a network for `cfg` from a checkpoint written with the same configuration.
pub fn load_checkpoint(cfg: &PpoConfig, obs_dim: usize, n_actions: usize, ckpt: &Checkpoint) -> Result<PolicyValueNet> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = PolicyValueNet::new(obs_dim, n_actions, cfg.hidden_sizes, &mut rng);
    ckpt.check_digest(&checkpoint_digest(cfg, &net))?;
    net.set_params(ckpt.params.clone())?;
    Ok(net)
}
