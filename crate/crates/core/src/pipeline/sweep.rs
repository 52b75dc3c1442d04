use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::env::{builtin_target, RegressionEnv};
use crate::error::{Error, Result};
use crate::ppo::{train, PpoConfig, TrainOptions, TrainingLog};
use crate::reward::{list_kinds, RewardKind};

use super::config::RegressionConfig;
use super::records::median;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepTable {
    /// Hyperparameter grid around the 1000/1000/500/0.004/4 baseline.
    S1,
    /// Every reward kind at the tuned configuration.
    S2,
}

impl std::str::FromStr for SweepTable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(SweepTable::S1),
            "s2" => Ok(SweepTable::S2),
            _ => Err(Error::Config(format!("unknown sweep table {s:?} (s1, s2)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub episodes: usize,
    pub timesteps: usize,
    pub update_timestep: usize,
    pub learning_rate: f64,
    pub k_epochs: usize,
    pub reward: RewardKind,
}

const fn row(episodes: usize, timesteps: usize, update_timestep: usize, learning_rate: f64, k_epochs: usize) -> SweepRow {
    SweepRow {
        episodes,
        timesteps,
        update_timestep,
        learning_rate,
        k_epochs,
        reward: RewardKind::Step,
    }
}

pub fn table_rows(table: SweepTable) -> Vec<SweepRow> {
    match table {
        SweepTable::S1 => vec![
            row(1000, 1000, 500, 0.004, 4),
            row(100, 1000, 500, 0.004, 4),
            row(1000, 3000, 1500, 0.004, 4),
            row(1000, 1000, 500, 0.002, 4),
            row(1000, 1000, 500, 0.006, 4),
            row(1000, 1000, 500, 0.008, 4),
            row(1000, 1000, 250, 0.004, 4),
            row(1000, 1000, 750, 0.004, 4),
            row(1000, 1000, 500, 0.004, 5),
        ],
        SweepTable::S2 => list_kinds()
            .into_iter()
            .map(|reward| SweepRow {
                reward,
                ..row(1000, 1000, 750, 0.004, 3)
            })
            .collect(),
    }
}

impl SweepRow {
    /// PPO settings for this row; everything the row leaves open comes from `base`.
    pub fn ppo(&self, base: &PpoConfig, seed: u64) -> PpoConfig {
        PpoConfig {
            episodes: self.episodes,
            max_timesteps: self.timesteps,
            update_timestep: self.update_timestep,
            learning_rate: self.learning_rate,
            k_epochs: self.k_epochs,
            seed,
            ..base.clone()
        }
    }
}

/// One regression training run; the log's final merit is the final MSE.
pub fn run_regression(cfg: &RegressionConfig, ppo: &PpoConfig, reward: RewardKind) -> Result<TrainingLog> {
    let mut spec = RegressionEnv::default_spec(reward);
    spec.max_timesteps = ppo.max_timesteps;
    let mut env = RegressionEnv::with_increment(builtin_target(&cfg.target)?, spec, cfg.increment)?;
    let out = train(&mut env, ppo, TrainOptions::default())?;
    if let Some(reason) = out.log.aborted {
        return Err(Error::Aborted(reason));
    }
    Ok(out.log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub row: usize,
    pub config: SweepRow,
    pub seeds: Vec<u64>,
    pub final_mse: Vec<f64>,
}

impl SweepResult {
    pub fn median_mse(&self) -> f64 {
        median(&self.final_mse)
    }
}

pub fn sweep_table_text(results: &[SweepResult]) -> String {
    let mut out = String::from("row\tepisodes\ttimesteps\tupdate\tlr\tk_epochs\treward\tmedian_final_mse\tfinal_mse\n");
    for r in results {
        let c = &r.config;
        let per_seed: Vec<String> = r.final_mse.iter().map(|m| format!("{m:.6e}")).collect();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6e}\t{}",
            r.row,
            c.episodes,
            c.timesteps,
            c.update_timestep,
            c.learning_rate,
            c.k_epochs,
            c.reward.name(),
            r.median_mse(),
            per_seed.join(",")
        );
    }
    out
}
