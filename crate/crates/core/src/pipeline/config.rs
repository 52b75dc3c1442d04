use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdfd::SimConfig;
use crate::geometry::{GridSpec, N_STRIPS};
use crate::ppo::PpoConfig;
use crate::reward::RewardKind;
use crate::sl::CnnConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full 13-strip cell at 25 nm and the four-block CNN.
    Paper,
    /// 7-strip cell at 50 nm and the two-block CNN.
    Reduced,
    /// Reduced physics with tiny budgets, for plumbing checks.
    Smoke,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Reduced => "reduced",
            Profile::Smoke => "smoke",
        })
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "reduced" => Ok(Profile::Reduced),
            "smoke" => Ok(Profile::Smoke),
            _ => Err(Error::Config(format!("unknown profile {s:?} (paper, reduced, smoke)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n: usize,
}

/// Metagrating refinement runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlConfig {
    pub reward: RewardKind,
    /// Width level (0–4) of every active strip at the start of RL-only runs.
    pub initial_level: usize,
    pub ppo: PpoConfig,
}

/// Fast regression environment used by sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionConfig {
    pub target: String,
    pub increment: f64,
    pub reward: RewardKind,
    pub ppo: PpoConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Replaces the episode count of every row when set (quick sweeps).
    pub episodes: Option<usize>,
    /// Replaces the timesteps of every row when set.
    pub timesteps: Option<usize>,
    /// 1-based rows to run; all when empty.
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub profile: Profile,
    pub seed: u64,
    /// Seeds of multi-run commands; each runs as an independent worker.
    pub seeds: Vec<u64>,
    pub runs_dir: PathBuf,
    pub threads: usize,
    pub active_strips: usize,
    pub sim: SimConfig,
    pub dataset: DatasetConfig,
    pub cnn: CnnConfig,
    pub rl: RlConfig,
    pub regression: RegressionConfig,
    pub sweep: SweepConfig,
}

fn reduced_grid() -> GridSpec {
    GridSpec {
        dx: 50.0,
        dy: 50.0,
        air_height: 1000.0,
        substrate_depth: 3000.0,
        lateral_slots: 7,
        ..GridSpec::default()
    }
}

fn regression_defaults() -> RegressionConfig {
    RegressionConfig {
        target: "step".into(),
        increment: 0.01,
        reward: RewardKind::FinalSigmoid,
        ppo: PpoConfig {
            episodes: 1000,
            max_timesteps: 1000,
            update_timestep: 750,
            learning_rate: 0.004,
            k_epochs: 3,
            gamma: 0.9,
            ..PpoConfig::default()
        },
    }
}

impl Config {
    pub fn profile(profile: Profile) -> Self {
        let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        let rl_ppo = PpoConfig {
            episodes: 5000,
            max_timesteps: 20,
            update_timestep: 100,
            learning_rate: 0.004,
            k_epochs: 3,
            ..PpoConfig::default()
        };
        let base = Self {
            profile,
            seed: 0,
            seeds: vec![0, 1, 2],
            runs_dir: PathBuf::from("runs"),
            threads,
            active_strips: N_STRIPS,
            sim: SimConfig::default(),
            dataset: DatasetConfig { n: 5000 },
            cnn: CnnConfig {
                epochs: 100,
                ..CnnConfig::paper()
            },
            rl: RlConfig {
                reward: RewardKind::FinalSigmoid,
                initial_level: 1,
                ppo: rl_ppo.clone(),
            },
            regression: regression_defaults(),
            sweep: SweepConfig {
                episodes: None,
                timesteps: None,
                rows: Vec::new(),
            },
        };
        match profile {
            Profile::Paper => base,
            Profile::Reduced => Self {
                active_strips: 7,
                sim: SimConfig::for_grid(reduced_grid()),
                dataset: DatasetConfig { n: 1000 },
                cnn: CnnConfig {
                    epochs: 40,
                    ..CnnConfig::reduced()
                },
                rl: RlConfig {
                    ppo: PpoConfig { episodes: 500, ..rl_ppo },
                    ..base.rl.clone()
                },
                ..base
            },
            Profile::Smoke => {
                let mut regression = regression_defaults();
                regression.ppo.episodes = 3;
                regression.ppo.max_timesteps = 50;
                regression.ppo.update_timestep = 50;
                Self {
                    seeds: vec![0, 1],
                    active_strips: 7,
                    sim: SimConfig::for_grid(reduced_grid()),
                    dataset: DatasetConfig { n: 10 },
                    cnn: CnnConfig {
                        epochs: 3,
                        batch_size: 8,
                        ..CnnConfig::reduced()
                    },
                    rl: RlConfig {
                        ppo: PpoConfig {
                            episodes: 4,
                            max_timesteps: 5,
                            update_timestep: 10,
                            ..rl_ppo
                        },
                        ..base.rl.clone()
                    },
                    regression,
                    sweep: SweepConfig {
                        episodes: Some(2),
                        timesteps: Some(20),
                        rows: Vec::new(),
                    },
                    ..base
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.cnn.validate()?;
        self.rl.ppo.validate()?;
        self.regression.ppo.validate()?;
        if self.active_strips == 0 || self.active_strips > self.sim.grid.lateral_slots {
            return Err(Error::Config(format!(
                "active_strips must be in 1..={} for this grid",
                self.sim.grid.lateral_slots
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.rl.initial_level >= crate::geometry::N_LEVELS {
            return Err(Error::Config("rl.initial_level must be a width level 0-4".into()));
        }
        if !(self.regression.increment > 0.0) {
            return Err(Error::Config("regression.increment must be positive".into()));
        }
        Ok(())
    }

    /// Profile defaults, then the optional TOML file, then dotted-key overrides.
    pub fn load(profile: Profile, file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match file {
            Some(path) => Some(std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?),
            None => None,
        };
        Self::layered(profile, text.as_deref(), overrides)
    }

    /// As [`Config::load`], with the TOML layer given as text.
    pub fn layered(profile: Profile, toml_text: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut tree = toml::Value::try_from(Self::profile(profile))
            .map_err(|e| Error::Config(format!("cannot serialize profile: {e}")))?;
        if let Some(text) = toml_text {
            merge(&mut tree, parse_toml(text)?);
        }
        for (key, value) in overrides {
            set_path(&mut tree, key, parse_scalar(value))?;
        }
        let cfg: Self = tree
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }
}

/// Parses configuration text into a TOML table.
pub fn parse_toml(text: &str) -> Result<toml::Value> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    Ok(toml::Value::Table(table))
}

/// Recursively overlays `overlay` onto `base`; tables merge, everything else replaces.
fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(existing) => merge(existing, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// A TOML literal when the text parses as one, a bare string otherwise.
fn parse_scalar(text: &str) -> toml::Value {
    match format!("v = {text}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key v"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

fn set_path(tree: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key {key:?}")));
    }
    let mut node = tree;
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {} is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    unreachable!("non-empty key")
}
