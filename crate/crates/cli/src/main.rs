use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use metagrating::pipeline::{self, Config, Profile, RunOutput, SweepTable};

/// Hybrid supervised + reinforcement learning inverse design of metagratings.
///
/// Any configuration key can be overridden with a dotted flag, e.g.
/// `--rl.ppo.episodes 300` or `--sim.grid.dx=25`.
#[derive(Debug, Parser)]
#[command(name = "metagrating", version)]
struct Cli {
    /// TOML configuration layered over the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "reduced")]
    profile: Profile,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated seeds for multi-run commands.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, global = true)]
    runs_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate random designs into a training dataset.
    GenData {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train the CNN on a dataset directory.
    TrainSl {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Simulate the withheld stand-in target designs.
    MakeTarget,
    /// RL-only refinement from the uniform starting design.
    RunRl {
        #[arg(long = "target", required = true)]
        targets: Vec<PathBuf>,
    },
    /// RL refinement seeded with CNN predictions.
    RunHybrid {
        #[arg(long = "target", required = true)]
        targets: Vec<PathBuf>,
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
    },
    /// Compare design records per method.
    Evaluate {
        #[arg(long = "records", required = true)]
        records: Vec<PathBuf>,
        #[arg(long = "target", required = true)]
        targets: Vec<PathBuf>,
    },
    /// Render an FMAP, a target design or a record file to PGM.
    Render { input: PathBuf },
    /// Regression-environment hyperparameter or reward sweep.
    Sweep {
        #[arg(long, default_value = "s1")]
        table: SweepTable,
        /// 1-based rows to run.
        #[arg(long, value_delimiter = ',')]
        rows: Option<Vec<usize>>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::TrainSl { .. } => "train-sl",
            Command::MakeTarget => "make-target",
            Command::RunRl { .. } => "run-rl",
            Command::RunHybrid { .. } => "run-hybrid",
            Command::Evaluate { .. } => "evaluate",
            Command::Render { .. } => "render",
            Command::Sweep { .. } => "sweep",
        }
    }
}

/// Splits `--a.b value` and `--a.b=value` flags out of the argument list.
fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        if arg == "--" {
            rest.push(arg);
            rest.extend(it.by_ref());
            break;
        }
        let Some(flag) = arg.strip_prefix("--").filter(|f| f.split('=').next().is_some_and(|k| k.contains('.'))) else {
            rest.push(arg);
            continue;
        };
        match flag.split_once('=') {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => {
                let v = it.next().with_context(|| format!("override --{flag} needs a value"))?;
                overrides.push((flag.to_string(), v));
            }
        }
    }
    Ok((rest, overrides))
}

fn run(cli: Cli, overrides: &[(String, String)]) -> Result<RunOutput> {
    let mut cfg = Config::load(cli.profile, cli.config.as_deref(), overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(seeds) = cli.seeds {
        if seeds.is_empty() {
            bail!("--seeds needs at least one value");
        }
        cfg.seeds = seeds;
    }
    if let Some(dir) = cli.runs_dir {
        cfg.runs_dir = dir;
    }
    let out = match cli.command {
        Command::GenData { n } => {
            if let Some(n) = n {
                cfg.dataset.n = n;
            }
            pipeline::gen_data(&cfg)?
        }
        Command::TrainSl { dataset } => pipeline::train_sl(&cfg, &dataset)?,
        Command::MakeTarget => pipeline::make_target(&cfg)?,
        Command::RunRl { targets } => pipeline::run_rl(&cfg, &targets)?,
        Command::RunHybrid { targets, models } => pipeline::run_hybrid(&cfg, &targets, &models)?,
        Command::Evaluate { records, targets } => pipeline::evaluate(&cfg, &records, &targets)?,
        Command::Render { input } => pipeline::render(&cfg, &input)?,
        Command::Sweep { table, rows } => {
            if let Some(rows) = rows {
                cfg.sweep.rows = rows;
            }
            pipeline::sweep(&cfg, table)?
        }
    };
    Ok(out)
}

fn fail(command: &str, err: &anyhow::Error) -> ExitCode {
    let chain: Vec<String> = err.chain().map(|e| e.to_string()).collect();
    let line = serde_json::json!({ "status": "error", "command": command, "error": chain.join(": ") });
    eprintln!("{line}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let (args, overrides) = match extract_overrides(std::env::args().collect()) {
        Ok(v) => v,
        Err(e) => return fail("", &e),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            e.exit()
        }
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            return fail("", &anyhow::anyhow!("{first}"));
        }
    };
    let command = cli.command.name();
    match run(cli, &overrides) {
        Ok(out) => {
            let line = serde_json::json!({
                "status": "ok",
                "command": command,
                "run_dir": out.dir,
                "outputs": out.manifest.outputs.len(),
            });
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(command, &e),
    }
}
