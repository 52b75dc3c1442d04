use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::Config;
use super::manifest::{Manifest, Run};
use super::records::{evaluate as evaluate_records, parse_records, records_to_json, DesignRecord, Method};
use super::render::render_pgm;
use super::sweep::{run_regression, sweep_table_text, table_rows, SweepResult, SweepTable};
use super::targets::{standin_targets, HiddenTarget};
use crate::checkpoint::{config_digest, Checkpoint, CNN_MAGIC};
use crate::env::{EpisodeSpec, MetagratingEnv};
use crate::error::{Error, Result};
use crate::fdfd::Simulator;
use crate::fieldmap::FieldMap;
use crate::geometry::{DesignVector, WIDTH_LEVELS};
use crate::ppo::{save_checkpoint, train, PpoConfig, TrainOptions};
use crate::sl::{diagnose_fit, generate_dataset, train_cnn, CnnConfig, CnnModel, Dataset, DatasetOptions, FitThresholds};

/// Location and manifest of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl RunOutput {
    fn from_run(run: Run) -> Result<Self> {
        let (dir, manifest) = run.finish()?;
        Ok(Self { dir, manifest })
    }
}

pub const MODEL_FILE: &str = "model.ckpt";
pub const MODEL_CONFIG_FILE: &str = "cnn.json";
pub const RECORDS_FILE: &str = "records.json";

/// Runs `f(0..n)` on up to `threads` workers; results keep index order and
/// the first error (by index) wins.
fn parallel<T, F>(n: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = threads.clamp(1, n.max(1));
    let mut slots: Vec<Option<Result<T>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = (0..workers)
            .map(|w| scope.spawn(move || (w..n).step_by(workers).map(|i| (i, f(i))).collect::<Vec<_>>()))
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every index ran")).collect()
}

fn target_id(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Config(format!("cannot derive a target id from {}", path.display())))
}

fn load_targets(sim: &Simulator, paths: &[PathBuf]) -> Result<Vec<(String, Arc<FieldMap>)>> {
    if paths.is_empty() {
        return Err(Error::Config("at least one target field map is required".into()));
    }
    paths
        .iter()
        .map(|p| {
            let map = FieldMap::read_fmap(p)?;
            if map.shape() != sim.config().window_resolution {
                return Err(Error::Config(format!(
                    "target {} has shape {:?} but the simulation window is {:?}",
                    p.display(),
                    map.shape(),
                    sim.config().window_resolution
                )));
            }
            Ok((target_id(p)?, Arc::new(map)))
        })
        .collect()
}

/// Simulates random designs into `dataset/`. Stand-in target designs are never drawn.
pub fn gen_data(cfg: &Config) -> Result<RunOutput> {
    let mut run = Run::create(cfg, "gen-data", vec![cfg.seed])?;
    let sim = Simulator::new(cfg.sim.clone())?;
    let opts = DatasetOptions {
        n: cfg.dataset.n,
        seed: cfg.seed,
        active: cfg.active_strips,
        threads: cfg.threads,
        exclude: standin_targets(cfg.active_strips)?.into_iter().map(|t| t.design).collect(),
    };
    let data = generate_dataset(&sim, &opts, Some(&run.path("dataset")))?;
    run.register("dataset");
    run.register("dataset/index.tsv");
    run.summarize("samples", data.samples.len());
    run.summarize("train", data.train.len());
    run.summarize("validation", data.validation.len());
    run.summarize("failures", data.provenance.failures);
    RunOutput::from_run(run)
}

/// Trains the CNN on a dataset directory written by `gen_data`.
pub fn train_sl(cfg: &Config, dataset: &Path) -> Result<RunOutput> {
    let data = Dataset::load(dataset)?;
    let sim_digest = hex::encode(config_digest(&cfg.sim));
    if data.provenance.sim_digest != sim_digest {
        return Err(Error::Config(format!(
            "dataset {} was simulated with a different configuration",
            dataset.display()
        )));
    }
    let cnn = CnnConfig {
        seed: cfg.seed,
        ..cfg.cnn.clone()
    };
    let mut run = Run::create(cfg, "train-sl", vec![cfg.seed])?;
    let (model, curves) = train_cnn(&data, &cnn)?;
    run.write(MODEL_FILE, &model.checkpoint().to_bytes())?;
    let cnn_json = serde_json::to_string_pretty(&cnn).expect("cnn config serializes");
    run.write(MODEL_CONFIG_FILE, cnn_json.as_bytes())?;
    run.write("loss.tsv", curves.to_tsv().as_bytes())?;
    run.summarize("final_train_loss", curves.train.last());
    run.summarize("final_validation_loss", curves.validation.last());
    if curves.train.len() >= 5 {
        run.summarize("fit", format!("{:?}", diagnose_fit(&curves, &FitThresholds::default())?));
    }
    RunOutput::from_run(run)
}

/// Loads `model.ckpt` together with the `cnn.json` beside it.
pub fn load_model(path: &Path) -> Result<CnnModel> {
    let cfg_path = path.with_file_name(MODEL_CONFIG_FILE);
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let cnn: CnnConfig = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", cfg_path.display())))?;
    CnnModel::from_checkpoint(cnn, &Checkpoint::read(CNN_MAGIC, path)?)
}

/// Simulates the stand-in designs. The hidden design of each target is kept
/// next to its field map for later comparison.
pub fn make_target(cfg: &Config) -> Result<RunOutput> {
    let mut run = Run::create(cfg, "make-target", Vec::new())?;
    let sim = Simulator::new(cfg.sim.clone())?;
    let targets = standin_targets(cfg.active_strips)?;
    let maps = parallel(targets.len(), cfg.threads, |i| sim.simulate(&targets[i].design))?;
    for (t, map) in targets.iter().zip(&maps) {
        run.write(&format!("targets/{}.fmap", t.name), &map.to_fmap_bytes()?)?;
        let json = serde_json::to_string_pretty(t).expect("target serializes");
        run.write(&format!("targets/{}.design.json", t.name), json.as_bytes())?;
        run.write(&format!("targets/{}.pgm", t.name), &render_pgm(map, Some((&t.design, &cfg.sim)))?)?;
    }
    run.summarize("targets", targets.iter().map(|t| t.name.clone()).collect::<Vec<_>>());
    RunOutput::from_run(run)
}

fn method_slug(m: Method) -> &'static str {
    match m {
        Method::Sl => "sl",
        Method::Rl => "rl",
        Method::Hybrid => "hybrid",
    }
}

struct Refined {
    record: DesignRecord,
    episodes_tsv: String,
    steps_tsv: String,
    checkpoint: Vec<u8>,
}

/// One PPO refinement run from `initial` against `target`.
fn refine(
    cfg: &Config,
    sim: &Simulator,
    method: Method,
    target: (&str, &Arc<FieldMap>),
    seed: u64,
    initial: DesignVector,
) -> Result<Refined> {
    let ppo = PpoConfig {
        seed,
        ..cfg.rl.ppo.clone()
    };
    let spec = EpisodeSpec {
        max_timesteps: ppo.max_timesteps,
        reward_kind: cfg.rl.reward,
        initial_state: initial.to_vec(),
    };
    let mut env = MetagratingEnv::new(sim.clone(), target.1.clone(), spec, cfg.active_strips)?;
    let initial_dissimilarity = crate::env::Environment::merit(&env);
    let out = train(&mut env, &ppo, TrainOptions { record_steps: true })?;
    if let Some(reason) = &out.log.aborted {
        return Err(Error::Aborted(reason.clone()));
    }
    let stem = format!("{}-{}-s{seed}", method_slug(method), target.0);
    Ok(Refined {
        record: DesignRecord {
            method,
            target: target.0.to_string(),
            seed,
            design: DesignVector::from_widths(&out.log.best_state)?,
            dissimilarity: out.log.best_merit,
            initial_dissimilarity,
            episode_log: Some(format!("logs/{stem}.tsv")),
        },
        episodes_tsv: out.log.to_tsv(),
        steps_tsv: out.log.steps.as_ref().map(|s| s.as_str().to_string()).unwrap_or_default(),
        checkpoint: save_checkpoint(&ppo, &out.net).to_bytes(),
    })
}

fn write_refined(run: &mut Run, r: &Refined) -> Result<()> {
    let log = r.record.episode_log.as_deref().expect("refined runs carry a log");
    let stem = log.trim_start_matches("logs/").trim_end_matches(".tsv");
    run.write(log, r.episodes_tsv.as_bytes())?;
    run.write(&format!("logs/{stem}.steps.tsv"), r.steps_tsv.as_bytes())?;
    run.write(&format!("checkpoints/{stem}.ckpt"), &r.checkpoint)?;
    Ok(())
}

/// RL-only refinement: every active strip starts at `rl.initial_level`.
pub fn run_rl(cfg: &Config, targets: &[PathBuf]) -> Result<RunOutput> {
    let sim = Simulator::new(cfg.sim.clone())?;
    let targets = load_targets(&sim, targets)?;
    let mut run = Run::create(cfg, "run-rl", cfg.seeds.clone())?;
    let initial = DesignVector::from_widths(&vec![WIDTH_LEVELS[cfg.rl.initial_level]; crate::geometry::N_STRIPS])?
        .masked(cfg.active_strips);
    let mut records = Vec::new();
    for (id, map) in &targets {
        let runs = parallel(cfg.seeds.len(), cfg.threads, |i| {
            refine(cfg, &sim, Method::Rl, (id, map), cfg.seeds[i], initial)
        })?;
        for r in runs {
            write_refined(&mut run, &r)?;
            records.push(r.record);
        }
    }
    run.write(RECORDS_FILE, records_to_json(&records).as_bytes())?;
    run.summarize("records", records.len());
    RunOutput::from_run(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Pair {
    target: String,
    seed: u64,
    rl_start: f64,
    hybrid_start: f64,
    hybrid_final: f64,
}

/// SL+RL refinement from the CNN's prediction. Seed `i` uses model
/// `i mod models.len()`. SL-only records (the prediction itself) are
/// emitted alongside, plus a table pairing each start with the RL-only start.
pub fn run_hybrid(cfg: &Config, targets: &[PathBuf], models: &[PathBuf]) -> Result<RunOutput> {
    if models.is_empty() {
        return Err(Error::Config("run-hybrid needs at least one trained model".into()));
    }
    let sim = Simulator::new(cfg.sim.clone())?;
    let targets = load_targets(&sim, targets)?;
    let models: Vec<CnnModel> = models.iter().map(|p| load_model(p)).collect::<Result<_>>()?;
    let mut run = Run::create(cfg, "run-hybrid", cfg.seeds.clone())?;
    let rl_initial = DesignVector::from_widths(&vec![WIDTH_LEVELS[cfg.rl.initial_level]; crate::geometry::N_STRIPS])?
        .masked(cfg.active_strips);
    let mut records = Vec::new();
    let mut pairs = Vec::new();
    for (id, map) in &targets {
        let runs = parallel(cfg.seeds.len(), cfg.threads, |i| {
            let seed = cfg.seeds[i];
            let start = models[i % models.len()].predict_design(map)?.masked(cfg.active_strips);
            let refined = refine(cfg, &sim, Method::Hybrid, (id, map), seed, start)?;
            let spec = EpisodeSpec {
                max_timesteps: 1,
                reward_kind: cfg.rl.reward,
                initial_state: rl_initial.to_vec(),
            };
            let rl_start = crate::env::Environment::merit(&MetagratingEnv::new(
                sim.clone(),
                map.clone(),
                spec,
                cfg.active_strips,
            )?);
            let sl = DesignRecord {
                method: Method::Sl,
                target: id.clone(),
                seed,
                design: start,
                dissimilarity: refined.record.initial_dissimilarity,
                initial_dissimilarity: refined.record.initial_dissimilarity,
                episode_log: None,
            };
            Ok((sl, refined, rl_start))
        })?;
        for (sl, r, rl_start) in runs {
            write_refined(&mut run, &r)?;
            pairs.push(Pair {
                target: id.clone(),
                seed: r.record.seed,
                rl_start,
                hybrid_start: r.record.initial_dissimilarity,
                hybrid_final: r.record.dissimilarity,
            });
            records.push(sl);
            records.push(r.record);
        }
    }
    let mut table = String::from("target\tseed\trl_start\thybrid_start\thybrid_final\n");
    for p in &pairs {
        let _ = writeln!(
            table,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            p.target, p.seed, p.rl_start, p.hybrid_start, p.hybrid_final
        );
    }
    run.write("pairs.tsv", table.as_bytes())?;
    run.write(RECORDS_FILE, records_to_json(&records).as_bytes())?;
    let better = pairs.iter().filter(|p| p.hybrid_start <= p.rl_start).count();
    run.summarize("records", records.len());
    run.summarize("hybrid_start_not_worse", format!("{better}/{}", pairs.len()));
    RunOutput::from_run(run)
}

/// Merges record files, re-verifies every dissimilarity against its target
/// and writes the comparison report.
pub fn evaluate(cfg: &Config, record_files: &[PathBuf], targets: &[PathBuf]) -> Result<RunOutput> {
    let mut records = Vec::new();
    for p in record_files {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        records.extend(parse_records(&text)?);
    }
    let report = evaluate_records(&records)?;
    let sim = Simulator::new(cfg.sim.clone())?;
    let targets = load_targets(&sim, targets)?;
    parallel(records.len(), cfg.threads, |i| {
        let r = &records[i];
        let (_, map) = targets
            .iter()
            .find(|(id, _)| *id == r.target)
            .ok_or_else(|| Error::Config(format!("no target field map given for {:?}", r.target)))?;
        r.verify(&sim, map)
    })?;
    let mut run = Run::create(cfg, "evaluate", Vec::new())?;
    run.write("report.txt", report.to_text().as_bytes())?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    run.write("report.json", json.as_bytes())?;
    run.summarize("overall", &report.overall);
    run.summarize("comparisons", &report.comparisons);
    RunOutput::from_run(run)
}

/// Renders an FMAP file, a target design JSON or a record file to PGM.
pub fn render(cfg: &Config, input: &Path) -> Result<RunOutput> {
    let bytes = std::fs::read(input).map_err(|e| Error::io(input, e))?;
    let stem = target_id(input)?;
    let mut images: Vec<(String, Vec<u8>)> = Vec::new();
    if input.extension().and_then(|e| e.to_str()) == Some("fmap") {
        images.push((format!("{stem}.pgm"), FieldMap::from_fmap_bytes(&bytes)?.to_pgm()));
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::Format(format!("{} is not UTF-8", input.display())))?;
        let designs: Vec<(String, DesignVector)> = match serde_json::from_str::<HiddenTarget>(&text) {
            Ok(t) => vec![(t.name, t.design)],
            Err(_) => parse_records(&text)?
                .into_iter()
                .map(|r| (format!("{}-{}-s{}", method_slug(r.method), r.target, r.seed), r.design))
                .collect(),
        };
        let sim = Simulator::new(cfg.sim.clone())?;
        let maps = parallel(designs.len(), cfg.threads, |i| sim.simulate(&designs[i].1))?;
        for ((name, d), map) in designs.iter().zip(&maps) {
            images.push((format!("{name}.pgm"), render_pgm(map, Some((d, &cfg.sim)))?));
        }
    }
    let mut run = Run::create(cfg, "render", Vec::new())?;
    for (name, png) in &images {
        run.write(&format!("images/{name}"), png)?;
    }
    run.summarize("images", images.len());
    RunOutput::from_run(run)
}

/// Regression-environment sweep over the rows of `table` with shared seeds.
pub fn sweep(cfg: &Config, table: SweepTable) -> Result<RunOutput> {
    let all = table_rows(table);
    let selected: Vec<usize> = if cfg.sweep.rows.is_empty() {
        (1..=all.len()).collect()
    } else {
        cfg.sweep.rows.clone()
    };
    if let Some(&bad) = selected.iter().find(|&&r| r == 0 || r > all.len()) {
        return Err(Error::Config(format!("sweep row {bad} is outside 1..={}", all.len())));
    }
    let mut run = Run::create(cfg, "sweep", cfg.seeds.clone())?;
    let mut results = Vec::new();
    for &r in &selected {
        let mut row = all[r - 1];
        row.episodes = cfg.sweep.episodes.unwrap_or(row.episodes);
        row.timesteps = cfg.sweep.timesteps.unwrap_or(row.timesteps);
        let logs = parallel(cfg.seeds.len(), cfg.threads, |i| {
            let ppo = row.ppo(&cfg.regression.ppo, cfg.seeds[i]);
            run_regression(&cfg.regression, &ppo, row.reward)
        })?;
        let mut final_mse = Vec::new();
        for (seed, log) in cfg.seeds.iter().zip(&logs) {
            run.write(&format!("curves/row{r}-s{seed}.tsv"), log.to_tsv().as_bytes())?;
            final_mse.push(log.final_merit().expect("at least one episode"));
        }
        results.push(SweepResult {
            row: r,
            config: row,
            seeds: cfg.seeds.clone(),
            final_mse,
        });
    }
    run.write("sweep.tsv", sweep_table_text(&results).as_bytes())?;
    run.summarize("table", table);
    run.summarize(
        "median_final_mse",
        results.iter().map(|r| (r.row, r.median_mse())).collect::<Vec<_>>(),
    );
    RunOutput::from_run(run)
}
