use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::config_digest;
use crate::error::{Error, Result};
use crate::fdfd::Simulator;
use crate::fieldmap::FieldMap;
use crate::geometry::{random_design_masked, DesignVector, N_STRIPS};

/// Side of the stored training images.
pub const SAMPLE_SIDE: usize = 64;

pub const INDEX_FILE: &str = "index.tsv";

/// Area-averaged resize to `side × side`, going through the 64×64 sample
/// resolution so predictions see the same pipeline as training data.
pub fn prepare_input(map: &FieldMap, side: usize) -> Result<Vec<f64>> {
    let base = if map.shape() == (SAMPLE_SIDE, SAMPLE_SIDE) || map.shape() == (side, side) {
        map.clone()
    } else {
        map.resample(SAMPLE_SIDE, SAMPLE_SIDE)?
    };
    if base.shape() == (side, side) {
        return Ok(base.into_data());
    }
    Ok(base.resample(side, side)?.into_data())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    /// 64×64 field map.
    pub input: FieldMap,
    pub label: DesignVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// Hex SHA-256 of the simulation configuration.
    pub sim_digest: String,
    /// Simulations that failed and were replaced by fresh draws.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
        }
    }
}

/// Validation share of a dataset of `n` samples: a tenth, at least one once `n ≥ 2`.
pub fn validation_count(n: usize) -> usize {
    if n < 2 {
        0
    } else {
        (n / 10).max(1)
    }
}

/// Shuffled 90/10 split of `0..n`, each part sorted.
pub fn split_indices<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let nv = validation_count(n);
    let mut val = idx[..nv].to_vec();
    let mut train = idx[nv..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

pub fn fmap_name(id: usize) -> String {
    format!("{id:05}.fmap")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetOptions {
    pub n: usize,
    pub seed: u64,
    /// Strips drawn at random; the rest stay at zero width.
    pub active: usize,
    pub threads: usize,
    /// Withheld designs (targets); a draw matching one is redrawn.
    pub exclude: Vec<DesignVector>,
}

const MAX_REPLACEMENTS: usize = 100;

fn simulate_one(sim: &Simulator, d: &DesignVector, id: usize, out_dir: Option<&Path>) -> Result<FieldMap> {
    let map = sim.simulate(d)?;
    if let Some(dir) = out_dir {
        map.write_fmap(&dir.join(fmap_name(id)))?;
    }
    // drop the normalization record so stored and regenerated samples compare equal
    FieldMap::new(SAMPLE_SIDE, SAMPLE_SIDE, map.resample(SAMPLE_SIDE, SAMPLE_SIDE)?.into_data())
}

/// Simulates `opts.n` random designs. Designs are drawn up front from the
/// seeded stream and simulated in parallel; a failed simulation is replaced
/// by the next draw. With `out_dir`, full-resolution FMAP files and the index
/// are written there.
pub fn generate_dataset(sim: &Simulator, opts: &DatasetOptions, out_dir: Option<&Path>) -> Result<Dataset> {
    if opts.n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    if opts.active == 0 || opts.active > N_STRIPS {
        return Err(Error::Config(format!("active strips must be in 1..={N_STRIPS}")));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let draw = |rng: &mut ChaCha8Rng| loop {
        let d = random_design_masked(rng, opts.active);
        if !opts.exclude.contains(&d) {
            return d;
        }
    };
    let mut designs: Vec<DesignVector> = (0..opts.n).map(|_| draw(&mut rng)).collect();
    let threads = opts.threads.clamp(1, opts.n);
    let chunk = opts.n.div_ceil(threads);
    let mut maps: Vec<Option<FieldMap>> = vec![None; opts.n];
    std::thread::scope(|scope| {
        for (c, slots) in maps.chunks_mut(chunk).enumerate() {
            let designs = &designs;
            scope.spawn(move || {
                for (k, slot) in slots.iter_mut().enumerate() {
                    let id = c * chunk + k;
                    *slot = simulate_one(sim, &designs[id], id, out_dir).ok();
                }
            });
        }
    });
    let mut failures = 0;
    for id in 0..opts.n {
        while maps[id].is_none() {
            failures += 1;
            if failures > MAX_REPLACEMENTS {
                return Err(Error::Aborted(format!("{failures} simulations failed while generating the dataset")));
            }
            designs[id] = draw(&mut rng);
            maps[id] = simulate_one(sim, &designs[id], id, out_dir).ok();
        }
    }
    let (train, validation) = split_indices(opts.n, &mut rng);
    let samples = maps
        .into_iter()
        .zip(designs)
        .enumerate()
        .map(|(id, (m, label))| Sample {
            id,
            input: m.expect("filled"),
            label,
        })
        .collect();
    let data = Dataset {
        samples,
        train,
        validation,
        provenance: Provenance {
            seed: opts.seed,
            sim_digest: hex::encode(config_digest(sim.config())),
            failures,
        },
    };
    if let Some(dir) = out_dir {
        let path = dir.join(INDEX_FILE);
        std::fs::write(&path, data.index_text()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(data)
}

/// Parsed dataset index.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub provenance: Provenance,
    pub entries: Vec<(usize, DesignVector, Split)>,
}

impl Dataset {
    pub fn split_of(&self, id: usize) -> Split {
        if self.validation.binary_search(&id).is_ok() {
            Split::Validation
        } else {
            Split::Train
        }
    }

    /// Index text: provenance comments, a header, then `id, label CSV, split` rows.
    pub fn index_text(&self) -> String {
        let p = &self.provenance;
        let mut out = format!("# seed {}\n# sim {}\n# failures {}\nid\tlabel\tsplit\n", p.seed, p.sim_digest, p.failures);
        for s in &self.samples {
            let _ = writeln!(out, "{}\t{}\t{}", s.id, s.label, self.split_of(s.id).tag());
        }
        out
    }

    /// Loads an index and its FMAP files, downsampling each map to 64×64.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index = parse_index(&text)?;
        let mut samples = Vec::with_capacity(index.entries.len());
        let (mut train, mut validation) = (Vec::new(), Vec::new());
        for (id, label, split) in index.entries {
            let map = FieldMap::read_fmap(&dir.join(fmap_name(id)))?;
            samples.push(Sample {
                id,
                input: map.resample(SAMPLE_SIDE, SAMPLE_SIDE)?,
                label,
            });
            match split {
                Split::Train => train.push(id),
                Split::Validation => validation.push(id),
            }
        }
        Ok(Self {
            samples,
            train,
            validation,
            provenance: index.provenance,
        })
    }

    /// Subset with the given sample ids renumbered from zero and re-split.
    pub fn subset(&self, ids: &[usize], seed: u64) -> Result<Self> {
        let mut samples = Vec::with_capacity(ids.len());
        for (new_id, &id) in ids.iter().enumerate() {
            let s = self
                .samples
                .get(id)
                .ok_or_else(|| Error::Config(format!("sample {id} is out of range")))?;
            samples.push(Sample {
                id: new_id,
                input: s.input.clone(),
                label: s.label,
            });
        }
        let (train, validation) = split_indices(ids.len(), &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self {
            samples,
            train,
            validation,
            provenance: self.provenance.clone(),
        })
    }
}

/// Parses index text. Ids must run 0, 1, 2, … in order.
pub fn parse_index(text: &str) -> Result<DatasetIndex> {
    let mut seed = None;
    let mut sim_digest = None;
    let mut failures = None;
    let mut entries = Vec::new();
    let mut header_seen = false;
    for (lineno, line) in text.lines().enumerate() {
        let bad = |msg: &str| Error::Format(format!("index line {}: {msg}", lineno + 1));
        if let Some(comment) = line.strip_prefix("# ") {
            let (key, value) = comment.split_once(' ').ok_or_else(|| bad("malformed comment"))?;
            match key {
                "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad("bad seed"))?),
                "sim" => sim_digest = Some(value.to_string()),
                "failures" => failures = Some(value.parse::<usize>().map_err(|_| bad("bad failure count"))?),
                _ => return Err(bad("unknown comment key")),
            }
            continue;
        }
        if !header_seen {
            if line != "id\tlabel\tsplit" {
                return Err(bad("expected header `id\\tlabel\\tsplit`"));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad("expected 3 tab-separated fields"));
        }
        let id: usize = fields[0].parse().map_err(|_| bad("bad id"))?;
        if id != entries.len() {
            return Err(bad("ids must be consecutive from 0"));
        }
        let label: DesignVector = fields[1].parse().map_err(|e| bad(&format!("bad label: {e}")))?;
        let split = match fields[2] {
            "train" => Split::Train,
            "val" => Split::Validation,
            _ => return Err(bad("split must be train or val")),
        };
        entries.push((id, label, split));
    }
    if !header_seen {
        return Err(Error::Format("index has no header".into()));
    }
    let missing = || Error::Format("index lacks seed, sim or failures comment".into());
    Ok(DatasetIndex {
        provenance: Provenance {
            seed: seed.ok_or_else(missing)?,
            sim_digest: sim_digest.ok_or_else(missing)?,
            failures: failures.ok_or_else(missing)?,
        },
        entries,
    })
}
