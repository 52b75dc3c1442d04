use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdfd::Simulator;
use crate::fieldmap::FieldMap;
use crate::geometry::DesignVector;
use crate::merit::{dissimilarity, SsimParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "SL")]
    Sl,
    #[serde(rename = "RL")]
    Rl,
    #[serde(rename = "SL+RL")]
    Hybrid,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Sl => "SL",
            Method::Rl => "RL",
            Method::Hybrid => "SL+RL",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignRecord {
    pub method: Method,
    pub target: String,
    pub seed: u64,
    pub design: DesignVector,
    /// Dissimilarity of `design` against the target.
    pub dissimilarity: f64,
    /// Dissimilarity of the starting design.
    pub initial_dissimilarity: f64,
    /// Per-step episode log, relative to the run directory.
    pub episode_log: Option<String>,
}

impl DesignRecord {
    /// Re-simulates the design and checks the stored dissimilarity within 1e-9.
    pub fn verify(&self, sim: &Simulator, target: &FieldMap) -> Result<f64> {
        let map = sim.simulate(&self.design)?;
        let d = dissimilarity(target, &map, &SsimParams::for_target(target))?;
        if (d - self.dissimilarity).abs() > 1e-9 {
            return Err(Error::Numeric(format!(
                "record {} seed {}: stored D {} but recomputed {d}",
                self.method.tag(),
                self.seed,
                self.dissimilarity
            )));
        }
        Ok(d)
    }
}

pub fn records_to_json(records: &[DesignRecord]) -> String {
    serde_json::to_string_pretty(records).expect("records serialize")
}

pub fn parse_records(text: &str) -> Result<Vec<DesignRecord>> {
    let records: Vec<DesignRecord> =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("design records: {e}")))?;
    for r in &records {
        if !(r.dissimilarity.is_finite() && r.initial_dissimilarity.is_finite()) {
            return Err(Error::Format("design record holds a non-finite dissimilarity".into()));
        }
    }
    Ok(records)
}

/// Mean and population standard deviation (N divisor). Values are summed in
/// sorted order so the result does not depend on input order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(f64::total_cmp);
    (mean, (dev.iter().sum::<f64>() / n).sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub method: Method,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub method: Method,
    pub reference: Method,
    /// var(reference) / var(method); above 1 means `method` varies less.
    pub variance_ratio: f64,
    /// mean(reference) / mean(method) − 1; positive means `method` has lower D.
    pub improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub overall: Vec<MethodStats>,
    pub per_target: BTreeMap<String, Vec<MethodStats>>,
    pub comparisons: Vec<Comparison>,
}

fn stats_for(records: &[&DesignRecord]) -> Vec<MethodStats> {
    let mut by: BTreeMap<Method, Vec<f64>> = BTreeMap::new();
    for r in records {
        by.entry(r.method).or_default().push(r.dissimilarity);
    }
    by.into_iter()
        .map(|(method, d)| {
            let (mean, std) = mean_std(&d);
            MethodStats {
                method,
                count: d.len(),
                mean,
                std,
                median: median(&d),
            }
        })
        .collect()
}

/// Per-method statistics of final dissimilarity. Every method present needs
/// at least two records.
pub fn evaluate(records: &[DesignRecord]) -> Result<Report> {
    let all: Vec<&DesignRecord> = records.iter().collect();
    let overall = stats_for(&all);
    if overall.is_empty() {
        return Err(Error::Config("no design records to evaluate".into()));
    }
    if let Some(s) = overall.iter().find(|s| s.count < 2) {
        return Err(Error::Config(format!("method {} has {} record(s), need at least 2", s.method.tag(), s.count)));
    }
    let mut targets: BTreeMap<String, Vec<&DesignRecord>> = BTreeMap::new();
    for r in records {
        targets.entry(r.target.clone()).or_default().push(r);
    }
    let per_target = targets.into_iter().map(|(t, rs)| (t, stats_for(&rs))).collect();
    let find = |m: Method| overall.iter().find(|s| s.method == m);
    let mut comparisons = Vec::new();
    if let Some(h) = find(Method::Hybrid) {
        for reference in [Method::Sl, Method::Rl] {
            if let Some(r) = find(reference) {
                comparisons.push(Comparison {
                    method: Method::Hybrid,
                    reference,
                    variance_ratio: (r.std * r.std) / (h.std * h.std),
                    improvement: r.mean / h.mean - 1.0,
                });
            }
        }
    }
    Ok(Report {
        overall,
        per_target,
        comparisons,
    })
}

impl Report {
    /// Plain-text report with a mean/std table, ratios and a bar summary.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# final dissimilarity D = 1 - SSIM (lower is better)\n");
        out.push_str("# std uses the population convention (divide by N)\n\n");
        out.push_str("method\tcount\tmean\tstd\tmedian\n");
        for s in &self.overall {
            let _ = writeln!(out, "{}\t{}\t{:.6}\t{:.6}\t{:.6}", s.method.tag(), s.count, s.mean, s.std, s.median);
        }
        for (target, stats) in &self.per_target {
            let _ = writeln!(out, "\ntarget {target}");
            for s in stats {
                let _ = writeln!(out, "{}\t{}\t{:.6}\t{:.6}\t{:.6}", s.method.tag(), s.count, s.mean, s.std, s.median);
            }
        }
        if !self.comparisons.is_empty() {
            out.push_str("\nmethod\treference\tvariance_ratio\timprovement\n");
            for c in &self.comparisons {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{:.3}\t{:+.1}%",
                    c.method.tag(),
                    c.reference.tag(),
                    c.variance_ratio,
                    100.0 * c.improvement
                );
            }
        }
        out.push('\n');
        let top = self.overall.iter().map(|s| s.mean + s.std).fold(0.0, f64::max);
        for s in &self.overall {
            let len = if top > 0.0 { (40.0 * s.mean / top).round() as usize } else { 0 };
            let err = if top > 0.0 { (40.0 * s.std / top).round() as usize } else { 0 };
            let _ = writeln!(out, "{:>6} |{}{} {:.4}", s.method.tag(), "#".repeat(len), "-".repeat(err), s.mean);
        }
        out
    }
}
