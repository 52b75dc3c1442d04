use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DesignVector, N_LEVELS, N_STRIPS};

pub const TARGET_NAMES: [&str; 3] = ["focal", "collimated", "dual"];

/// A withheld design whose simulated field map serves as a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HiddenTarget {
    pub name: String,
    pub active_strips: usize,
    pub design: DesignVector,
}

/// Stand-in designs over the first `active` strips (u runs 0..1 across them):
/// "focal" tapers from the widest strip at the symmetry plane, "collimated"
/// is a uniform grating at 400 nm, "dual" peaks in the middle of the half cell.
pub fn standin_design(name: &str, active: usize) -> Result<DesignVector> {
    if active == 0 || active > N_STRIPS {
        return Err(Error::Config(format!("active strips must be in 1..={N_STRIPS}")));
    }
    let top = (N_LEVELS - 1) as f64;
    let level = |k: usize| -> f64 {
        let u = if active > 1 { k as f64 / (active - 1) as f64 } else { 0.0 };
        match name {
            "focal" => top * (1.0 - u),
            "collimated" => 2.0,
            _ => top * (std::f64::consts::PI * u).sin(),
        }
    };
    if !TARGET_NAMES.contains(&name) {
        return Err(Error::Config(format!("unknown target {name:?} (focal, collimated, dual)")));
    }
    let mut levels = [0u8; N_STRIPS];
    for (k, l) in levels.iter_mut().enumerate().take(active) {
        *l = level(k).round() as u8;
    }
    DesignVector::from_levels(levels)
}

pub fn standin_targets(active: usize) -> Result<Vec<HiddenTarget>> {
    TARGET_NAMES
        .iter()
        .map(|&name| {
            Ok(HiddenTarget {
                name: name.to_string(),
                active_strips: active,
                design: standin_design(name, active)?,
            })
        })
        .collect()
}
