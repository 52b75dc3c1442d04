//! Discrete metagrating design space and its rasterization onto the simulation grid.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of strips in a design.
pub const N_STRIPS: usize = 13;

/// Number of allowed widths per strip.
pub const N_LEVELS: usize = 5;

/// Allowed normalized widths (width in μm). Index = quantization level.
pub const WIDTH_LEVELS: [f64; N_LEVELS] = [0.0, 0.2, 0.4, 0.6, 0.8];

/// Width increment between adjacent levels.
pub const WIDTH_STEP: f64 = 0.2;

/// Largest allowed normalized width.
pub const MAX_WIDTH: f64 = 0.8;

/// A quantized metagrating design: one width level per strip.
///
/// Strip 0 sits next to the symmetry plane. Levels are stored as indices into
/// [`WIDTH_LEVELS`] so arithmetic on widths never drifts off the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DesignVector {
    levels: [u8; N_STRIPS],
}

impl DesignVector {
    pub fn zeros() -> Self {
        Self {
            levels: [0; N_STRIPS],
        }
    }

    /// All strips at the same level.
    pub fn uniform(level: usize) -> Result<Self> {
        if level >= N_LEVELS {
            return Err(Error::Design(format!("level {level} out of range")));
        }
        Ok(Self {
            levels: [level as u8; N_STRIPS],
        })
    }

    pub fn from_levels(levels: [u8; N_STRIPS]) -> Result<Self> {
        if let Some(bad) = levels.iter().find(|&&l| l as usize >= N_LEVELS) {
            return Err(Error::Design(format!("level {bad} out of range")));
        }
        Ok(Self { levels })
    }

    /// Builds a design from widths that must already be exact members of the allowed set.
    pub fn from_widths(widths: &[f64]) -> Result<Self> {
        if widths.len() != N_STRIPS {
            return Err(Error::Dimension {
                expected: N_STRIPS,
                actual: widths.len(),
            });
        }
        let mut levels = [0u8; N_STRIPS];
        for (slot, &w) in levels.iter_mut().zip(widths) {
            let level = WIDTH_LEVELS
                .iter()
                .position(|&allowed| allowed == w)
                .ok_or_else(|| Error::Design(format!("width {w} is not an allowed value")))?;
            *slot = level as u8;
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[u8; N_STRIPS] {
        &self.levels
    }

    pub fn level(&self, strip: usize) -> usize {
        self.levels[strip] as usize
    }

    pub fn width(&self, strip: usize) -> f64 {
        WIDTH_LEVELS[self.levels[strip] as usize]
    }

    pub fn widths(&self) -> [f64; N_STRIPS] {
        let mut out = [0.0; N_STRIPS];
        for (o, &l) in out.iter_mut().zip(&self.levels) {
            *o = WIDTH_LEVELS[l as usize];
        }
        out
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.widths().to_vec()
    }

    /// Copy with strips at index >= `active` forced to zero width.
    pub fn masked(&self, active: usize) -> Self {
        let mut levels = self.levels;
        for l in levels.iter_mut().skip(active) {
            *l = 0;
        }
        Self { levels }
    }
}

impl fmt::Display for DesignVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, w) in self.widths().iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{w:.1}")?;
        }
        Ok(())
    }
}

impl FromStr for DesignVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let widths = s
            .trim()
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("bad width {tok:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_widths(&widths)
    }
}

impl Serialize for DesignVector {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for DesignVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn snap_level(x: f64) -> u8 {
    let clamped = x.clamp(0.0, MAX_WIDTH);
    // floor(v + 0.5) rounds exact midpoints up; the epsilon absorbs binary
    // representation error so that 0.3 counts as a midpoint.
    let scaled = clamped / WIDTH_STEP;
    let level = (scaled + 0.5 + 1e-9).floor();
    level.clamp(0.0, (N_LEVELS - 1) as f64) as u8
}

/// Snaps each raw value to the nearest allowed width, clamping out-of-range values.
pub fn quantize_design(raw: &[f64]) -> Result<DesignVector> {
    if raw.len() != N_STRIPS {
        return Err(Error::Dimension {
            expected: N_STRIPS,
            actual: raw.len(),
        });
    }
    if let Some(bad) = raw.iter().find(|v| !v.is_finite()) {
        return Err(Error::Design(format!("non-finite raw width {bad}")));
    }
    let mut levels = [0u8; N_STRIPS];
    for (l, &x) in levels.iter_mut().zip(raw) {
        *l = snap_level(x);
    }
    Ok(DesignVector { levels })
}

/// Size of the design space for `n_strips` strips.
pub fn design_space_size_for(n_strips: u32) -> u64 {
    (N_LEVELS as u64).pow(n_strips)
}

pub fn design_space_size() -> u64 {
    design_space_size_for(N_STRIPS as u32)
}

/// Each strip drawn independently and uniformly from the allowed widths.
pub fn random_design<R: Rng + ?Sized>(rng: &mut R) -> DesignVector {
    let mut levels = [0u8; N_STRIPS];
    for l in levels.iter_mut() {
        *l = rng.random_range(0..N_LEVELS as u8);
    }
    DesignVector { levels }
}

/// Random design with only the first `active` strips populated.
pub fn random_design_masked<R: Rng + ?Sized>(rng: &mut R, active: usize) -> DesignVector {
    let mut levels = [0u8; N_STRIPS];
    for l in levels.iter_mut().take(active) {
        *l = rng.random_range(0..N_LEVELS as u8);
    }
    DesignVector { levels }
}

/// Simulation grid layout. Lengths in nm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dx: f64,
    pub dy: f64,
    pub slot_pitch: f64,
    pub si_thickness: f64,
    pub air_height: f64,
    pub substrate_depth: f64,
    pub pml_cells: usize,
    pub n_si: f64,
    pub n_sio2: f64,
    /// Number of strip slots inside the simulated half cell. Strips beyond
    /// this index must have zero width.
    #[serde(default = "default_lateral_slots")]
    pub lateral_slots: usize,
}

fn default_lateral_slots() -> usize {
    N_STRIPS
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            dx: 25.0,
            dy: 25.0,
            slot_pitch: 800.0,
            si_thickness: 500.0,
            air_height: 2000.0,
            substrate_depth: 6000.0,
            pml_cells: 10,
            n_si: 3.48,
            n_sio2: 1.44,
            lateral_slots: N_STRIPS,
        }
    }
}

fn cells(length: f64, step: f64) -> Option<usize> {
    let n = (length / step).round();
    if n < 0.0 || (n * step - length).abs() > 1e-6 * step.max(1.0) {
        None
    } else {
        Some(n as usize)
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dx > 0.0 && self.dy > 0.0) {
            return Err(Error::Geometry("cell sizes must be positive".into()));
        }
        if self.slot_pitch < MAX_WIDTH * 1000.0 {
            return Err(Error::Geometry(format!(
                "slot pitch {} nm cannot hold an 800 nm strip",
                self.slot_pitch
            )));
        }
        if self.lateral_slots == 0 || self.lateral_slots > N_STRIPS {
            return Err(Error::Geometry(format!(
                "lateral_slots must be in 1..={N_STRIPS}"
            )));
        }
        let mut lateral = vec![("slot_pitch", self.slot_pitch)];
        for w in &WIDTH_LEVELS[1..] {
            lateral.push(("strip width", w * 1000.0));
        }
        for (name, len) in lateral {
            if cells(len, self.dx).is_none() {
                return Err(Error::Geometry(format!("dx={} does not divide {name} {len}", self.dx)));
            }
        }
        for (name, len) in [
            ("si_thickness", self.si_thickness),
            ("air_height", self.air_height),
            ("substrate_depth", self.substrate_depth),
        ] {
            match cells(len, self.dy) {
                Some(n) if n > 0 => {}
                _ => {
                    return Err(Error::Geometry(format!(
                        "dy={} does not divide {name} {len}",
                        self.dy
                    )))
                }
            }
        }
        if self.n_si <= 0.0 || self.n_sio2 <= 0.0 {
            return Err(Error::Geometry("refractive indices must be positive".into()));
        }
        Ok(())
    }

    pub fn cells_per_slot(&self) -> usize {
        cells(self.slot_pitch, self.dx).expect("validated grid")
    }

    pub fn nx(&self) -> usize {
        self.cells_per_slot() * self.lateral_slots
    }

    pub fn air_rows(&self) -> usize {
        cells(self.air_height, self.dy).expect("validated grid")
    }

    pub fn si_rows(&self) -> usize {
        cells(self.si_thickness, self.dy).expect("validated grid")
    }

    pub fn substrate_rows(&self) -> usize {
        cells(self.substrate_depth, self.dy).expect("validated grid")
    }

    pub fn ny(&self) -> usize {
        2 * self.pml_cells + self.air_rows() + self.si_rows() + self.substrate_rows()
    }

    /// First row of the strip layer (rows are counted from the top).
    pub fn grating_start(&self) -> usize {
        self.pml_cells + self.air_rows()
    }

    /// First substrate row.
    pub fn substrate_start(&self) -> usize {
        self.grating_start() + self.si_rows()
    }

    /// First row of the bottom absorbing layer.
    pub fn bottom_pml_start(&self) -> usize {
        self.substrate_start() + self.substrate_rows()
    }

    pub fn eps_si(&self) -> f64 {
        self.n_si * self.n_si
    }

    pub fn eps_sio2(&self) -> f64 {
        self.n_sio2 * self.n_sio2
    }

    /// Lateral extent of the simulated half cell (nm).
    pub fn width(&self) -> f64 {
        self.nx() as f64 * self.dx
    }

    /// Total height including absorbing layers (nm).
    pub fn height(&self) -> f64 {
        self.ny() as f64 * self.dy
    }
}

/// Relative permittivity sampled at cell centers, row-major with row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct PermittivityGrid {
    pub nx: usize,
    pub ny: usize,
    pub eps: Vec<f64>,
    pub spec: GridSpec,
}

impl PermittivityGrid {
    /// Grid with one permittivity value per row (laterally uniform media).
    pub fn from_rows(spec: &GridSpec, row_eps: &[f64]) -> Result<Self> {
        spec.validate()?;
        let (nx, ny) = (spec.nx(), spec.ny());
        if row_eps.len() != ny {
            return Err(Error::Dimension {
                expected: ny,
                actual: row_eps.len(),
            });
        }
        let mut eps = Vec::with_capacity(nx * ny);
        for &e in row_eps {
            eps.extend(std::iter::repeat_n(e, nx));
        }
        Ok(Self {
            nx,
            ny,
            eps,
            spec: spec.clone(),
        })
    }

    /// Air everywhere.
    pub fn vacuum(spec: &GridSpec) -> Result<Self> {
        Self::from_rows(spec, &vec![1.0; spec.ny()])
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.eps[row * self.nx + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.eps[row * self.nx..(row + 1) * self.nx]
    }

    /// Number of cells holding silicon.
    pub fn si_cells(&self) -> usize {
        let si = self.spec.eps_si();
        self.eps.iter().filter(|&&e| e == si).count()
    }
}

/// Rasterizes a design: air above, strips of Si in the grating layer, SiO2 below.
///
/// Strip `k` is centered in slot `k`; a cell is Si when it lies inside the strip.
pub fn rasterize(d: &DesignVector, spec: &GridSpec) -> Result<PermittivityGrid> {
    spec.validate()?;
    let nx = spec.nx();
    let ny = spec.ny();
    let eps_sio2 = spec.eps_sio2();
    let eps_si = spec.eps_si();

    let mut row_eps = vec![1.0; ny];
    for e in row_eps.iter_mut().skip(spec.substrate_start()) {
        *e = eps_sio2;
    }
    let mut grid = PermittivityGrid::from_rows(spec, &row_eps)?;

    let mut strip_mask = vec![false; nx];
    let slot_cells = spec.cells_per_slot();
    for k in 0..N_STRIPS {
        let width_nm = d.width(k) * 1000.0;
        if width_nm == 0.0 {
            continue;
        }
        if k >= spec.lateral_slots {
            return Err(Error::Geometry(format!(
                "strip {k} has width but the grid only holds {} slots",
                spec.lateral_slots
            )));
        }
        if width_nm > spec.slot_pitch {
            return Err(Error::Geometry(format!(
                "strip {k} width {width_nm} nm exceeds slot pitch {} nm",
                spec.slot_pitch
            )));
        }
        let width_cells = (width_nm / spec.dx).round() as usize;
        let first = k * slot_cells + (slot_cells - width_cells) / 2;
        for m in strip_mask.iter_mut().skip(first).take(width_cells) {
            *m = true;
        }
    }

    for row in spec.grating_start()..spec.substrate_start() {
        let base = row * nx;
        for (i, &si) in strip_mask.iter().enumerate() {
            if si {
                grid.eps[base + i] = eps_si;
            }
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn raw(first: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; N_STRIPS];
        v[..first.len()].copy_from_slice(first);
        v
    }

    #[test]
    fn quantize_nearest_member() {
        let d = quantize_design(&raw(&[0.21, 0.09, 0.0])).unwrap();
        assert_eq!(&d.widths()[..3], &[0.2, 0.0, 0.0]);
    }

    #[test]
    fn quantize_ties_round_up() {
        let d = quantize_design(&raw(&[0.3, 0.1, 0.5, 0.7])).unwrap();
        assert_eq!(&d.widths()[..4], &[0.4, 0.2, 0.6, 0.8]);
    }

    #[test]
    fn quantize_clamps() {
        let d = quantize_design(&raw(&[-0.5, 1.7, 0.8])).unwrap();
        assert_eq!(&d.widths()[..3], &[0.0, 0.8, 0.8]);
    }

    #[test]
    fn quantize_rejects_wrong_length() {
        assert!(matches!(
            quantize_design(&[0.2; 12]),
            Err(Error::Dimension { expected: 13, actual: 12 })
        ));
    }

    #[test]
    fn space_size() {
        assert_eq!(design_space_size(), 1_220_703_125);
        assert_eq!(design_space_size_for(1), 5);
        assert_eq!(design_space_size_for(2), 25);
    }

    #[test]
    fn random_design_is_deterministic() {
        let a = random_design(&mut ChaCha8Rng::seed_from_u64(11));
        let b = random_design(&mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
    }

    #[test]
    fn random_design_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 10_000;
        let mut counts = [[0usize; N_LEVELS]; N_STRIPS];
        for _ in 0..draws {
            let d = random_design(&mut rng);
            for k in 0..N_STRIPS {
                counts[k][d.level(k)] += 1;
            }
        }
        for per_strip in &counts {
            for &c in per_strip {
                let freq = c as f64 / draws as f64;
                assert!((freq - 0.2).abs() <= 0.02, "frequency {freq}");
            }
        }
    }

    #[test]
    fn display_and_parse() {
        let d = quantize_design(&raw(&[0.2, 0.0, 0.8, 0.6])).unwrap();
        let text = d.to_string();
        assert!(text.starts_with("0.2,0.0,0.8,0.6,0.0"));
        assert_eq!(text.parse::<DesignVector>().unwrap(), d);
        assert!("0.2,0.3".parse::<DesignVector>().is_err());
        assert!("0.25,0,0,0,0,0,0,0,0,0,0,0,0".parse::<DesignVector>().is_err());
    }

    #[test]
    fn zero_design_has_no_silicon() {
        let spec = GridSpec::default();
        let g = rasterize(&DesignVector::zeros(), &spec).unwrap();
        assert_eq!(g.si_cells(), 0);
        assert!(g.eps.iter().all(|&e| e == 1.0 || e == spec.eps_sio2()));
    }

    #[test]
    fn full_width_strips_tile_the_layer() {
        let spec = GridSpec::default();
        let d = DesignVector::uniform(4).unwrap();
        let g = rasterize(&d, &spec).unwrap();
        for row in spec.grating_start()..spec.substrate_start() {
            assert!(g.row(row).iter().all(|&e| e == spec.eps_si()));
        }
        assert_eq!(g.si_cells(), spec.nx() * spec.si_rows());
    }

    #[test]
    fn single_strip_cell_count() {
        let spec = GridSpec::default();
        let d = quantize_design(&raw(&[0.4])).unwrap();
        let g = rasterize(&d, &spec).unwrap();
        let expected = (400.0 / spec.dx).round() as usize * (spec.si_thickness / spec.dy).round() as usize;
        assert_eq!(g.si_cells(), expected);
        // centered in the first slot
        let row = g.row(spec.grating_start());
        let si: Vec<usize> = (0..g.nx).filter(|&i| row[i] == spec.eps_si()).collect();
        assert_eq!(si.first(), Some(&8));
        assert_eq!(si.last(), Some(&23));
    }

    #[test]
    fn strips_outside_the_domain_are_rejected() {
        let spec = GridSpec {
            lateral_slots: 7,
            ..GridSpec::default()
        };
        let mut levels = [0u8; N_STRIPS];
        levels[9] = 1;
        let d = DesignVector::from_levels(levels).unwrap();
        assert!(matches!(rasterize(&d, &spec), Err(Error::Geometry(_))));
        assert!(rasterize(&d.masked(7), &spec).is_ok());
    }

    #[test]
    fn invalid_grid_specs() {
        let bad_pitch = GridSpec {
            slot_pitch: 600.0,
            ..GridSpec::default()
        };
        assert!(bad_pitch.validate().is_err());
        let bad_dx = GridSpec {
            dx: 30.0,
            ..GridSpec::default()
        };
        assert!(bad_dx.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn quantize_is_idempotent(raw in proptest::collection::vec(-2.0f64..2.0, N_STRIPS)) {
                let once = quantize_design(&raw).unwrap();
                let twice = quantize_design(&once.to_vec()).unwrap();
                prop_assert_eq!(once, twice);
            }

            #[test]
            fn si_area_is_monotone(levels in proptest::array::uniform13(0u8..5), strip in 0usize..N_STRIPS) {
                let spec = GridSpec { dx: 50.0, dy: 50.0, ..GridSpec::default() };
                let d = DesignVector::from_levels(levels).unwrap();
                let mut bigger = levels;
                if bigger[strip] < 4 { bigger[strip] += 1; }
                let d2 = DesignVector::from_levels(bigger).unwrap();
                let a = rasterize(&d, &spec).unwrap().si_cells();
                let b = rasterize(&d2, &spec).unwrap().si_cells();
                prop_assert!(b >= a);
            }

            #[test]
            fn raster_uses_three_materials(levels in proptest::array::uniform13(0u8..5)) {
                let spec = GridSpec { dx: 50.0, dy: 50.0, ..GridSpec::default() };
                let g = rasterize(&DesignVector::from_levels(levels).unwrap(), &spec).unwrap();
                let allowed = [1.0, spec.eps_sio2(), spec.eps_si()];
                prop_assert!(g.eps.iter().all(|e| allowed.contains(e)));
            }
        }
    }
}
