//! Frequency-domain solver for the transmitted field of a metagrating.
//!
//! Lengths are in nm with c = 1, so ω = k₀ = 2π/λ. The incident plane wave is
//! x-polarized (TM with respect to the invariant z axis), which leaves H_z as
//! the only unknown.

mod dense;
mod fields;
mod solver;
mod system;

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use dense::DenseMatrix;
pub use fields::{extract_field_map, FieldSolution};
pub use solver::{solve_system, Factorization, ModalBasis};
pub use system::{assemble_system, LinearSystem};

use crate::error::{Error, Result};
use crate::fieldmap::FieldMap;
use crate::geometry::{rasterize, DesignVector, GridSpec, PermittivityGrid};

/// Placement of the measurement window, in nm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    /// Lateral extent starting at the symmetry plane.
    pub span: f64,
    /// Distance from the bottom of the strip layer to the first window row.
    pub top_offset: f64,
    pub depth: f64,
}

impl WindowSpec {
    /// Full half cell laterally; as deep as the substrate allows with a
    /// 100 nm margin above the absorbing layer.
    pub fn for_grid(grid: &GridSpec) -> Self {
        let top_offset = 100.0;
        Self {
            span: grid.slot_pitch * grid.lateral_slots as f64,
            top_offset,
            depth: grid.substrate_depth - top_offset - 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmlSpec {
    pub order: f64,
    pub reflection: f64,
}

impl Default for PmlSpec {
    fn default() -> Self {
        Self {
            order: 3.0,
            reflection: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub wavelength: f64,
    /// Depth of the source plane below the top of the air region (nm).
    pub source_y: f64,
    pub window: WindowSpec,
    /// (rows, columns) of the sampled field map.
    pub window_resolution: (usize, usize),
    pub grid: GridSpec,
    pub pml: PmlSpec,
    pub source_amplitude: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::for_grid(GridSpec::default())
    }
}

impl SimConfig {
    pub fn for_grid(grid: GridSpec) -> Self {
        Self {
            wavelength: 1500.0,
            source_y: (grid.air_height / 4.0 / grid.dy).round() * grid.dy,
            window: WindowSpec::for_grid(&grid),
            window_resolution: (270, 270),
            grid,
            pml: PmlSpec::default(),
            source_amplitude: 1.0,
        }
    }

    pub fn k0(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength
    }

    /// Row holding the current sheet.
    pub fn source_row(&self) -> usize {
        self.grid.pml_cells + (self.source_y / self.grid.dy).floor().max(0.0) as usize
    }

    /// Top edge of the measurement window, measured from the top of the domain (nm).
    pub fn window_top(&self) -> f64 {
        self.grid.substrate_start() as f64 * self.grid.dy + self.window.top_offset
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(Error::Config("wavelength must be positive".into()));
        }
        if !(self.pml.order >= 0.0 && self.pml.reflection > 0.0 && self.pml.reflection < 1.0) {
            return Err(Error::Config("invalid PML grading".into()));
        }
        if self.grid.pml_cells == 0 {
            return Err(Error::Config("at least one PML cell is required".into()));
        }
        if !self.source_amplitude.is_finite() || self.source_amplitude == 0.0 {
            return Err(Error::Config("source amplitude must be finite and non-zero".into()));
        }
        if !(self.source_y > 0.0 && self.source_y < self.grid.air_height) {
            return Err(Error::Config(format!(
                "source plane at {} nm is outside the air region",
                self.source_y
            )));
        }
        let src = self.source_row();
        // one clear row above (reflection plane) and below (gap to the strips)
        if src < self.grid.pml_cells + 1 || src + 1 >= self.grid.grating_start() {
            return Err(Error::Config("source plane overlaps the PML or the strip layer".into()));
        }
        let (rows, cols) = self.window_resolution;
        if rows < 2 || cols < 2 {
            return Err(Error::Config("window resolution must be at least 2x2".into()));
        }
        let w = &self.window;
        if !(w.span > 0.0 && w.depth > 0.0 && w.top_offset >= 0.0) {
            return Err(Error::Config("window extents must be positive".into()));
        }
        if w.span > self.grid.width() + 1e-9 {
            return Err(Error::Config("window is wider than the simulated half cell".into()));
        }
        let bottom = self.window_top() + w.depth;
        let pml_top = self.grid.bottom_pml_start() as f64 * self.grid.dy;
        if bottom > pml_top - 0.5 * self.grid.dy {
            return Err(Error::Config(format!(
                "measurement window reaches {bottom} nm, past the absorbing layer at {pml_top} nm"
            )));
        }
        Ok(())
    }
}

/// Polynomially graded stretched-coordinate absorber at top and bottom.
#[derive(Debug, Clone)]
pub struct PmlProfile {
    thickness: f64,
    height: f64,
    sigma_max: f64,
    order: f64,
    k0: f64,
}

impl PmlProfile {
    pub fn new(cfg: &SimConfig) -> Self {
        let thickness = cfg.grid.pml_cells as f64 * cfg.grid.dy;
        let order = cfg.pml.order;
        Self {
            thickness,
            height: cfg.grid.height(),
            sigma_max: -(order + 1.0) * cfg.pml.reflection.ln() / (2.0 * thickness),
            order,
            k0: cfg.k0(),
        }
    }

    /// Complex stretch factor at depth `y` (nm from the top of the domain).
    pub fn stretch(&self, y: f64) -> Complex64 {
        let d = if y < self.thickness {
            self.thickness - y
        } else if y > self.height - self.thickness {
            y - (self.height - self.thickness)
        } else {
            0.0
        };
        if d <= 0.0 {
            return Complex64::new(1.0, 0.0);
        }
        let sigma = self.sigma_max * (d / self.thickness).powf(self.order);
        Complex64::new(1.0, sigma / self.k0)
    }
}

/// Rasterize, assemble and solve one permittivity grid.
pub fn solve_grid(grid: &PermittivityGrid, cfg: &SimConfig, basis: Arc<ModalBasis>) -> Result<FieldSolution> {
    let sys = assemble_system(grid, cfg)?;
    let hz = solve_system(&sys, basis)?;
    Ok(FieldSolution::from_hz(&sys, &cfg.grid, hz))
}

/// Solves with a freshly built modal basis.
pub fn solve(sys: &LinearSystem, grid: &GridSpec) -> Result<FieldSolution> {
    let hz = solve_system(sys, Arc::new(ModalBasis::new(sys.nx)))?;
    Ok(FieldSolution::from_hz(sys, grid, hz))
}

/// A configured solver holding the vacuum reference run used for
/// normalization and flux ratios. Cheap to share between threads.
#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: SimConfig,
    basis: Arc<ModalBasis>,
    vacuum: Arc<FieldSolution>,
    incident_amplitude: f64,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let basis = Arc::new(ModalBasis::new(cfg.grid.nx()));
        let vac_grid = PermittivityGrid::vacuum(&cfg.grid)?;
        let vacuum = solve_grid(&vac_grid, &cfg, basis.clone())?;
        let raw = extract_field_map(&vacuum, &cfg)?;
        let n = raw.data().len() as f64;
        let incident_amplitude = raw.data().iter().sum::<f64>() / n;
        if !(incident_amplitude > 0.0 && incident_amplitude.is_finite()) {
            return Err(Error::Numeric("vacuum reference field vanished".into()));
        }
        Ok(Self {
            cfg,
            basis,
            vacuum: Arc::new(vacuum),
            incident_amplitude,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// Mean |E| over the window in the vacuum run; divides every map.
    pub fn incident_amplitude(&self) -> f64 {
        self.incident_amplitude
    }

    pub fn vacuum(&self) -> &FieldSolution {
        &self.vacuum
    }

    pub fn solve_grid(&self, grid: &PermittivityGrid) -> Result<FieldSolution> {
        solve_grid(grid, &self.cfg, self.basis.clone())
    }

    pub fn solve_design(&self, d: &DesignVector) -> Result<FieldSolution> {
        let grid = rasterize(d, &self.cfg.grid)?;
        self.solve_grid(&grid)
    }

    /// Normalized field map of a solved structure.
    pub fn field_map(&self, sol: &FieldSolution) -> Result<FieldMap> {
        let raw = extract_field_map(sol, &self.cfg)?;
        raw.normalized(self.incident_amplitude)
    }

    pub fn simulate(&self, d: &DesignVector) -> Result<FieldMap> {
        let sol = self.solve_design(d)?;
        self.field_map(&sol)
    }

    /// Transmitted and reflected power as fractions of the incident flux.
    pub fn transmission_reflection(&self, sol: &FieldSolution) -> Result<(f64, f64)> {
        fields::transmission_reflection(sol, &self.vacuum, &self.cfg)
    }
}

/// One-shot rasterize → assemble → solve → extract, normalized against a
/// vacuum run of the same configuration.
pub fn simulate(d: &DesignVector, cfg: &SimConfig) -> Result<FieldMap> {
    Simulator::new(cfg.clone())?.simulate(d)
}

/// Flux ratios for a solution; runs the vacuum reference internally.
pub fn transmission_reflection(sol: &FieldSolution, cfg: &SimConfig) -> Result<(f64, f64)> {
    let basis = Arc::new(ModalBasis::new(cfg.grid.nx()));
    let vacuum = solve_grid(&PermittivityGrid::vacuum(&cfg.grid)?, cfg, basis)?;
    fields::transmission_reflection(sol, &vacuum, cfg)
}
