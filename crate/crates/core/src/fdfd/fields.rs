use num_complex::Complex64;

use super::system::LinearSystem;
use super::SimConfig;
use crate::error::{Error, Result};
use crate::fieldmap::FieldMap;
use crate::geometry::GridSpec;

/// Solved fields on the staggered grid.
///
/// `ex` sits on horizontal faces (`(ny + 1) * nx`, face `f` between rows
/// `f - 1` and `f`), `ey` on vertical faces (`ny * (nx + 1)`).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSolution {
    pub nx: usize,
    pub ny: usize,
    pub hz: Vec<Complex64>,
    pub ex: Vec<Complex64>,
    pub ey: Vec<Complex64>,
    pub inv_eps_hface: Vec<f64>,
    pub grid: GridSpec,
}

impl FieldSolution {
    /// Recovers E from the discrete curl of H_z: E = i ∇×H / (k₀ ε).
    pub fn from_hz(sys: &LinearSystem, grid: &GridSpec, hz: Vec<Complex64>) -> Self {
        let (nx, ny) = (sys.nx, sys.ny);
        let i = Complex64::new(0.0, 1.0);
        let zero = Complex64::new(0.0, 0.0);
        let h = |j: isize, c: usize| -> Complex64 {
            if j < 0 || j as usize >= ny {
                zero
            } else {
                hz[j as usize * nx + c]
            }
        };

        let mut ex = vec![zero; (ny + 1) * nx];
        for f in 0..=ny {
            let s = sys.stretch_face[f];
            for c in 0..nx {
                let dh = (h(f as isize, c) - h(f as isize - 1, c)) / (sys.dy * s);
                ex[f * nx + c] = i * dh * sys.inv_eps_hface[f * nx + c] / sys.k0;
            }
        }
        let mut ey = vec![zero; ny * (nx + 1)];
        for j in 0..ny {
            for f in 1..nx {
                let dh = (hz[j * nx + f] - hz[j * nx + f - 1]) / sys.dx;
                ey[j * (nx + 1) + f] = -i * dh * sys.inv_eps_vface[j * (nx + 1) + f] / sys.k0;
            }
        }
        Self {
            nx,
            ny,
            hz,
            ex,
            ey,
            inv_eps_hface: sys.inv_eps_hface.clone(),
            grid: grid.clone(),
        }
    }

    /// Field with all components set to zero (same layout).
    pub fn zeros_like(&self) -> Self {
        let zero = Complex64::new(0.0, 0.0);
        Self {
            hz: vec![zero; self.hz.len()],
            ex: vec![zero; self.ex.len()],
            ey: vec![zero; self.ey.len()],
            ..self.clone()
        }
    }

    #[inline]
    pub fn h(&self, row: usize, col: usize) -> Complex64 {
        self.hz[row * self.nx + col]
    }

    /// Downward power flux through horizontal face `face`, in the
    /// conserved discrete form of the operator (zero net change across
    /// lossless source-free rows).
    pub fn flux(&self, face: usize) -> f64 {
        flux_between(self, None, face)
    }
}

fn flux_between(a: &FieldSolution, minus: Option<&FieldSolution>, face: usize) -> f64 {
    let nx = a.nx;
    let val = |row: usize, c: usize| match minus {
        Some(b) => a.h(row, c) - b.h(row, c),
        None => a.h(row, c),
    };
    (0..nx)
        .map(|c| a.inv_eps_hface[face * nx + c] * (val(face - 1, c).conj() * val(face, c)).im)
        .sum()
}

fn check_layout(sol: &FieldSolution, cfg: &SimConfig) -> Result<()> {
    if sol.grid != cfg.grid {
        return Err(Error::Config("solution grid does not match the configuration".into()));
    }
    let (nx, ny) = (cfg.grid.nx(), cfg.grid.ny());
    if sol.nx != nx || sol.ny != ny || sol.ex.len() != (ny + 1) * nx || sol.ey.len() != ny * (nx + 1) {
        return Err(Error::Shape((sol.ny, sol.nx), (ny, nx)));
    }
    Ok(())
}

/// Bilinear interpolation on a regular lattice with clamped (mirror) edges.
/// `u`, `v` are fractional column/row indices.
fn bilinear(data: &[Complex64], rows: usize, cols: usize, v: f64, u: f64) -> Complex64 {
    let u = u.clamp(0.0, (cols - 1) as f64);
    let v = v.clamp(0.0, (rows - 1) as f64);
    let c0 = (u.floor() as usize).min(cols.saturating_sub(2));
    let r0 = (v.floor() as usize).min(rows.saturating_sub(2));
    let c1 = (c0 + 1).min(cols - 1);
    let r1 = (r0 + 1).min(rows - 1);
    let tu = u - c0 as f64;
    let tv = v - r0 as f64;
    let at = |r: usize, c: usize| data[r * cols + c];
    at(r0, c0) * ((1.0 - tu) * (1.0 - tv))
        + at(r0, c1) * (tu * (1.0 - tv))
        + at(r1, c0) * ((1.0 - tu) * tv)
        + at(r1, c1) * (tu * tv)
}

/// Samples |E| = sqrt(|E_x|² + |E_y|²) on the measurement window.
///
/// Column 0 lies on the symmetry plane. The returned map is not normalized.
pub fn extract_field_map(sol: &FieldSolution, cfg: &SimConfig) -> Result<FieldMap> {
    cfg.validate()?;
    check_layout(sol, cfg)?;
    let (nx, ny) = (sol.nx, sol.ny);
    let (dx, dy) = (cfg.grid.dx, cfg.grid.dy);
    let (rows, cols) = cfg.window_resolution;
    let top = cfg.window_top();
    let w = &cfg.window;

    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let y = top + w.depth * r as f64 / (rows - 1) as f64;
        for c in 0..cols {
            let x = w.span * c as f64 / (cols - 1) as f64;
            let ex = bilinear(&sol.ex, ny + 1, nx, y / dy, x / dx - 0.5);
            let ey = bilinear(&sol.ey, ny, nx + 1, y / dy - 0.5, x / dx);
            out.push((ex.norm_sqr() + ey.norm_sqr()).sqrt());
        }
    }
    FieldMap::new(rows, cols, out)
}

/// Faces used for the flux balance: (reflection, incident, transmission).
fn flux_faces(cfg: &SimConfig) -> (usize, usize, usize) {
    let g = &cfg.grid;
    let src = cfg.source_row();
    let refl = (g.pml_cells + 1 + src) / 2;
    let inc = (src + 1 + g.grating_start()) / 2;
    let trans = (g.substrate_start() + 1 + g.bottom_pml_start()) / 2;
    (refl, inc, trans)
}

pub(super) fn transmission_reflection(
    sol: &FieldSolution,
    vacuum: &FieldSolution,
    cfg: &SimConfig,
) -> Result<(f64, f64)> {
    check_layout(sol, cfg)?;
    check_layout(vacuum, cfg)?;
    let (refl, inc, trans) = flux_faces(cfg);
    let incident = vacuum.flux(inc);
    if !(incident.abs() > 0.0) {
        return Err(Error::Numeric("incident flux vanished".into()));
    }
    let t = sol.flux(trans) / incident;
    // above the source the difference to the vacuum run is the reflected wave alone
    let r = -flux_between(sol, Some(vacuum), refl) / incident;
    Ok((t, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdfd::{assemble_system, solve};
    use crate::geometry::PermittivityGrid;

    #[test]
    fn bilinear_reproduces_linear_data() {
        let (rows, cols) = (4, 5);
        let data: Vec<Complex64> = (0..rows * cols)
            .map(|k| Complex64::new((k / cols) as f64 * 2.0 + (k % cols) as f64, 1.0))
            .collect();
        let z = bilinear(&data, rows, cols, 1.25, 2.5);
        assert!((z - Complex64::new(1.25 * 2.0 + 2.5, 1.0)).norm() < 1e-12);
        // clamped outside the lattice
        let edge = bilinear(&data, rows, cols, -1.0, -3.0);
        assert_eq!(edge, data[0]);
    }

    #[test]
    fn zero_field_gives_zero_map() {
        let cfg = SimConfig::for_grid(GridSpec {
            dx: 50.0,
            dy: 50.0,
            air_height: 1000.0,
            substrate_depth: 1000.0,
            lateral_slots: 2,
            ..GridSpec::default()
        });
        let grid = PermittivityGrid::vacuum(&cfg.grid).unwrap();
        let sys = assemble_system(&grid, &cfg).unwrap();
        let sol = solve(&sys, &cfg.grid).unwrap().zeros_like();
        let map = extract_field_map(&sol, &cfg).unwrap();
        assert_eq!(map.shape(), (270, 270));
        assert!(map.data().iter().all(|&v| v == 0.0));
    }
}
