//! Yee-grid discretization of the z-invariant TM problem for H_z.
//!
//! H_z lives at cell centers; E_x on horizontal faces, E_y on vertical faces.
//! Each row of cells gives one block of the block-tridiagonal system
//!
//! ```text
//! lower_j ∘ h_{j-1} + (X_j + diag_j) h_j + upper_j ∘ h_{j+1} = b_j
//! ```
//!
//! where `X_j` is the symmetric tridiagonal lateral operator. The lateral edges
//! are mirror planes (∂H_z/∂x = 0); the top and bottom edges terminate the PML
//! with H_z = 0.

use num_complex::Complex64;

use super::{PmlProfile, SimConfig};
use crate::error::{Error, Result};
use crate::geometry::PermittivityGrid;

/// The assembled sparse system, stored by row blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub nx: usize,
    pub ny: usize,
    /// Coupling to the row above, `ny * nx` (row 0 entries are unused and zero).
    pub lower: Vec<Complex64>,
    /// Coupling to the row below, `ny * nx` (last row entries are zero).
    pub upper: Vec<Complex64>,
    /// Lateral coupling between cells `i-1` and `i` of each row, `ny * (nx + 1)`;
    /// entries 0 and nx of every row are zero (mirror edges).
    pub lateral: Vec<f64>,
    /// Main diagonal, `ny * nx`.
    pub diag: Vec<Complex64>,
    pub rhs: Vec<Complex64>,
    /// Inverse face permittivity on horizontal faces, `(ny + 1) * nx`.
    pub inv_eps_hface: Vec<f64>,
    /// Inverse face permittivity on vertical faces, `ny * (nx + 1)`.
    pub inv_eps_vface: Vec<f64>,
    pub k0: f64,
    pub dx: f64,
    pub dy: f64,
    pub stretch_face: Vec<Complex64>,
}

impl LinearSystem {
    pub fn order(&self) -> usize {
        self.nx * self.ny
    }

    pub fn nnz(&self) -> usize {
        let n = self.order();
        let vertical = 2 * self.nx * (self.ny - 1);
        let lateral = 2 * (self.nx - 1) * self.ny;
        n + vertical + lateral
    }

    /// y = A x
    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let (nx, ny) = (self.nx, self.ny);
        let mut y = vec![Complex64::new(0.0, 0.0); nx * ny];
        for j in 0..ny {
            let base = j * nx;
            let lat = &self.lateral[j * (nx + 1)..(j + 1) * (nx + 1)];
            for i in 0..nx {
                let idx = base + i;
                let mut acc = self.diag[idx] * x[idx];
                if i > 0 {
                    acc += lat[i] * x[idx - 1];
                }
                if i + 1 < nx {
                    acc += lat[i + 1] * x[idx + 1];
                }
                if j > 0 {
                    acc += self.lower[idx] * x[idx - nx];
                }
                if j + 1 < ny {
                    acc += self.upper[idx] * x[idx + nx];
                }
                y[idx] = acc;
            }
        }
        y
    }

    /// ‖A x − b‖ / ‖b‖
    pub fn relative_residual(&self, x: &[Complex64]) -> f64 {
        let ax = self.apply(x);
        let num: f64 = ax
            .iter()
            .zip(&self.rhs)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let den: f64 = self.rhs.iter().map(|b| b.norm_sqr()).sum::<f64>().sqrt();
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }

    /// Coordinate-format entries `(row, col, value)` of the full matrix.
    pub fn triplets(&self) -> Vec<(usize, usize, Complex64)> {
        let (nx, ny) = (self.nx, self.ny);
        let mut out = Vec::with_capacity(self.nnz());
        for j in 0..ny {
            for i in 0..nx {
                let idx = j * nx + i;
                if j > 0 {
                    out.push((idx, idx - nx, self.lower[idx]));
                }
                if i > 0 {
                    out.push((idx, idx - 1, Complex64::new(self.lateral[j * (nx + 1) + i], 0.0)));
                }
                out.push((idx, idx, self.diag[idx]));
                if i + 1 < nx {
                    out.push((idx, idx + 1, Complex64::new(self.lateral[j * (nx + 1) + i + 1], 0.0)));
                }
                if j + 1 < ny {
                    out.push((idx, idx + nx, self.upper[idx]));
                }
            }
        }
        out
    }
}

/// Builds the discrete operator ∇·(ε⁻¹∇H_z) + k₀²H_z = b with PML on top and bottom.
pub fn assemble_system(grid: &PermittivityGrid, cfg: &SimConfig) -> Result<LinearSystem> {
    cfg.validate()?;
    if grid.spec != cfg.grid {
        return Err(Error::Config(
            "permittivity grid was rasterized with a different grid spec".into(),
        ));
    }
    let (nx, ny) = (grid.nx, grid.ny);
    if grid.eps.len() != nx * ny || nx == 0 || ny < 3 {
        return Err(Error::Config("malformed permittivity grid".into()));
    }
    if let Some(bad) = grid.eps.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
        return Err(Error::Config(format!("non-physical permittivity {bad}")));
    }

    let dx = cfg.grid.dx;
    let dy = cfg.grid.dy;
    let k0 = cfg.k0();
    let pml = PmlProfile::new(cfg);

    // inverse permittivity on faces: arithmetic mean of the neighbouring cells,
    // boundary faces take the adjacent cell value
    let mut inv_eps_hface = vec![0.0; (ny + 1) * nx];
    for f in 0..=ny {
        for i in 0..nx {
            let e = match f {
                0 => grid.at(0, i),
                f if f == ny => grid.at(ny - 1, i),
                _ => 0.5 * (grid.at(f - 1, i) + grid.at(f, i)),
            };
            inv_eps_hface[f * nx + i] = 1.0 / e;
        }
    }
    let mut inv_eps_vface = vec![0.0; ny * (nx + 1)];
    for j in 0..ny {
        for f in 1..nx {
            inv_eps_vface[j * (nx + 1) + f] = 1.0 / (0.5 * (grid.at(j, f - 1) + grid.at(j, f)));
        }
    }

    let stretch_center: Vec<Complex64> = (0..ny).map(|j| pml.stretch((j as f64 + 0.5) * dy)).collect();
    let stretch_face: Vec<Complex64> = (0..=ny).map(|f| pml.stretch(f as f64 * dy)).collect();

    let n = nx * ny;
    let mut lower = vec![Complex64::new(0.0, 0.0); n];
    let mut upper = vec![Complex64::new(0.0, 0.0); n];
    let mut diag = vec![Complex64::new(0.0, 0.0); n];
    let mut lateral = vec![0.0; ny * (nx + 1)];
    let inv_dx2 = 1.0 / (dx * dx);
    let inv_dy2 = 1.0 / (dy * dy);

    for j in 0..ny {
        let s = stretch_center[j];
        for f in 1..nx {
            lateral[j * (nx + 1) + f] = inv_eps_vface[j * (nx + 1) + f] * inv_dx2;
        }
        for i in 0..nx {
            let idx = j * nx + i;
            let lo = inv_eps_hface[j * nx + i] * inv_dy2 / (s * stretch_face[j]);
            let up = inv_eps_hface[(j + 1) * nx + i] * inv_dy2 / (s * stretch_face[j + 1]);
            let lat_left = lateral[j * (nx + 1) + i];
            let lat_right = lateral[j * (nx + 1) + i + 1];
            diag[idx] = Complex64::new(k0 * k0 - lat_left - lat_right, 0.0) - lo - up;
            if j > 0 {
                lower[idx] = lo;
            }
            if j + 1 < ny {
                upper[idx] = up;
            }
        }
    }

    let mut rhs = vec![Complex64::new(0.0, 0.0); n];
    let src_row = cfg.source_row();
    for v in rhs[src_row * nx..(src_row + 1) * nx].iter_mut() {
        *v = Complex64::new(cfg.source_amplitude / dy, 0.0);
    }

    Ok(LinearSystem {
        nx,
        ny,
        lower,
        upper,
        lateral,
        diag,
        rhs,
        inv_eps_hface,
        inv_eps_vface,
        k0,
        dx,
        dy,
        stretch_face,
    })
}
