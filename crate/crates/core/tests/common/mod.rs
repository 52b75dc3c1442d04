#![allow(dead_code)]

pub mod toy;

use metagrating::fdfd::SimConfig;
use metagrating::geometry::{GridSpec, PermittivityGrid};
use num_complex::Complex64;

/// Power transmission and reflection of a layer stack at normal incidence,
/// from the characteristic-matrix method.
///
/// `layers` are (refractive index, thickness) pairs from the incident side.
pub fn tmm(n_in: f64, layers: &[(f64, f64)], n_out: f64, wavelength: f64) -> (f64, f64) {
    let one = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    let mut m = [[one, Complex64::new(0.0, 0.0)], [Complex64::new(0.0, 0.0), one]];
    for &(n, d) in layers {
        let delta = 2.0 * std::f64::consts::PI * n * d / wavelength;
        let (c, s) = (delta.cos(), delta.sin());
        let layer = [[c * one, -i * s / n], [-i * n * s, c * one]];
        let mut next = [[Complex64::new(0.0, 0.0); 2]; 2];
        for r in 0..2 {
            for col in 0..2 {
                next[r][col] = m[r][0] * layer[0][col] + m[r][1] * layer[1][col];
            }
        }
        m = next;
    }
    let denom = n_in * m[0][0] + n_in * n_out * m[0][1] + m[1][0] + n_out * m[1][1];
    let t = 2.0 * n_in / denom;
    let r = (n_in * m[0][0] + n_in * n_out * m[0][1] - m[1][0] - n_out * m[1][1]) / denom;
    (n_out / n_in * t.norm_sqr(), r.norm_sqr())
}

/// Coarse configuration used by most solver tests.
pub fn reduced_config() -> SimConfig {
    SimConfig::for_grid(GridSpec {
        dx: 50.0,
        dy: 50.0,
        air_height: 1000.0,
        substrate_depth: 3000.0,
        lateral_slots: 7,
        ..GridSpec::default()
    })
}

/// Narrow fine-grid configuration for laterally uniform stacks.
pub fn slab_config() -> SimConfig {
    SimConfig::for_grid(GridSpec {
        dx: 25.0,
        dy: 25.0,
        air_height: 2000.0,
        substrate_depth: 2000.0,
        lateral_slots: 1,
        ..GridSpec::default()
    })
}

/// Rows of a laterally uniform stack: air, the given layers from the top of
/// the strip layer down, then `n_out` to the bottom.
pub fn stack_grid(cfg: &SimConfig, layers: &[(f64, f64)], n_out: f64) -> PermittivityGrid {
    let g = &cfg.grid;
    let mut rows = vec![1.0; g.ny()];
    let mut r = g.grating_start();
    for &(n, d) in layers {
        let cells = (d / g.dy).round() as usize;
        assert!((cells as f64 * g.dy - d).abs() < 1e-9, "layer not on grid");
        for e in rows.iter_mut().skip(r).take(cells) {
            *e = n * n;
        }
        r += cells;
    }
    for e in rows.iter_mut().skip(r) {
        *e = n_out * n_out;
    }
    PermittivityGrid::from_rows(g, &rows).unwrap()
}
