use crate::error::{Error, Result};
use crate::fieldmap::{encode_pgm, FieldMap};
use crate::fdfd::SimConfig;
use crate::geometry::{DesignVector, N_STRIPS};

/// Rows of the design band under the map.
pub fn overlay_rows(map_rows: usize) -> usize {
    (map_rows / 10).max(4)
}

/// The map as a 16-bit PGM. With a design, a band is appended below in which
/// each strip appears white at its position and fill fraction (columns span
/// the measurement window from the symmetry plane).
pub fn render_pgm(map: &FieldMap, design: Option<(&DesignVector, &SimConfig)>) -> Result<Vec<u8>> {
    let (rows, cols) = map.shape();
    let Some((d, sim)) = design else {
        return Ok(map.to_pgm());
    };
    let band = overlay_rows(rows);
    let white = map.max();
    let white = if white > 0.0 { white } else { 1.0 };
    let grid = &sim.grid;
    let span = sim.window.span;
    let mut line = vec![0.0; cols];
    for k in 0..N_STRIPS {
        let w = d.width(k) * 1000.0;
        if w == 0.0 {
            continue;
        }
        if k >= grid.lateral_slots {
            return Err(Error::Geometry(format!("strip {k} lies outside the grid")));
        }
        let centre = (k as f64 + 0.5) * grid.slot_pitch;
        let (lo, hi) = (centre - 0.5 * w, centre + 0.5 * w);
        for (c, v) in line.iter_mut().enumerate() {
            let x = (c as f64 + 0.5) * span / cols as f64;
            if x >= lo && x < hi {
                *v = white;
            }
        }
    }
    let mut data = map.data().to_vec();
    data.extend(std::iter::repeat_n(&line, band).flatten());
    Ok(encode_pgm(rows + band, cols, &data))
}
