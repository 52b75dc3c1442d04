//! Field-magnitude images and their on-disk forms.

use std::path::Path;

use crate::error::{Error, Result};

pub const FMAP_MAGIC: &[u8; 8] = b"FMAP0001";
/// Side length of the stored field-map format.
pub const FMAP_SIDE: usize = 270;

/// Non-negative image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMap {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    normalization: f64,
}

impl FieldMap {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape((rows, cols), (1, 1)));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Numeric(format!("field map value {bad} is not a finite non-negative number")));
        }
        Ok(Self {
            rows,
            cols,
            data,
            normalization: 1.0,
        })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Divisor that was applied to the raw magnitudes (1 for raw maps).
    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Divides by `amplitude` and records it.
    pub fn normalized(&self, amplitude: f64) -> Result<Self> {
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::Numeric(format!("invalid normalization {amplitude}")));
        }
        let mut out = Self::new(self.rows, self.cols, self.data.iter().map(|v| v / amplitude).collect())?;
        out.normalization = self.normalization * amplitude;
        Ok(out)
    }

    /// Area-weighted resampling to `rows × cols`; each output pixel is the
    /// mean of the input area it covers.
    pub fn resample(&self, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape((rows, cols), self.shape()));
        }
        let wy = area_weights(self.rows, rows);
        let wx = area_weights(self.cols, cols);
        let mut out = vec![0.0; rows * cols];
        for (r, row_w) in wy.iter().enumerate() {
            for (c, col_w) in wx.iter().enumerate() {
                let mut acc = 0.0;
                for &(i, a) in row_w {
                    for &(j, b) in col_w {
                        acc += a * b * self.get(i, j);
                    }
                }
                out[r * cols + c] = acc;
            }
        }
        let mut map = Self::new(rows, cols, out)?;
        map.normalization = self.normalization;
        Ok(map)
    }

    /// Exact binary form: magic followed by 270×270 little-endian f64.
    pub fn to_fmap_bytes(&self) -> Result<Vec<u8>> {
        if self.shape() != (FMAP_SIDE, FMAP_SIDE) {
            return Err(Error::Shape(self.shape(), (FMAP_SIDE, FMAP_SIDE)));
        }
        let mut out = Vec::with_capacity(8 + self.data.len() * 8);
        out.extend_from_slice(FMAP_MAGIC);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_fmap_bytes(bytes: &[u8]) -> Result<Self> {
        let expected = 8 + FMAP_SIDE * FMAP_SIDE * 8;
        if bytes.len() < 8 || &bytes[..8] != FMAP_MAGIC {
            return Err(Error::Format("missing FMAP0001 header".into()));
        }
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "field map payload is {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let data = bytes[8..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::new(FMAP_SIDE, FMAP_SIDE, data).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_fmap(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_fmap_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_fmap(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_fmap_bytes(&bytes)
    }

    /// 16-bit binary graymap, linearly scaled so the maximum maps to 65535.
    pub fn to_pgm(&self) -> Vec<u8> {
        encode_pgm(self.rows, self.cols, &self.data)
    }
}

/// Binary PGM (P5, maxval 65535, big-endian samples) of a non-negative image.
pub fn encode_pgm(rows: usize, cols: usize, data: &[f64]) -> Vec<u8> {
    let max = data.iter().copied().fold(0.0, f64::max);
    let mut out = format!("P5\n{cols} {rows}\n65535\n").into_bytes();
    out.reserve(rows * cols * 2);
    for &v in data {
        let level = if max > 0.0 { (v / max * 65535.0).round().clamp(0.0, 65535.0) as u16 } else { 0 };
        out.extend_from_slice(&level.to_be_bytes());
    }
    out
}

/// For each output index, the input indices it overlaps and their weights
/// (weights sum to one).
fn area_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|k| {
            let lo = k as f64 * scale;
            let hi = (k + 1) as f64 * scale;
            let mut w = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < n_in {
                let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    w.push((i, overlap / scale));
                }
                i += 1;
            }
            w
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmap_round_trip_is_exact() {
        let data: Vec<f64> = (0..FMAP_SIDE * FMAP_SIDE).map(|k| (k as f64).sqrt() / 7.0).collect();
        let map = FieldMap::new(FMAP_SIDE, FMAP_SIDE, data).unwrap();
        let bytes = map.to_fmap_bytes().unwrap();
        assert_eq!(&bytes[..8], b"FMAP0001");
        assert_eq!(FieldMap::from_fmap_bytes(&bytes).unwrap(), map);
    }

    #[test]
    fn fmap_rejects_bad_input() {
        assert!(FieldMap::from_fmap_bytes(b"FMAP0002").is_err());
        assert!(FieldMap::from_fmap_bytes(b"FMAP0001\0\0").is_err());
        let mut bytes = FieldMap::filled(FMAP_SIDE, FMAP_SIDE, 1.0).unwrap().to_fmap_bytes().unwrap();
        bytes[8..16].copy_from_slice(&(-1.0f64).to_le_bytes());
        assert!(FieldMap::from_fmap_bytes(&bytes).is_err());
        assert!(FieldMap::filled(3, 3, 0.0).unwrap().to_fmap_bytes().is_err());
    }

    #[test]
    fn negative_values_are_rejected() {
        assert!(FieldMap::new(1, 2, vec![0.0, -1e-9]).is_err());
        assert!(FieldMap::new(1, 2, vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn pgm_scales_to_full_range() {
        let map = FieldMap::new(1, 3, vec![0.0, 0.5, 2.0]).unwrap();
        let pgm = map.to_pgm();
        let header = b"P5\n3 1\n65535\n";
        assert_eq!(&pgm[..header.len()], header);
        let px: Vec<u16> = pgm[header.len()..]
            .chunks(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        assert_eq!(px, vec![0, 16384, 65535]);
    }

    #[test]
    fn resample_preserves_mean_and_constants() {
        let data: Vec<f64> = (0..270 * 270).map(|k| ((k * 7919) % 101) as f64).collect();
        let map = FieldMap::new(270, 270, data).unwrap();
        let small = map.resample(64, 64).unwrap();
        assert!((small.mean() - map.mean()).abs() < 1e-9);
        let flat = FieldMap::filled(270, 270, 0.75).unwrap().resample(64, 64).unwrap();
        assert!(flat.data().iter().all(|v| (v - 0.75).abs() < 1e-12));
    }

    #[test]
    fn resample_integer_factor_is_block_mean() {
        let map = FieldMap::new(2, 4, vec![1.0, 3.0, 5.0, 7.0, 1.0, 3.0, 5.0, 7.0]).unwrap();
        let small = map.resample(1, 2).unwrap();
        assert_eq!(small.data(), &[2.0, 6.0]);
    }
}
