//! Agreement measures between targets and produced outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fieldmap::FieldMap;

/// Mean squared difference.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Dimension { expected: 1, actual: 0 });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// Change in merit between consecutive steps; negative is an improvement.
pub fn delta_merit(previous: f64, current: f64) -> f64 {
    current - previous
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum SsimWindow {
    Gaussian { size: usize, sigma: f64 },
    /// Whole-image statistics.
    Global,
}

impl Default for SsimWindow {
    fn default() -> Self {
        SsimWindow::Gaussian { size: 11, sigma: 1.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    #[serde(default)]
    pub window: SsimWindow,
    pub dynamic_range: f64,
}

impl SsimParams {
    pub fn new(dynamic_range: f64) -> Self {
        Self {
            k1: 0.01,
            k2: 0.03,
            window: SsimWindow::default(),
            dynamic_range,
        }
    }

    /// Parameters whose dynamic range is the maximum of `target`.
    pub fn for_target(target: &FieldMap) -> Self {
        Self::new(target.max())
    }

    fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(Error::Config("SSIM constants must be positive".into()));
        }
        if !(self.dynamic_range > 0.0 && self.dynamic_range.is_finite()) {
            return Err(Error::Config(format!(
                "SSIM dynamic range must be positive, got {}",
                self.dynamic_range
            )));
        }
        if let SsimWindow::Gaussian { size, sigma } = self.window {
            if size == 0 || size % 2 == 0 || !(sigma > 0.0) {
                return Err(Error::Config("Gaussian window needs odd size and positive sigma".into()));
            }
        }
        Ok(())
    }
}

/// Normalized 1D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Valid-mode separable filtering of a row-major image.
fn filter_valid(img: &[f64], rows: usize, cols: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let oc = cols - k + 1;
    let or = rows - k + 1;
    let mut horiz = vec![0.0; rows * oc];
    for r in 0..rows {
        let row = &img[r * cols..(r + 1) * cols];
        for c in 0..oc {
            horiz[r * oc + c] = taps.iter().zip(&row[c..c + k]).map(|(w, v)| w * v).sum();
        }
    }
    let mut out = vec![0.0; or * oc];
    for r in 0..or {
        for (t, w) in taps.iter().enumerate() {
            let src = &horiz[(r + t) * oc..(r + t + 1) * oc];
            for (o, v) in out[r * oc..(r + 1) * oc].iter_mut().zip(src) {
                *o += w * v;
            }
        }
    }
    out
}

fn ssim_index(mu_a: f64, mu_b: f64, var_a: f64, var_b: f64, cov: f64, c1: f64, c2: f64) -> f64 {
    // every sub-expression is symmetric in (a, b), so the index is too
    let num = (2.0 * (mu_a * mu_b) + c1) * (2.0 * cov + c2);
    let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
    num / den
}

/// Structural similarity of two equally shaped images.
pub fn ssim(a: &FieldMap, b: &FieldMap, p: &SsimParams) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(a.shape(), b.shape()));
    }
    ssim_slices(a.data(), b.data(), a.rows(), a.cols(), p)
}

/// SSIM on raw row-major buffers.
pub fn ssim_slices(a: &[f64], b: &[f64], rows: usize, cols: usize, p: &SsimParams) -> Result<f64> {
    p.validate()?;
    if a.len() != rows * cols || b.len() != rows * cols {
        return Err(Error::Dimension {
            expected: rows * cols,
            actual: a.len().min(b.len()),
        });
    }
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let c2 = (p.k2 * p.dynamic_range).powi(2);
    let aa: Vec<f64> = a.iter().map(|x| x * x).collect();
    let bb: Vec<f64> = b.iter().map(|x| x * x).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();

    match p.window {
        SsimWindow::Global => {
            let n = a.len() as f64;
            let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
            let (ma, mb) = (mean(a), mean(b));
            let va = mean(&aa) - ma * ma;
            let vb = mean(&bb) - mb * mb;
            let cov = mean(&ab) - ma * mb;
            Ok(ssim_index(ma, mb, va, vb, cov, c1, c2))
        }
        SsimWindow::Gaussian { size, sigma } => {
            if rows < size || cols < size {
                return Err(Error::Shape((rows, cols), (size, size)));
            }
            let taps = gaussian_taps(size, sigma);
            let mu_a = filter_valid(a, rows, cols, &taps);
            let mu_b = filter_valid(b, rows, cols, &taps);
            let e_aa = filter_valid(&aa, rows, cols, &taps);
            let e_bb = filter_valid(&bb, rows, cols, &taps);
            let e_ab = filter_valid(&ab, rows, cols, &taps);
            let mut total = 0.0;
            for k in 0..mu_a.len() {
                let (ma, mb) = (mu_a[k], mu_b[k]);
                total += ssim_index(
                    ma,
                    mb,
                    e_aa[k] - ma * ma,
                    e_bb[k] - mb * mb,
                    e_ab[k] - ma * mb,
                    c1,
                    c2,
                );
            }
            Ok(total / mu_a.len() as f64)
        }
    }
}

/// D = 1 − SSIM; zero for identical images.
pub fn dissimilarity(a: &FieldMap, b: &FieldMap, p: &SsimParams) -> Result<f64> {
    Ok(1.0 - ssim(a, b, p)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!((mse(&[0.1, 0.3], &[0.2, 0.1]).unwrap() - 0.025).abs() < 1e-15);
        assert_eq!(mse(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn delta_examples() {
        assert!((delta_merit(0.5, 0.3) + 0.2).abs() < 1e-15);
        assert_eq!(delta_merit(0.3, 0.3), 0.0);
        assert!((delta_merit(0.2, 0.6) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn taps_sum_to_one() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(t[0], t[10]);
    }

    #[test]
    fn constant_images_follow_closed_form() {
        let l = 2.0;
        let zero = FieldMap::filled(20, 20, 0.0).unwrap();
        let full = FieldMap::filled(20, 20, l).unwrap();
        let p = SsimParams::new(l);
        let c1 = (0.01 * l) * (0.01 * l);
        let expected = c1 / (l * l + c1);
        assert!((ssim(&zero, &full, &p).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 1e-4).abs() < 1e-7);
        assert_eq!(ssim(&full, &full, &p).unwrap(), 1.0);
    }

    #[test]
    fn invalid_parameters_rejected() {
        let a = FieldMap::filled(12, 12, 1.0).unwrap();
        assert!(ssim(&a, &a, &SsimParams::new(0.0)).is_err());
        let small = FieldMap::filled(5, 5, 1.0).unwrap();
        assert!(ssim(&small, &small, &SsimParams::new(1.0)).is_err());
        let other = FieldMap::filled(12, 13, 1.0).unwrap();
        assert!(ssim(&a, &other, &SsimParams::new(1.0)).is_err());
        let mut g = SsimParams::new(1.0);
        g.window = SsimWindow::Global;
        assert_eq!(ssim(&small, &small, &g).unwrap(), 1.0);
    }
}
