//! Small dense complex kernels used by the block elimination.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Row-major square complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub n: usize,
    pub data: Vec<Complex64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![Complex64::new(0.0, 0.0); n * n],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.n + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.n..(r + 1) * self.n]
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(x)
                    .fold(Complex64::new(0.0, 0.0), |acc, (a, b)| acc + a * b)
            })
            .collect()
    }

    /// In-place Gauss-Jordan inversion with partial pivoting.
    pub fn invert_in_place(&mut self) -> Result<()> {
        let n = self.n;
        let mut perm: Vec<usize> = (0..n).collect();
        let mut pivot_row = vec![Complex64::new(0.0, 0.0); n];
        let scale = self.data.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
        if scale == 0.0 {
            return Err(Error::Solver {
                reason: "zero block in elimination".into(),
                residual: f64::INFINITY,
            });
        }

        for k in 0..n {
            let (mut best, mut best_mag) = (k, 0.0);
            for r in k..n {
                let mag = self.data[r * n + k].norm_sqr();
                if mag > best_mag {
                    best = r;
                    best_mag = mag;
                }
            }
            if best_mag.sqrt() <= scale * 1e-300 {
                return Err(Error::Solver {
                    reason: format!("singular block at pivot {k}"),
                    residual: f64::INFINITY,
                });
            }
            if best != k {
                for c in 0..n {
                    self.data.swap(k * n + c, best * n + c);
                }
                perm.swap(k, best);
            }

            let inv_pivot = self.data[k * n + k].inv();
            {
                let row_k = &mut self.data[k * n..(k + 1) * n];
                row_k[k] = Complex64::new(1.0, 0.0);
                for v in row_k.iter_mut() {
                    *v *= inv_pivot;
                }
                pivot_row.copy_from_slice(row_k);
            }

            for r in 0..n {
                if r == k {
                    continue;
                }
                let row = &mut self.data[r * n..(r + 1) * n];
                let factor = row[k];
                if factor == Complex64::new(0.0, 0.0) {
                    continue;
                }
                row[k] = Complex64::new(0.0, 0.0);
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= factor * p;
                }
            }
        }

        // Undo the row permutation as a column permutation of the inverse.
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        for r in 0..n {
            for (c, &p) in perm.iter().enumerate() {
                out[r * n + p] = self.data[r * n + c];
            }
        }
        self.data = out;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let n = 7;
        let mut m = DenseMatrix::zeros(n);
        for r in 0..n {
            for col in 0..n {
                let x = ((r * r * 7 + col * 13 + r * col * col) % 17) as f64 - 8.0;
                m.data[r * n + col] = c(x, 0.3 * (r as f64 - col as f64));
            }
        }
        // zero leading pivot forces a row swap
        m.data[0] = c(0.0, 0.0);
        let original = m.clone();
        m.invert_in_place().unwrap();
        for r in 0..n {
            for col in 0..n {
                let mut acc = c(0.0, 0.0);
                for k in 0..n {
                    acc += original.get(r, k) * m.get(k, col);
                }
                let expected = if r == col { 1.0 } else { 0.0 };
                assert!((acc - c(expected, 0.0)).norm() < 1e-10, "({r},{col}) = {acc}");
            }
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut m = DenseMatrix::zeros(3);
        m.data[0] = c(1.0, 0.0);
        m.data[4] = c(1.0, 0.0);
        assert!(matches!(m.invert_in_place(), Err(Error::Solver { .. })));
    }
}
