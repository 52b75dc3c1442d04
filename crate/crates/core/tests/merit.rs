use metagrating::fieldmap::FieldMap;
use metagrating::merit::{dissimilarity, mse, ssim, SsimParams, SsimWindow};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Windowed SSIM from explicit per-window sums with a 2D Gaussian kernel.
fn ssim_oracle(a: &[f64], b: &[f64], rows: usize, cols: usize, l: f64) -> f64 {
    let (size, sigma) = (11usize, 1.5f64);
    let half = (size / 2) as f64;
    let mut w = vec![0.0; size * size];
    for i in 0..size {
        for j in 0..size {
            let (di, dj) = (i as f64 - half, j as f64 - half);
            w[i * size + j] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    let c1 = (0.01 * l) * (0.01 * l);
    let c2 = (0.03 * l) * (0.03 * l);
    let mut acc = 0.0;
    let mut count = 0;
    for r0 in 0..=rows - size {
        for c0 in 0..=cols - size {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..size {
                for j in 0..size {
                    let k = (r0 + i) * cols + c0 + j;
                    ma += w[i * size + j] * a[k];
                    mb += w[i * size + j] * b[k];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..size {
                for j in 0..size {
                    let k = (r0 + i) * cols + c0 + j;
                    let wk = w[i * size + j];
                    va += wk * (a[k] - ma) * (a[k] - ma);
                    vb += wk * (b[k] - mb) * (b[k] - mb);
                    cov += wk * (a[k] - ma) * (b[k] - mb);
                }
            }
            acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}

fn random_map(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> FieldMap {
    FieldMap::new(rows, cols, (0..rows * cols).map(|_| rng.random::<f64>() * 2.0).collect()).unwrap()
}

fn spot(rows: usize, cols: usize, r0: f64, c0: f64) -> FieldMap {
    let data = (0..rows * cols)
        .map(|k| {
            let (r, c) = ((k / cols) as f64, (k % cols) as f64);
            (-((r - r0).powi(2) + (c - c0).powi(2)) / 8.0).exp()
        })
        .collect();
    FieldMap::new(rows, cols, data).unwrap()
}

#[test]
fn windowed_ssim_matches_direct_window_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (rows, cols) in [(11, 11), (16, 23), (30, 14)] {
        let a = random_map(&mut rng, rows, cols);
        let b = random_map(&mut rng, rows, cols);
        let p = SsimParams::new(2.0);
        let got = ssim(&a, &b, &p).unwrap();
        let want = ssim_oracle(a.data(), b.data(), rows, cols, 2.0);
        assert!((got - want).abs() < 1e-10, "{rows}x{cols}: {got} vs {want}");
    }
}

#[test]
fn global_window_uses_whole_image_statistics() {
    let a = FieldMap::new(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let b = FieldMap::new(2, 2, vec![1.0, 1.0, 2.0, 2.0]).unwrap();
    let mut p = SsimParams::new(3.0);
    p.window = SsimWindow::Global;
    let (ma, mb) = (1.5, 1.5);
    let (va, vb, cov) = (1.25, 0.25, 0.5);
    let (c1, c2) = (0.03f64.powi(2), 0.09f64.powi(2));
    let want = (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    assert!((ssim(&a, &b, &p).unwrap() - want).abs() < 1e-12);
}

#[test]
fn identical_maps_have_zero_dissimilarity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_map(&mut rng, 20, 20);
    let p = SsimParams::for_target(&a);
    assert_eq!(ssim(&a, &a, &p).unwrap(), 1.0);
    assert_eq!(dissimilarity(&a, &a, &p).unwrap(), 0.0);
}

#[test]
fn shifted_spot_is_penalized() {
    let a = spot(32, 32, 16.0, 16.0);
    let p = SsimParams::for_target(&a);
    let mut last = 0.0;
    for shift in [1.0, 3.0, 6.0] {
        let d = dissimilarity(&a, &spot(32, 32, 16.0, 16.0 + shift), &p).unwrap();
        assert!(d > last, "shift {shift}: {d}");
        last = d;
    }
}

#[test]
fn anti_correlated_non_negative_maps_exceed_one() {
    // checkerboards of opposite phase: both non-negative, covariance negative
    let (rows, cols) = (16, 16);
    let board = |phase: usize| {
        let data = (0..rows * cols)
            .map(|k| if (k / cols + k % cols + phase) % 2 == 0 { 1.0 } else { 0.0 })
            .collect();
        FieldMap::new(rows, cols, data).unwrap()
    };
    let (a, b) = (board(0), board(1));
    let d = dissimilarity(&a, &b, &SsimParams::for_target(&a)).unwrap();
    assert!(d > 1.0 && d <= 2.0, "{d}");
}

#[test]
fn mse_examples() {
    assert_eq!(mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
    assert!((mse(&[0.1, 0.3], &[0.2, 0.1]).unwrap() - 0.025).abs() < 1e-15);
    assert!(mse(&[0.0; 3], &[0.0; 2]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ssim_is_symmetric_and_bounded(seed in any::<u64>(), rows in 11usize..20, cols in 11usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_map(&mut rng, rows, cols);
        let b = random_map(&mut rng, rows, cols);
        let p = SsimParams::for_target(&a);
        let ab = ssim(&a, &b, &p).unwrap();
        prop_assert_eq!(ab, ssim(&b, &a, &p).unwrap());
        prop_assert_eq!(ssim(&a, &a, &p).unwrap(), 1.0);
        let d = dissimilarity(&a, &b, &p).unwrap();
        prop_assert!((0.0..=2.0).contains(&d));
    }

    #[test]
    fn mse_vanishes_only_for_equal_vectors(a in proptest::collection::vec(-1.0f64..1.0, 1..20), k in any::<prop::sample::Index>(), eps in 1e-6f64..1.0) {
        prop_assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b[k.index(a.len())] += eps;
        prop_assert!(mse(&a, &b).unwrap() > 0.0);
    }
}
