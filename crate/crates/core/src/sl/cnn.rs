use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{prepare_input, Dataset};
use crate::checkpoint::{config_digest, Checkpoint, CNN_MAGIC};
use crate::error::{Error, Result};
use crate::fieldmap::FieldMap;
use crate::geometry::{quantize_design, DesignVector, N_STRIPS};
use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnnConfig {
    /// Square input side in pixels.
    pub input_side: usize,
    /// Filters per conv block; each block is conv3x3 → batch norm → leaky ReLU → 2×2 average pool.
    pub filters: Vec<usize>,
    pub dense_hidden: usize,
    pub leaky_slope: f64,
    /// Applied to the flattened features during training.
    pub dropout: f64,
    /// Weight decay coefficient on conv and dense weights.
    pub l2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub seed: u64,
}

impl CnnConfig {
    /// Four blocks of 64/128/256/512 filters on 64×64 inputs.
    pub fn paper() -> Self {
        Self {
            input_side: 64,
            filters: vec![64, 128, 256, 512],
            ..Self::reduced()
        }
    }

    /// Two blocks of 16/32 filters on 32×32 inputs.
    pub fn reduced() -> Self {
        Self {
            input_side: 32,
            filters: vec![16, 32],
            dense_hidden: 100,
            leaky_slope: 0.01,
            dropout: 0.2,
            l2: 1e-5,
            epochs: 60,
            batch_size: 32,
            learning_rate: 1e-3,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let blocks = self.filters.len();
        if blocks == 0 || self.filters[0] == 0 {
            return Err(Error::Config("at least one conv block with filters is required".into()));
        }
        if self.filters.windows(2).any(|w| w[1] != 2 * w[0]) {
            return Err(Error::Config(format!("filter counts must double per block, got {:?}", self.filters)));
        }
        if self.input_side == 0 || self.input_side % (1 << blocks) != 0 {
            return Err(Error::Config(format!(
                "input side {} is not divisible by 2^{blocks}",
                self.input_side
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) || self.l2 < 0.0 || !(self.leaky_slope >= 0.0) {
            return Err(Error::Config("dropout must lie in [0, 1); l2 and leaky slope must be non-negative".into()));
        }
        if self.dense_hidden == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("dense width, epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("learning rate, batch-norm eps and momentum out of range".into()));
        }
        Ok(())
    }

    /// (channels, height, width) after each block, starting with the input.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, usize)> {
        let mut shapes = vec![(1, self.input_side, self.input_side)];
        let mut side = self.input_side;
        for &f in &self.filters {
            side /= 2;
            shapes.push((f, side, side));
        }
        shapes
    }

    pub fn feature_len(&self) -> usize {
        let (c, h, w) = *self.layer_shapes().last().expect("input shape");
        c * h * w
    }

    /// Closed-form trainable parameter count.
    pub fn n_params(&self) -> usize {
        let mut total = 0;
        let mut cin = 1;
        for &f in &self.filters {
            total += 9 * cin * f + 2 * f;
            cin = f;
        }
        total + self.feature_len() * self.dense_hidden + self.dense_hidden + self.dense_hidden * N_STRIPS + N_STRIPS
    }

    fn n_running(&self) -> usize {
        2 * self.filters.iter().sum::<usize>()
    }
}

#[derive(Debug, Clone)]
struct Layout {
    conv_w: Vec<usize>,
    gamma: Vec<usize>,
    beta: Vec<usize>,
    running: Vec<usize>,
    d1_w: usize,
    d1_b: usize,
    d2_w: usize,
    d2_b: usize,
}

impl Layout {
    fn new(cfg: &CnnConfig) -> Self {
        let mut off = 0;
        let mut cin = 1;
        let (mut conv_w, mut gamma, mut beta, mut running) = (vec![], vec![], vec![], vec![]);
        let mut roff = 0;
        for &f in &cfg.filters {
            conv_w.push(off);
            off += 9 * cin * f;
            gamma.push(off);
            off += f;
            beta.push(off);
            off += f;
            running.push(roff);
            roff += 2 * f;
            cin = f;
        }
        let d1_w = off;
        off += cfg.feature_len() * cfg.dense_hidden;
        let d1_b = off;
        off += cfg.dense_hidden;
        let d2_w = off;
        off += cfg.dense_hidden * N_STRIPS;
        let d2_b = off;
        Self {
            conv_w,
            gamma,
            beta,
            running,
            d1_w,
            d1_b,
            d2_w,
            d2_b,
        }
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Valid output range for a kernel offset `d ∈ {−1, 0, 1}` on an axis of length `n`.
fn span(d: isize, n: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)) as usize;
    (lo, hi)
}

/// 3×3 same-padded convolution of one image (cin planes) into cout planes.
fn conv_forward(input: &[f64], w: &[f64], cin: usize, cout: usize, side: usize, out: &mut [f64]) {
    let plane = side * side;
    out.fill(0.0);
    for co in 0..cout {
        let o = &mut out[co * plane..(co + 1) * plane];
        for ci in 0..cin {
            let x = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = span(dy, side);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = span(dx, side);
                    let wv = w[((co * cin + ci) * 3 + ky) * 3 + kx];
                    for oy in y0..y1 {
                        let iy = (oy as isize + dy) as usize;
                        let orow = &mut o[oy * side + x0..oy * side + x1];
                        let start = (x0 as isize + dx) as usize;
                        let irow = &x[iy * side + start..iy * side + start + (x1 - x0)];
                        for (a, b) in orow.iter_mut().zip(irow) {
                            *a += wv * b;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates weight gradients and, when `d_input` is given, input gradients.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    w: &[f64],
    d_out: &[f64],
    cin: usize,
    cout: usize,
    side: usize,
    d_w: &mut [f64],
    mut d_input: Option<&mut [f64]>,
) {
    let plane = side * side;
    for co in 0..cout {
        let g = &d_out[co * plane..(co + 1) * plane];
        for ci in 0..cin {
            let x = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = span(dy, side);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = span(dx, side);
                    let idx = ((co * cin + ci) * 3 + ky) * 3 + kx;
                    let wv = w[idx];
                    let start = (x0 as isize + dx) as usize;
                    let mut acc = 0.0;
                    for oy in y0..y1 {
                        let iy = (oy as isize + dy) as usize;
                        let grow = &g[oy * side + x0..oy * side + x1];
                        let irow = &x[iy * side + start..iy * side + start + (x1 - x0)];
                        acc += grow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                        if let Some(di) = d_input.as_deref_mut() {
                            let drow = &mut di[ci * plane + iy * side + start..ci * plane + iy * side + start + (x1 - x0)];
                            for (d, gv) in drow.iter_mut().zip(grow) {
                                *d += wv * gv;
                            }
                        }
                    }
                    d_w[idx] += acc;
                }
            }
        }
    }
}

struct BlockCache {
    input: Vec<f64>,
    xhat: Vec<f64>,
    /// Post-norm, pre-activation values.
    y: Vec<f64>,
    inv_std: Vec<f64>,
}

struct ForwardCache {
    blocks: Vec<BlockCache>,
    features: Vec<f64>,
    mask: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
}

/// Per-channel batch statistics from a training pass.
type BatchStats = Vec<(Vec<f64>, Vec<f64>)>;

/// Network weights plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    cfg: CnnConfig,
    params: Vec<f64>,
    running: Vec<f64>,
    trained: bool,
}

/// Training batch: `n` flattened square images and their 13-value labels.
#[derive(Debug, Clone, Copy)]
pub struct CnnBatch<'a> {
    pub inputs: &'a [f64],
    pub labels: &'a [f64],
    pub n: usize,
}

impl CnnModel {
    /// Freshly initialized, untrained model.
    pub fn new(cfg: CnnConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self::init(cfg, &mut rng))
    }

    fn init<R: Rng + ?Sized>(cfg: CnnConfig, rng: &mut R) -> Self {
        let layout = Layout::new(&cfg);
        let mut params = vec![0.0; cfg.n_params()];
        let mut cin = 1;
        for (b, &f) in cfg.filters.iter().enumerate() {
            let limit = (6.0 / (9 * cin) as f64).sqrt();
            for p in &mut params[layout.conv_w[b]..layout.conv_w[b] + 9 * cin * f] {
                *p = rng.random_range(-limit..limit);
            }
            params[layout.gamma[b]..layout.gamma[b] + f].fill(1.0);
            cin = f;
        }
        let feat = cfg.feature_len();
        let limit = (6.0 / feat as f64).sqrt();
        for p in &mut params[layout.d1_w..layout.d1_b] {
            *p = rng.random_range(-limit..limit);
        }
        let limit = (6.0 / (cfg.dense_hidden + N_STRIPS) as f64).sqrt();
        for p in &mut params[layout.d2_w..layout.d2_b] {
            *p = rng.random_range(-limit..limit);
        }
        let mut running = vec![0.0; cfg.n_running()];
        for (b, &f) in cfg.filters.iter().enumerate() {
            running[layout.running[b] + f..layout.running[b] + 2 * f].fill(1.0);
        }
        Self {
            cfg,
            params,
            running,
            trained: false,
        }
    }

    pub fn config(&self) -> &CnnConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Output shapes of every stage for a batch of `n`: blocks, then dense layers.
    pub fn output_shapes(&self, n: usize) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.cfg.layer_shapes()[1..].iter().map(|&(c, h, w)| vec![n, c, h, w]).collect();
        out.push(vec![n, self.cfg.dense_hidden]);
        out.push(vec![n, N_STRIPS]);
        out
    }

    #[allow(clippy::type_complexity)]
    fn forward(
        &self,
        params: &[f64],
        inputs: &[f64],
        n: usize,
        train: Option<&mut dyn rand::RngCore>,
    ) -> Result<(Vec<f64>, ForwardCache, BatchStats)> {
        let cfg = &self.cfg;
        let layout = Layout::new(cfg);
        let side0 = cfg.input_side;
        if inputs.len() != n * side0 * side0 {
            return Err(Error::Dimension {
                expected: n * side0 * side0,
                actual: inputs.len(),
            });
        }
        let training = train.is_some();
        let mut x = inputs.to_vec();
        let mut blocks = Vec::with_capacity(cfg.filters.len());
        let mut stats = Vec::new();
        let shapes = cfg.layer_shapes();
        for (b, &cout) in cfg.filters.iter().enumerate() {
            let (cin, side, _) = shapes[b];
            let plane = side * side;
            let w = &params[layout.conv_w[b]..layout.conv_w[b] + 9 * cin * cout];
            let mut z = vec![0.0; n * cout * plane];
            for s in 0..n {
                conv_forward(
                    &x[s * cin * plane..(s + 1) * cin * plane],
                    w,
                    cin,
                    cout,
                    side,
                    &mut z[s * cout * plane..(s + 1) * cout * plane],
                );
            }
            let gamma = &params[layout.gamma[b]..layout.gamma[b] + cout];
            let beta = &params[layout.beta[b]..layout.beta[b] + cout];
            let m = (n * plane) as f64;
            let mut mean = vec![0.0; cout];
            let mut var = vec![0.0; cout];
            if training {
                for c in 0..cout {
                    let mut s1 = 0.0;
                    for s in 0..n {
                        s1 += z[(s * cout + c) * plane..(s * cout + c + 1) * plane].iter().sum::<f64>();
                    }
                    mean[c] = s1 / m;
                    let mut s2 = 0.0;
                    for s in 0..n {
                        s2 += z[(s * cout + c) * plane..(s * cout + c + 1) * plane]
                            .iter()
                            .map(|v| (v - mean[c]) * (v - mean[c]))
                            .sum::<f64>();
                    }
                    var[c] = s2 / m;
                }
            } else {
                let r = &self.running[layout.running[b]..layout.running[b] + 2 * cout];
                mean.copy_from_slice(&r[..cout]);
                var.copy_from_slice(&r[cout..]);
            }
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + cfg.bn_eps).sqrt()).collect();
            let mut xhat = z;
            let mut y = vec![0.0; xhat.len()];
            for s in 0..n {
                for c in 0..cout {
                    let range = (s * cout + c) * plane..(s * cout + c + 1) * plane;
                    for (xh, yv) in xhat[range.clone()].iter_mut().zip(&mut y[range]) {
                        *xh = (*xh - mean[c]) * inv_std[c];
                        *yv = gamma[c] * *xh + beta[c];
                    }
                }
            }
            let half = side / 2;
            let mut pooled = vec![0.0; n * cout * half * half];
            for sc in 0..n * cout {
                let src = &y[sc * plane..(sc + 1) * plane];
                let dst = &mut pooled[sc * half * half..(sc + 1) * half * half];
                for py in 0..half {
                    for px in 0..half {
                        let i = 2 * py * side + 2 * px;
                        dst[py * half + px] = 0.25
                            * (leaky(src[i], cfg.leaky_slope)
                                + leaky(src[i + 1], cfg.leaky_slope)
                                + leaky(src[i + side], cfg.leaky_slope)
                                + leaky(src[i + side + 1], cfg.leaky_slope));
                    }
                }
            }
            if training {
                stats.push((mean, var));
            }
            blocks.push(BlockCache {
                input: std::mem::replace(&mut x, pooled),
                xhat,
                y,
                inv_std,
            });
        }

        let feat = cfg.feature_len();
        let features = x;
        let mut mask = vec![1.0; features.len()];
        if let Some(rng) = train {
            if cfg.dropout > 0.0 {
                let keep = 1.0 - cfg.dropout;
                for m in mask.iter_mut() {
                    *m = if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 };
                }
            }
        }
        let hdim = cfg.dense_hidden;
        let w1 = &params[layout.d1_w..layout.d1_b];
        let b1 = &params[layout.d1_b..layout.d2_w];
        let w2 = &params[layout.d2_w..layout.d2_b];
        let b2 = &params[layout.d2_b..];
        let mut hidden_pre = vec![0.0; n * hdim];
        let mut hidden = vec![0.0; n * hdim];
        let mut out = vec![0.0; n * N_STRIPS];
        let mut dropped = vec![0.0; feat];
        for s in 0..n {
            for (d, (f, m)) in dropped
                .iter_mut()
                .zip(features[s * feat..(s + 1) * feat].iter().zip(&mask[s * feat..(s + 1) * feat]))
            {
                *d = f * m;
            }
            for j in 0..hdim {
                let row = &w1[j * feat..(j + 1) * feat];
                let v = b1[j] + row.iter().zip(&dropped).map(|(a, b)| a * b).sum::<f64>();
                hidden_pre[s * hdim + j] = v;
                hidden[s * hdim + j] = leaky(v, cfg.leaky_slope);
            }
            for k in 0..N_STRIPS {
                let row = &w2[k * hdim..(k + 1) * hdim];
                out[s * N_STRIPS + k] =
                    b2[k] + row.iter().zip(&hidden[s * hdim..(s + 1) * hdim]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let cache = ForwardCache {
            blocks,
            features,
            mask,
            hidden_pre,
            hidden,
        };
        Ok((out, cache, stats))
    }

    fn l2_penalty(&self, params: &[f64]) -> f64 {
        let layout = Layout::new(&self.cfg);
        let mut total = 0.0;
        for (&start, &end) in layout.conv_w.iter().zip(&layout.gamma) {
            total += params[start..end].iter().map(|w| w * w).sum::<f64>();
        }
        total += params[layout.d1_w..layout.d1_b].iter().map(|w| w * w).sum::<f64>();
        total += params[layout.d2_w..layout.d2_b].iter().map(|w| w * w).sum::<f64>();
        self.cfg.l2 * total
    }

    /// Training-mode loss (MSE plus L2 penalty) and its gradient with respect
    /// to `params`. Batch norm uses batch statistics; dropout masks are drawn
    /// from `rng`.
    pub fn loss_and_grad(&self, params: &[f64], batch: CnnBatch<'_>, rng: &mut dyn rand::RngCore) -> Result<(f64, Vec<f64>)> {
        let (loss, grad, _) = self.loss_grad_stats(params, batch, rng)?;
        Ok((loss, grad))
    }

    fn loss_grad_stats(
        &self,
        params: &[f64],
        batch: CnnBatch<'_>,
        rng: &mut dyn rand::RngCore,
    ) -> Result<(f64, Vec<f64>, BatchStats)> {
        let cfg = &self.cfg;
        let layout = Layout::new(cfg);
        let n = batch.n;
        if batch.labels.len() != n * N_STRIPS {
            return Err(Error::Dimension {
                expected: n * N_STRIPS,
                actual: batch.labels.len(),
            });
        }
        let (out, cache, stats) = self.forward(params, batch.inputs, n, Some(rng))?;
        let count = (n * N_STRIPS) as f64;
        let mut grad = vec![0.0; params.len()];
        let mse = out.iter().zip(batch.labels).map(|(o, l)| (o - l) * (o - l)).sum::<f64>() / count;
        let loss = mse + self.l2_penalty(params);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite CNN loss {loss}")));
        }
        let d_out: Vec<f64> = out.iter().zip(batch.labels).map(|(o, l)| 2.0 * (o - l) / count).collect();

        let feat = cfg.feature_len();
        let hdim = cfg.dense_hidden;
        let w1 = &params[layout.d1_w..layout.d1_b];
        let w2 = &params[layout.d2_w..layout.d2_b];
        let mut d_features = vec![0.0; n * feat];
        {
            let (g_head, g_tail) = grad.split_at_mut(layout.d2_w);
            let (g_w2, g_b2) = g_tail.split_at_mut(hdim * N_STRIPS);
            let (g_w1, g_b1) = g_head[layout.d1_w..].split_at_mut(feat * hdim);
            let mut d_hidden = vec![0.0; hdim];
            for s in 0..n {
                let h = &cache.hidden[s * hdim..(s + 1) * hdim];
                d_hidden.fill(0.0);
                for k in 0..N_STRIPS {
                    let d = d_out[s * N_STRIPS + k];
                    g_b2[k] += d;
                    for j in 0..hdim {
                        g_w2[k * hdim + j] += d * h[j];
                        d_hidden[j] += d * w2[k * hdim + j];
                    }
                }
                let f = &cache.features[s * feat..(s + 1) * feat];
                let m = &cache.mask[s * feat..(s + 1) * feat];
                let df = &mut d_features[s * feat..(s + 1) * feat];
                for j in 0..hdim {
                    let d = if cache.hidden_pre[s * hdim + j] > 0.0 {
                        d_hidden[j]
                    } else {
                        cfg.leaky_slope * d_hidden[j]
                    };
                    if d == 0.0 {
                        continue;
                    }
                    g_b1[j] += d;
                    let gw = &mut g_w1[j * feat..(j + 1) * feat];
                    let wr = &w1[j * feat..(j + 1) * feat];
                    for i in 0..feat {
                        gw[i] += d * f[i] * m[i];
                        df[i] += d * wr[i] * m[i];
                    }
                }
            }
        }

        let shapes = cfg.layer_shapes();
        let mut d_pooled = d_features;
        for b in (0..cfg.filters.len()).rev() {
            let cout = cfg.filters[b];
            let (cin, side, _) = shapes[b];
            let plane = side * side;
            let half = side / 2;
            let bc = &cache.blocks[b];
            // through average pooling and the activation
            let mut dy = vec![0.0; n * cout * plane];
            for sc in 0..n * cout {
                for py in 0..half {
                    for px in 0..half {
                        let g = 0.25 * d_pooled[sc * half * half + py * half + px];
                        for i in [2 * py * side + 2 * px, 2 * py * side + 2 * px + 1, (2 * py + 1) * side + 2 * px, (2 * py + 1) * side + 2 * px + 1] {
                            let idx = sc * plane + i;
                            dy[idx] = if bc.y[idx] > 0.0 { g } else { cfg.leaky_slope * g };
                        }
                    }
                }
            }
            // batch norm with batch statistics
            let gamma = &params[layout.gamma[b]..layout.gamma[b] + cout];
            let m = (n * plane) as f64;
            let mut dz = vec![0.0; dy.len()];
            for c in 0..cout {
                let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
                for s in 0..n {
                    let r = (s * cout + c) * plane..(s * cout + c + 1) * plane;
                    for (g, xh) in dy[r.clone()].iter().zip(&bc.xhat[r]) {
                        sum_dy += g;
                        sum_dy_xhat += g * xh;
                    }
                }
                grad[layout.gamma[b] + c] += sum_dy_xhat;
                grad[layout.beta[b] + c] += sum_dy;
                let k = gamma[c] * bc.inv_std[c] / m;
                for s in 0..n {
                    let r = (s * cout + c) * plane..(s * cout + c + 1) * plane;
                    for ((d, g), xh) in dz[r.clone()].iter_mut().zip(&dy[r.clone()]).zip(&bc.xhat[r]) {
                        *d = k * (m * g - sum_dy - xh * sum_dy_xhat);
                    }
                }
            }
            let w = &params[layout.conv_w[b]..layout.conv_w[b] + 9 * cin * cout];
            let mut d_input = if b > 0 { vec![0.0; n * cin * plane] } else { Vec::new() };
            let (_, gw_tail) = grad.split_at_mut(layout.conv_w[b]);
            let gw = &mut gw_tail[..9 * cin * cout];
            for s in 0..n {
                let di = if b > 0 {
                    Some(&mut d_input[s * cin * plane..(s + 1) * cin * plane])
                } else {
                    None
                };
                conv_backward(
                    &bc.input[s * cin * plane..(s + 1) * cin * plane],
                    w,
                    &dz[s * cout * plane..(s + 1) * cout * plane],
                    cin,
                    cout,
                    side,
                    gw,
                    di,
                );
            }
            d_pooled = d_input;
        }

        let l2 = cfg.l2;
        for (&start, &end) in layout.conv_w.iter().zip(&layout.gamma) {
            for i in start..end {
                grad[i] += 2.0 * l2 * params[i];
            }
        }
        for i in (layout.d1_w..layout.d1_b).chain(layout.d2_w..layout.d2_b) {
            grad[i] += 2.0 * l2 * params[i];
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite CNN gradient".into()));
        }
        Ok((loss, grad, stats))
    }

    fn update_running(&mut self, stats: &BatchStats, n: usize) {
        let layout = Layout::new(&self.cfg);
        let shapes = self.cfg.layer_shapes();
        let mom = self.cfg.bn_momentum;
        for (b, (mean, var)) in stats.iter().enumerate() {
            let f = self.cfg.filters[b];
            let m = (n * shapes[b].1 * shapes[b].2) as f64;
            let unbiased = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            let r = &mut self.running[layout.running[b]..layout.running[b] + 2 * f];
            for c in 0..f {
                r[c] = (1.0 - mom) * r[c] + mom * mean[c];
                r[f + c] = (1.0 - mom) * r[f + c] + mom * var[c] * unbiased;
            }
        }
    }

    /// Inference-mode outputs for `n` prepared inputs, `n × 13` row-major.
    pub fn infer(&self, inputs: &[f64], n: usize) -> Result<Vec<f64>> {
        Ok(self.forward(&self.params, inputs, n, None)?.0)
    }

    /// Mean squared error in inference mode.
    pub fn evaluate(&self, inputs: &[f64], labels: &[f64], n: usize) -> Result<f64> {
        let out = self.infer(inputs, n)?;
        crate::merit::mse(&out, labels)
    }

    /// Raw 13-value prediction for a field map of any supported size.
    pub fn predict_raw(&self, target: &FieldMap) -> Result<Vec<f64>> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        let input = prepare_input(target, self.cfg.input_side)?;
        self.infer(&input, 1)
    }

    /// Quantized design predicted for `target`.
    pub fn predict_design(&self, target: &FieldMap) -> Result<DesignVector> {
        quantize_design(&self.predict_raw(target)?)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut values = self.params.clone();
        values.extend_from_slice(&self.running);
        Checkpoint::new(CNN_MAGIC, config_digest(&self.cfg), values)
    }

    /// Restores a trained model; the checkpoint must match `cfg`.
    pub fn from_checkpoint(cfg: CnnConfig, ckpt: &Checkpoint) -> Result<Self> {
        cfg.validate()?;
        ckpt.check_digest(&config_digest(&cfg))?;
        let np = cfg.n_params();
        let expected = np + cfg.n_running();
        if ckpt.params.len() != expected {
            return Err(Error::Dimension {
                expected,
                actual: ckpt.params.len(),
            });
        }
        Ok(Self {
            params: ckpt.params[..np].to_vec(),
            running: ckpt.params[np..].to_vec(),
            cfg,
            trained: true,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurves {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
}

impl LossCurves {
    /// `epoch\ttrain\tvalidation` lines with a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\ttrain\tvalidation\n");
        for (e, (t, v)) in self.train.iter().zip(&self.validation).enumerate() {
            out.push_str(&format!("{}\t{t:e}\t{v:e}\n", e + 1));
        }
        out
    }
}

fn gather(data: &Dataset, idx: &[usize], side: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut inputs = Vec::with_capacity(idx.len() * side * side);
    let mut labels = Vec::with_capacity(idx.len() * N_STRIPS);
    for &i in idx {
        let s = &data.samples[i];
        inputs.extend(prepare_input(&s.input, side)?);
        labels.extend(s.label.to_vec());
    }
    Ok((inputs, labels))
}

/// Which epoch's weights training returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Selection {
    /// Lowest validation loss (training loss when there is no validation split).
    #[default]
    BestValidation,
    Final,
}

/// Mini-batch Adam training returning the best-validation model. Curves
/// record inference-mode MSE on the training and validation sets after every
/// epoch.
pub fn train_cnn(data: &Dataset, cfg: &CnnConfig) -> Result<(CnnModel, LossCurves)> {
    train_cnn_select(data, cfg, Selection::BestValidation)
}

pub fn train_cnn_select(data: &Dataset, cfg: &CnnConfig, selection: Selection) -> Result<(CnnModel, LossCurves)> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("dataset has no training samples".into()));
    }
    let side = cfg.input_side;
    let pixels = side * side;
    let (train_x, train_y) = gather(data, &data.train, side)?;
    let (val_x, val_y) = gather(data, &data.validation, side)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = CnnModel::init(cfg.clone(), &mut rng);
    model.trained = true;
    let mut opt = Adam::new(AdamConfig::new(cfg.learning_rate), model.n_params());
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut curves = LossCurves::default();
    let mut best: Option<(f64, CnnModel)> = None;
    let mut bx = Vec::new();
    let mut by = Vec::new();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            bx.clear();
            by.clear();
            for &i in chunk {
                bx.extend_from_slice(&train_x[i * pixels..(i + 1) * pixels]);
                by.extend_from_slice(&train_y[i * N_STRIPS..(i + 1) * N_STRIPS]);
            }
            let batch = CnnBatch {
                inputs: &bx,
                labels: &by,
                n: chunk.len(),
            };
            let (_, grad, stats) = model
                .loss_grad_stats(&model.params, batch, &mut rng)
                .map_err(|e| Error::Numeric(format!("epoch {}: {e}", epoch + 1)))?;
            opt.step(&mut model.params, &grad);
            model.update_running(&stats, chunk.len());
        }
        let train_loss = model.evaluate(&train_x, &train_y, data.train.len())?;
        let val_loss = if data.validation.is_empty() {
            train_loss
        } else {
            model.evaluate(&val_x, &val_y, data.validation.len())?
        };
        if !(train_loss.is_finite() && val_loss.is_finite()) {
            return Err(Error::Numeric(format!(
                "epoch {}: non-finite loss (train {train_loss}, validation {val_loss})",
                epoch + 1
            )));
        }
        curves.train.push(train_loss);
        curves.validation.push(val_loss);
        if selection == Selection::BestValidation && best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.clone()));
        }
    }
    match best {
        Some((_, model)) => Ok((model, curves)),
        None => Ok((model, curves)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitDiagnosis {
    Overfit,
    Underfit,
    Converged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitThresholds {
    /// Final-quarter validation minimum above `overfit_ratio ×` the overall minimum signals overfitting.
    pub overfit_ratio: f64,
    /// Largest relative change over the final quarter that still counts as flat.
    pub flat_tolerance: f64,
    /// Final training loss above this with flat curves is underfitting.
    pub underfit_loss: f64,
}

impl Default for FitThresholds {
    fn default() -> Self {
        Self {
            overfit_ratio: 1.2,
            flat_tolerance: 0.1,
            underfit_loss: 0.05,
        }
    }
}

/// Classifies a pair of loss curves with at least five epochs.
pub fn diagnose_fit(curves: &LossCurves, th: &FitThresholds) -> Result<FitDiagnosis> {
    let n = curves.train.len();
    if n != curves.validation.len() {
        return Err(Error::Dimension {
            expected: n,
            actual: curves.validation.len(),
        });
    }
    if n < 5 {
        return Err(Error::Config(format!("need at least 5 epochs, got {n}")));
    }
    let q = (n / 4).max(1);
    let val_min = curves.validation.iter().copied().fold(f64::INFINITY, f64::min);
    let val_tail_min = curves.validation[n - q..].iter().copied().fold(f64::INFINITY, f64::min);
    let train_end = curves.train[n - 1];
    let train_ref = curves.train[n - 1 - q];
    let train_decreasing = train_end < train_ref;
    if val_tail_min > th.overfit_ratio * val_min && train_decreasing {
        return Ok(FitDiagnosis::Overfit);
    }
    let flat = |v: &[f64]| {
        let (a, b) = (v[n - 1 - q], v[n - 1]);
        (b - a).abs() <= th.flat_tolerance * a.abs().max(f64::MIN_POSITIVE)
    };
    if flat(&curves.train) && flat(&curves.validation) && train_end > th.underfit_loss {
        return Ok(FitDiagnosis::Underfit);
    }
    Ok(FitDiagnosis::Converged)
}
