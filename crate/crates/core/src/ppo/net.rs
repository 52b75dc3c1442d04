use rand::Rng;

use crate::error::{Error, Result};

/// Fully connected network with tanh hidden layers and a linear output,
/// reading its weights from a slice of a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
}

/// Activations kept for the backward pass: input, then every layer output
/// (hidden outputs after tanh).
#[derive(Debug, Clone)]
pub struct MlpCache {
    acts: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0));
        Self { sizes }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    /// Uniform Glorot weights, zero biases; the last layer is scaled by `out_gain`.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, out_gain: f64) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        let layers = self.sizes.len() - 1;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let gain = if l + 1 == layers { out_gain } else { 1.0 };
            for _ in 0..fan_in * fan_out {
                p.push(gain * rng.random_range(-limit..limit));
            }
            p.extend(std::iter::repeat_n(0.0, fan_out));
        }
        p
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> (Vec<f64>, MlpCache) {
        debug_assert_eq!(params.len(), self.n_params());
        debug_assert_eq!(x.len(), self.input_dim());
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.to_vec());
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &params[offset..offset + n_in * n_out];
            let b = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let input = &acts[l];
            let mut out = b.to_vec();
            for (o, row) in out.iter_mut().zip(w.chunks_exact(n_in)) {
                *o += row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            }
            if l + 1 < layers {
                for v in out.iter_mut() {
                    *v = v.tanh();
                }
            }
            acts.push(out);
        }
        (acts.last().expect("output").clone(), MlpCache { acts })
    }

    /// Accumulates ∂L/∂params into `grad` given ∂L/∂output.
    pub fn backward(&self, params: &[f64], cache: &MlpCache, grad_out: &[f64], grad: &mut [f64]) {
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = grad_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 < layers {
                // through tanh: d/dz = 1 − y²
                for (d, y) in delta.iter_mut().zip(&cache.acts[l + 1]) {
                    *d *= 1.0 - y * y;
                }
            }
            let base = offsets[l];
            let input = &cache.acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let gw = &mut grad[base + o * n_in..base + (o + 1) * n_in];
                for (g, x) in gw.iter_mut().zip(input) {
                    *g += d * x;
                }
                grad[base + n_in * n_out + o] += d;
            }
            if l > 0 {
                let w = &params[base..base + n_in * n_out];
                let mut next = vec![0.0; n_in];
                for (o, row) in w.chunks_exact(n_in).enumerate() {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (n, wv) in next.iter_mut().zip(row) {
                        *n += d * wv;
                    }
                }
                delta = next;
            }
        }
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|v| v - lse).collect())
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    Ok(log_softmax(logits)?.into_iter().map(f64::exp).collect())
}

/// Separate actor (logits) and critic (value) networks over one flat
/// parameter vector, actor first.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValueNet {
    pub actor: Mlp,
    pub critic: Mlp,
    pub params: Vec<f64>,
}

impl PolicyValueNet {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, n_actions: usize, hidden: [usize; 2], rng: &mut R) -> Self {
        let actor = Mlp::new(vec![obs_dim, hidden[0], hidden[1], n_actions]);
        let critic = Mlp::new(vec![obs_dim, hidden[0], hidden[1], 1]);
        let mut params = actor.init(rng, 0.01);
        params.extend(critic.init(rng, 1.0));
        Self { actor, critic, params }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn actor_params(&self) -> &[f64] {
        &self.params[..self.actor.n_params()]
    }

    pub fn critic_params(&self) -> &[f64] {
        &self.params[self.actor.n_params()..]
    }

    pub fn logits(&self, obs: &[f64]) -> Vec<f64> {
        self.actor.forward(self.actor_params(), obs).0
    }

    pub fn probs(&self, obs: &[f64]) -> Result<Vec<f64>> {
        softmax(&self.logits(obs))
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        self.critic.forward(self.critic_params(), obs).0[0]
    }

    /// Replaces the parameters, checking the length.
    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Dimension {
                expected: self.params.len(),
                actual: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }
}

/// Samples from the actor's categorical distribution; returns the action and
/// its log-probability.
pub fn select_action<R: Rng + ?Sized>(net: &PolicyValueNet, obs: &[f64], rng: &mut R) -> Result<(usize, f64)> {
    if obs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite observation".into()));
    }
    let logp = log_softmax(&net.logits(obs))?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = logp.len() - 1;
    for (a, lp) in logp.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            chosen = a;
            break;
        }
    }
    Ok((chosen, logp[chosen]))
}
