//! Small policy network and batch shared by the optimizer checks.

use metagrating::ppo::{loss_and_grad, log_softmax, Batch, LossCoefficients, PolicyValueNet, PpoConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Toy {
    pub net: PolicyValueNet,
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub old_logp: Vec<f64>,
    pub adv: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Toy {
    pub fn batch(&self) -> Batch<'_> {
        Batch {
            observations: &self.obs,
            actions: &self.actions,
            old_log_probs: &self.old_logp,
            advantages: &self.adv,
            returns: &self.returns,
        }
    }

    pub fn logp(&self, params: &[f64], t: usize) -> f64 {
        let n = self.net.actor.n_params();
        let logits = self.net.actor.forward(&params[..n], &self.obs[t]).0;
        log_softmax(&logits).unwrap()[self.actions[t]]
    }
}

/// 4 states, 3 actions; behavior log-probs taken from the net itself.
pub fn toy(seed: u64) -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = PolicyValueNet::new(2, 3, [5, 4], &mut rng);
    // larger output weights than the default init so the policy is not flat
    for p in net.params.iter_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
    let obs: Vec<Vec<f64>> = (0..4).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let actions = vec![0, 2, 1, 2];
    let mut toy = Toy {
        net,
        obs,
        actions,
        old_logp: vec![0.0; 4],
        adv: vec![0.8, -1.3, 0.4, 1.1],
        returns: vec![1.0, -0.5, 0.3, 2.0],
    };
    toy.old_logp = (0..4).map(|t| toy.logp(&toy.net.params, t)).collect();
    toy
}

pub fn total_loss(toy: &Toy, params: &[f64], coeffs: &LossCoefficients) -> f64 {
    loss_and_grad(&toy.net, params, &toy.batch(), coeffs).unwrap().0.total()
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

pub fn central_differences(f: impl Fn(&[f64]) -> f64, params: &[f64], h: f64) -> Vec<f64> {
    (0..params.len())
        .map(|i| {
            let mut hi = params.to_vec();
            let mut lo = params.to_vec();
            hi[i] += h;
            lo[i] -= h;
            (f(&hi) - f(&lo)) / (2.0 * h)
        })
        .collect()
}

pub fn bandit_config(seed: u64) -> PpoConfig {
    PpoConfig {
        episodes: 200,
        max_timesteps: 1,
        update_timestep: 10,
        seed,
        ..PpoConfig::default()
    }
}
