mod common;

use common::toy::{bandit_config, central_differences, max_relative_error, toy, total_loss};
use metagrating::env::{BanditEnv, Environment, RegressionEnv};
use metagrating::ppo::{
    self, loss_and_grad, log_softmax, select_action, LossCoefficients, PolicyValueNet, PpoConfig,
    TrainOptions,
};
use metagrating::reward::RewardKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn gradients_match_central_differences_on_both_paths() {
    let toy = toy(11);
    let coeffs = LossCoefficients {
        clip_epsilon: 0.2,
        entropy_coeff: 0.01,
        value_coeff: 0.5,
    };
    // move away from θ_old so ratios differ from 1 but stay inside the trust region
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params: Vec<f64> = toy.net.params.iter().map(|p| p + rng.random_range(-0.01..0.01)).collect();
    for t in 0..4 {
        let ratio = (toy.logp(&params, t) - toy.old_logp[t]).exp();
        assert!((ratio - 1.0).abs() < 0.15, "ratio {ratio} too close to a clip edge");
    }
    let (_, grad) = loss_and_grad(&toy.net, &params, &toy.batch(), &coeffs).unwrap();
    let fd = central_differences(|p| total_loss(&toy, p, &coeffs), &params, 1e-5);
    let na = toy.net.actor.n_params();
    let actor_err = max_relative_error(&grad[..na], &fd[..na]);
    let critic_err = max_relative_error(&grad[na..], &fd[na..]);
    assert!(actor_err <= 1e-4, "actor path error {actor_err}");
    assert!(critic_err <= 1e-4, "critic path error {critic_err}");
    assert!(grad[..na].iter().any(|g| g.abs() > 1e-3));
    assert!(grad[na..].iter().any(|g| g.abs() > 1e-3));
}

#[test]
fn ratio_is_one_at_old_parameters() {
    let toy = toy(2);
    let coeffs = LossCoefficients {
        clip_epsilon: 0.2,
        entropy_coeff: 0.01,
        value_coeff: 0.5,
    };
    let (report, _) = loss_and_grad(&toy.net, &toy.net.params, &toy.batch(), &coeffs).unwrap();
    assert!((report.mean_ratio - 1.0).abs() < 1e-12);
    assert_eq!(report.clip_fraction, 0.0);
    let mean_adv = toy.adv.iter().sum::<f64>() / 4.0;
    let expected = -mean_adv - coeffs.entropy_coeff * report.entropy;
    assert!((report.actor_loss - expected).abs() < 1e-12);
}

#[test]
fn zero_advantages_leave_only_the_entropy_gradient() {
    let mut toy = toy(8);
    toy.adv = vec![0.0; 4];
    let c = 0.01;
    let coeffs = LossCoefficients {
        clip_epsilon: 0.2,
        entropy_coeff: c,
        value_coeff: 0.0,
    };
    let (_, grad) = loss_and_grad(&toy.net, &toy.net.params, &toy.batch(), &coeffs).unwrap();
    let na = toy.net.actor.n_params();
    let neg_entropy = |p: &[f64]| {
        let mut total = 0.0;
        for o in &toy.obs {
            let lp = log_softmax(&toy.net.actor.forward(&p[..na], o).0).unwrap();
            total += lp.iter().map(|l| l.exp() * l).sum::<f64>();
        }
        c * total / 4.0
    };
    let fd = central_differences(neg_entropy, &toy.net.params, 1e-5);
    assert!(max_relative_error(&grad[..na], &fd[..na]) <= 1e-4);
    assert!(grad[na..].iter().all(|&g| g == 0.0));
}

#[test]
fn clipping_caps_the_objective() {
    let mut toy = toy(4);
    // old log-probs half the current probability → ρ = 2
    toy.old_logp = (0..4).map(|t| toy.logp(&toy.net.params, t) - 2f64.ln()).collect();
    toy.adv = vec![0.5, 1.0, 1.5, 2.0];
    let eps = 0.2;
    let coeffs = LossCoefficients {
        clip_epsilon: eps,
        entropy_coeff: 0.0,
        value_coeff: 0.0,
    };
    let (report, grad) = loss_and_grad(&toy.net, &toy.net.params, &toy.batch(), &coeffs).unwrap();
    assert!((report.mean_ratio - 2.0).abs() < 1e-12);
    let expected = -(1.0 + eps) * toy.adv.iter().sum::<f64>() / 4.0;
    assert!((report.actor_loss - expected).abs() < 1e-12);
    assert_eq!(report.clip_fraction, 1.0);
    assert!(grad.iter().all(|&g| g == 0.0));
}

#[test]
fn unclipped_single_epoch_is_vanilla_policy_gradient() {
    let toy = toy(21);
    let coeffs = LossCoefficients {
        clip_epsilon: 1e12,
        entropy_coeff: 0.0,
        value_coeff: 0.0,
    };
    let (_, grad) = loss_and_grad(&toy.net, &toy.net.params, &toy.batch(), &coeffs).unwrap();
    // −mean(A · log π(a|s)) differentiated numerically
    let pg = |p: &[f64]| -(0..4).map(|t| toy.adv[t] * toy.logp(p, t)).sum::<f64>() / 4.0;
    let reference = central_differences(pg, &toy.net.params, 1e-6);
    let dot: f64 = grad.iter().zip(&reference).map(|(a, b)| a * b).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cosine = dot / (norm(&grad) * norm(&reference));
    assert!(cosine > 0.999, "cosine {cosine}");
}

fn net_with_actor_bias(biases: &[f64]) -> PolicyValueNet {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = PolicyValueNet::new(13, 26, [64, 64], &mut rng);
    let na = net.actor.n_params();
    for p in net.params[..na].iter_mut() {
        *p = 0.0;
    }
    net.params[na - 26..na].copy_from_slice(biases);
    net
}

#[test]
fn uniform_logits_sample_uniformly() {
    let net = net_with_actor_bias(&[0.0; 26]);
    let obs = vec![0.5; 13];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut counts = [0usize; 26];
    let draws = 100_000;
    for _ in 0..draws {
        let (a, logp) = select_action(&net, &obs, &mut rng).unwrap();
        assert!((logp + 26f64.ln()).abs() < 1e-9);
        counts[a] += 1;
    }
    for c in counts {
        assert!((c as f64 / draws as f64 - 1.0 / 26.0).abs() < 0.01);
    }
}

#[test]
fn dominant_logit_is_nearly_always_chosen() {
    let mut biases = [0.0; 26];
    biases[7] = 20.0;
    let net = net_with_actor_bias(&biases);
    let obs = vec![0.2; 13];
    let probs = net.probs(&obs).unwrap();
    assert!(probs[7] > 0.999);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(probs.iter().all(|&p| p > 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let hits = (0..10_000).filter(|_| select_action(&net, &obs, &mut rng).unwrap().0 == 7).count();
    assert!(hits >= 9_980);
    let (a, logp) = select_action(&net, &obs, &mut rng).unwrap();
    assert!((logp - probs[a].ln()).abs() < 1e-9);
    assert!(select_action(&net, &[f64::NAN; 13], &mut rng).is_err());
}

#[test]
fn bandit_is_solved_within_200_episodes() {
    let mut scores: Vec<f64> = (0..5)
        .map(|seed| {
            let mut env = BanditEnv::new();
            let out = ppo::train(&mut env, &bandit_config(seed), TrainOptions::default()).unwrap();
            let tail = &out.log.episodes[150..];
            tail.iter().map(|e| e.total_reward).sum::<f64>() / tail.len() as f64
        })
        .collect();
    scores.sort_by(f64::total_cmp);
    assert!(scores[2] > 0.9, "median tail reward {}", scores[2]);
}

fn short_regression_run(seed: u64) -> ppo::TrainOutcome {
    let spec = RegressionEnv::default_spec(RewardKind::FinalSigmoid);
    let spec = metagrating::env::EpisodeSpec { max_timesteps: 40, ..spec };
    let mut env = RegressionEnv::new(metagrating::env::builtin_target("step").unwrap(), spec).unwrap();
    let cfg = PpoConfig {
        episodes: 6,
        max_timesteps: 40,
        update_timestep: 50,
        seed,
        ..PpoConfig::default()
    };
    ppo::train(&mut env, &cfg, TrainOptions { record_steps: true }).unwrap()
}

#[test]
fn training_is_reproducible_from_seed() {
    let a = short_regression_run(3);
    let b = short_regression_run(3);
    assert_eq!(a.log, b.log);
    assert_eq!(a.net.params, b.net.params);
    assert_eq!(a.log.to_tsv(), b.log.to_tsv());
    let c = short_regression_run(4);
    assert_ne!(a.net.params, c.net.params);
    // 240 steps at update 50 → 4 scheduled updates plus a final partial one
    assert_eq!(a.log.updates.len(), 5);
    assert!(a.net.params.iter().all(|p| p.is_finite()));
    let probs = a.net.probs(&vec![0.5; 13]).unwrap();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn checkpoint_round_trip_restores_the_policy() {
    let out = short_regression_run(3);
    let cfg = PpoConfig {
        episodes: 6,
        max_timesteps: 40,
        update_timestep: 50,
        seed: 3,
        ..PpoConfig::default()
    };
    let ckpt = ppo::save_checkpoint(&cfg, &out.net);
    let bytes = ckpt.to_bytes();
    assert_eq!(&bytes[..8], b"PPOC0001");
    let back = metagrating::checkpoint::Checkpoint::from_bytes(metagrating::checkpoint::PPO_MAGIC, &bytes).unwrap();
    let net = ppo::load_checkpoint(&cfg, 13, 26, &back).unwrap();
    assert_eq!(net.params, out.net.params);
    let other = PpoConfig { seed: 9, ..cfg };
    assert!(ppo::load_checkpoint(&other, 13, 26, &back).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let mut env = BanditEnv::new();
    for cfg in [
        PpoConfig { update_timestep: 0, ..PpoConfig::default() },
        PpoConfig { clip_epsilon: 1.0, ..PpoConfig::default() },
        PpoConfig { gamma: 0.0, ..PpoConfig::default() },
        PpoConfig { k_epochs: 0, ..PpoConfig::default() },
    ] {
        assert!(ppo::train(&mut env, &cfg, TrainOptions::default()).is_err());
    }
    assert!(env.reset().is_ok());
}
