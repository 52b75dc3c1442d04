mod common;

use metagrating::fdfd::Simulator;
use metagrating::fieldmap::FieldMap;
use metagrating::geometry::N_STRIPS;
use metagrating::sl::{
    diagnose_fit, generate_dataset, parse_index, prepare_input, split_indices, train_cnn, CnnBatch, CnnConfig,
    CnnModel, Dataset, train_cnn_select, DatasetOptions, FitDiagnosis, FitThresholds, LossCurves, Selection,
};
use metagrating::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> CnnConfig {
    CnnConfig {
        input_side: 8,
        filters: vec![2, 4],
        dense_hidden: 5,
        l2: 1e-3,
        ..CnnConfig::reduced()
    }
}

#[test]
fn gradient_matches_central_differences() {
    let cfg = tiny_config();
    let model = CnnModel::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 3;
    let inputs: Vec<f64> = (0..n * 64).map(|_| rng.random_range(0.0..2.0)).collect();
    let labels: Vec<f64> = (0..n * N_STRIPS).map(|_| rng.random_range(0.0..0.8)).collect();
    let batch = CnnBatch {
        inputs: &inputs,
        labels: &labels,
        n,
    };
    // the same dropout mask on every evaluation
    let loss = |p: &[f64]| model.loss_and_grad(p, batch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().0;
    let params = model.params().to_vec();
    let (_, grad) = model.loss_and_grad(&params, batch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let h = 1e-5;
        let mut hi = params.clone();
        let mut lo = params.clone();
        hi[i] += h;
        lo[i] -= h;
        let fd = (loss(&hi) - loss(&lo)) / (2.0 * h);
        let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3 * scale);
        worst = worst.max(err);
    }
    assert!(worst <= 1e-3, "worst relative error {worst}");
}

#[test]
fn parameter_counts_follow_closed_form() {
    let paper = CnnConfig::paper();
    let conv = 9 * 64 + 2 * 64 + 9 * 64 * 128 + 2 * 128 + 9 * 128 * 256 + 2 * 256 + 9 * 256 * 512 + 2 * 512;
    let dense = 4 * 4 * 512 * 100 + 100 + 100 * 13 + 13;
    assert_eq!(paper.n_params(), conv + dense);
    let m = CnnModel::new(paper).unwrap();
    assert_eq!(m.n_params(), conv + dense);
    assert_eq!(
        m.output_shapes(2),
        vec![
            vec![2, 64, 32, 32],
            vec![2, 128, 16, 16],
            vec![2, 256, 8, 8],
            vec![2, 512, 4, 4],
            vec![2, 100],
            vec![2, 13]
        ]
    );
    let reduced = CnnModel::new(CnnConfig::reduced()).unwrap();
    assert_eq!(reduced.n_params(), 9 * 16 + 32 + 9 * 16 * 32 + 64 + 8 * 8 * 32 * 100 + 100 + 1300 + 13);
    assert_eq!(reduced.output_shapes(5)[1], vec![5, 32, 8, 8]);
}

#[test]
fn inference_is_deterministic_on_both_profiles() {
    for cfg in [CnnConfig::reduced(), CnnConfig::paper()] {
        let side = cfg.input_side;
        let m = CnnModel::new(cfg).unwrap();
        let x: Vec<f64> = (0..2 * side * side).map(|i| ((i * 37) % 101) as f64 / 50.0).collect();
        let a = m.infer(&x, 2).unwrap();
        let b = m.infer(&x, 2).unwrap();
        assert_eq!(a.len(), 2 * 13);
        assert_eq!(a, b);
        assert!(m.infer(&x[1..], 2).is_err());
    }
}

#[test]
fn untrained_model_refuses_to_predict() {
    let m = CnnModel::new(CnnConfig::reduced()).unwrap();
    let target = FieldMap::filled(270, 270, 1.0).unwrap();
    assert!(matches!(m.predict_design(&target), Err(Error::Untrained)));
}

#[test]
fn invalid_architectures_are_rejected() {
    assert!(CnnModel::new(CnnConfig { filters: vec![16, 24], ..CnnConfig::reduced() }).is_err());
    assert!(CnnModel::new(CnnConfig { input_side: 30, ..CnnConfig::reduced() }).is_err());
    assert!(CnnModel::new(CnnConfig { dropout: 1.0, ..CnnConfig::reduced() }).is_err());
}

#[test]
fn constant_maps_stay_constant_when_downsampled() {
    let m = FieldMap::filled(270, 270, 0.7).unwrap();
    let x = prepare_input(&m, 64).unwrap();
    assert_eq!(x.len(), 64 * 64);
    assert!(x.iter().all(|v| (v - 0.7).abs() < 1e-12));
    let y = prepare_input(&m, 32).unwrap();
    assert!(y.iter().all(|v| (v - 0.7).abs() < 1e-12));
}

#[test]
fn split_is_ninety_ten_and_disjoint() {
    let (train, val) = split_indices(5000, &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!((train.len(), val.len()), (4500, 500));
    let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..5000).collect::<Vec<_>>());
}

fn curves(train: &[f64], validation: &[f64]) -> LossCurves {
    LossCurves {
        train: train.to_vec(),
        validation: validation.to_vec(),
    }
}

#[test]
fn fit_diagnosis_examples() {
    let th = FitThresholds::default();
    let n = 20;
    let lin = |a: f64, b: f64| (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect::<Vec<_>>();
    let over = curves(&lin(0.2, 0.01), &lin(0.1, 0.2));
    assert_eq!(diagnose_fit(&over, &th).unwrap(), FitDiagnosis::Overfit);
    let flat_train: Vec<f64> = (0..n).map(|i| 0.11 + 0.2 * (-(i as f64)).exp()).collect();
    let flat_val: Vec<f64> = (0..n).map(|i| 0.13 + 0.2 * (-(i as f64)).exp()).collect();
    assert_eq!(diagnose_fit(&curves(&flat_train, &flat_val), &th).unwrap(), FitDiagnosis::Underfit);
    let good = curves(&lin(0.2, 0.005), &lin(0.2, 0.006));
    assert_eq!(diagnose_fit(&good, &th).unwrap(), FitDiagnosis::Converged);
    assert!(diagnose_fit(&curves(&[0.1; 4], &[0.1; 4]), &th).is_err());
}

fn tiny_dataset(n: usize, seed: u64, dir: Option<&std::path::Path>) -> Dataset {
    let sim = Simulator::new(common::reduced_config()).unwrap();
    generate_dataset(
        &sim,
        &DatasetOptions {
            n,
            seed,
            active: 7,
            threads: 2,
            exclude: Vec::new(),
        },
        dir,
    )
    .unwrap()
}

#[test]
fn dataset_is_reproducible_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let a = tiny_dataset(6, 3, Some(dir.path()));
    let b = tiny_dataset(6, 3, None);
    assert_eq!(a, b);
    assert_eq!(a.provenance.failures, 0);
    assert_eq!((a.train.len(), a.validation.len()), (5, 1));
    let sim = Simulator::new(common::reduced_config()).unwrap();
    for s in &a.samples {
        assert!(s.label.levels()[7..].iter().all(|&l| l == 0));
        // each label reproduces its own simulation
        let full = sim.simulate(&s.label).unwrap();
        assert_eq!(full.resample(64, 64).unwrap().data(), s.input.data());
    }
    let text = std::fs::read_to_string(dir.path().join("index.tsv")).unwrap();
    assert_eq!(text, a.index_text());
    assert_eq!(parse_index(&text).unwrap().entries.len(), 6);
    let loaded = Dataset::load(dir.path()).unwrap();
    assert_eq!(loaded, a);
}

#[test]
fn index_parser_rejects_malformed_input() {
    let good = "# seed 1\n# sim ab\n# failures 0\nid\tlabel\tsplit\n0\t0.2,0,0,0,0,0,0,0,0,0,0,0,0\ttrain\n";
    assert!(parse_index(good).is_ok());
    assert!(parse_index(&good.replace("train", "test")).is_err());
    assert!(parse_index(&good.replace("0.2,", "0.3,")).is_err());
    assert!(parse_index(&good.replace("\n0\t", "\n1\t")).is_err());
    assert!(parse_index("# seed 1\n# sim ab\n# failures 0\n").is_err());
}

#[test]
fn tiny_dataset_is_memorized() {
    let data = tiny_dataset(10, 0, None);
    let cfg = CnnConfig {
        epochs: 600,
        batch_size: 16,
        ..CnnConfig::reduced()
    };
    let (model, curves) = train_cnn_select(&data, &cfg, Selection::Final).unwrap();
    let last = *curves.train.last().unwrap();
    assert!(last < 1e-3, "final training loss {last}");
    assert!(curves.validation.last().unwrap() > &(10.0 * last));
    assert_eq!(curves.train.len(), 600);
    for &i in &data.train {
        let s = &data.samples[i];
        assert_eq!(model.predict_design(&s.input).unwrap(), s.label);
    }
    let again = train_cnn_select(&data, &cfg, Selection::Final).unwrap();
    assert_eq!(again.1, curves);
    assert_eq!(again.0, model);
    // the default keeps the epoch with the lowest validation loss
    let (best, best_curves) = train_cnn(&data, &cfg).unwrap();
    assert_eq!(best_curves, curves);
    let (vx, vy): (Vec<f64>, Vec<f64>) = data
        .validation
        .iter()
        .map(|&i| (prepare_input(&data.samples[i].input, 32).unwrap(), data.samples[i].label.to_vec()))
        .fold((vec![], vec![]), |(mut a, mut b), (x, y)| {
            a.extend(x);
            b.extend(y);
            (a, b)
        });
    let min_val = curves.validation.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(best.evaluate(&vx, &vy, data.validation.len()).unwrap(), min_val);
    let ckpt = model.checkpoint();
    assert_eq!(&ckpt.to_bytes()[..8], b"CNNC0001");
    let restored = CnnModel::from_checkpoint(cfg.clone(), &ckpt).unwrap();
    assert_eq!(restored, model);
    assert!(CnnModel::from_checkpoint(CnnConfig { seed: 5, ..cfg }, &ckpt).is_err());
}
