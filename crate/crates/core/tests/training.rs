use emberflow::data::synth::{self, SynthConfig};
use emberflow::data::Dataset;
use emberflow::nn::{Model, ModelConfig};
use emberflow::optim::OptimizerKind;
use emberflow::tensor::Rng;
use emberflow::train::{
    evaluate, gradient_check, metrics_csv, train, train_with, Checkpoint, GradCheckConfig,
    TrainConfig, METRICS_HEADER,
};

fn small_model() -> ModelConfig {
    ModelConfig {
        conv_channels: vec![2, 3, 4],
        hidden_units: 8,
        ..ModelConfig::default()
    }
}

fn small_run(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        epochs,
        lr,
        seed: 7,
        model: small_model(),
        ..TrainConfig::default()
    }
}

fn data(n: usize, seed: u64) -> Dataset {
    synth::generate(n, seed, &SynthConfig::default())
}

fn initial_params(config: &TrainConfig) -> Vec<Vec<f32>> {
    let mut rng = Rng::seed(config.seed);
    let model = Model::<f32>::build(&config.model, &mut rng).unwrap();
    model.params().iter().map(|p| p.value.data().to_vec()).collect()
}

fn final_params(ckpt: &Checkpoint) -> Vec<Vec<f32>> {
    let model = ckpt.model().unwrap();
    model.params().iter().map(|p| p.value.data().to_vec()).collect()
}

#[test]
fn zero_lr_leaves_parameters_unchanged() {
    let config = small_run(2, 0.0);
    let (tr, va) = (data(4, 1), data(4, 2));
    let out = train(&config, &tr, &va).unwrap();
    assert_eq!(out.metrics.len(), 2);
    assert_eq!(final_params(&out.checkpoint), initial_params(&config));
    assert!(out.metrics.iter().all(|m| m.lr == 0.0));
}

#[test]
fn same_seed_gives_identical_metrics() {
    let config = small_run(2, 0.05);
    let (tr, va) = (data(24, 3), data(8, 4));
    let a = metrics_csv(&train(&config, &tr, &va).unwrap().metrics);
    let b = metrics_csv(&train(&config, &tr, &va).unwrap().metrics);
    assert_eq!(a, b);
    let other = TrainConfig { seed: 8, ..config };
    assert_ne!(a, metrics_csv(&train(&other, &tr, &va).unwrap().metrics));
}

#[test]
fn metrics_rows_reparse() {
    let config = TrainConfig {
        optimizer: OptimizerKind::Adam,
        ..small_run(3, 0.01)
    };
    let (tr, va) = (data(16, 5), data(8, 6));
    let mut seen = Vec::new();
    let out = train_with(&config, &tr, &va, |m| seen.push(m.epoch)).unwrap();
    assert_eq!(seen, [1, 2, 3]);

    let text = metrics_csv(&out.metrics);
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<_> = reader.headers().unwrap().iter().map(str::to_owned).collect();
    assert_eq!(header.join(","), METRICS_HEADER);
    let rows: Vec<Vec<f64>> = reader
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    for (row, m) in rows.iter().zip(&out.metrics) {
        assert_eq!(row[0] as usize, m.epoch);
        assert!((row[3] - m.train_acc).abs() <= 5e-7);
        assert!((row[5] - m.val_acc).abs() <= 5e-7);
        assert!((0.0..=1.0).contains(&row[3]) && (0.0..=1.0).contains(&row[5]));
    }
}

#[test]
fn evaluation_identities() {
    let config = small_run(1, 0.05);
    let (tr, va) = (data(16, 7), data(21, 8));
    let model = train(&config, &tr, &va).unwrap().checkpoint.model().unwrap();
    let eval = evaluate(&model, &va, 4).unwrap();
    assert_eq!(eval.total(), va.len());
    let trace: usize = (0..7).map(|c| eval.confusion[c][c]).sum();
    assert_eq!(trace, eval.correct());
    assert!((eval.accuracy - trace as f64 / va.len() as f64).abs() < 1e-12);
    let hist = emberflow::data::class_histogram(&va);
    for (c, row) in eval.confusion.iter().enumerate() {
        assert_eq!(row.iter().sum::<usize>(), hist[c]);
    }
    // batch size does not change the result
    let whole = evaluate(&model, &va, 64).unwrap();
    assert_eq!(whole.confusion, eval.confusion);
    assert!((whole.loss - eval.loss).abs() < 1e-6);
}

#[test]
fn evaluate_rejects_empty_set() {
    let mut rng = Rng::seed(0);
    let model = Model::<f32>::build(&small_model(), &mut rng).unwrap();
    assert!(matches!(
        evaluate(&model, &Dataset::default(), 8),
        Err(emberflow::Error::EmptyDataset)
    ));
}

#[test]
fn zero_input_gradients_are_finite() {
    let config = GradCheckConfig {
        seeds: 2,
        zero_input: true,
        ..GradCheckConfig::default()
    };
    let report = gradient_check(&config).unwrap();
    for g in &report.groups {
        assert!(g.max_rel.is_finite(), "{g:?}");
        assert!(g.max_rel < 1e-2, "{g:?}");
    }
}
