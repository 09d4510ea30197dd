mod common;

use mdfa_core::data::{make_windows, CapacitySeries, WindowedDataset};
use mdfa_core::train::{
    adam_step, mse_on, split_validation, train, AdamConfig, AdamState, TrainConfig,
};
use mdfa_core::{Error, Model, ModelConfig, ModelVariant, Tensor};

fn small() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        heads: 2,
        d_ff: 16,
        stem_branch_channels: 2,
        stem_out_channels: 4,
        dense_layers: 2,
        growth: 2,
        ec_blocks: 1,
        window: 8,
        seed: 5,
        ..ModelConfig::default()
    }
}

fn pairs(window: usize, cells: &[CapacitySeries]) -> WindowedDataset {
    let mut all = WindowedDataset::empty(window);
    for c in cells {
        all.extend(make_windows(&c.normalize(), window).unwrap())
            .unwrap();
    }
    all
}

fn toy_pairs(window: usize) -> WindowedDataset {
    pairs(
        window,
        &[
            common::toy_cell("a", 60, 0.004),
            common::toy_cell("b", 70, 0.003),
        ],
    )
}

fn quick(max_epochs: usize, patience: usize) -> TrainConfig {
    TrainConfig {
        max_epochs,
        patience,
        batch_size: 16,
        seed: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn convex_probe_converges() {
    let r = common::probe::convex_probe(0, 200);
    let best = r.mse.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(best < 1e-4, "best probe MSE {best}");
    assert!(r.seconds < 10.0, "{}s", r.seconds);
}

#[test]
fn constant_gradient_steps_approach_lr() {
    let cfg = AdamConfig::default();
    let mut p = vec![Tensor::vector(vec![0.0, 0.0])];
    let mut state = AdamState::new(&p);
    let g = [-2.0, 3.0];
    let mut prev = p[0].data().to_vec();
    for _ in 0..2000 {
        adam_step(p.iter_mut(), &[&g], &mut state, &cfg).unwrap();
        let now = p[0].data().to_vec();
        for j in 0..2 {
            let step = (now[j] - prev[j]).abs();
            assert!(step <= cfg.lr * (1.0 + 1e-9));
        }
        prev = now;
    }
    let last = p[0].data().to_vec();
    adam_step(p.iter_mut(), &[&g], &mut state, &cfg).unwrap();
    for (j, v) in p[0].data().iter().enumerate() {
        let step = (v - last[j]).abs();
        assert!((step - cfg.lr).abs() < 1e-6, "{step}");
    }
}

#[test]
fn zero_patience_runs_one_epoch() {
    let model = Model::build(&small(), ModelVariant::Full).unwrap();
    let (_, trace) = train(model, &toy_pairs(8), &quick(10, 0)).unwrap();
    assert_eq!(trace.epochs.len(), 1);
    assert_eq!((trace.best_epoch, trace.stopped_epoch), (1, 1));
}

#[test]
fn returned_model_is_the_best_validation_epoch() {
    let data = toy_pairs(8);
    let cfg = quick(25, 4);
    let model = Model::build(&small(), ModelVariant::Full).unwrap();
    let (best, trace) = train(model, &data, &cfg).unwrap();
    let min = trace
        .epochs
        .iter()
        .map(|e| e.val_mse)
        .fold(f64::INFINITY, f64::min);
    let (_, val) = split_validation(&data, cfg.val_fraction).unwrap();
    let post = mse_on(&best, &val).unwrap();
    assert!((post - min).abs() < 1e-12, "{post} vs {min}");
    assert_eq!(trace.best_val_mse, min);
    assert!(trace.best_epoch <= trace.stopped_epoch && trace.stopped_epoch <= cfg.max_epochs);
    let lines = trace.to_jsonl(true);
    assert_eq!(lines.lines().count(), trace.epochs.len());
    assert!(lines.lines().all(|l| l.contains("\"seconds\"")));
    assert!(!trace.to_jsonl(false).contains("seconds"));
}

#[test]
fn same_seed_gives_identical_traces() {
    let data = toy_pairs(8);
    let run = || {
        let model = Model::build(&small(), ModelVariant::NoPe).unwrap();
        let (m, t) = train(model, &data, &quick(6, 6)).unwrap();
        let losses: Vec<(u64, u64)> = t
            .epochs
            .iter()
            .map(|e| (e.train_mse.to_bits(), e.val_mse.to_bits()))
            .collect();
        (m.to_checkpoint(), losses)
    };
    assert_eq!(run(), run());
}

#[test]
fn constant_target_loss_falls_for_five_epochs() {
    let flat: Vec<CapacitySeries> = ["a", "b", "c"]
        .iter()
        .map(|id| CapacitySeries::new(*id, vec![1.6; 80], 2.0).unwrap())
        .collect();
    let cfg = ModelConfig::default();
    let data = pairs(cfg.window, &flat);
    let model = Model::build(&cfg, ModelVariant::Full).unwrap();
    let (_, trace) = train(model, &data, &quick(5, 5)).unwrap();
    let losses: Vec<f64> = trace.epochs.iter().map(|e| e.train_mse).collect();
    assert_eq!(losses.len(), 5);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn degenerate_inputs_are_rejected() {
    let model = Model::build(&small(), ModelVariant::Full).unwrap();
    assert!(matches!(
        train(model.clone(), &WindowedDataset::empty(8), &quick(3, 1)),
        Err(Error::Usage(_))
    ));
    assert!(matches!(
        train(model.clone(), &toy_pairs(8), &quick(3, 4)),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        train(model, &toy_pairs(6), &quick(3, 1)),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn nan_parameter_aborts_naming_the_epoch() {
    let mut model = Model::build(&small(), ModelVariant::Full).unwrap();
    model.params_mut().tensors_mut().next().unwrap().data_mut()[0] = f64::NAN;
    let err = train(model, &toy_pairs(8), &quick(3, 1)).unwrap_err();
    assert!(matches!(err, Error::Numerical(_)), "{err}");
    assert!(err.to_string().contains("epoch 1"), "{err}");
}
