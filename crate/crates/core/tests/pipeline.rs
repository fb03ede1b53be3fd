//! Cross-module flows: dataset files → training → persistence → folding → evaluation.

use minseg::data::synth::synth_dataset;
use minseg::data::{augment_hflip, load_dataset, split_dataset, write_dataset, DatasetSplit, Sample, DEFAULT_RATIOS};
use minseg::eval::{evaluate, evaluate_with_sweep};
use minseg::net::io::{encode_folded, encode_model, load_model, save_model};
use minseg::train::{train, train_with, Hyperparams};
use minseg::{fold_batchnorm, Error, Model, NetworkConfig, SegmenterRegistry};

fn cfg(s: &str) -> NetworkConfig {
    s.parse().unwrap()
}

fn small_split(n: usize, seed: u64) -> DatasetSplit<Sample> {
    split_dataset(synth_dataset(n, 32, 32, seed, 2), DEFAULT_RATIOS, seed).unwrap()
}

fn hp(epochs: usize) -> Hyperparams {
    Hyperparams {
        epochs,
        batch_size: 4,
        seed: 3,
        ..Hyperparams::default()
    }
}

#[test]
fn dataset_files_feed_training() {
    let dir = tempfile::tempdir().unwrap();
    let samples = synth_dataset(12, 32, 32, 5, 3);
    let manifest = write_dataset(&samples, 3, dir.path()).unwrap();
    let loaded = load_dataset(&manifest, dir.path().join("annotations.csv"), 3).unwrap();
    assert_eq!(loaded.len(), samples.len());
    for (a, b) in loaded.iter().zip(&samples) {
        assert_eq!(a.target, b.target);
        // images pass through 8-bit PPM
        assert!(a.image.max_abs_diff(&b.image) <= 0.5 / 255.0 + 1e-6);
    }
    let split = split_dataset(loaded, DEFAULT_RATIOS, 1).unwrap();
    let model = Model::<f32>::build(&cfg("L3F3M1.25S2C3"), 0).unwrap();
    let (_, history) = train(model, &split, &hp(1)).unwrap();
    assert_eq!(history.len(), 1);
}

#[test]
fn loss_falls_over_the_first_epochs() {
    let split = augment_hflip(small_split(40, 2));
    let model = Model::<f32>::build(&cfg("L3F3M1.5S2"), 1).unwrap();
    let (_, history) = train(model, &split, &hp(5)).unwrap();
    let first = history.epochs[0].train_loss;
    let fifth = history.epochs[4].train_loss;
    assert!(fifth < first, "epoch 5 loss {fifth} vs epoch 1 loss {first}");
}

#[test]
fn overfits_a_single_batch() {
    let mut split = small_split(20, 7);
    split.train.truncate(2);
    let model = Model::<f64>::build(&cfg("L3F4M1.5S1"), 2).unwrap();
    let h = Hyperparams {
        epochs: 60,
        batch_size: 2,
        lr0: 0.05,
        ..hp(0)
    };
    let (_, history) = train(model, &split, &h).unwrap();
    let first = history.epochs[0].train_loss;
    let last = history.last().unwrap().train_loss;
    assert!(last < 0.3 * first, "loss {first} → {last}");
}

#[test]
fn one_epoch_moves_every_parameter() {
    let split = small_split(16, 4);
    let before = Model::<f32>::build(&cfg("L3F3M1.25S2"), 5).unwrap();
    let (after, _) = train(before.clone(), &split, &hp(1)).unwrap();
    for (i, (a, b)) in before.params().iter().zip(after.params()).enumerate() {
        assert!(a.iter().zip(b).any(|(x, y)| x != y), "parameter group {i} unchanged");
    }
}

#[test]
fn training_is_reproducible() {
    let split = small_split(16, 9);
    let run = || {
        let m = Model::<f32>::build(&cfg("L3F3M1.25S2"), 6).unwrap();
        let (m, h) = train(m, &split, &hp(2)).unwrap();
        (encode_model(&m), h.epochs.iter().map(|r| r.train_loss).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn observer_errors_stop_training() {
    let split = small_split(16, 1);
    let m = Model::<f32>::build(&cfg("L3F3M1.25S2"), 0).unwrap();
    let mut calls = 0;
    let r = train_with(m, &split, &hp(3), &mut |_, rec| {
        calls += 1;
        if rec.epoch == 2 {
            Err(Error::Argument("stop".into()))
        } else {
            Ok(())
        }
    });
    assert!(r.is_err());
    assert_eq!(calls, 2);
}

#[test]
fn saved_folded_and_registry_models_evaluate_alike() {
    let split = augment_hflip(small_split(30, 11));
    let model = Model::<f32>::build(&cfg("L3F3M1.5S2"), 8).unwrap();
    let (model, _) = train(model, &split, &hp(3)).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.smkr");
    save_model(&model, &path).unwrap();
    let reloaded: Model<f32> = load_model(&path).unwrap();
    assert_eq!(encode_model(&reloaded), encode_model(&model));

    let folded = fold_batchnorm(&model).unwrap();
    let folded_path = dir.path().join("m.folded.smkr");
    std::fs::write(&folded_path, encode_folded(&folded)).unwrap();

    let base = evaluate_with_sweep(&model, &split.validation, &split.test).unwrap();
    let reg = SegmenterRegistry::builtin();
    for (name, p) in [("cnn", &path), ("cnn-folded", &path), ("cnn-folded", &folded_path)] {
        let seg = reg.load(name, p).unwrap();
        let r = evaluate_with_sweep(seg.as_ref(), &split.validation, &split.test).unwrap();
        assert_eq!(r.segmenter, name);
        let (a, b) = (&r.classes[0], &base.classes[0]);
        assert!((a.iou - b.iou).abs() <= 1e-3, "{name}: IoU {} vs {}", a.iou, b.iou);
    }
    let auto = reg.load_auto(&folded_path).unwrap();
    assert_eq!(auto.kind(), "cnn-folded");
    assert!(reg.load("nope", &path).is_err());
}

#[test]
fn evaluation_on_the_report_set_is_flagged() {
    let split = small_split(12, 3);
    let model = Model::<f32>::build(&cfg("L3F3M1.25S2"), 0).unwrap();
    let r = evaluate(&model, &split.test).unwrap();
    assert!(r.sweep_on_report_set);
    assert_eq!(r.per_image.len(), split.test.len());
    let r = evaluate_with_sweep(&model, &split.validation, &split.test).unwrap();
    assert!(!r.sweep_on_report_set);
    assert_eq!(r.sweep_images, split.validation.len());
}
