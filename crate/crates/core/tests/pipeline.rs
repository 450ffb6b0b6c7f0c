//! End-to-end library path: synthetic data on disk, training, checkpoints.

use clci_core::data::{crop_center, load_dataset, save_dataset, synth_dataset, Difficulty, Layout};
use clci_core::metrics::binarize;
use clci_core::model::{load_checkpoint, Model, ModelConfig};
use clci_core::nn::Mode;
use clci_core::train::{init_model, make_batch, train, TrainConfig};

fn desk_config() -> (ModelConfig, TrainConfig) {
    let model = ModelConfig {
        width_multiplier: 0.125,
        input_size: (32, 32),
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        epochs: 2,
        batch_size: 2,
        seed: 11,
        eval_every: 2,
        patience: 0,
        ..TrainConfig::default()
    };
    (model, train)
}

#[test]
fn png_dataset_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let samples = synth_dataset(5, (48, 32), 9, Difficulty::Hard).unwrap();
    for layout in [Layout::Png, Layout::Raw] {
        let root = dir.path().join(layout.extension());
        save_dataset(&root, &samples, layout).unwrap();
        assert_eq!(Layout::detect(&root), layout);
        assert_eq!(load_dataset(&root, layout).unwrap(), samples);
    }
}

#[test]
fn trained_checkpoints_reload_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    save_dataset(&root, &synth_dataset(6, (48, 48), 2, Difficulty::Easy).unwrap(), Layout::Png).unwrap();
    let samples: Vec<_> = load_dataset(&root, Layout::Png)
        .unwrap()
        .iter()
        .map(|p| crop_center(p, (32, 32)).unwrap())
        .collect();

    let (mc, mut tc) = desk_config();
    tc.checkpoint_dir = Some(dir.path().join("run"));
    let mut model = Model::<f32>::new(mc).unwrap();
    init_model(&mut model, &tc);
    let outcome = train(&mut model, &samples[..4], &samples[4..], &tc).unwrap();
    assert_eq!(outcome.steps, 4);
    assert!(outcome.log.rows.iter().all(|r| r.loss.is_finite()));

    let refs: Vec<_> = samples.iter().collect();
    let (images, _) = make_batch(&refs).unwrap();
    let expected = model.predict(&images, Mode::Eval).unwrap();
    let (mut reloaded, _) = load_checkpoint::<f32>(&dir.path().join("run/last")).unwrap();
    let got = reloaded.predict(&images, Mode::Eval).unwrap();
    let bits = |t: &clci_core::tensor::Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&got), bits(&expected));
    for n in 0..samples.len() {
        assert_eq!(binarize(&got, n, 0.5), binarize(&expected, n, 0.5));
    }

    let (mut best, _) = load_checkpoint::<f32>(&dir.path().join("run/best")).unwrap();
    assert_eq!(best.parameter_count(), model.parameter_count());
    assert!(best.predict(&images, Mode::Eval).unwrap().all_finite());
}
