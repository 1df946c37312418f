//! Checks against the official MNIST files; skipped when they are absent.

mod common;

use oversample::experiment::preprocess_dataset;
use oversample::mnist_io::{load_split, subset, Split};
use oversample::network::{evaluate_error, init_model};
use oversample::resample::ResampleSpec;

fn data_or_skip() -> Option<std::path::PathBuf> {
    if common::mnist_available() {
        Some(common::mnist_dir())
    } else {
        eprintln!(
            "skipping: MNIST not found in {}",
            common::mnist_dir().display()
        );
        None
    }
}

#[test]
fn official_split_sizes() {
    let Some(dir) = data_or_skip() else { return };
    let train = load_split(&dir, Split::Train).unwrap();
    let test = load_split(&dir, Split::Test).unwrap();
    assert_eq!((train.len(), test.len()), (60_000, 10_000));
    assert_eq!(train.vector_length(), 784);
    assert!(train
        .inputs()
        .take(100)
        .flatten()
        .all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn untrained_model_is_near_chance() {
    let Some(dir) = data_or_skip() else { return };
    let test = subset(&load_split(&dir, Split::Test).unwrap(), 1000, 0).unwrap();
    let test = preprocess_dataset(&test, &ResampleSpec::default()).unwrap();
    let error = evaluate_error(&init_model(1, 0).unwrap(), &test).unwrap();
    assert!((0.8..=0.95).contains(&error), "error {error}");
}
