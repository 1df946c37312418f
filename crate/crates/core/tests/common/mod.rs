#![allow(dead_code)]

use std::path::{Path, PathBuf};

use oversample::mnist_io::{self, LabelSet, RawImageSet};
use oversample::network::{backward, mean_loss, MlpModel};
use oversample::spectral::TransferFunction;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Writes a small IDX dataset where each class lights a different band of
/// rows, plus pixel noise, so a short training run can make progress.
pub fn write_synthetic_mnist(dir: &Path, train: usize, test: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (count, images, labels) in [
        (train, mnist_io::TRAIN_IMAGES, mnist_io::TRAIN_LABELS),
        (test, mnist_io::TEST_IMAGES, mnist_io::TEST_LABELS),
    ] {
        let mut pixels = Vec::with_capacity(count * 784);
        let mut classes = Vec::with_capacity(count);
        for _ in 0..count {
            let class: u8 = rng.random_range(0..10);
            for r in 0..28 {
                for _ in 0..28 {
                    let on = r / 3 == class as usize || r / 3 == class as usize + 1;
                    let base: u8 = if on { 200 } else { 20 };
                    pixels.push(base.saturating_add(rng.random_range(0..50)));
                }
            }
            classes.push(class);
        }
        let set = RawImageSet {
            count,
            rows: 28,
            cols: 28,
            pixels,
        };
        std::fs::write(dir.join(images), set.to_idx_bytes()).unwrap();
        let labels_set = LabelSet::new(classes).unwrap();
        std::fs::write(dir.join(labels), labels_set.to_idx_bytes()).unwrap();
    }
}

/// Real MNIST location: `$MNIST_DIR`, else `<workspace>/data/mnist`.
pub fn mnist_dir() -> PathBuf {
    std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

pub fn mnist_available() -> bool {
    let dir = mnist_dir();
    [
        mnist_io::TRAIN_IMAGES,
        mnist_io::TRAIN_LABELS,
        mnist_io::TEST_IMAGES,
        mnist_io::TEST_LABELS,
    ]
    .iter()
    .all(|f| dir.join(f).is_file())
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn direct_dft(w: &[f64]) -> Vec<(f64, f64)> {
    let n = w.len();
    (0..n)
        .map(|m| {
            w.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &x)| {
                let phase = -2.0 * PI * (m * t % n) as f64 / n as f64;
                (re + x * phase.cos(), im + x * phase.sin())
            })
        })
        .collect()
}

pub fn naive_forward(model: &MlpModel, x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    let layers = model.layers();
    for (l, layer) in layers.iter().enumerate() {
        let z: Vec<f64> = (0..layer.outputs())
            .map(|i| {
                let mut s = layer.biases[i];
                for (j, x) in a.iter().enumerate() {
                    s += layer.weights[[i, j]] * x;
                }
                s
            })
            .collect();
        if l + 1 < layers.len() {
            a = z.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        } else {
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
            let s: f64 = e.iter().sum();
            a = e.iter().map(|v| v / s).collect();
        }
    }
    a
}

/// Γ(x) for positive integers and half-integers by recursion.
pub fn gamma_half_integer(x: f64) -> f64 {
    if (x - 0.5).abs() < 1e-12 {
        PI.sqrt()
    } else if (x - 1.0).abs() < 1e-12 {
        1.0
    } else {
        (x - 1.0) * gamma_half_integer(x - 1.0)
    }
}

pub fn t_pvalue_by_quadrature(t: f64, df: usize) -> f64 {
    let nu = df as f64;
    let norm =
        gamma_half_integer((nu + 1.0) / 2.0) / ((nu * PI).sqrt() * gamma_half_integer(nu / 2.0));
    let density = |s: f64| norm * (1.0 + s * s / nu).powf(-(nu + 1.0) / 2.0);
    let steps = 200_000;
    let h = t.abs() / steps as f64;
    let mut area = 0.5 * (density(0.0) + density(t.abs()));
    for i in 1..steps {
        area += density(i as f64 * h);
    }
    1.0 - 2.0 * area * h
}

pub fn two_sided_energy(h: &TransferFunction) -> f64 {
    let n = h.source_length;
    let m = &h.magnitudes;
    let mut e = m[0] * m[0];
    for (bin, v) in m.iter().enumerate().skip(1) {
        let mirrored = bin != n - bin;
        e += if mirrored { 2.0 * v * v } else { v * v };
    }
    e
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    // Floor keeps finite-difference round-off on near-zero entries from dominating.
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest relative gap between backprop and central differences (h = 1e-5)
/// on a [6,6,10] network with 5 random samples.
pub fn worst_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let model = MlpModel::random(&[6, 6, 6, 10], seed).unwrap();
    let inputs: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut rng, 6)).collect();
    let labels: Vec<u8> = (0..5).map(|_| rng.random_range(0..10)).collect();
    let rows: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let grads = backward(&model, &rows, &labels).unwrap();
    let h = 1e-5;
    let loss_at = |m: &MlpModel| mean_loss(m, &rows, &labels).unwrap();
    let mut worst: f64 = 0.0;
    for l in 0..3 {
        let (out, inp) = model.layers()[l].weights.dim();
        for i in 0..out {
            for j in 0..inp {
                let mut plus = model.clone();
                plus.layers_mut()[l].weights[[i, j]] += h;
                let mut minus = model.clone();
                minus.layers_mut()[l].weights[[i, j]] -= h;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                worst = worst.max(relative_error(grads.weights[l][[i, j]], fd));
            }
            let mut plus = model.clone();
            plus.layers_mut()[l].biases[i] += h;
            let mut minus = model.clone();
            minus.layers_mut()[l].biases[i] -= h;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            worst = worst.max(relative_error(grads.biases[l][i], fd));
        }
    }
    worst
}
