#![allow(dead_code)]

use std::path::Path;

use ipixmatch::data::{generate_dataset, split_labeled, Dataset, DatasetSpec, SplitRequest};
use ipixmatch::harness::RunConfig;
use ipixmatch::numerics::Tensor;
use ipixmatch::teacher_student::Method;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normals(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<f64> {
    let d = Normal::new(0.0, sd).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

/// Central differences of `f` at `x`.
pub fn central(mut f: impl FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + STEP;
            let hi = f(&xp);
            xp[i] = x[i] - STEP;
            let lo = f(&xp);
            xp[i] = x[i];
            (hi - lo) / (2.0 * STEP)
        })
        .collect()
}

/// Relative error of a gradient vector, `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Logits with about 70% confidently peaked pixels.
pub fn peaked_logits(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
    let n = h * w;
    let mut d = normals(rng, c * n, 1.0);
    for j in 0..n {
        if rng.gen_bool(0.7) {
            let k = rng.gen_range(0..c);
            d[k * n + j] += rng.gen_range(3.0..8.0);
        }
    }
    Tensor::new(vec![c, h, w], d).unwrap()
}

pub fn random_logits(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
    Tensor::new(vec![c, h, w], normals(rng, c * h * w, 2.0)).unwrap()
}

/// C ∈ [2, 4], H·W ≤ 25.
pub fn small_dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.gen_range(2..=4), rng.gen_range(2..=5), rng.gen_range(2..=5))
}

/// Softmax over a slice at temperature `t`, written out directly.
pub fn softmax(z: &[f64], t: f64) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| ((v - m) / t).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Writes a generated dataset with a labeled split to `dir`.
pub fn write_dataset(dir: &Path, spec: &DatasetSpec, request: SplitRequest) -> Dataset {
    let samples = generate_dataset(spec).unwrap();
    let mut ds = Dataset::from_generated(spec, samples);
    ds.manifest = split_labeled(&ds.manifest, request, 12345).unwrap();
    ipixmatch::data::save_dataset(dir, &ds).unwrap();
    ds
}

/// A few-second training setup: 48 images of 16×16, 8 labeled.
pub fn tiny_setup(root: &Path) -> RunConfig {
    let spec = DatasetSpec {
        height: 16,
        width: 16,
        count: 48,
        ..Default::default()
    };
    let data = root.join("data");
    write_dataset(&data, &spec, SplitRequest::Count(8));
    RunConfig {
        epochs: 2,
        batch_labeled: 4,
        batch_unlabeled: 4,
        warmup_epochs: 1,
        eval_every: 1,
        hidden_channels: 4,
        ..RunConfig::reference(data, Method::IpixKl)
    }
}

