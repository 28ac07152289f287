//! Synthetic "shapes world" segmentation data.
//!
//! Each image is a noisy gray background with one to three filled shapes
//! (rectangles, discs, diamonds) painted in the signature color of their
//! class, with a per-instance color offset. Class 0 is background. Every
//! sample is generated from its own seed, so any sample can be regenerated in
//! isolation.
//!
//! On disk a dataset is a directory holding `manifest.json`, `images.f32`
//! (little-endian `f32`, `count × 3 × H × W`), `labels.u8` (training view,
//! unlabeled samples filled with 255) and `labels_eval.u8` (full ground
//! truth, evaluation only).

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::pseudo::{LabelMap, IGNORE_LABEL};
use crate::seeding::derive_seed;

pub const FORMAT_VERSION: u32 = 1;
pub const UNLABELED: u8 = IGNORE_LABEL;
pub const BACKGROUND_GRAY: f64 = 0.5;
pub const MIN_SHAPE_SIZE: usize = 6;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGES_FILE: &str = "images.f32";
pub const LABELS_FILE: &str = "labels.u8";
pub const EVAL_LABELS_FILE: &str = "labels_eval.u8";

/// Signature colors of foreground classes 1, 2, ….
pub const SIGNATURE_COLORS: [[f64; 3]; 6] = [
    [0.95, 0.05, 0.05],
    [0.05, 0.95, 0.05],
    [0.05, 0.05, 0.95],
    [0.95, 0.95, 0.05],
    [0.95, 0.05, 0.95],
    [0.05, 0.95, 0.95],
];

pub const MAX_CLASSES: usize = SIGNATURE_COLORS.len() + 1;

/// Color of class `k` (class 0 is the background gray).
pub fn class_color(k: usize) -> [f64; 3] {
    if k == 0 {
        [BACKGROUND_GRAY; 3]
    } else {
        SIGNATURE_COLORS[k - 1]
    }
}


/// Generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(rename = "C")]
    pub classes: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    pub count: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    /// Half-width of the uniform per-instance, per-channel color offset.
    pub color_jitter: f64,
    /// Per-image illumination cast: every channel is scaled by a gain in
    /// `1 ± illumination` and offset by up to `± illumination / 2`.
    pub illumination: f64,
    pub min_shapes: usize,
    pub max_shapes: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            classes: 4,
            height: 32,
            width: 32,
            count: 512,
            seed: 12345,
            noise_sigma: 0.05,
            color_jitter: 0.0,
            illumination: 0.45,
            min_shapes: 1,
            max_shapes: 3,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(2..=MAX_CLASSES).contains(&self.classes) {
            return bad(format!("C must lie in [2, {MAX_CLASSES}], got {}", self.classes));
        }
        if self.height < 16 || self.width < 16 {
            return bad(format!("H and W must be ≥ 16, got {}×{}", self.height, self.width));
        }
        if self.count == 0 {
            return bad("count must be ≥ 1".into());
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!("noise_sigma must be ≥ 0, got {}", self.noise_sigma));
        }
        if !(self.color_jitter >= 0.0) || !self.color_jitter.is_finite() {
            return bad(format!("color_jitter must be ≥ 0, got {}", self.color_jitter));
        }
        if !(0.0..1.0).contains(&self.illumination) {
            return bad(format!("illumination must lie in [0, 1), got {}", self.illumination));
        }
        if self.min_shapes > self.max_shapes {
            return bad("min_shapes exceeds max_shapes".into());
        }
        Ok(())
    }
}

/// One image with its label map.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `3 × H × W`, values in `[0, 1]`.
    pub image: Tensor,
    pub label: LabelMap,
}

impl Sample {
    pub fn is_labeled(&self) -> bool {
        self.label.labels.iter().any(|&l| l != UNLABELED)
    }
}

#[derive(Debug, Clone, Copy)]
enum ShapeKind {
    Rect,
    Disc,
    Diamond,
}

/// Renders sample `index` of the dataset described by `spec`.
pub fn generate_sample(spec: &DatasetSpec, index: usize) -> Sample {
    let (h, w) = (spec.height, spec.width);
    let n = h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[spec.seed, index as u64]));
    let mut color = vec![[BACKGROUND_GRAY; 3]; n];
    let mut labels = vec![0u8; n];

    let shapes = rng.gen_range(spec.min_shapes..=spec.max_shapes);
    let max_size = (h.min(w) / 2).max(MIN_SHAPE_SIZE);
    for _ in 0..shapes {
        let class = rng.gen_range(1..spec.classes);
        let kind = match rng.gen_range(0..3) {
            0 => ShapeKind::Rect,
            1 => ShapeKind::Disc,
            _ => ShapeKind::Diamond,
        };
        let sh = rng.gen_range(MIN_SHAPE_SIZE..=max_size);
        let sw = match kind {
            ShapeKind::Rect => rng.gen_range(MIN_SHAPE_SIZE..=max_size),
            _ => sh,
        };
        let top = rng.gen_range(0..=h - sh);
        let left = rng.gen_range(0..=w - sw);
        let mut tint = class_color(class);
        if spec.color_jitter > 0.0 {
            for c in &mut tint {
                *c += rng.gen_range(-spec.color_jitter..=spec.color_jitter);
            }
        }
        let cy = top as f64 + (sh as f64 - 1.0) / 2.0;
        let cx = left as f64 + (sw as f64 - 1.0) / 2.0;
        let r = sh as f64 / 2.0;
        for y in top..top + sh {
            for x in left..left + sw {
                let (fy, fx) = (y as f64 - cy, x as f64 - cx);
                let inside = match kind {
                    ShapeKind::Rect => true,
                    ShapeKind::Disc => fy * fy + fx * fx <= r * r,
                    ShapeKind::Diamond => fy.abs() + fx.abs() <= r,
                };
                if inside {
                    color[y * w + x] = tint;
                    labels[y * w + x] = class as u8;
                }
            }
        }
    }

    let mut gain = [1.0; 3];
    let mut offset = [0.0; 3];
    if spec.illumination > 0.0 {
        for c in 0..3 {
            gain[c] += rng.gen_range(-spec.illumination..=spec.illumination);
            offset[c] = rng.gen_range(-spec.illumination / 2.0..=spec.illumination / 2.0);
        }
    }
    let mut image = vec![0.0; 3 * n];
    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma).expect("positive sigma"));
    for c in 0..3 {
        for j in 0..n {
            let mut v = gain[c] * color[j][c] + offset[c];
            if let Some(noise) = &noise {
                v += noise.sample(&mut rng);
            }
            // stored as f32 on disk; quantize now so save/load is lossless
            image[c * n + j] = v.clamp(0.0, 1.0) as f32 as f64;
        }
    }
    Sample {
        image: Tensor::from_parts(vec![3, h, w], image),
        label: LabelMap {
            height: h,
            width: w,
            labels,
        },
    }
}

/// All samples of `spec`, with ground-truth labels.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    Ok((0..spec.count).map(|i| generate_sample(spec, i)).collect())
}

/// What `manifest.json` records about a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    #[serde(rename = "C")]
    pub classes: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    pub count: usize,
    pub seed: u64,
    pub labeled_indices: Vec<usize>,
    pub noise_sigma: f64,
    #[serde(default)]
    pub labeled_fraction: f64,
    /// Generation parameters, kept for provenance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<DatasetSpec>,
}

impl DatasetManifest {
    /// Manifest of a freshly generated, fully labeled dataset.
    pub fn for_spec(spec: &DatasetSpec) -> Self {
        DatasetManifest {
            version: FORMAT_VERSION,
            classes: spec.classes,
            height: spec.height,
            width: spec.width,
            count: spec.count,
            seed: spec.seed,
            labeled_indices: (0..spec.count).collect(),
            noise_sigma: spec.noise_sigma,
            labeled_fraction: 1.0,
            generator: Some(spec.clone()),
        }
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        let mut labeled = self.labeled_indices.iter().peekable();
        (0..self.count)
            .filter(|i| {
                if labeled.peek() == Some(&i) {
                    labeled.next();
                    false
                } else {
                    true
                }
            })
            .collect()
    }

    pub fn is_labeled(&self, index: usize) -> bool {
        self.labeled_indices.binary_search(&index).is_ok()
    }

    fn validate(&self, path: &Path) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: self.version,
                expected: FORMAT_VERSION,
            });
        }
        let bad = |reason: String| Error::Integrity {
            path: path.to_path_buf(),
            offset: 0,
            reason,
        };
        if !(2..=MAX_CLASSES).contains(&self.classes) || self.height == 0 || self.width == 0 {
            return Err(bad(format!(
                "bad dimensions C={} H={} W={}",
                self.classes, self.height, self.width
            )));
        }
        if !self.labeled_indices.windows(2).all(|p| p[0] < p[1]) {
            return Err(bad("labeled_indices not strictly increasing".into()));
        }
        if self.labeled_indices.last().is_some_and(|&i| i >= self.count) {
            return Err(bad("labeled index out of range".into()));
        }
        Ok(())
    }
}

/// How many samples [`split_labeled`] should label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitRequest {
    Fraction(f64),
    Count(usize),
}

/// Chooses the labeled subset uniformly without replacement.
pub fn split_labeled(
    manifest: &DatasetManifest,
    request: SplitRequest,
    seed: u64,
) -> Result<DatasetManifest> {
    let n = manifest.count;
    let k = match request {
        SplitRequest::Count(k) => k,
        SplitRequest::Fraction(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "labeled fraction must lie in (0, 1], got {f}"
                )));
            }
            (f * n as f64).round() as usize
        }
    };
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!(
            "labeled count {k} outside [1, {n}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0x5b1d]));
    let mut labeled = sample_indices(&mut rng, n, k).into_vec();
    labeled.sort_unstable();
    let mut out = manifest.clone();
    out.labeled_indices = labeled;
    out.labeled_fraction = k as f64 / n as f64;
    Ok(out)
}

/// A loaded dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Wraps generated samples with a fully labeled manifest.
    pub fn from_generated(spec: &DatasetSpec, samples: Vec<Sample>) -> Self {
        Dataset {
            manifest: DatasetManifest::for_spec(spec),
            samples,
        }
    }
}

fn write_file(path: PathBuf, bytes: &[u8]) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: PathBuf) -> Result<Vec<u8>> {
    fs::read(&path).map_err(|e| Error::io(path, e))
}

/// Writes `dataset` (whose samples carry full ground truth) to `dir`.
/// Samples outside `manifest.labeled_indices` are stored with the unlabeled
/// sentinel in `labels.u8`.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    let m = &dataset.manifest;
    m.validate(&dir.join(MANIFEST_FILE))?;
    if dataset.samples.len() != m.count {
        return Err(Error::Shape(format!(
            "manifest count {} but {} samples",
            m.count,
            dataset.samples.len()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = m.height * m.width;
    let mut images = Vec::with_capacity(m.count * 3 * n * 4);
    let mut train_labels = Vec::with_capacity(m.count * n);
    let mut eval_labels = Vec::with_capacity(m.count * n);
    for (i, s) in dataset.samples.iter().enumerate() {
        if s.image.shape() != [3, m.height, m.width] || s.label.len() != n {
            return Err(Error::Shape(format!("sample {i} does not match manifest dims")));
        }
        for &v in s.image.data() {
            images.extend_from_slice(&(v as f32).to_le_bytes());
        }
        eval_labels.extend_from_slice(&s.label.labels);
        if m.is_labeled(i) {
            train_labels.extend_from_slice(&s.label.labels);
        } else {
            train_labels.extend(std::iter::repeat(UNLABELED).take(n));
        }
    }
    write_file(dir.join(IMAGES_FILE), &images)?;
    write_file(dir.join(LABELS_FILE), &train_labels)?;
    write_file(dir.join(EVAL_LABELS_FILE), &eval_labels)?;
    let json = serde_json::to_string_pretty(m).expect("manifest serializes");
    write_file(dir.join(MANIFEST_FILE), json.as_bytes())
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = read_file(path.clone())?;
    let manifest: DatasetManifest =
        serde_json::from_slice(&bytes).map_err(|e| Error::Integrity {
            path: path.clone(),
            offset: e.column() as u64,
            reason: format!("malformed manifest: {e}"),
        })?;
    manifest.validate(&path)?;
    Ok(manifest)
}

fn load_images(dir: &Path, m: &DatasetManifest) -> Result<Vec<Tensor>> {
    let path = dir.join(IMAGES_FILE);
    let bytes = read_file(path.clone())?;
    let n = m.height * m.width;
    let expected = m.count * 3 * n * 4;
    if bytes.len() != expected {
        return Err(Error::Integrity {
            path,
            offset: bytes.len().min(expected) as u64,
            reason: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    let mut images = Vec::with_capacity(m.count);
    for (i, chunk) in bytes.chunks_exact(3 * n * 4).enumerate() {
        let mut data = Vec::with_capacity(3 * n);
        for (k, b) in chunk.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Integrity {
                    path,
                    offset: ((i * 3 * n + k) * 4) as u64,
                    reason: format!("pixel value {v} outside [0, 1]"),
                });
            }
            data.push(v);
        }
        images.push(Tensor::from_parts(vec![3, m.height, m.width], data));
    }
    Ok(images)
}

fn load_labels(dir: &Path, file: &str, m: &DatasetManifest, training_view: bool) -> Result<Vec<LabelMap>> {
    let path = dir.join(file);
    let bytes = read_file(path.clone())?;
    let n = m.height * m.width;
    let expected = m.count * n;
    if bytes.len() != expected {
        return Err(Error::Integrity {
            path,
            offset: bytes.len().min(expected) as u64,
            reason: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    let mut maps = Vec::with_capacity(m.count);
    for (i, chunk) in bytes.chunks_exact(n).enumerate() {
        let labeled = !training_view || m.is_labeled(i);
        for (k, &l) in chunk.iter().enumerate() {
            let ok = if labeled {
                (l as usize) < m.classes
            } else {
                l == UNLABELED
            };
            if !ok {
                return Err(Error::Integrity {
                    path,
                    offset: (i * n + k) as u64,
                    reason: format!("label {l} invalid for sample {i} (labeled: {labeled})"),
                });
            }
        }
        maps.push(LabelMap {
            height: m.height,
            width: m.width,
            labels: chunk.to_vec(),
        });
    }
    Ok(maps)
}

fn assemble(manifest: DatasetManifest, images: Vec<Tensor>, labels: Vec<LabelMap>) -> Dataset {
    let samples = images
        .into_iter()
        .zip(labels)
        .map(|(image, label)| Sample { image, label })
        .collect();
    Dataset { manifest, samples }
}

/// Loads the training view: unlabeled samples carry only the sentinel.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = load_manifest(dir)?;
    let images = load_images(dir, &manifest)?;
    let labels = load_labels(dir, LABELS_FILE, &manifest, true)?;
    Ok(assemble(manifest, images, labels))
}

/// Loads images with full ground truth from `labels_eval.u8`.
pub fn load_eval_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = load_manifest(dir)?;
    let images = load_images(dir, &manifest)?;
    let labels = load_labels(dir, EVAL_LABELS_FILE, &manifest, false)?;
    Ok(assemble(manifest, images, labels))
}
