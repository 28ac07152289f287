//! Hard pseudo-labels and teacher confidence masks.

use crate::error::{Error, Result};
use crate::numerics::{check_finite, Tensor};

/// Label id marking a pixel without supervision.
pub const IGNORE_LABEL: u8 = 255;

/// `H × W` map of class ids, row-major. Ground truth and pseudo-labels share
/// this type; ground truth may carry [`IGNORE_LABEL`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

pub type PseudoLabelMap = LabelMap;

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "label map {height}×{width} needs {} entries, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(LabelMap {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        LabelMap {
            height,
            width,
            labels: vec![value; height * width],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// The set Ω of pixels whose top class probability exceeds `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMask {
    /// Strictly increasing flat pixel indices.
    pub pixel_indices: Vec<usize>,
    pub tau: f64,
    /// Number of pixels in the map the mask was taken from.
    pub num_pixels: usize,
}

impl ConfidenceMask {
    pub fn len(&self) -> usize {
        self.pixel_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixel_indices.is_empty()
    }

    pub fn fraction(&self) -> f64 {
        self.pixel_indices.len() as f64 / self.num_pixels as f64
    }

    pub fn contains(&self, pixel: usize) -> bool {
        self.pixel_indices.binary_search(&pixel).is_ok()
    }
}

/// Per-pixel argmax over classes. Ties go to the lowest class index.
pub fn hard_pseudo_label(logits: &Tensor) -> Result<PseudoLabelMap> {
    let (c, h, w) = logits.dims3()?;
    if c < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 classes, got {c}")));
    }
    if c > IGNORE_LABEL as usize {
        return Err(Error::InvalidInput(format!("too many classes: {c}")));
    }
    check_finite(logits.data())?;
    let n = h * w;
    let data = logits.data();
    let labels = (0..n)
        .map(|j| {
            let mut best = 0;
            for k in 1..c {
                if data[k * n + j] > data[best * n + j] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    Ok(LabelMap {
        height: h,
        width: w,
        labels,
    })
}

/// Largest softmax probability at each pixel.
pub(crate) fn max_class_probability(logits: &Tensor) -> Vec<f64> {
    let (c, n) = logits.channels_by_pixels();
    let data = logits.data();
    (0..n)
        .map(|j| {
            let mut max = f64::NEG_INFINITY;
            for k in 0..c {
                max = max.max(data[k * n + j]);
            }
            // max prob = 1 / Σ_k exp(z_k − max)
            let denom: f64 = (0..c).map(|k| (data[k * n + j] - max).exp()).sum();
            1.0 / denom
        })
        .collect()
}

/// Pixels whose maximum class probability strictly exceeds `tau`.
pub fn confidence_mask(logits: &Tensor, tau: f64) -> Result<ConfidenceMask> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidParameter(format!(
            "tau must lie in [0, 1], got {tau}"
        )));
    }
    logits.dims3()?;
    check_finite(logits.data())?;
    let probs = max_class_probability(logits);
    let pixel_indices = probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > tau)
        .map(|(j, _)| j)
        .collect();
    Ok(ConfidenceMask {
        pixel_indices,
        tau,
        num_pixels: probs.len(),
    })
}
