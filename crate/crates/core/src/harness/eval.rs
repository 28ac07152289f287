use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{forward, ModelParams};
use crate::pseudo::hard_pseudo_label;

/// Per-class IoU and their mean. A class that appears in neither the
/// predictions nor the ground truth has no IoU (`None`) and is left out of
/// the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
}

/// `C × C` pixel counts, rows = ground truth, columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Adds one label map pair; ground-truth ids outside `[0, C)` are ignored.
    pub fn accumulate(&mut self, truth: &[u8], pred: &[u8]) {
        for (&t, &p) in truth.iter().zip(pred) {
            let (t, p) = (t as usize, p as usize);
            if t < self.classes && p < self.classes {
                self.counts[t * self.classes + p] += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn metrics(&self) -> Metrics {
        let c = self.classes;
        let per_class_iou: Vec<Option<f64>> = (0..c)
            .map(|k| {
                let tp = self.counts[k * c + k];
                let truth: u64 = self.counts[k * c..(k + 1) * c].iter().sum();
                let pred: u64 = (0..c).map(|r| self.counts[r * c + k]).sum();
                let union = truth + pred - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect();
        let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
        let miou = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        Metrics { per_class_iou, miou }
    }
}

/// Argmax predictions of `params` on every sample, scored against the
/// samples' labels with counts accumulated over the whole set.
pub fn evaluate(params: &ModelParams, samples: &[Sample]) -> Result<Metrics> {
    Ok(confusion(params, samples)?.metrics())
}

pub fn confusion(params: &ModelParams, samples: &[Sample]) -> Result<ConfusionMatrix> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty evaluation set".into()));
    }
    let c = params.num_classes();
    let parts: Vec<Result<ConfusionMatrix>> = samples
        .par_iter()
        .map(|s| {
            if s.label.labels.iter().any(|&l| l as usize >= c) {
                return Err(Error::InvalidInput("evaluation sample without ground truth".into()));
            }
            let (logits, _) = forward(params, &s.image)?;
            let pred = hard_pseudo_label(&logits)?;
            let mut m = ConfusionMatrix::new(c);
            m.accumulate(&s.label.labels, &pred.labels);
            Ok(m)
        })
        .collect();
    let mut total = ConfusionMatrix::new(c);
    for part in parts {
        total.merge(&part?);
    }
    Ok(total)
}

/// Predicted label maps, in sample order.
pub fn predict(params: &ModelParams, samples: &[Sample]) -> Result<Vec<Vec<u8>>> {
    samples
        .par_iter()
        .map(|s| {
            let (logits, _) = forward(params, &s.image)?;
            Ok(hard_pseudo_label(&logits)?.labels)
        })
        .collect()
}
