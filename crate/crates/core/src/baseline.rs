//! The base semi-supervised objective (supervised cross-entropy plus a
//! confidence-masked pseudo-label term), the warmup ramp for the inter-pixel
//! weight, and the combined per-step loss record.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{check_finite, Tensor};
use crate::pseudo::{confidence_mask, hard_pseudo_label, LabelMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupSchedule {
    pub warmup_iters: u64,
    pub alpha_max: f64,
}

impl WarmupSchedule {
    pub fn new(warmup_iters: u64, alpha_max: f64) -> Result<Self> {
        if warmup_iters == 0 {
            return Err(Error::InvalidParameter("warmup_iters must be ≥ 1".into()));
        }
        if !(alpha_max >= 0.0) || !alpha_max.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "alpha_max must be a finite non-negative number, got {alpha_max}"
            )));
        }
        Ok(WarmupSchedule {
            warmup_iters,
            alpha_max,
        })
    }
}

/// Gaussian ramp `alpha_max · exp(−5 (1 − i_c / i_w)²)`, held at `alpha_max`
/// once `i_c ≥ i_w`.
pub fn warmup_alpha(iteration: u64, schedule: &WarmupSchedule) -> f64 {
    let progress = iteration.min(schedule.warmup_iters) as f64 / schedule.warmup_iters as f64;
    let gap = 1.0 - progress;
    schedule.alpha_max * (-5.0 * gap * gap).exp()
}

/// Loss components of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_sup: f64,
    pub l_unsup: f64,
    pub l_ipix: f64,
    pub alpha: f64,
    pub l_sum: f64,
    pub omega_fraction: f64,
}

/// Cross-entropy value with its gradient over the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossEntropy {
    pub value: f64,
    pub grad: Tensor,
    /// Pixels that contributed to the mean.
    pub count: usize,
}

impl CrossEntropy {
    /// No contributing pixels: the value and gradient are zero.
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// Mean pixel-wise cross-entropy over the pixels selected by `include`,
/// against `labels`.
fn masked_cross_entropy(
    logits: &Tensor,
    labels: &[u8],
    include: impl Fn(usize) -> bool,
) -> Result<CrossEntropy> {
    let (c, n) = logits.channels_by_pixels();
    let data = logits.data();
    let mut grad = vec![0.0; data.len()];
    let mut total = 0.0;
    let mut count = 0usize;
    let mut probs = vec![0.0; c];
    for j in 0..n {
        if !include(j) {
            continue;
        }
        let y = labels[j] as usize;
        if y >= c {
            return Err(Error::InvalidInput(format!(
                "label {y} at pixel {j} out of range for {c} classes"
            )));
        }
        let mut max = f64::NEG_INFINITY;
        for k in 0..c {
            max = max.max(data[k * n + j]);
        }
        let mut z = 0.0;
        for k in 0..c {
            probs[k] = (data[k * n + j] - max).exp();
            z += probs[k];
        }
        // −ln softmax_y = ln z − (x_y − max)
        total += z.ln() - (data[y * n + j] - max);
        for k in 0..c {
            grad[k * n + j] = probs[k] / z;
        }
        grad[y * n + j] -= 1.0;
        count += 1;
    }
    if count > 0 {
        let inv = 1.0 / count as f64;
        total *= inv;
        for g in &mut grad {
            *g *= inv;
        }
    }
    Ok(CrossEntropy {
        value: total,
        grad: Tensor::from_parts(logits.shape().to_vec(), grad),
        count,
    })
}

/// Mean cross-entropy over pixels whose label is not `ignore_id`.
pub fn supervised_loss(logits: &Tensor, labels: &LabelMap, ignore_id: u8) -> Result<CrossEntropy> {
    let (_, h, w) = logits.dims3()?;
    if labels.height != h || labels.width != w {
        return Err(Error::Shape(format!(
            "logits {h}×{w} vs labels {}×{}",
            labels.height, labels.width
        )));
    }
    check_finite(logits.data())?;
    masked_cross_entropy(logits, &labels.labels, |j| labels.labels[j] != ignore_id)
}

/// Pseudo-label term on an unlabeled image.
#[derive(Debug, Clone, PartialEq)]
pub struct UnsupervisedLoss {
    pub ce: CrossEntropy,
    pub omega_size: usize,
    pub num_pixels: usize,
}

/// Cross-entropy of the student's strong-view logits against the teacher's
/// hard pseudo-labels, averaged over the teacher's confident pixels.
pub fn fixmatch_unsup_loss(
    teacher_logits_weak: &Tensor,
    student_logits_strong: &Tensor,
    tau: f64,
) -> Result<UnsupervisedLoss> {
    if teacher_logits_weak.shape() != student_logits_strong.shape() {
        return Err(Error::Shape(format!(
            "teacher {:?} vs student {:?}",
            teacher_logits_weak.shape(),
            student_logits_strong.shape()
        )));
    }
    check_finite(student_logits_strong.data())?;
    let pseudo = hard_pseudo_label(teacher_logits_weak)?;
    let omega = confidence_mask(teacher_logits_weak, tau)?;
    let mut selected = vec![false; omega.num_pixels];
    for &j in &omega.pixel_indices {
        selected[j] = true;
    }
    let ce = masked_cross_entropy(student_logits_strong, &pseudo.labels, |j| selected[j])?;
    Ok(UnsupervisedLoss {
        ce,
        omega_size: omega.len(),
        num_pixels: omega.num_pixels,
    })
}

/// Combines the component losses into the per-step objective
/// `l_sum = l_sup + l_unsup + α · l_ipix`.
pub fn total_loss(
    l_sup: f64,
    l_unsup: f64,
    l_ipix: f64,
    iteration: u64,
    schedule: &WarmupSchedule,
    warmup_enabled: bool,
) -> LossReport {
    let alpha = if warmup_enabled {
        warmup_alpha(iteration, schedule)
    } else {
        schedule.alpha_max
    };
    LossReport {
        l_sup,
        l_unsup,
        l_ipix,
        alpha,
        l_sum: l_sup + l_unsup + alpha * l_ipix,
        omega_fraction: 0.0,
    }
}
