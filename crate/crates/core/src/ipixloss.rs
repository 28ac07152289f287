//! Inter-pixel relation loss.
//!
//! For teacher logits `p` and student logits `q` (both `C × H × W`), the
//! teacher's confident pixels Ω select a spatial sub-vector of every class
//! channel. Each sub-vector is turned into a spatial distribution with a
//! temperature softmax, and the per-channel distances between teacher and
//! student distributions are summed and scaled by `1 / (C · ln |Ω|)`.
//!
//! The teacher side is a constant: only `∂L/∂q` is produced.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, Tensor, DEGENERATE_NORM};
use crate::pseudo::confidence_mask;

pub mod reference;

pub use reference::interpixel_loss_reference;

/// Distance applied between teacher and student spatial distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    /// `KL(teacher ‖ student)`.
    #[serde(rename = "KL")]
    Kl,
    /// `1 − ρ(teacher, student)`.
    #[serde(rename = "CR")]
    Correlation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IPixConfig {
    pub metric: Metric,
    pub temperature: f64,
    pub tau: f64,
}

impl Default for IPixConfig {
    fn default() -> Self {
        IPixConfig {
            metric: Metric::Kl,
            temperature: 4.0,
            tau: 0.8,
        }
    }
}

impl IPixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidParameter(format!(
                "tau must lie in [0, 1], got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IPixResult {
    pub value: f64,
    /// `∂L/∂q`, zero outside Ω.
    pub grad_q: Tensor,
    pub omega_size: usize,
    /// True when `|Ω| ≤ 1`; the loss is then defined as zero.
    pub skipped: bool,
    /// Correlation-metric channels whose restricted vector was constant.
    pub degenerate_channels: usize,
    /// Per-channel distance before normalization.
    pub channel_distances: Vec<f64>,
}

/// Inter-pixel loss and its gradient with respect to the student logits.
pub fn interpixel_loss(p: &Tensor, q: &Tensor, cfg: &IPixConfig) -> Result<IPixResult> {
    cfg.validate()?;
    if p.shape() != q.shape() {
        return Err(Error::Shape(format!(
            "teacher logits {:?} vs student logits {:?}",
            p.shape(),
            q.shape()
        )));
    }
    let (c, h, w) = p.dims3()?;
    numerics::check_finite(q.data())?;
    let n = h * w;
    let omega = confidence_mask(p, cfg.tau)?;
    let mut grad = vec![0.0; c * n];
    let m = omega.len();
    if m <= 1 {
        return Ok(IPixResult {
            value: 0.0,
            grad_q: Tensor::from_parts(p.shape().to_vec(), grad),
            omega_size: m,
            skipped: true,
            degenerate_channels: 0,
            channel_distances: vec![0.0; c],
        });
    }

    let scale = 1.0 / (c as f64 * (m as f64).ln());
    let mut channel_distances = Vec::with_capacity(c);
    let mut degenerate_channels = 0;
    let mut pk = vec![0.0; m];
    let mut qk = vec![0.0; m];
    for k in 0..c {
        let (pc, qc) = (p.channel(k), q.channel(k));
        for (slot, &j) in omega.pixel_indices.iter().enumerate() {
            pk[slot] = pc[j];
            qk[slot] = qc[j];
        }
        numerics::softmax_in_place(&mut pk, cfg.temperature);
        numerics::softmax_in_place(&mut qk, cfg.temperature);
        let (distance, grad_logits) = match cfg.metric {
            Metric::Kl => {
                let d = numerics::kl_raw(&pk, &qk)?;
                let g: Vec<f64> = qk
                    .iter()
                    .zip(&pk)
                    .map(|(v, u)| (v - u) / cfg.temperature)
                    .collect();
                (d, g)
            }
            Metric::Correlation => match correlation_channel(&pk, &qk, cfg.temperature) {
                Some(pair) => pair,
                None => {
                    degenerate_channels += 1;
                    (0.0, vec![0.0; m])
                }
            },
        };
        channel_distances.push(distance);
        let gk = &mut grad[k * n..(k + 1) * n];
        for (slot, &j) in omega.pixel_indices.iter().enumerate() {
            gk[j] = scale * grad_logits[slot];
        }
    }
    let value = scale * channel_distances.iter().sum::<f64>();
    Ok(IPixResult {
        value,
        grad_q: Tensor::from_parts(p.shape().to_vec(), grad),
        omega_size: m,
        skipped: false,
        degenerate_channels,
        channel_distances,
    })
}

/// Correlation distance between two spatial distributions and its gradient
/// with respect to the student's restricted logits. `None` for a constant
/// channel.
fn correlation_channel(teacher: &[f64], student: &[f64], temperature: f64) -> Option<(f64, Vec<f64>)> {
    let a = numerics::centered(teacher);
    let b = numerics::centered(student);
    let (na, nb) = (numerics::norm(&a), numerics::norm(&b));
    if na < DEGENERATE_NORM || nb < DEGENERATE_NORM {
        return None;
    }
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let rho = (dot / (na * nb)).clamp(-1.0, 1.0);
    let grad_probs: Vec<f64> = a
        .iter()
        .zip(&b)
        .map(|(ai, bi)| -(ai / (na * nb) - rho * bi / (nb * nb)))
        .collect();
    Some((1.0 - rho, numerics::softmax_vjp(student, &grad_probs, temperature)))
}
