//! Teacher-student training.
//!
//! The teacher pseudo-labels weak views of unlabeled images; the student is
//! optimized on strong views of the same images (plus weak views of labeled
//! ones); after every SGD step the teacher moves toward the student by an
//! exponential moving average.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{fixmatch_unsup_loss, supervised_loss, total_loss, warmup_alpha, LossReport, WarmupSchedule};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::ipixloss::{interpixel_loss, IPixConfig, Metric};
use crate::model::{backward, forward, init_params, sgd_step, GradientBundle, ModelParams, Velocity};
use crate::pseudo::IGNORE_LABEL;
use crate::seeding::derive_seed;

pub mod augment;

pub use augment::{
    strong_augment, strong_augment_with, weak_augment, weak_augment_with, AugmentedPair, Cutout,
    Geometry, Photometric, StrongView, WeakView,
};

/// Which loss components are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Supervised cross-entropy on labeled images only.
    #[serde(rename = "SUP_ONLY")]
    SupOnly,
    /// Supervised plus confidence-masked pseudo-label cross-entropy.
    #[serde(rename = "BASELINE_LO")]
    BaselineLo,
    /// Baseline plus the inter-pixel loss with the KL distance.
    #[serde(rename = "IPIX_KL")]
    IpixKl,
    /// Baseline plus the inter-pixel loss with the correlation distance.
    #[serde(rename = "IPIX_CR")]
    IpixCr,
}

impl Method {
    pub fn uses_unlabeled(self) -> bool {
        self != Method::SupOnly
    }

    pub fn ipix_metric(self) -> Option<Metric> {
        match self {
            Method::IpixKl => Some(Metric::Kl),
            Method::IpixCr => Some(Metric::Correlation),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::SupOnly => "SUP_ONLY",
            Method::BaselineLo => "BASELINE_LO",
            Method::IpixKl => "IPIX_KL",
            Method::IpixCr => "IPIX_CR",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-step knobs of [`train_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub method: Method,
    pub lr: f64,
    pub momentum: f64,
    pub ema_momentum: f64,
    pub tau: f64,
    pub temperature: f64,
    pub schedule: WarmupSchedule,
    pub warmup_enabled: bool,
    /// When false the strong view equals the weak view.
    pub photometric: bool,
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be ≥ 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(0.0..=1.0).contains(&self.ema_momentum) {
            return bad(format!("ema momentum must lie in [0, 1], got {}", self.ema_momentum));
        }
        IPixConfig {
            metric: Metric::Kl,
            temperature: self.temperature,
            tau: self.tau,
        }
        .validate()
    }

    /// Balancing weight of the inter-pixel term at `iteration`.
    pub fn alpha(&self, iteration: u64) -> f64 {
        if self.warmup_enabled {
            warmup_alpha(iteration, &self.schedule)
        } else {
            self.schedule.alpha_max
        }
    }
}

/// `m · teacher + (1 − m) · student`, elementwise.
pub fn ema_update(teacher: &ModelParams, student: &ModelParams, m: f64) -> Result<ModelParams> {
    let mut out = teacher.clone();
    ema_update_in_place(&mut out, student, m)?;
    Ok(out)
}

pub fn ema_update_in_place(teacher: &mut ModelParams, student: &ModelParams, m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::InvalidParameter(format!(
            "EMA momentum must lie in [0, 1], got {m}"
        )));
    }
    if !teacher.congruent(student) {
        return Err(Error::Shape("teacher and student are not congruent".into()));
    }
    for (t, s) in teacher.values_mut().zip(student.values()) {
        *t = m * *t + (1.0 - m) * s;
    }
    Ok(())
}

/// Everything that evolves during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub student: ModelParams,
    pub teacher: ModelParams,
    pub velocity: Velocity,
    /// Completed steps.
    pub iteration: u64,
    /// Root of every per-step random draw.
    pub run_seed: u64,
    pub config: StepConfig,
}

impl TrainerState {
    /// Fresh student from `init_params`, teacher an exact copy.
    pub fn new(config: StepConfig, run_seed: u64, hidden_channels: usize, num_classes: usize) -> Result<Self> {
        config.validate()?;
        let student = init_params(derive_seed(&[run_seed, 0x1417]), hidden_channels, num_classes)?;
        Ok(TrainerState {
            teacher: student.clone(),
            velocity: student.zeros_like(),
            student,
            iteration: 0,
            run_seed,
            config,
        })
    }
}

/// A sample together with its dataset index, which keys its random draws.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub index: usize,
    pub sample: &'a Sample,
}

const STREAM_LABELED: u64 = 1;
const STREAM_WEAK: u64 = 2;
const STREAM_STRONG: u64 = 3;

/// Per-sample seed for a random stream at a given step.
pub fn view_seed(run_seed: u64, iteration: u64, index: usize, stream: u64) -> u64 {
    derive_seed(&[run_seed, iteration, index as u64, stream])
}

struct LabeledOut {
    loss: f64,
    grads: GradientBundle,
}

struct UnlabeledOut {
    l_unsup: f64,
    l_ipix: f64,
    omega_fraction: f64,
    degenerate_channels: usize,
    grads: GradientBundle,
}

/// Diagnostics beyond the [`LossReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub report: LossReport,
    /// Gradient applied by the optimizer.
    pub gradient: GradientBundle,
    /// Correlation-metric channels skipped as constant, summed over the batch.
    pub degenerate_channels: usize,
}

/// One optimization step: pseudo-label, compute losses, update student with
/// SGD, update teacher with EMA, advance the iteration counter.
///
/// Per-sample work runs on the current rayon pool; gradients are reduced in
/// batch order, so the result does not depend on the pool width.
pub fn train_step(
    state: &mut TrainerState,
    labeled: &[BatchItem<'_>],
    unlabeled: &[BatchItem<'_>],
) -> Result<StepOutput> {
    let cfg = state.config;
    let use_unlabeled = cfg.method.uses_unlabeled() && !unlabeled.is_empty();
    if labeled.is_empty() && !use_unlabeled {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let iteration = state.iteration;
    let alpha = cfg.alpha(iteration);
    // alpha == 0 disables the inter-pixel pathway entirely
    let ipix = cfg
        .method
        .ipix_metric()
        .filter(|_| alpha != 0.0)
        .map(|metric| IPixConfig {
            metric,
            temperature: cfg.temperature,
            tau: cfg.tau,
        });

    let student = &state.student;
    let teacher = &state.teacher;
    let run_seed = state.run_seed;

    let labeled_scale = 1.0 / labeled.len().max(1) as f64;
    let labeled_out: Vec<Result<LabeledOut>> = labeled
        .par_iter()
        .map(|item| {
            let weak = weak_augment(
                &item.sample.image,
                Some(&item.sample.label),
                view_seed(run_seed, iteration, item.index, STREAM_LABELED),
            );
            let labels = weak.label.as_ref().expect("label carried through");
            let (logits, cache) = forward(student, &weak.image)?;
            let ce = supervised_loss(&logits, labels, IGNORE_LABEL)?;
            let mut grad = ce.grad;
            grad.data_mut().iter_mut().for_each(|g| *g *= labeled_scale);
            let (grads, _) = backward(student, &cache, &grad, false)?;
            Ok(LabeledOut { loss: ce.value, grads })
        })
        .collect();

    let unlabeled_items = if use_unlabeled { unlabeled } else { &[] };
    let unlabeled_scale = 1.0 / unlabeled_items.len().max(1) as f64;
    let unlabeled_out: Vec<Result<UnlabeledOut>> = unlabeled_items
        .par_iter()
        .map(|item| {
            let weak = weak_augment(
                &item.sample.image,
                None,
                view_seed(run_seed, iteration, item.index, STREAM_WEAK),
            );
            let strong_image = if cfg.photometric {
                strong_augment(&weak, view_seed(run_seed, iteration, item.index, STREAM_STRONG)).image
            } else {
                weak.image.clone()
            };
            let (p, _) = forward(teacher, &weak.image)?;
            let (q, cache) = forward(student, &strong_image)?;
            let unsup = fixmatch_unsup_loss(&p, &q, cfg.tau)?;
            let mut grad_q = unsup.ce.grad;
            let mut l_ipix = 0.0;
            let mut degenerate_channels = 0;
            if let Some(ipix_cfg) = &ipix {
                let r = interpixel_loss(&p, &q, ipix_cfg)?;
                l_ipix = r.value;
                degenerate_channels = r.degenerate_channels;
                for (g, gi) in grad_q.data_mut().iter_mut().zip(r.grad_q.data()) {
                    *g += alpha * gi;
                }
            }
            grad_q.data_mut().iter_mut().for_each(|g| *g *= unlabeled_scale);
            let (grads, _) = backward(student, &cache, &grad_q, false)?;
            Ok(UnlabeledOut {
                l_unsup: unsup.ce.value,
                l_ipix,
                omega_fraction: unsup.omega_size as f64 / unsup.num_pixels as f64,
                degenerate_channels,
                grads,
            })
        })
        .collect();

    let mut gradient = student.zeros_like();
    let mut l_sup = 0.0;
    for out in labeled_out {
        let out = out?;
        l_sup += out.loss;
        gradient.add_assign(&out.grads);
    }
    l_sup *= labeled_scale;
    let (mut l_unsup, mut l_ipix, mut omega_fraction) = (0.0, 0.0, 0.0);
    let mut degenerate_channels = 0;
    for out in unlabeled_out {
        let out = out?;
        degenerate_channels += out.degenerate_channels;
        l_unsup += out.l_unsup;
        l_ipix += out.l_ipix;
        omega_fraction += out.omega_fraction;
        gradient.add_assign(&out.grads);
    }
    l_unsup *= unlabeled_scale;
    l_ipix *= unlabeled_scale;
    omega_fraction *= unlabeled_scale;

    let mut report = total_loss(l_sup, l_unsup, l_ipix, iteration, &cfg.schedule, cfg.warmup_enabled);
    report.omega_fraction = omega_fraction;
    if cfg.method.ipix_metric().is_none() {
        // no inter-pixel term to weight
        report.alpha = 0.0;
    }
    for (component, value) in [
        ("l_sup", report.l_sup),
        ("l_unsup", report.l_unsup),
        ("l_ipix", report.l_ipix),
        ("l_sum", report.l_sum),
    ] {
        if !value.is_finite() {
            return Err(Error::NonFinite { component, iteration, value });
        }
    }
    if !gradient.is_finite() {
        return Err(Error::NonFinite {
            component: "gradient",
            iteration,
            value: f64::NAN,
        });
    }

    sgd_step(&mut state.student, &gradient, cfg.lr, cfg.momentum, &mut state.velocity)?;
    ema_update_in_place(&mut state.teacher, &state.student, cfg.ema_momentum)?;
    state.iteration += 1;
    Ok(StepOutput {
        report,
        gradient,
        degenerate_channels,
    })
}
