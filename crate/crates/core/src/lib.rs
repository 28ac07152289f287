//! Semi-supervised segmentation with inter-pixel relation consistency.
//!
//! A teacher network (an exponential moving average of the student) labels
//! weakly augmented unlabeled images. The student learns from strongly
//! augmented views through a pixel-wise pseudo-label loss plus an inter-pixel
//! loss that matches the spatial distribution of every class channel over the
//! teacher's confident pixels.
//!
//! Modules, bottom-up:
//!
//! - [`numerics`]: softmaxes, KL and Pearson distances with analytic gradients
//! - [`pseudo`]: hard pseudo-labels and confidence masks
//! - [`ipixloss`]: the inter-pixel loss and its loop-based reference
//! - [`baseline`]: supervised and pseudo-label cross-entropy, warmup, totals
//! - [`model`]: a small convolutional network with manual backprop and SGD
//! - [`teacher_student`]: augmentation, EMA and the training step
//! - [`data`]: the synthetic shapes dataset and its on-disk format
//! - [`harness`]: configs, training runs, evaluation, ablations, checks, reports

pub mod baseline;
pub mod data;
pub mod error;
pub mod harness;
pub mod ipixloss;
pub mod model;
pub mod numerics;
pub mod pseudo;
pub mod seeding;
pub mod teacher_student;

pub use error::{Error, Result};
