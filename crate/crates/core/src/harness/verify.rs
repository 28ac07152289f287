//! Self-check suite behind the `verify` command. Every check yields one
//! observed value that passes when it does not exceed the check's tolerance;
//! boolean properties observe their violation count against tolerance 0.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::baseline::{fixmatch_unsup_loss, supervised_loss, warmup_alpha, WarmupSchedule};
use crate::data::{generate_dataset, DatasetSpec, Sample};
use crate::ipixloss::{interpixel_loss, reference::interpixel_loss_reference, IPixConfig, Metric};
use crate::model::{backward, forward, init_params, sgd_step, ModelParams};
use crate::numerics::{kl_divergence_with_grad, pearson_distance, spatial_softmax, spatial_softmax_vjp, Distribution, Tensor};
use crate::pseudo::{confidence_mask, LabelMap, IGNORE_LABEL};
use crate::seeding::derive_seed;
use crate::teacher_student::{ema_update_in_place, train_step, BatchItem, Method, StepConfig, TrainerState};

use super::config::VerifyConfig;
use super::eval::ConfusionMatrix;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    /// Test hook: added to every analytic model-parameter gradient before
    /// the finite-difference comparison.
    pub gradient_corruption: Option<f64>,
}

pub struct Ctx {
    pub seed: u64,
    pub instances: usize,
    pub opts: VerifyOptions,
}

impl Ctx {
    fn rng(&self, salt: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(&[self.seed, salt]))
    }
}

pub struct Observation {
    pub observed: f64,
    pub detail: String,
}

fn obs(observed: f64, detail: impl Into<String>) -> Observation {
    Observation {
        observed,
        detail: detail.into(),
    }
}

pub struct CheckSpec {
    pub name: &'static str,
    pub module: &'static str,
    pub tolerance: f64,
    pub run: fn(&Ctx) -> Observation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub name: String,
    pub module: String,
    pub tolerance: f64,
    pub observed: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub instances: usize,
    pub inventory: usize,
    pub passed: bool,
    pub checks: Vec<CheckRow>,
}

impl VerifyReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckRow> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

macro_rules! check {
    ($module:literal, $name:literal, $tol:expr, $f:path) => {
        CheckSpec {
            name: $name,
            module: $module,
            tolerance: $tol,
            run: $f,
        }
    };
}

/// The documented check inventory.
pub fn registry() -> Vec<CheckSpec> {
    vec![
        check!("numerics", "spatial_softmax_fd", FD_TOL, spatial_softmax_fd),
        check!("numerics", "kl_divergence_fd", FD_TOL, kl_fd),
        check!("numerics", "pearson_distance_fd", FD_TOL, pearson_fd),
        check!("ipixloss", "interpixel_kl_fd", FD_TOL, ipix_kl_fd),
        check!("ipixloss", "interpixel_cr_fd", FD_TOL, ipix_cr_fd),
        check!("ipixloss", "reference_oracle", 1e-10, ipix_reference),
        check!("ipixloss", "identity_is_zero", 1e-12, ipix_identity),
        check!("ipixloss", "zero_gradient_off_omega", 0.0, ipix_off_omega),
        check!("ipixloss", "skipped_when_omega_small", 0.0, ipix_skip),
        check!("ipixloss", "delta_vs_uniform_normalizer", 0.05, ipix_delta_uniform),
        check!("baseline", "supervised_loss_fd", FD_TOL, supervised_fd),
        check!("baseline", "fixmatch_unsup_loss_fd", FD_TOL, fixmatch_fd),
        check!("baseline", "cross_entropy_oracle", 1e-12, ce_oracle),
        check!("baseline", "warmup_formula", 1e-12, warmup_formula),
        check!("baseline", "warmup_monotone_and_endpoint", 0.0, warmup_shape),
        check!("pseudo", "mask_monotone_in_tau", 0.0, mask_monotone),
        check!("pseudo", "mask_extremes", 0.0, mask_extremes),
        check!("pseudo", "mask_shift_invariance", 0.0, mask_shift),
        check!("model", "parameter_gradient_fd", FD_TOL, model_param_fd),
        check!("model", "input_gradient_fd", FD_TOL, model_input_fd),
        check!("model", "sgd_momentum_unroll", 1e-12, sgd_unroll),
        check!("teacher_student", "ema_recurrence", 0.0, ema_recurrence),
        check!("teacher_student", "alpha_zero_equivalence", 0.0, alpha_zero),
        check!("harness", "confusion_oracle", 1e-15, confusion_oracle),
    ]
}

/// Runs every registered check.
pub fn verify(config: &VerifyConfig, opts: VerifyOptions) -> VerifyReport {
    let ctx = Ctx {
        seed: config.seed,
        instances: config.instances,
        opts,
    };
    let checks: Vec<CheckRow> = registry()
        .into_iter()
        .map(|spec| {
            let o = (spec.run)(&ctx);
            CheckRow {
                name: spec.name.into(),
                module: spec.module.into(),
                tolerance: spec.tolerance,
                observed: o.observed,
                passed: o.observed <= spec.tolerance,
                detail: o.detail,
            }
        })
        .collect();
    VerifyReport {
        seed: config.seed,
        instances: config.instances,
        inventory: checks.len(),
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

// ---- helpers ----

/// `‖a − n‖ / max(‖a‖, ‖n‖)`; absolute when both vanish.
fn rel_err_vec(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + FD_STEP;
            let hi = f(&xp);
            xp[i] = x[i] - FD_STEP;
            let lo = f(&xp);
            xp[i] = x[i];
            (hi - lo) / (2.0 * FD_STEP)
        })
        .collect()
}

fn worst(analytic: &[f64], numeric: &[f64]) -> f64 {
    rel_err_vec(analytic, numeric)
}

fn normals(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    let d = Normal::new(0.0, scale).expect("positive scale");
    (0..n).map(|_| d.sample(rng)).collect()
}

fn random_dist(rng: &mut ChaCha8Rng, n: usize) -> Distribution {
    spatial_softmax(&normals(rng, n, 1.5), 1.0).expect("finite logits")
}

/// Teacher logits with a mix of confident and unsure pixels.
fn teacher_logits(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
    let n = h * w;
    let mut data = normals(rng, c * n, 1.0);
    for j in 0..n {
        if rng.gen_bool(0.7) {
            let k = rng.gen_range(0..c);
            data[k * n + j] += rng.gen_range(3.0..8.0);
        }
    }
    Tensor::new(vec![c, h, w], data).expect("valid shape")
}

fn random_shape(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    let c = rng.gen_range(2..=4);
    let h = rng.gen_range(2..=5);
    let w = rng.gen_range(2..=5);
    (c, h, w)
}

// ---- numerics ----

fn spatial_softmax_fd(ctx: &Ctx) -> Observation {
    let mut rng = ctx.rng(1);
    let mut w = 0.0f64;
    for _ in 0..ctx.instances {
        let n = rng.gen_range(2..=12);
        let t = rng.gen_range(0.5..6.0);
        let z = normals(&mut rng, n, 2.0);
        let g = normals(&mut rng, n, 1.0);
        let psi = spatial_softmax(&z, t).expect("finite");
        let analytic = spatial_softmax_vjp(&psi, &g, t).expect("shapes match");
        let numeric = central_diff(
            &mut |x| {
                let p = spatial_softmax(x, t).expect("finite");
                p.probs().iter().zip(&g).map(|(a, b)| a * b).sum()
            },
            &z,
        );
        w = w.max(worst(&analytic, &numeric));
    }
    obs(w, "max relative error, ⟨g, ψ(z)⟩")
}

fn kl_fd(ctx: &Ctx) -> Observation {
    let mut rng = ctx.rng(2);
    let mut w = 0.0f64;
    for _ in 0..ctx.instances {
        let n = rng.gen_range(2..=12);
        let t = rng.gen_range(0.5..6.0);
        let u = random_dist(&mut rng, n);
        let z = normals(&mut rng, n, 2.0);
        let v = spatial_softmax(&z, t).expect("finite");
        let (_, analytic) = kl_divergence_with_grad(&u, &v, t).expect("valid");
        let numeric = central_diff(
            &mut |x| {
                let v = spatial_softmax(x, t).expect("finite");
                kl_divergence_with_grad(&u, &v, t).expect("valid").0
            },
            &z,
        );
        w = w.max(worst(&analytic, &numeric));
    }
    obs(w, "max relative error, KL(u ‖ ψ(z)) w.r.t. z")
}

fn pearson_fd(ctx: &Ctx) -> Observation {
    let mut rng = ctx.rng(3);
    let mut w = 0.0f64;
    for _ in 0..ctx.instances {
        let n = rng.gen_range(3..=12);
        let u = normals(&mut rng, n, 1.0);
        let v = normals(&mut rng, n, 1.0);
        let analytic = pearson_distance(&u, &v).expect("non-degenerate").grad_v;
        let numeric = central_diff(&mut |x| pearson_distance(&u, x).expect("non-degenerate").value, &v);
        w = w.max(worst(&analytic, &numeric));
    }
    obs(w, "max relative error, 1 − ρ(u, v) w.r.t. v")
}

// ---- ipixloss ----

fn ipix_fd(ctx: &Ctx, metric: Metric, salt: u64) -> Observation {
    let mut rng = ctx.rng(salt);
    let mut w = 0.0f64;
    let mut done = 0;
    while done < ctx.instances {
        let (c, h, wd) = random_shape(&mut rng);
        let p = teacher_logits(&mut rng, c, h, wd);
        let q = Tensor::new(vec![c, h, wd], normals(&mut rng, c * h * wd, 2.0)).expect("valid");
        let cfg = IPixConfig { metric, ..Default::default() };
        let r = interpixel_loss(&p, &q, &cfg).expect("valid inputs");
        // two points always correlate perfectly: zero gradient, nothing to check
        let min_omega = if metric == Metric::Correlation { 3 } else { 2 };
        if r.skipped || r.degenerate_channels > 0 || r.omega_size < min_omega {
            continue;
        }
        let numeric = central_diff(
            &mut |x| {
                let q = Tensor::new(vec![c, h, wd], x.to_vec()).expect("valid");
                interpixel_loss(&p, &q, &cfg).expect("valid inputs").value
            },
            q.data(),
        );
        w = w.max(worst(r.grad_q.data(), &numeric));
        done += 1;
    }
    obs(w, format!("max relative error over {done} instances with |Ω| ≥ {}", if metric == Metric::Correlation { 3 } else { 2 }))
}

fn ipix_kl_fd(ctx: &Ctx) -> Observation {
    ipix_fd(ctx, Metric::Kl, 4)
}

fn ipix_cr_fd(ctx: &Ctx) -> Observation {
    ipix_fd(ctx, Metric::Correlation, 5)
}

fn ipix_reference(ctx: &Ctx) -> Observation {
    let mut rng = ctx.rng(6);
    let mut w = 0.0f64;
    for i in 0..2 * ctx.instances {
        let metric = if i % 2 == 0 { Metric::Kl } else { Metric::Correlation };
        let (c, h, wd) = random_shape(&mut rng);
        let p = teacher_logits(&mut rng, c, h, wd);
        let q = Tensor::new(vec![c, h, wd], normals(&mut rng, c * h * wd, 2.0)).expect("valid");
        let cfg = IPixConfig { metric, ..Default::default() };
        let a = interpixel_loss(&p, &q, &cfg).expect("valid").value;
        let b = interpixel_loss_reference(&p, &q, &cfg).expect("valid");
        w = w.max((a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE));
    }
    obs(w, "max relative difference from the loop reference, both metrics")
}

fn ipix_identity(ctx: &Ctx) -> Observation {
    let mut rng = ctx.rng(7);
    let mut w = 0.0f64;
    for i in 0..ctx.instances {
        let metric = if i % 2 == 0 { Metric::Kl } else { Metric::Correlation };
        let (c, h, wd) = random_shape(&mut rng);
        let p = teacher_logits(&mut rng, c, h, wd);
        let r = interpixel_loss(&p, &p, &IPixConfig { metric, ..Default::default() }).expect("valid");
        w = w.max(r.value.abs());
    }
    obs(w, "max |L(p, p)|")
}

fn ipix_off_omega(ctx: &Ctx) -> Observation {
    let mut rng = ctx.rng(8);
    let mut w = 0.0f64;
    for i in 0..ctx.instances {
        let metric = if i % 2 == 0 { Metric::Kl } else { Metric::Correlation };
        let (c, h, wd) = random_shape(&mut rng);
        let p = teacher_logits(&mut rng, c, h, wd);
        let q = Tensor::new(vec![c, h, wd], normals(&mut rng, c * h * wd, 2.0)).expect("valid");
        let cfg = IPixConfig { metric, ..Default::default() };
        let r = interpixel_loss(&p, &q, &cfg).expect("valid");
        let omega = confidence_mask(&p, cfg.tau).expect("valid");
        let n = h * wd;
        for j in (0..n).filter(|j| !omega.contains(*j)) {
            for k in 0..c {
                w = w.max(r.grad_q.data()[k * n + j].abs());
            }
        }
    }
    obs(w, "max |∂L/∂q| outside Ω")
}

fn ipix_skip(ctx: &Ctx) -> Observation {
    let mut rng = ctx.rng(9);
    let mut bad = 0;
    for _ in 0..ctx.instances {
        let (c, h, wd) = random_shape(&mut rng);
        let n = h * wd;
        // flat teacher everywhere except at most one confident pixel
        let mut data = vec![0.0; c * n];
        if rng.gen_bool(0.5) {
            data[rng.gen_range(0..n)] = 20.0;
        }
        let p = Tensor::new(vec![c, h, wd], data).expect("valid");
        let q = Tensor::new(vec![c, h, wd], normals(&mut rng, c * n, 2.0)).expect("valid");
        let r = interpixel_loss(&p, &q, &IPixConfig::default()).expect("valid");
        if !(r.skipped && r.value == 0.0 && r.grad_q.data().iter().all(|g| *g == 0.0)) {
            bad += 1;
        }
    }
    obs(bad as f64, "instances with |Ω| ≤ 1 not skipped with value 0")
}

fn ipix_delta_uniform(_: &Ctx) -> Observation {
    let mut w = 0.0f64;
    for n in [4usize, 9, 16, 25] {
        let mut p = vec![0.0; n];
        p[n / 2] = 40.0;
        let p = Tensor::new(vec![1, 1, n], p).expect("valid");
        let q = Tensor::zeros(vec![1, 1, n]);
        let v = interpixel_loss(&p, &q, &IPixConfig::default()).expect("valid").value;
        w = w.max((v - 1.0).abs());
    }
    obs(w, "max |L − 1|, single channel, teacher gap 40, t = 4, |Ω| ∈ {4, 9, 16, 25}")
}

// ---- baseline ----

fn random_labels(rng: &mut ChaCha8Rng, c: usize, n: usize) -> Vec<u8> {
    (0..n)
        .map(|_| if rng.gen_bool(0.2) { IGNORE_LABEL } else { rng.gen_range(0..c) as u8 })
        .collect()
}

fn supervised_fd(ctx: &Ctx) -> Observation {
    let mut rng = ctx.rng(10);
    let mut w = 0.0f64;
    for _ in 0..ctx.instances {
        let (c, h, wd) = random_shape(&mut rng);
        let mut labels = random_labels(&mut rng, c, h * wd);
        labels[0] = 0;
        let labels = LabelMap::new(h, wd, labels).expect("valid");
        let z = normals(&mut rng, c * h * wd, 2.0);
        let logits = Tensor::new(vec![c, h, wd], z.clone()).expect("valid");
        let analytic = supervised_loss(&logits, &labels, IGNORE_LABEL).expect("valid").grad;
        let numeric = central_diff(
            &mut |x| {
                let t = Tensor::new(vec![c, h, wd], x.to_vec()).expect("valid");
                supervised_loss(&t, &labels, IGNORE_LABEL).expect("valid").value
            },
            &z,
        );
        w = w.max(worst(analytic.data(), &numeric));
    }
    obs(w, "max relative error")
}

fn fixmatch_fd(ctx: &Ctx) -> Observation {
    let mut rng = ctx.rng(11);
    let mut w = 0.0f64;
    for _ in 0..ctx.instances {
        let (c, h, wd) = random_shape(&mut rng);
        let p = teacher_logits(&mut rng, c, h, wd);
        let q = Tensor::new(vec![c, h, wd], normals(&mut rng, c * h * wd, 2.0)).expect("valid");
        let analytic = fixmatch_unsup_loss(&p, &q, 0.8).expect("valid").ce.grad;
        let numeric = central_diff(
            &mut |x| {
                let t = Tensor::new(vec![c, h, wd], x.to_vec()).expect("valid");
                fixmatch_unsup_loss(&p, &t, 0.8).expect("valid").ce.value
            },
            q.data(),
        );
        w = w.max(worst(analytic.data(), &numeric));
    }
    obs(w, "max relative error w.r.t. student logits")
}

fn ce_oracle(ctx: &Ctx) -> Observation {
    let mut rng = ctx.rng(12);
    let mut w = 0.0f64;
    for _ in 0..ctx.instances {
        let (c, h, wd) = random_shape(&mut rng);
        let n = h * wd;
        let labels = random_labels(&mut rng, c, n);
        let z = normals(&mut rng, c * n, 3.0);
        let logits = Tensor::new(vec![c, h, wd], z.clone()).expect("valid");
        let got = supervised_loss(&logits, &LabelMap::new(h, wd, labels.clone()).expect("valid"), IGNORE_LABEL)
            .expect("valid")
            .value;
        let (mut sum, mut count) = (0.0, 0);
        for j in 0..n {
            if labels[j] == IGNORE_LABEL {
                continue;
            }
            let lse = (0..c).map(|k| z[k * n + j].exp()).sum::<f64>().ln();
            sum += lse - z[labels[j] as usize * n + j];
            count += 1;
        }
        let want = if count == 0 { 0.0 } else { sum / count as f64 };
        w = w.max((got - want).abs() / want.abs().max(1.0));
    }
    obs(w, "max relative difference from log-sum-exp loop")
}

fn warmup_formula(_: &Ctx) -> Observation {
    let mut w = 0.0f64;
    for (iw, amax) in [(1u64, 1.0), (7, 0.5), (300, 1.0), (1000, 2.0)] {
        let s = WarmupSchedule::new(iw, amax).expect("valid");
        for ic in 0..=iw {
            let x = 1.0 - ic as f64 / iw as f64;
            w = w.max((warmup_alpha(ic, &s) - amax * (-5.0 * x * x).exp()).abs());
        }
    }
    obs(w, "max |α(i) − α_max e^{−5(1 − i/i_w)²}|")
}

fn warmup_shape(_: &Ctx) -> Observation {
    let mut bad = 0;
    for (iw, amax) in [(1u64, 1.0), (50, 0.3), (300, 1.0)] {
        let s = WarmupSchedule::new(iw, amax).expect("valid");
        let series: Vec<f64> = (0..=2 * iw).map(|i| warmup_alpha(i, &s)).collect();
        bad += series.windows(2).filter(|p| p[1] < p[0]).count();
        bad += series[iw as usize..].iter().filter(|a| **a != amax).count();
    }
    obs(bad as f64, "decreases plus post-warmup values ≠ α_max")
}

// ---- pseudo ----

fn mask_monotone(ctx: &Ctx) -> Observation {
    let mut rng = ctx.rng(13);
    let taus = [0.0, 0.2, 0.5, 0.8, 0.9, 0.99, 1.0];
    let mut bad = 0;
    for _ in 0..ctx.instances {
        let (c, h, wd) = random_shape(&mut rng);
        let p = teacher_logits(&mut rng, c, h, wd);
        let masks: Vec<_> = taus.iter().map(|&t| confidence_mask(&p, t).expect("valid")).collect();
        for pair in masks.windows(2) {
            if !pair[1].pixel_indices.iter().all(|j| pair[0].contains(*j)) {
                bad += 1;
            }
        }
    }
    obs(bad as f64, "τ pairs where the larger τ keeps a pixel the smaller drops")
}

fn mask_extremes(ctx: &Ctx) -> Observation {
    let mut rng = ctx.rng(14);
    let mut bad = 0;
    for _ in 0..ctx.instances {
        let (c, h, wd) = random_shape(&mut rng);
        let p = teacher_logits(&mut rng, c, h, wd);
        bad += (confidence_mask(&p, 0.0).expect("valid").len() != h * wd) as usize;
        bad += (!confidence_mask(&p, 1.0).expect("valid").pixel_indices.is_empty()) as usize;
    }
    obs(bad as f64, "τ = 0 not full or τ = 1 not empty")
}

fn mask_shift(ctx: &Ctx) -> Observation {
    let mut rng = ctx.rng(15);
    let mut bad = 0;
    for _ in 0..ctx.instances {
        let (c, h, wd) = random_shape(&mut rng);
        let n = h * wd;
        let p = teacher_logits(&mut rng, c, h, wd);
        // integer shifts keep the shifted logits exact
        let shift: Vec<f64> = (0..n).map(|_| rng.gen_range(-20..=20) as f64).collect();
        let mut data = p.data().to_vec();
        for k in 0..c {
            for j in 0..n {
                data[k * n + j] += shift[j];
            }
        }
        let shifted = Tensor::new(vec![c, h, wd], data).expect("valid");
        for tau in [0.5, 0.8, 0.95] {
            let a = confidence_mask(&p, tau).expect("valid");
            let b = confidence_mask(&shifted, tau).expect("valid");
            bad += (a.pixel_indices != b.pixel_indices) as usize;
        }
    }
    obs(bad as f64, "masks changed by a per-pixel logit shift")
}

// ---- model ----

fn small_model(rng: &mut ChaCha8Rng) -> (ModelParams, Tensor, Tensor) {
    let mut params = init_params(rng.gen(), 4, 2).expect("valid");
    for l in &mut params.layers {
        for b in &mut l.bias {
            *b = rng.gen_range(-0.1..0.1);
        }
    }
    let image = Tensor::new(vec![3, 5, 5], (0..75).map(|_| rng.gen_range(0.0..1.0)).collect()).expect("valid");
    let g = Tensor::new(vec![2, 5, 5], normals(rng, 50, 1.0)).expect("valid");
    (params, image, g)
}

fn functional(params: &ModelParams, image: &Tensor, g: &Tensor) -> f64 {
    let (logits, _) = forward(params, image).expect("valid");
    logits.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
}

fn model_param_fd(ctx: &Ctx) -> Observation {
    let mut rng = ctx.rng(16);
    let names = ["weight", "bias"];
    let mut per_tensor = vec![0.0f64; 6];
    for _ in 0..ctx.instances {
        let (params, image, g) = small_model(&mut rng);
        let (_, cache) = forward(&params, &image).expect("valid");
        let (grads, _) = backward(&params, &cache, &g, false).expect("fresh cache");
        for (li, layer) in params.layers.iter().enumerate() {
            for (ti, len) in [layer.weight.len(), layer.bias.len()].into_iter().enumerate() {
                let mut numeric = Vec::with_capacity(len);
                for i in 0..len {
                    let eval = |delta: f64| {
                        let mut p = params.clone();
                        let slot = if ti == 0 { &mut p.layers[li].weight[i] } else { &mut p.layers[li].bias[i] };
                        *slot += delta;
                        functional(&p, &image, &g)
                    };
                    numeric.push((eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP));
                }
                let mut analytic = if ti == 0 { grads.layers[li].weight.clone() } else { grads.layers[li].bias.clone() };
                if let Some(c) = ctx.opts.gradient_corruption {
                    analytic.iter_mut().for_each(|a| *a += c);
                }
                let e = rel_err_vec(&analytic, &numeric);
                per_tensor[2 * li + ti] = per_tensor[2 * li + ti].max(e);
            }
        }
    }
    let (wi, w) = per_tensor
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0f64), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });
    let failing: Vec<String> = per_tensor
        .iter()
        .enumerate()
        .filter(|(_, e)| **e > FD_TOL)
        .map(|(i, _)| format!("layer {} {}", i / 2, names[i % 2]))
        .collect();
    let detail = if failing.is_empty() {
        format!("worst: layer {} {} (3→4→4→2, 5×5)", wi / 2, names[wi % 2])
    } else {
        format!("failing: {}", failing.join(", "))
    };
    obs(w, detail)
}

fn model_input_fd(ctx: &Ctx) -> Observation {
    let mut rng = ctx.rng(17);
    let mut w = 0.0f64;
    for _ in 0..ctx.instances {
        let (params, image, g) = small_model(&mut rng);
        let (_, cache) = forward(&params, &image).expect("valid");
        let (_, gi) = backward(&params, &cache, &g, true).expect("fresh cache");
        let gi = gi.expect("requested");
        let numeric = central_diff(
            &mut |x| functional(&params, &Tensor::new(vec![3, 5, 5], x.to_vec()).expect("valid"), &g),
            image.data(),
        );
        w = w.max(worst(gi.data(), &numeric));
    }
    obs(w, "max relative error w.r.t. the input image")
}

fn sgd_unroll(ctx: &Ctx) -> Observation {
    let mut rng = ctx.rng(18);
    let mut params = init_params(rng.gen(), 2, 2).expect("valid");
    let start = params.clone();
    let mut grads = params.zeros_like();
    for v in grads.values_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let mut velocity = params.zeros_like();
    for _ in 0..2 {
        sgd_step(&mut params, &grads, 0.1, 0.9, &mut velocity).expect("congruent");
    }
    let w = params
        .values()
        .zip(start.values())
        .zip(grads.values())
        .map(|((p, s), g)| ((p - s) - (-0.29 * g)).abs())
        .fold(0.0, f64::max);
    obs(w, "max |Δθ + 0.29 g| after two steps, lr 0.1, momentum 0.9")
}

// ---- teacher_student ----

fn ema_recurrence(ctx: &Ctx) -> Observation {
    let mut rng = ctx.rng(19);
    let m = 0.99;
    let mut teacher = init_params(rng.gen(), 2, 3).expect("valid");
    let mut expected: Vec<f64> = teacher.values().collect();
    let mut student = teacher.clone();
    let mut bad = 0;
    for _ in 0..100 {
        for v in student.values_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
        ema_update_in_place(&mut teacher, &student, m).expect("congruent");
        for (e, s) in expected.iter_mut().zip(student.values()) {
            *e = m * *e + (1.0 - m) * s;
        }
        bad += teacher.values().zip(&expected).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
    }
    obs(bad as f64, "bit mismatches against the recorded recurrence over 100 steps")
}

fn tiny_data(seed: u64) -> Vec<Sample> {
    let spec = DatasetSpec {
        classes: 3,
        height: 16,
        width: 16,
        count: 8,
        seed,
        ..Default::default()
    };
    generate_dataset(&spec).expect("valid spec")
}

fn alpha_zero(ctx: &Ctx) -> Observation {
    let data = tiny_data(ctx.seed);
    let run = |method: Method| {
        let cfg = StepConfig {
            method,
            lr: 0.05,
            momentum: 0.9,
            ema_momentum: 0.99,
            tau: 0.5,
            temperature: 4.0,
            schedule: WarmupSchedule::new(2, 0.0).expect("valid"),
            warmup_enabled: true,
            photometric: true,
        };
        let mut s = TrainerState::new(cfg, ctx.seed, 3, 3).expect("valid");
        let lab: Vec<BatchItem> = (0..2).map(|i| BatchItem { index: i, sample: &data[i] }).collect();
        let unl: Vec<BatchItem> = (2..6).map(|i| BatchItem { index: i, sample: &data[i] }).collect();
        let sums: Vec<u64> = (0..4)
            .map(|_| train_step(&mut s, &lab, &unl).expect("finite").report.l_sum.to_bits())
            .collect();
        (sums, s.student, s.teacher)
    };
    let a = run(Method::BaselineLo);
    let b = run(Method::IpixKl);
    let bad = a.0.iter().zip(&b.0).filter(|(x, y)| x != y).count()
        + a.1.values().zip(b.1.values()).filter(|(x, y)| x.to_bits() != y.to_bits()).count()
        + a.2.values().zip(b.2.values()).filter(|(x, y)| x.to_bits() != y.to_bits()).count();
    obs(bad as f64, "bit differences, IPIX_KL with α_max = 0 vs BASELINE_LO, 4 steps")
}

// ---- harness ----

fn confusion_oracle(_: &Ctx) -> Observation {
    // 2-class 2×2 toy: truth [0,1;1,1], prediction [0,0;1,1]
    let truth = [0u8, 1, 1, 1];
    let pred = [0u8, 0, 1, 1];
    let mut m = ConfusionMatrix::new(2);
    m.accumulate(&truth, &pred);
    let r = m.metrics();
    let mut err = 0.0f64;
    for k in 0..2u8 {
        let tp = truth.iter().zip(&pred).filter(|(t, p)| **t == k && **p == k).count() as f64;
        let fp = truth.iter().zip(&pred).filter(|(t, p)| **t != k && **p == k).count() as f64;
        let fneg = truth.iter().zip(&pred).filter(|(t, p)| **t == k && **p != k).count() as f64;
        err = err.max((r.per_class_iou[k as usize].unwrap_or(f64::NAN) - tp / (tp + fp + fneg)).abs());
    }
    err = err.max((r.miou - (0.5 + 2.0 / 3.0) / 2.0).abs());
    obs(err, "max |IoU − TP/(TP+FP+FN)| on a 2-class 2×2 case")
}
