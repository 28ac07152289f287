//! End-to-end acceptance suite. Runs as a plain binary (no libtest harness)
//! so the per-criterion verdict lines always reach the console.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::*;
use ipixmatch::baseline::{fixmatch_unsup_loss, supervised_loss, warmup_alpha, WarmupSchedule};
use ipixmatch::data::{generate_dataset, DatasetSpec, SplitRequest};
use ipixmatch::harness::ablation::{run_ablation, AblationTable, Variant};
use ipixmatch::harness::{run_training, RunConfig, TrainOptions};
use ipixmatch::ipixloss::reference::interpixel_loss_reference;
use ipixmatch::ipixloss::{interpixel_loss, IPixConfig, Metric};
use ipixmatch::model::{backward, forward, init_params};
use ipixmatch::numerics::{kl_divergence_with_grad, pearson_distance, spatial_softmax, spatial_softmax_vjp, Tensor};
use ipixmatch::pseudo::{confidence_mask, LabelMap, IGNORE_LABEL};
use ipixmatch::teacher_student::{train_step, BatchItem, Method, StepConfig, TrainerState};
use rand::Rng;

const FD_TOL: f64 = 1e-6;
const INSTANCES: usize = 50;
const SEEDS: [u64; 5] = [12345, 12346, 12347, 12348, 12349];

struct Verdict {
    id: u8,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: u8, title: &'static str, pass: bool, detail: String) -> Verdict {
    let v = Verdict { id, title, pass, detail };
    println!(
        "criterion {} [{}] {} — {}",
        v.id,
        if v.pass { "PASS" } else { "FAIL" },
        v.title,
        v.detail
    );
    v
}

// ---------------------------------------------------------------- 1

fn gradients() -> Verdict {
    let start = Instant::now();
    let mut rng = rng(1);
    let mut worst: Vec<(&str, f64, usize)> = Vec::new();

    let mut w = 0.0f64;
    for _ in 0..INSTANCES {
        let n = rng.gen_range(2..=12);
        let t = rng.gen_range(0.5..6.0);
        let z = normals(&mut rng, n, 2.0);
        let g = normals(&mut rng, n, 1.0);
        let psi = spatial_softmax(&z, t).unwrap();
        let a = spatial_softmax_vjp(&psi, &g, t).unwrap();
        let nfd = central(|x| softmax(x, t).iter().zip(&g).map(|(p, gi)| p * gi).sum(), &z);
        w = w.max(max_rel(&a, &nfd));
    }
    worst.push(("spatial_softmax", w, INSTANCES));

    let mut w = 0.0f64;
    for _ in 0..INSTANCES {
        let n = rng.gen_range(2..=12);
        let t = rng.gen_range(0.5..6.0);
        let u = spatial_softmax(&normals(&mut rng, n, 1.5), 1.0).unwrap();
        let z = normals(&mut rng, n, 2.0);
        let (_, a) = kl_divergence_with_grad(&u, &spatial_softmax(&z, t).unwrap(), t).unwrap();
        let nfd = central(
            |x| {
                let v = softmax(x, t);
                u.probs().iter().zip(&v).map(|(p, q)| p * (p / q).ln()).sum()
            },
            &z,
        );
        w = w.max(max_rel(&a, &nfd));
    }
    worst.push(("kl_divergence", w, INSTANCES));

    let mut w = 0.0f64;
    for _ in 0..INSTANCES {
        let n = rng.gen_range(3..=12);
        let u = normals(&mut rng, n, 1.0);
        let v = normals(&mut rng, n, 1.0);
        let a = pearson_distance(&u, &v).unwrap().grad_v;
        let nfd = central(|x| pearson_oracle(&u, x), &v);
        w = w.max(max_rel(&a, &nfd));
    }
    worst.push(("pearson_distance", w, INSTANCES));

    for metric in [Metric::Kl, Metric::Correlation] {
        let cfg = IPixConfig { metric, ..Default::default() };
        let (mut w, mut done) = (0.0f64, 0);
        while done < INSTANCES {
            let (c, h, wd) = small_dims(&mut rng);
            let p = peaked_logits(&mut rng, c, h, wd);
            let q = random_logits(&mut rng, c, h, wd);
            let r = interpixel_loss(&p, &q, &cfg).unwrap();
            // two points always correlate perfectly: zero gradient, nothing to check
            let min_omega = if metric == Metric::Correlation { 3 } else { 2 };
            if r.skipped || r.degenerate_channels > 0 || r.omega_size < min_omega {
                continue;
            }
            let nfd = central(
                |x| interpixel_loss(&p, &Tensor::new(vec![c, h, wd], x.to_vec()).unwrap(), &cfg).unwrap().value,
                q.data(),
            );
            w = w.max(max_rel(r.grad_q.data(), &nfd));
            done += 1;
        }
        worst.push((if metric == Metric::Kl { "interpixel_loss KL" } else { "interpixel_loss CR" }, w, done));
    }

    let mut w = 0.0f64;
    for _ in 0..INSTANCES {
        let (c, h, wd) = small_dims(&mut rng);
        let labels = random_labels(&mut rng, c, h, wd);
        let z = random_logits(&mut rng, c, h, wd);
        let a = supervised_loss(&z, &labels, IGNORE_LABEL).unwrap().grad;
        let nfd = central(|x| supervised_oracle(x, c, &labels.labels), z.data());
        w = w.max(max_rel(a.data(), &nfd));
    }
    worst.push(("supervised_loss", w, INSTANCES));

    let mut w = 0.0f64;
    for _ in 0..INSTANCES {
        let (c, h, wd) = small_dims(&mut rng);
        let p = peaked_logits(&mut rng, c, h, wd);
        let q = random_logits(&mut rng, c, h, wd);
        let a = fixmatch_unsup_loss(&p, &q, 0.8).unwrap().ce.grad;
        let nfd = central(|x| fixmatch_oracle(p.data(), x, c, 0.8), q.data());
        w = w.max(max_rel(a.data(), &nfd));
    }
    worst.push(("fixmatch_unsup_loss", w, INSTANCES));

    let mut per_layer = [0.0f64; 4];
    for _ in 0..INSTANCES {
        let mut params = init_params(rng.gen(), 4, 2).unwrap();
        for l in &mut params.layers {
            l.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
        }
        let image = Tensor::new(vec![3, 5, 5], (0..75).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let g = normals(&mut rng, 50, 1.0);
        let gt = Tensor::new(vec![2, 5, 5], g.clone()).unwrap();
        let f = |p: &ipixmatch::model::ModelParams, img: &Tensor| -> f64 {
            forward(p, img).unwrap().0.data().iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = forward(&params, &image).unwrap();
        let (grads, gi) = backward(&params, &cache, &gt, true).unwrap();
        for li in 0..3 {
            let flat: Vec<f64> = params.layers[li].weight.iter().chain(&params.layers[li].bias).copied().collect();
            let nw = params.layers[li].weight.len();
            let nfd = central(
                |x| {
                    let mut p = params.clone();
                    p.layers[li].weight.copy_from_slice(&x[..nw]);
                    p.layers[li].bias.copy_from_slice(&x[nw..]);
                    f(&p, &image)
                },
                &flat,
            );
            let a: Vec<f64> = grads.layers[li].weight.iter().chain(&grads.layers[li].bias).copied().collect();
            per_layer[li] = per_layer[li].max(max_rel(&a, &nfd));
        }
        let nfd = central(|x| f(&params, &Tensor::new(vec![3, 5, 5], x.to_vec()).unwrap()), image.data());
        per_layer[3] = per_layer[3].max(max_rel(gi.unwrap().data(), &nfd));
    }
    for (i, name) in ["model layer 0", "model layer 1", "model layer 2", "model input"].into_iter().enumerate() {
        worst.push((name, per_layer[i], INSTANCES));
    }

    let secs = start.elapsed().as_secs_f64();
    let overall = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let min_n = worst.iter().map(|w| w.2).min().unwrap();
    let failing: Vec<_> = worst.iter().filter(|w| w.1 > FD_TOL).map(|w| format!("{} ({:.2e})", w.0, w.1)).collect();
    let pass = failing.is_empty() && secs <= 60.0 && min_n >= 50;
    verdict(
        1,
        "gradient correctness",
        pass,
        format!(
            "{} targets, ≥{min_n} instances each, max rel err {overall:.2e} (tol 1e-6), {secs:.1}s (limit 60s){}",
            worst.len(),
            if failing.is_empty() { String::new() } else { format!("; failing: {}", failing.join(", ")) }
        ),
    )
}

fn pearson_oracle(u: &[f64], v: &[f64]) -> f64 {
    let n = u.len() as f64;
    let (mu, mv) = (u.iter().sum::<f64>() / n, v.iter().sum::<f64>() / n);
    let (mut cov, mut su, mut sv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        cov += (a - mu) * (b - mv);
        su += (a - mu).powi(2);
        sv += (b - mv).powi(2);
    }
    1.0 - cov / (su.sqrt() * sv.sqrt())
}

fn random_labels(rng: &mut rand_chacha::ChaCha8Rng, c: usize, h: usize, w: usize) -> LabelMap {
    let mut l: Vec<u8> = (0..h * w)
        .map(|_| if rng.gen_bool(0.2) { IGNORE_LABEL } else { rng.gen_range(0..c) as u8 })
        .collect();
    l[0] = 0;
    LabelMap::new(h, w, l).unwrap()
}

/// Mean −log softmax at the labeled class over non-ignored pixels.
fn supervised_oracle(z: &[f64], c: usize, labels: &[u8]) -> f64 {
    let n = labels.len();
    let (mut sum, mut count) = (0.0, 0);
    for j in 0..n {
        if labels[j] == IGNORE_LABEL {
            continue;
        }
        let lse = (0..c).map(|k| z[k * n + j].exp()).sum::<f64>().ln();
        sum += lse - z[labels[j] as usize * n + j];
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn fixmatch_oracle(p: &[f64], q: &[f64], c: usize, tau: f64) -> f64 {
    let n = p.len() / c;
    let (mut sum, mut count) = (0.0, 0);
    for j in 0..n {
        let col: Vec<f64> = (0..c).map(|k| p[k * n + j]).collect();
        let probs = softmax(&col, 1.0);
        let mut arg = 0;
        for k in 1..c {
            if probs[k] > probs[arg] {
                arg = k;
            }
        }
        if probs[arg] <= tau {
            continue;
        }
        let lse = (0..c).map(|k| q[k * n + j].exp()).sum::<f64>().ln();
        sum += lse - q[arg * n + j];
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

// ---------------------------------------------------------------- 2

fn oracles() -> Verdict {
    let mut rng = rng(2);
    let mut ipix = 0.0f64;
    for metric in [Metric::Kl, Metric::Correlation] {
        let cfg = IPixConfig { metric, ..Default::default() };
        for _ in 0..100 {
            let (c, h, w) = small_dims(&mut rng);
            let p = peaked_logits(&mut rng, c, h, w);
            let q = random_logits(&mut rng, c, h, w);
            let a = interpixel_loss(&p, &q, &cfg).unwrap().value;
            let b = interpixel_loss_reference(&p, &q, &cfg).unwrap();
            let d = if a == b { 0.0 } else { (a - b).abs() / a.abs().max(b.abs()) };
            ipix = ipix.max(d);
        }
    }
    let mut ce = 0.0f64;
    for _ in 0..100 {
        let (c, h, w) = small_dims(&mut rng);
        let labels = random_labels(&mut rng, c, h, w);
        let z = random_logits(&mut rng, c, h, w);
        let a = supervised_loss(&z, &labels, IGNORE_LABEL).unwrap().value;
        ce = ce.max((a - supervised_oracle(z.data(), c, &labels.labels)).abs() / a.abs().max(1.0));
        let p = peaked_logits(&mut rng, c, h, w);
        let a = fixmatch_unsup_loss(&p, &z, 0.8).unwrap().ce.value;
        ce = ce.max((a - fixmatch_oracle(p.data(), z.data(), c, 0.8)).abs() / a.abs().max(1.0));
    }
    verdict(
        2,
        "oracle equivalence",
        ipix <= 1e-10 && ce <= 1e-12,
        format!("interpixel vs reference max rel {ipix:.2e} (tol 1e-10, 200 instances); cross-entropy vs loops max {ce:.2e} (tol 1e-12)"),
    )
}

// ---------------------------------------------------------------- 3

fn structure() -> Verdict {
    let mut rng = rng(3);
    let (mut ident, mut off, mut skip_bad) = (0.0f64, 0.0f64, 0);
    for i in 0..100 {
        let metric = if i % 2 == 0 { Metric::Kl } else { Metric::Correlation };
        let cfg = IPixConfig { metric, ..Default::default() };
        let (c, h, w) = small_dims(&mut rng);
        let p = peaked_logits(&mut rng, c, h, w);
        ident = ident.max(interpixel_loss(&p, &p, &cfg).unwrap().value.abs());
        let q = random_logits(&mut rng, c, h, w);
        let r = interpixel_loss(&p, &q, &cfg).unwrap();
        let n = h * w;
        for j in 0..n {
            let col: Vec<f64> = (0..c).map(|k| p.data()[k * n + j]).collect();
            if softmax(&col, 1.0).iter().cloned().fold(0.0, f64::max) <= cfg.tau {
                for k in 0..c {
                    off = off.max(r.grad_q.data()[k * n + j].abs());
                }
            }
        }
        // at most one confident pixel
        let mut flat = vec![0.0; c * n];
        if i % 3 != 0 {
            flat[rng.gen_range(0..n)] = 30.0;
        }
        let r = interpixel_loss(&Tensor::new(vec![c, h, w], flat).unwrap(), &q, &cfg).unwrap();
        if !(r.skipped && r.value == 0.0) {
            skip_bad += 1;
        }
    }
    let mut delta = 0.0f64;
    for n in [4usize, 9, 16, 25] {
        let mut p = vec![0.0; n];
        p[0] = 40.0;
        let v = interpixel_loss(
            &Tensor::new(vec![1, 1, n], p).unwrap(),
            &Tensor::zeros(vec![1, 1, n]),
            &IPixConfig::default(),
        )
        .unwrap()
        .value;
        delta = delta.max((v - 1.0).abs());
    }
    verdict(
        3,
        "inter-pixel structure",
        ident <= 1e-12 && off == 0.0 && skip_bad == 0 && delta <= 0.05,
        format!("max |L(p,p)| {ident:.1e}; max |grad| off Ω {off}; bad skips {skip_bad}; delta-vs-uniform max |L−1| {delta:.4} (tol 0.05, gap 40, t 4)"),
    )
}

// ---------------------------------------------------------------- 4

fn schedule_and_ema() -> Verdict {
    let mut formula = 0.0f64;
    let mut decreases = 0;
    let mut endpoint = true;
    for (iw, amax) in [(1u64, 1.0), (60, 1.0), (300, 0.5), (1000, 2.0)] {
        let s = WarmupSchedule::new(iw, amax).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for ic in 0..=iw {
            let a = warmup_alpha(ic, &s);
            let x = 1.0 - ic as f64 / iw as f64;
            formula = formula.max((a - amax * (-5.0 * x * x).exp()).abs());
            decreases += (a < prev) as usize;
            prev = a;
        }
        endpoint &= warmup_alpha(iw, &s) == amax;
    }

    // record a real 100-step student trajectory, replay the teacher recurrence
    let spec = DatasetSpec { height: 16, width: 16, count: 12, classes: 3, ..Default::default() };
    let data = generate_dataset(&spec).unwrap();
    let m = 0.99;
    let cfg = StepConfig {
        method: Method::IpixKl,
        lr: 0.05,
        momentum: 0.9,
        ema_momentum: m,
        tau: 0.6,
        temperature: 4.0,
        schedule: WarmupSchedule::new(20, 1.0).unwrap(),
        warmup_enabled: true,
        photometric: true,
    };
    let mut state = TrainerState::new(cfg, 12345, 3, 3).unwrap();
    let mut teacher: Vec<f64> = state.teacher.values().collect();
    let mut mismatches = 0;
    for step in 0..100usize {
        let lab: Vec<BatchItem> = (0..2).map(|i| BatchItem { index: (step + i) % 4, sample: &data[(step + i) % 4] }).collect();
        let unl: Vec<BatchItem> = (0..2).map(|i| BatchItem { index: 4 + (step + i) % 8, sample: &data[4 + (step + i) % 8] }).collect();
        train_step(&mut state, &lab, &unl).unwrap();
        for (t, s) in teacher.iter_mut().zip(state.student.values()) {
            *t = m * *t + (1.0 - m) * s;
        }
        mismatches += state.teacher.values().zip(&teacher).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
    }
    verdict(
        4,
        "warmup schedule and EMA",
        formula <= 1e-12 && decreases == 0 && endpoint && mismatches == 0,
        format!("max formula err {formula:.1e} (tol 1e-12); decreases {decreases}; α(i_w) = α_max: {endpoint}; EMA bit mismatches over 100 steps {mismatches}"),
    )
}

// ---------------------------------------------------------------- 5

fn masks() -> Verdict {
    let mut rng = rng(5);
    let (mut mono, mut extremes, mut shift) = (0, 0, 0);
    let taus = [0.0, 0.1, 0.3, 0.5, 0.7, 0.8, 0.9, 0.99, 1.0];
    for _ in 0..200 {
        let (c, h, w) = small_dims(&mut rng);
        let n = h * w;
        let p = peaked_logits(&mut rng, c, h, w);
        let sets: Vec<Vec<usize>> = taus.iter().map(|&t| confidence_mask(&p, t).unwrap().pixel_indices).collect();
        for pair in sets.windows(2) {
            mono += pair[1].iter().any(|j| !pair[0].contains(j)) as usize;
        }
        extremes += (sets[0].len() != n) as usize + (!sets[taus.len() - 1].is_empty()) as usize;
        let offs: Vec<f64> = (0..n).map(|_| rng.gen_range(-25..=25) as f64).collect();
        let mut d = p.data().to_vec();
        for k in 0..c {
            for j in 0..n {
                d[k * n + j] += offs[j];
            }
        }
        let shifted = Tensor::new(vec![c, h, w], d).unwrap();
        for &t in &taus[1..taus.len() - 1] {
            shift += (confidence_mask(&p, t).unwrap().pixel_indices != confidence_mask(&shifted, t).unwrap().pixel_indices) as usize;
        }
    }
    verdict(
        5,
        "confidence mask properties",
        mono + extremes + shift == 0,
        format!("200 instances: monotonicity violations {mono}, τ=0/τ=1 violations {extremes}, shift-invariance violations {shift}"),
    )
}

// ---------------------------------------------------------------- 6

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_default()
}

fn same_files(a: &Path, b: &Path, names: &[&str]) -> Vec<String> {
    names
        .iter()
        .filter(|n| {
            let (x, y) = (read(&a.join(n)), read(&b.join(n)));
            x.is_empty() || x != y
        })
        .map(|n| n.to_string())
        .collect()
}

fn determinism(root: &Path, dataset: &Path) -> Verdict {
    let cfg = RunConfig::reference(dataset, Method::IpixKl);
    let quiet = TrainOptions { wall_clock: false, quiet: true };
    let a = root.join("det-a");
    let b = root.join("det-b");
    let ra = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| run_training(&cfg, &a, quiet));
    let rb = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(|| run_training(&cfg, &b, quiet));
    if let Err(e) = ra.as_ref().and(rb.as_ref()) {
        return verdict(6, "determinism", false, format!("run failed: {e}"));
    }
    let diff = same_files(&a, &b, &["metrics.csv", "checkpoint.json", "checkpoint.bin", "final_metrics.json"]);
    verdict(
        6,
        "determinism",
        diff.is_empty(),
        format!(
            "reference config, seed {}, 1 vs 3 worker threads: {}",
            cfg.seed,
            if diff.is_empty() { "metrics log, checkpoint and final metrics byte-identical".into() } else { format!("differing: {}", diff.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------- 7

fn desk_experiment(root: &Path, dataset: &Path) -> Verdict {
    let variants: Vec<Variant> = [Method::BaselineLo, Method::IpixKl, Method::SupOnly]
        .into_iter()
        .map(|m| Variant { name: m.name().into(), config: RunConfig::reference(dataset, m) })
        .collect();
    let out = root.join("table1");
    let opts = TrainOptions { wall_clock: true, quiet: true };
    let table = match run_ablation(&variants, &SEEDS, &out, opts) {
        Ok(t) => t,
        Err(e) => return verdict(7, "desk-scale experiment", false, format!("ablation failed: {e}")),
    };
    println!("\n{}", table.to_markdown());
    let slowest = table
        .rows
        .iter()
        .flat_map(|r| &r.cells)
        .filter_map(|c| last_wall_seconds(&c.run_dir.join("metrics.csv")))
        .fold(0.0, f64::max);
    let mean = |name: &str| table.row(name).and_then(|r| r.mean);
    let (Some(base), Some(kl), Some(sup)) = (mean("BASELINE_LO"), mean("IPIX_KL"), mean("SUP_ONLY")) else {
        return verdict(7, "desk-scale experiment", false, "a row failed".into());
    };
    let ssl_gain = base - sup;
    let ipix_delta = kl - base;
    verdict(
        7,
        "desk-scale experiment",
        ssl_gain >= 5.0 && ipix_delta >= -0.5 && slowest <= 600.0,
        format!(
            "5 seeds × 40 epochs: BASELINE_LO {base:.2} − SUP_ONLY {sup:.2} = {ssl_gain:+.2} (need ≥ +5); IPIX_KL − BASELINE_LO = {ipix_delta:+.2} (need ≥ −0.5); slowest run {slowest:.0}s (limit 600s)"
        ),
    )
}

fn last_wall_seconds(metrics: &Path) -> Option<f64> {
    let text = fs::read_to_string(metrics).ok()?;
    text.lines().last()?.rsplit(',').next()?.parse().ok()
}

// ---------------------------------------------------------------- 8

fn equivalence(root: &Path, dataset: &Path) -> Verdict {
    let quiet = TrainOptions { wall_clock: false, quiet: true };
    let base = RunConfig { epochs: 3, ..RunConfig::reference(dataset, Method::BaselineLo) };
    let ipix = RunConfig { alpha_max: 0.0, method: Method::IpixKl, ..base.clone() };
    let (a, b) = (root.join("eq-baseline"), root.join("eq-ipix0"));
    if let Err(e) = run_training(&base, &a, quiet).and_then(|_| run_training(&ipix, &b, quiet)) {
        return verdict(8, "α_max = 0 equivalence", false, format!("run failed: {e}"));
    }
    let diff = same_files(&a, &b, &["metrics.csv", "checkpoint.bin"]);
    let rows = fs::read_to_string(a.join("metrics.csv")).unwrap_or_default().lines().count().saturating_sub(1);
    verdict(
        8,
        "α_max = 0 equivalence",
        diff.is_empty(),
        format!(
            "IPIX_KL(α_max=0) vs BASELINE_LO, seed 12345, {rows} steps: {}",
            if diff.is_empty() { "metrics log and weights byte-identical".into() } else { format!("differing: {}", diff.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------- 9

fn warmup_table(root: &Path, dataset: &Path) -> Verdict {
    let base = RunConfig { epochs: 10, ..RunConfig::reference(dataset, Method::IpixKl) };
    let variants = vec![
        Variant { name: "with warmup".into(), config: base.clone() },
        Variant { name: "without warmup".into(), config: RunConfig { warmup_enabled: false, ..base } },
    ];
    let seeds = &SEEDS[..3];
    let out = root.join("table2");
    let table = match run_ablation(&variants, seeds, &out, TrainOptions { wall_clock: false, quiet: true }) {
        Ok(t) => t,
        Err(e) => return verdict(9, "warmup ablation table", false, format!("ablation failed: {e}")),
    };
    println!("\n{}", table.to_markdown());
    let ok = structure_ok(&table, 2, seeds.len()) && out.join("table.md").exists() && out.join("table.csv").exists();
    verdict(
        9,
        "warmup ablation table",
        ok,
        format!(
            "2 rows × {} seeds, per-cell deltas and mean ± std present: {ok}; Δ(without − with) = {}",
            seeds.len(),
            table.rows[1].delta_vs_first.map(|d| format!("{d:+.2}")).unwrap_or("n/a".into())
        ),
    )
}

fn structure_ok(t: &AblationTable, rows: usize, seeds: usize) -> bool {
    t.rows.len() == rows
        && t.rows.iter().all(|r| !r.failed && r.cells.len() == seeds && r.mean.is_some() && r.std.is_some())
        && t.rows[1..].iter().all(|r| r.cells.iter().all(|c| c.delta.is_some()) && r.delta_vs_first.is_some())
        && t.to_markdown().lines().filter(|l| l.starts_with("| ")).count() == rows + 1
}

// ----------------------------------------------------------------

fn main() {
    let root: PathBuf = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = fs::remove_dir_all(&root);
    fs::create_dir_all(&root).unwrap();
    let dataset = root.join("reference-data");
    write_dataset(&dataset, &DatasetSpec::default(), SplitRequest::Fraction(1.0 / 16.0));
    println!("acceptance artifacts: {}", root.display());

    let started = Instant::now();
    let mut verdicts = vec![gradients(), oracles(), structure(), schedule_and_ema(), masks()];
    verdicts.push(equivalence(&root, &dataset));
    verdicts.push(warmup_table(&root, &dataset));
    verdicts.push(desk_experiment(&root, &dataset));
    verdicts.push(determinism(&root, &dataset));
    verdicts.sort_by_key(|v| v.id);

    println!("\nsummary ({:.0}s):", started.elapsed().as_secs_f64());
    for v in &verdicts {
        println!("  criterion {} {}: {}", v.id, v.title, if v.pass { "PASS" } else { "FAIL" });
    }
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all {} criteria passed", verdicts.len());
}
