use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::LossReport;
use crate::data::{load_dataset, load_eval_dataset, Dataset, Sample};
use crate::error::{Error, Result};
use crate::seeding::derive_seed;
use crate::teacher_student::{train_step, BatchItem, TrainerState};

use super::checkpoint::save_checkpoint;
use super::config::RunConfig;
use super::eval::{evaluate, Metrics};

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str =
    "iter,epoch,l_sup,l_unsup,l_ipix,alpha,omega_fraction,l_sum,miou_eval,wall_seconds";
pub const FINAL_METRICS_FILE: &str = "final_metrics.json";
pub const STATUS_FILE: &str = "status.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_STEM: &str = "checkpoint";

const STREAM_UNLABELED_ORDER: u64 = 0x0de1;
const STREAM_LABELED_ORDER: u64 = 0x0de2;

/// Runtime switches that do not affect results.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    /// Fill the `wall_seconds` column. Off by default so that logs of
    /// identical runs are byte-identical.
    pub wall_clock: bool,
    /// Suppress per-epoch progress lines on stderr.
    pub quiet: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    /// Metrics of the EMA teacher, the model that is reported.
    pub teacher: Metrics,
    pub student: Metrics,
    pub iteration: u64,
    pub epochs: usize,
    pub method: String,
    pub seed: u64,
    pub config_hash: String,
    pub eval_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub iteration: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub final_metrics: FinalMetrics,
    /// `(epoch, teacher mIoU)` at every evaluation point.
    pub evals: Vec<(usize, f64)>,
}

/// Labeled indices drawn cyclically, reshuffled at the start of every pass.
struct LabeledCycle {
    indices: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
    pass: u64,
    seed: u64,
}

impl LabeledCycle {
    fn new(indices: Vec<usize>, seed: u64) -> Self {
        LabeledCycle {
            order: Vec::new(),
            pos: 0,
            pass: 0,
            indices,
            seed,
        }
    }

    fn next(&mut self) -> Option<usize> {
        if self.indices.is_empty() {
            return None;
        }
        if self.pos == self.order.len() {
            self.order = self.indices.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.seed, self.pass, STREAM_LABELED_ORDER]));
            self.order.shuffle(&mut rng);
            self.pass += 1;
            self.pos = 0;
        }
        self.pos += 1;
        Some(self.order[self.pos - 1])
    }
}

/// Evaluation samples: the held-out set if configured, else the unlabeled part
/// of the training set with its retained ground truth.
pub fn load_eval_samples(config: &RunConfig) -> Result<Vec<Sample>> {
    match &config.eval_dataset {
        Some(dir) => Ok(load_eval_dataset(dir)?.samples),
        None => {
            let full = load_eval_dataset(&config.dataset)?;
            let unlabeled = full.manifest.unlabeled_indices();
            if unlabeled.is_empty() {
                return Ok(full.samples);
            }
            let mut samples: Vec<Option<Sample>> = full.samples.into_iter().map(Some).collect();
            Ok(unlabeled.iter().map(|&i| samples[i].take().expect("unique index")).collect())
        }
    }
}

/// Optimizer steps per epoch: one pass over the unlabeled set, or over the
/// labeled set when there is no unlabeled data.
pub fn steps_per_epoch(config: &RunConfig, dataset: &Dataset) -> usize {
    let u = dataset.manifest.count - dataset.manifest.labeled_indices.len();
    if u > 0 {
        u.div_ceil(config.batch_unlabeled)
    } else {
        dataset.manifest.labeled_indices.len().div_ceil(config.batch_labeled)
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.8e}")
}

fn metrics_row(iter: u64, epoch: usize, r: &LossReport, miou: Option<f64>, wall: Option<f64>) -> String {
    format!(
        "{iter},{epoch},{},{},{},{},{},{},{},{}\n",
        fmt(r.l_sup),
        fmt(r.l_unsup),
        fmt(r.l_ipix),
        fmt(r.alpha),
        fmt(r.omega_fraction),
        fmt(r.l_sum),
        miou.map(fmt).unwrap_or_default(),
        wall.map(fmt).unwrap_or_default(),
    )
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializes") + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains `config` into `out_dir`: `config.toml`, `metrics.csv`,
/// `checkpoint.{json,bin}` (rewritten after every epoch, so an aborted run
/// keeps its last good state), `final_metrics.json` and `status.json`.
pub fn run_training(config: &RunConfig, out_dir: &Path, opts: TrainOptions) -> Result<RunOutcome> {
    config.validate()?;
    let dataset = load_dataset(&config.dataset)?;
    let eval_samples = load_eval_samples(config)?;
    let m = &dataset.manifest;
    if let Some(s) = eval_samples.first() {
        if s.label.height != m.height || s.label.width != m.width {
            return Err(Error::Config("evaluation set dimensions differ from the training set".into()));
        }
    }
    let labeled = m.labeled_indices.clone();
    let unlabeled = m.unlabeled_indices();
    if labeled.is_empty() {
        return Err(Error::Config("dataset has no labeled samples".into()));
    }
    if config.method.uses_unlabeled() && unlabeled.is_empty() {
        return Err(Error::Config(format!("{} needs unlabeled samples", config.method)));
    }
    let steps = steps_per_epoch(config, &dataset);
    let step_cfg = config.step_config(steps)?;
    let hash = config.hash();
    let mut state = TrainerState::new(step_cfg, config.seed, config.hidden_channels, m.classes)?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    // results of an earlier run in the same directory would be misleading
    let stale = out_dir.join(FINAL_METRICS_FILE);
    if stale.exists() {
        fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
    }
    let config_path = out_dir.join(CONFIG_FILE);
    fs::write(&config_path, config.to_toml_string()).map_err(|e| Error::io(&config_path, e))?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let file = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut log = BufWriter::new(file);
    let io = |e| Error::io(&metrics_path, e);
    writeln!(log, "{METRICS_HEADER}").map_err(io)?;
    write_json(&out_dir.join(STATUS_FILE), &RunStatus {
        status: "running".into(),
        message: None,
        iteration: 0,
    })?;

    let started = Instant::now();
    let mut cycle = LabeledCycle::new(labeled, config.seed);
    let mut evals = Vec::new();
    let mut last_teacher = None;
    for epoch in 1..=config.epochs {
        let mut order = unlabeled.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, epoch as u64, STREAM_UNLABELED_ORDER]));
        order.shuffle(&mut rng);
        let is_eval = epoch == config.epochs || (config.eval_every > 0 && epoch % config.eval_every == 0);
        for step in 0..steps {
            let lab: Vec<BatchItem> = (0..config.batch_labeled)
                .map(|_| {
                    let index = cycle.next().expect("labeled set non-empty");
                    BatchItem { index, sample: &dataset.samples[index] }
                })
                .collect();
            let lo = (step * config.batch_unlabeled).min(order.len());
            let hi = ((step + 1) * config.batch_unlabeled).min(order.len());
            let unl: Vec<BatchItem> = order[lo..hi]
                .iter()
                .map(|&index| BatchItem { index, sample: &dataset.samples[index] })
                .collect();
            let out = match train_step(&mut state, &lab, &unl) {
                Ok(out) => out,
                Err(e) => {
                    log.flush().map_err(io)?;
                    write_json(&out_dir.join(STATUS_FILE), &RunStatus {
                        status: "aborted".into(),
                        message: Some(e.to_string()),
                        iteration: state.iteration,
                    })?;
                    return Err(e);
                }
            };
            let last = step + 1 == steps;
            let miou = if last && is_eval {
                let metrics = evaluate(&state.teacher, &eval_samples)?;
                evals.push((epoch, metrics.miou));
                let v = metrics.miou;
                last_teacher = Some(metrics);
                Some(v)
            } else {
                None
            };
            let wall = opts.wall_clock.then(|| started.elapsed().as_secs_f64());
            log.write_all(metrics_row(state.iteration, epoch, &out.report, miou, wall).as_bytes())
                .map_err(io)?;
        }
        log.flush().map_err(io)?;
        save_checkpoint(out_dir, CHECKPOINT_STEM, &state, epoch, &hash)?;
        if !opts.quiet {
            let tail = evals
                .last()
                .filter(|(e, _)| *e == epoch)
                .map(|(_, v)| format!(" miou {:.2}", v * 100.0))
                .unwrap_or_default();
            eprintln!("[{} seed {}] epoch {epoch}/{}{tail}", config.method, config.seed, config.epochs);
        }
    }

    let final_metrics = FinalMetrics {
        teacher: last_teacher.expect("last epoch always evaluates"),
        student: evaluate(&state.student, &eval_samples)?,
        iteration: state.iteration,
        epochs: config.epochs,
        method: config.method.name().into(),
        seed: config.seed,
        config_hash: hash,
        eval_samples: eval_samples.len(),
    };
    write_json(&out_dir.join(FINAL_METRICS_FILE), &final_metrics)?;
    write_json(&out_dir.join(STATUS_FILE), &RunStatus {
        status: "completed".into(),
        message: None,
        iteration: state.iteration,
    })?;
    Ok(RunOutcome {
        dir: out_dir.to_path_buf(),
        final_metrics,
        evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_use_nine_significant_digits() {
        let r = LossReport {
            l_sup: 1.0 / 3.0,
            l_unsup: 0.0,
            l_ipix: 2.5e-7,
            alpha: 1.0,
            l_sum: 12.0,
            omega_fraction: 0.5,
        };
        let row = metrics_row(3, 1, &r, None, None);
        assert_eq!(
            row,
            "3,1,3.33333333e-1,0.00000000e0,2.50000000e-7,1.00000000e0,5.00000000e-1,1.20000000e1,,\n"
        );
        assert_eq!(row.trim_end().split(',').count(), METRICS_HEADER.split(',').count());
    }

    #[test]
    fn labeled_cycle_visits_each_index_once_per_pass() {
        let mut c = LabeledCycle::new(vec![3, 5, 9, 11], 1);
        let mut first: Vec<usize> = (0..4).map(|_| c.next().unwrap()).collect();
        let mut second: Vec<usize> = (0..4).map(|_| c.next().unwrap()).collect();
        first.sort();
        second.sort();
        assert_eq!(first, vec![3, 5, 9, 11]);
        assert_eq!(second, first);
    }
}
