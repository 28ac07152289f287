use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ipixmatch::data::{generate_dataset, load_eval_dataset, save_dataset, split_labeled, Dataset};
use ipixmatch::harness::ablation::{load_variants, parse_seeds, run_ablation};
use ipixmatch::harness::{
    emit_reports, evaluate, load_checkpoint, run_training, verify, GenConfig, RunConfig, TrainOptions, VerifyConfig,
    VerifyOptions,
};
use ipixmatch::{Error, Result};

#[derive(Parser)]
#[command(name = "ipixmatch", version, about = "Semi-supervised segmentation with inter-pixel consistency")]
struct Cli {
    /// Worker threads for per-sample work (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Record elapsed seconds in the metrics log (breaks byte-identity).
        #[arg(long)]
        wall_clock: bool,
    },
    /// Evaluate a checkpoint's teacher on a dataset's full ground truth.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run every variant of an ablation file under every seed.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds and half-open ranges, e.g. `0..5` or `1,2,3`.
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the self-check suite and print a JSON report.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write curves and prediction images for a run or ablation directory.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn gen(config: &Path, out: &Path) -> Result<()> {
    let cfg = GenConfig::load(config)?;
    let samples = generate_dataset(&cfg.dataset)?;
    let mut dataset = Dataset::from_generated(&cfg.dataset, samples);
    dataset.manifest = split_labeled(&dataset.manifest, cfg.split_request(), cfg.split_seed)
        .map_err(|e| Error::Config(e.to_string()))?;
    save_dataset(out, &dataset)?;
    println!(
        "wrote {} samples ({} labeled) to {}",
        dataset.manifest.count,
        dataset.manifest.labeled_indices.len(),
        out.display()
    );
    Ok(())
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializes"));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { config, out } => gen(&config, &out),
        Command::Train { config, out, wall_clock } => {
            let cfg = RunConfig::load(&config)?;
            let outcome = run_training(&cfg, &out, TrainOptions { wall_clock, quiet: false })?;
            print_json(&outcome.final_metrics);
            Ok(())
        }
        Command::Eval { checkpoint, data } => {
            let ck = load_checkpoint(&checkpoint)?;
            let set = load_eval_dataset(&data)?;
            if set.manifest.classes != ck.meta.num_classes {
                return Err(Error::Config(format!(
                    "checkpoint has {} classes, dataset {}",
                    ck.meta.num_classes, set.manifest.classes
                )));
            }
            print_json(&evaluate(&ck.teacher, &set.samples)?);
            Ok(())
        }
        Command::Ablate { config, seeds, out } => {
            let variants = load_variants(&config)?;
            let seeds = parse_seeds(&seeds)?;
            let table = run_ablation(&variants, &seeds, &out, TrainOptions::default())?;
            print!("{}", table.to_markdown());
            if table.rows.iter().any(|r| r.failed) {
                return Err(Error::CheckFailed("at least one run failed".into()));
            }
            Ok(())
        }
        Command::Verify { config } => {
            let cfg = match config {
                Some(p) => VerifyConfig::load(&p)?,
                None => VerifyConfig::default(),
            };
            let report = verify(&cfg, VerifyOptions::default());
            print_json(&report);
            if report.passed {
                Ok(())
            } else {
                let names: Vec<_> = report.failures().map(|c| c.name.clone()).collect();
                Err(Error::CheckFailed(names.join(", ")))
            }
        }
        Command::Report { run, out } => {
            let summary = emit_reports(&run, &out)?;
            println!("wrote {} files, {} warnings", summary.files.len(), summary.warnings.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
