use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::RunConfig;
use super::train::{run_training, TrainOptions};

pub const BANNER: &str = "Synthetic shapes benchmark at desk scale: values come from a small \
convolutional network on generated scenes and are not comparable with natural-image results.";

/// One named configuration of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: RunConfig,
}

/// Parses an ablation file: a `[base]` run config plus `[[variant]]` tables,
/// each with a `name` and any run-config keys that override the base.
pub fn load_variants(path: &Path) -> Result<Vec<Variant>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut variants = parse_variants(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for v in &mut variants {
        v.config.resolve_paths(base);
    }
    Ok(variants)
}

pub fn parse_variants(text: &str) -> Result<Vec<Variant>> {
    let cfg_err = |m: String| Error::Config(m);
    let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| cfg_err(e.to_string()))?;
    let base = match doc.remove("base") {
        Some(toml::Value::Table(t)) => t,
        Some(_) => return Err(cfg_err("`base` must be a table".into())),
        None => return Err(cfg_err("missing [base] table".into())),
    };
    let list = match doc.remove("variant") {
        Some(toml::Value::Array(a)) => a,
        Some(_) => return Err(cfg_err("`variant` must be an array of tables".into())),
        None => return Err(cfg_err("at least one [[variant]] is required".into())),
    };
    if let Some(key) = doc.keys().next() {
        return Err(cfg_err(format!("unknown key `{key}`")));
    }
    let mut out = Vec::with_capacity(list.len());
    for item in list {
        let toml::Value::Table(mut t) = item else {
            return Err(cfg_err("`variant` entries must be tables".into()));
        };
        let name = match t.remove("name") {
            Some(toml::Value::String(s)) if !s.is_empty() => s,
            _ => return Err(cfg_err("every variant needs a non-empty `name`".into())),
        };
        let mut merged = base.clone();
        merged.extend(t);
        let config: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| cfg_err(format!("variant `{name}`: {e}")))?;
        config.validate().map_err(|e| cfg_err(format!("variant `{name}`: {e}")))?;
        out.push(Variant { name, config });
    }
    let mut names: Vec<&str> = out.iter().map(|v| v.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(cfg_err("variant names must be unique".into()));
    }
    Ok(out)
}

/// Parses `"1,2,3"`, `"0..5"` (half-open) or a mix of both.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("bad seed list `{text}`"));
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            if a >= b {
                return Err(bad());
            }
            seeds.extend(a..b);
        } else {
            seeds.push(part.parse().map_err(|_| bad())?);
        }
    }
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub seed: u64,
    /// Final teacher mIoU in `[0, 1]`; `None` when the run failed.
    pub miou: Option<f64>,
    /// mIoU points relative to the first row at the same seed.
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub run_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub name: String,
    pub method: String,
    pub cells: Vec<Cell>,
    pub failed: bool,
    /// Mean and population standard deviation, in mIoU points.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Mean difference from the first row, in mIoU points.
    pub delta_vs_first: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub banner: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<Row>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregates per-seed mIoU (fractions) into a table; `None` marks a failed
/// run, which marks its row failed.
pub fn build_table(names: &[(String, String)], seeds: &[u64], results: Vec<Vec<(Option<f64>, Option<String>, PathBuf)>>) -> AblationTable {
    let mut rows: Vec<Row> = names
        .iter()
        .zip(results)
        .map(|((name, method), cells)| {
            let cells: Vec<Cell> = seeds
                .iter()
                .zip(cells)
                .map(|(&seed, (miou, error, run_dir))| Cell {
                    seed,
                    miou,
                    delta: None,
                    error,
                    run_dir,
                })
                .collect();
            let failed = cells.iter().any(|c| c.miou.is_none());
            let (mean, std) = if failed {
                (None, None)
            } else {
                let pts: Vec<f64> = cells.iter().map(|c| c.miou.unwrap() * 100.0).collect();
                let (m, s) = mean_std(&pts);
                (Some(m), Some(s))
            };
            Row {
                name: name.clone(),
                method: method.clone(),
                cells,
                failed,
                mean,
                std,
                delta_vs_first: None,
            }
        })
        .collect();
    if let Some(first) = rows.first().cloned() {
        for row in &mut rows {
            row.delta_vs_first = row.mean.zip(first.mean).map(|(a, b)| a - b);
            for (cell, base) in row.cells.iter_mut().zip(&first.cells) {
                cell.delta = cell.miou.zip(base.miou).map(|(a, b)| (a - b) * 100.0);
            }
        }
    }
    AblationTable {
        banner: BANNER.into(),
        seeds: seeds.to_vec(),
        rows,
    }
}

fn signed(v: f64) -> String {
    format!("{v:+.2}")
}

impl AblationTable {
    /// Markdown table: one row per configuration, one column per seed (with
    /// the per-seed difference from the first row), then mean ± std and the
    /// difference of means.
    pub fn to_markdown(&self) -> String {
        let mut s = format!("> {}\n\n| config |", self.banner);
        for seed in &self.seeds {
            s += &format!(" seed {seed} |");
        }
        s += " mean ± std | Δ vs first |\n|---|";
        s += &"---:|".repeat(self.seeds.len() + 2);
        s += "\n";
        for (r, row) in self.rows.iter().enumerate() {
            s += &format!("| {} |", row.name);
            for cell in &row.cells {
                s += &match (cell.miou, cell.delta) {
                    (Some(v), Some(d)) if r > 0 => format!(" {:.2} ({}) |", v * 100.0, signed(d)),
                    (Some(v), _) => format!(" {:.2} |", v * 100.0),
                    (None, _) => " failed |".into(),
                };
            }
            match (row.mean, row.std) {
                (Some(m), Some(sd)) => s += &format!(" {m:.2} ± {sd:.2} |"),
                _ => s += " failed |",
            }
            s += &match row.delta_vs_first {
                Some(_) if r == 0 => " — |".to_string(),
                Some(d) => format!(" {} |", signed(d)),
                None => " — |".to_string(),
            };
            s += "\n";
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("config,method,seed,miou,delta_vs_first\n");
        for row in &self.rows {
            for c in &row.cells {
                s += &format!(
                    "{},{},{},{},{}\n",
                    row.name,
                    row.method,
                    c.seed,
                    c.miou.map(|v| format!("{v:.8e}")).unwrap_or_default(),
                    c.delta.map(|v| format!("{v:.8e}")).unwrap_or_default()
                );
            }
        }
        s
    }

    pub fn row(&self, name: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// Runs every variant under every seed (the seed replaces the variant's
/// own), writing each run to `out/<variant>/seed-<seed>` and the table to
/// `out/table.{md,csv,json}`. A failed run is recorded and the sweep goes on.
pub fn run_ablation(variants: &[Variant], seeds: &[u64], out_dir: &Path, opts: TrainOptions) -> Result<AblationTable> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one config and one seed".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut results = Vec::with_capacity(variants.len());
    for v in variants {
        let mut cells = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = RunConfig { seed, ..v.config.clone() };
            let dir = out_dir.join(&v.name).join(format!("seed-{seed}"));
            match run_training(&cfg, &dir, opts) {
                Ok(o) => cells.push((Some(o.final_metrics.teacher.miou), None, dir)),
                Err(e) => {
                    eprintln!("run {} seed {seed} failed: {e}", v.name);
                    cells.push((None, Some(e.to_string()), dir));
                }
            }
        }
        results.push(cells);
    }
    let names: Vec<(String, String)> = variants
        .iter()
        .map(|v| (v.name.clone(), v.config.method.name().to_string()))
        .collect();
    let table = build_table(&names, seeds, results);
    write_table(out_dir, &table)?;
    Ok(table)
}

pub fn write_table(out_dir: &Path, table: &AblationTable) -> Result<()> {
    let write = |name: &str, text: String| {
        let p = out_dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("table.md", table.to_markdown())?;
    write("table.csv", table.to_csv())?;
    write("table.json", serde_json::to_string_pretty(table).expect("serializes") + "\n")
}
