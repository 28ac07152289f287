use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{class_color, MAX_CLASSES};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::checkpoint::{checkpoint_paths, load_checkpoint};
use super::config::RunConfig;
use super::eval::predict;
use super::train::{load_eval_samples, RunStatus, CHECKPOINT_STEM, CONFIG_FILE, METRICS_FILE, METRICS_HEADER, STATUS_FILE};

/// Prediction dumps written per run.
pub const PREDICTION_SAMPLES: usize = 6;
const ZOOM: usize = 4;

/// One parsed metrics row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iter: u64,
    pub epoch: usize,
    pub l_sup: f64,
    pub l_unsup: f64,
    pub l_ipix: f64,
    pub alpha: f64,
    pub omega_fraction: f64,
    pub l_sum: f64,
    pub miou_eval: Option<f64>,
    pub wall_seconds: Option<f64>,
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let bad = |line: usize, reason: String| Error::Integrity {
        path: path.to_path_buf(),
        offset: line as u64,
        reason,
    };
    if lines.next() != Some(METRICS_HEADER) {
        return Err(bad(0, "unexpected header".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(bad(i + 1, format!("expected 10 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 1, format!("bad number `{s}`")));
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        rows.push(MetricsRow {
            iter: f[0].parse().map_err(|_| bad(i + 1, "bad iter".into()))?,
            epoch: f[1].parse().map_err(|_| bad(i + 1, "bad epoch".into()))?,
            l_sup: num(f[2])?,
            l_unsup: num(f[3])?,
            l_ipix: num(f[4])?,
            alpha: num(f[5])?,
            omega_fraction: num(f[6])?,
            l_sum: num(f[7])?,
            miou_eval: opt(f[8])?,
            wall_seconds: opt(f[9])?,
        });
    }
    Ok(rows)
}

/// Fixed class palette (RGB bytes); class 0 is the background gray.
pub fn palette(classes: usize) -> Vec<[u8; 3]> {
    (0..classes.min(MAX_CLASSES))
        .map(|k| class_color(k).map(|v| (v * 255.0).round() as u8))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

impl ReportSummary {
    fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        eprintln!("warning: {msg}");
        self.warnings.push(msg);
    }
}

struct Series<'a> {
    label: &'a str,
    color: &'a str,
    points: Vec<(f64, f64)>,
}

/// Line chart with linear axes; empty series are skipped.
fn line_chart(title: &str, x_label: &str, panels: &[(&str, Vec<Series>)]) -> String {
    let (w, panel_h, left, top, gap) = (720.0, 260.0, 70.0, 40.0, 60.0);
    let height = top + panels.len() as f64 * (panel_h + gap);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{height}" font-family="sans-serif" font-size="12">"##
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="white"/>"##);
    let _ = writeln!(s, r##"<text x="{}" y="22" font-size="15" text-anchor="middle">{title}</text>"##, w / 2.0);
    for (pi, (y_label, series)) in panels.iter().enumerate() {
        let y0 = top + pi as f64 * (panel_h + gap);
        let pw = w - left - 150.0;
        let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
        if all.is_empty() {
            continue;
        }
        let (mut xmin, mut xmax) = all.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.0), b.max(p.0)));
        let (mut ymin, mut ymax) = all.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.1), b.max(p.1)));
        ymin = ymin.min(0.0);
        if xmax <= xmin {
            xmin -= 0.5;
            xmax += 0.5;
        }
        if ymax <= ymin {
            ymax = ymin + 1.0;
        }
        let sx = |x: f64| left + (x - xmin) / (xmax - xmin) * pw;
        let sy = |y: f64| y0 + panel_h - (y - ymin) / (ymax - ymin) * panel_h;
        let _ = writeln!(
            s,
            r##"<rect x="{left}" y="{y0}" width="{pw}" height="{panel_h}" fill="none" stroke="#888"/>"##
        );
        for i in 0..=4 {
            let v = ymin + (ymax - ymin) * i as f64 / 4.0;
            let _ = writeln!(
                s,
                r##"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"##,
                left - 6.0,
                sy(v) + 4.0,
                tick(v)
            );
            let v = xmin + (xmax - xmin) * i as f64 / 4.0;
            let _ = writeln!(
                s,
                r##"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"##,
                sx(v),
                y0 + panel_h + 16.0,
                tick(v)
            );
        }
        let _ = writeln!(
            s,
            r##"<text x="{:.1}" y="{}" text-anchor="middle">{x_label}</text>"##,
            left + pw / 2.0,
            y0 + panel_h + 34.0
        );
        let _ = writeln!(
            s,
            r##"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">{y_label}</text>"##,
            y0 + panel_h / 2.0,
            y0 + panel_h / 2.0
        );
        for (k, ser) in series.iter().filter(|s| !s.points.is_empty()).enumerate() {
            let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(
                s,
                r##"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"##,
                ser.color,
                pts.join(" ")
            );
            if ser.points.len() <= 60 {
                for &(x, y) in &ser.points {
                    let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"##, sx(x), sy(y), ser.color);
                }
            }
            let ly = y0 + 14.0 + 18.0 * k as f64;
            let lx = left + pw + 14.0;
            let _ = writeln!(
                s,
                r##"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="3"/><text x="{}" y="{}">{}</text>"##,
                lx + 20.0,
                ser.color,
                lx + 26.0,
                ly + 4.0,
                ser.label
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v == 0.0 || (1e-2..1e4).contains(&v.abs()) {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}

pub fn loss_curve_svg(rows: &[MetricsRow]) -> String {
    let pts = |f: fn(&MetricsRow) -> f64| rows.iter().map(|r| (r.iter as f64, f(r))).collect::<Vec<_>>();
    line_chart(
        "Training losses",
        "iteration",
        &[
            (
                "loss",
                vec![
                    Series { label: "l_sum", color: "#1f77b4", points: pts(|r| r.l_sum) },
                    Series { label: "l_ipix", color: "#d62728", points: pts(|r| r.l_ipix) },
                ],
            ),
            ("α", vec![Series { label: "alpha", color: "#2ca02c", points: pts(|r| r.alpha) }]),
        ],
    )
}

/// `None` when the run has no evaluation points.
pub fn miou_curve_svg(rows: &[MetricsRow]) -> Option<String> {
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.miou_eval.map(|m| (r.epoch as f64, m * 100.0)))
        .collect();
    if points.is_empty() {
        return None;
    }
    Some(line_chart(
        "Evaluation mIoU (EMA teacher)",
        "epoch",
        &[("mIoU (%)", vec![Series { label: "mIoU", color: "#9467bd", points }])],
    ))
}

/// Binary PPM (`P6`).
pub fn ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// Input image, ground truth and prediction side by side, each zoomed
/// with nearest-neighbor replication and separated by a white stripe.
pub fn prediction_panel(image: &Tensor, truth: &[u8], pred: &[u8], pal: &[[u8; 3]]) -> (usize, usize, Vec<u8>) {
    let (_, h, w) = image.dims3().expect("image is C×H×W");
    let n = h * w;
    let sep = 2;
    let pw = w * ZOOM;
    let total_w = 3 * pw + 2 * sep;
    let total_h = h * ZOOM;
    let mut rgb = vec![255u8; total_w * total_h * 3];
    let img = image.data();
    let label_rgb = |l: u8| pal.get(l as usize).copied().unwrap_or([0, 0, 0]);
    for y in 0..total_h {
        for x in 0..w * ZOOM {
            let j = (y / ZOOM) * w + x / ZOOM;
            let px = [
                [0, 1, 2].map(|c| (img[c * n + j].clamp(0.0, 1.0) * 255.0).round() as u8),
                label_rgb(truth[j]),
                label_rgb(pred[j]),
            ];
            for (panel, color) in px.iter().enumerate() {
                let at = (y * total_w + panel * (pw + sep) + x) * 3;
                rgb[at..at + 3].copy_from_slice(color);
            }
        }
    }
    (total_w, total_h, rgb)
}

fn write(summary: &mut ReportSummary, path: PathBuf, bytes: &[u8]) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    summary.files.push(path);
    Ok(())
}

/// Writes `loss_curve.svg`, `miou_curve.svg`, `palette.ppm`/`palette.json`
/// and `pred_XX.ppm` (input | truth | prediction) for a run directory, or
/// recurses over the runs of an ablation directory. Missing pieces produce
/// warnings; whatever exists is still emitted.
pub fn emit_reports(run_dir: &Path, out_dir: &Path) -> Result<ReportSummary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut summary = ReportSummary::default();
    if run_dir.join("table.md").exists() && !run_dir.join(METRICS_FILE).exists() {
        emit_ablation(run_dir, out_dir, &mut summary)?;
    } else {
        emit_run(run_dir, out_dir, &mut summary)?;
    }
    Ok(summary)
}

fn emit_ablation(dir: &Path, out: &Path, summary: &mut ReportSummary) -> Result<()> {
    let table = fs::read(dir.join("table.md")).map_err(|e| Error::io(dir.join("table.md"), e))?;
    write(summary, out.join("table.md"), &table)?;
    let mut runs = Vec::new();
    for variant in sorted_dirs(dir)? {
        for run in sorted_dirs(&variant)? {
            runs.push(run);
        }
    }
    for run in runs {
        let rel = run.strip_prefix(dir).expect("child of dir").to_path_buf();
        let target = out.join(&rel);
        fs::create_dir_all(&target).map_err(|e| Error::io(&target, e))?;
        let mut sub = ReportSummary::default();
        emit_run(&run, &target, &mut sub)?;
        summary.files.extend(sub.files);
        summary
            .warnings
            .extend(sub.warnings.into_iter().map(|w| format!("{}: {w}", rel.display())));
    }
    Ok(())
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

fn emit_run(run_dir: &Path, out: &Path, summary: &mut ReportSummary) -> Result<()> {
    match fs::read_to_string(run_dir.join(STATUS_FILE)).ok().and_then(|t| serde_json::from_str::<RunStatus>(&t).ok()) {
        Some(s) if s.status == "completed" => {}
        Some(s) => summary.warn(format!("incomplete run (status `{}`); partial report", s.status)),
        None => summary.warn("no run status found; partial report"),
    }

    let metrics_path = run_dir.join(METRICS_FILE);
    let rows = if metrics_path.exists() {
        read_metrics(&metrics_path)?
    } else {
        summary.warn("no metrics log; curves skipped");
        Vec::new()
    };
    if !rows.is_empty() {
        write(summary, out.join("loss_curve.svg"), loss_curve_svg(&rows).as_bytes())?;
    } else if metrics_path.exists() {
        summary.warn("metrics log has no rows; loss curve skipped");
    }
    match miou_curve_svg(&rows) {
        Some(svg) => write(summary, out.join("miou_curve.svg"), svg.as_bytes())?,
        None => summary.warn("no evaluation points; mIoU curve skipped"),
    }

    let (meta_path, _) = checkpoint_paths(run_dir, CHECKPOINT_STEM);
    let config_path = run_dir.join(CONFIG_FILE);
    if !meta_path.exists() || !config_path.exists() {
        summary.warn("no checkpoint or config; prediction dumps skipped");
        return Ok(());
    }
    let config = RunConfig::load(&config_path)?;
    let ck = load_checkpoint(&meta_path)?;
    let pal = palette(ck.meta.num_classes);
    write_palette(out, &pal, summary)?;
    let samples = match load_eval_samples(&config) {
        Ok(s) => s,
        Err(e) => {
            summary.warn(format!("evaluation data unavailable ({e}); prediction dumps skipped"));
            return Ok(());
        }
    };
    let picked: Vec<_> = samples.into_iter().take(PREDICTION_SAMPLES).collect();
    let preds = predict(&ck.teacher, &picked)?;
    for (i, (s, p)) in picked.iter().zip(&preds).enumerate() {
        let (w, h, rgb) = prediction_panel(&s.image, &s.label.labels, p, &pal);
        write(summary, out.join(format!("pred_{i:02}.ppm")), &ppm(w, h, &rgb))?;
    }
    Ok(())
}

fn write_palette(out: &Path, pal: &[[u8; 3]], summary: &mut ReportSummary) -> Result<()> {
    let sw = 16;
    let mut rgb = Vec::with_capacity(pal.len() * sw * sw * 3);
    for _ in 0..sw {
        for color in pal {
            for _ in 0..sw {
                rgb.extend_from_slice(color);
            }
        }
    }
    write(summary, out.join("palette.ppm"), &ppm(pal.len() * sw, sw, &rgb))?;
    let json = serde_json::to_string_pretty(pal).expect("serializes") + "\n";
    write(summary, out.join("palette.json"), json.as_bytes())
}
