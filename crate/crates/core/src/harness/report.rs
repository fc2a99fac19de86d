//! Result files, aggregate CSV and SVG figures.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::experiment::{AblationTable, CellSummary, ExperimentResult, GridReport};
use crate::error::{Error, Result};

/// Writes `value` as pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_result(path: &Path) -> Result<ExperimentResult> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// File name of a run's result JSON.
pub fn result_file_name(result: &ExperimentResult) -> String {
    let label: String = result
        .augmentation
        .label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{label}_seed{}.json", result.seed)
}

/// One row per run: label, seed, held-out accuracy, then the final
/// accuracy of every domain seen in any run.
pub fn write_aggregate_csv(path: &Path, results: &[ExperimentResult]) -> Result<()> {
    let domains: Vec<String> = results
        .iter()
        .flat_map(|r| r.final_accuracy.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut header = vec![
        "label".to_string(),
        "seed".into(),
        "held_out_accuracy".into(),
    ];
    header.extend(domains.iter().map(|d| format!("final_{d}")));
    let csv_err = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for r in results {
        let mut row = vec![
            r.augmentation.label.clone(),
            r.seed.to_string(),
            r.held_out_accuracy.to_string(),
        ];
        row.extend(domains.iter().map(|d| {
            r.final_accuracy
                .get(d)
                .map(|a| a.to_string())
                .unwrap_or_default()
        }));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mean and standard deviation of held-out accuracy per label, in first
/// appearance order.
pub fn summarize_by_label(results: &[ExperimentResult]) -> Vec<CellSummary> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&ExperimentResult>> = BTreeMap::new();
    for r in results {
        let label = &r.augmentation.label;
        if !groups.contains_key(label) {
            order.push(label.clone());
        }
        groups.entry(label.clone()).or_default().push(r);
    }
    order
        .iter()
        .map(|l| CellSummary::from_runs(l, None, None, &groups[l]))
        .collect()
}

pub fn write_ablation_csv(path: &Path, table: &AblationTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let csv_err = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(&table.columns).map_err(csv_err)?;
    for (name, values) in &table.rows {
        let mut row = vec![name.clone()];
        row.extend(values.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

struct Frame {
    svg: String,
    x0: f64,
    x1: f64,
}

impl Frame {
    fn new(title: &str, xlabel: &str, x0: f64, x1: f64) -> Self {
        let x1 = if x1 > x0 { x1 } else { x0 + 1.0 };
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
            W / 2.0,
            escape(title)
        );
        let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
        let _ = writeln!(
            svg,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        let mut f = Frame { svg, x0, x1 };
        for i in 0..=5 {
            let a = i as f64 / 5.0;
            let y = f.y(a);
            let _ = writeln!(
                f.svg,
                r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{a:.1}</text>"##,
                LEFT + pw,
                LEFT - 6.0,
                y + 4.0
            );
        }
        for i in 0..=4 {
            let v = x0 + (x1 - x0) * i as f64 / 4.0;
            let x = f.x(v);
            let _ = writeln!(
                f.svg,
                r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                TOP + ph + 16.0,
                fmt_tick(v)
            );
        }
        let _ = writeln!(
            f.svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            H - 10.0,
            escape(xlabel)
        );
        let _ = writeln!(
            f.svg,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">held-out accuracy</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0
        );
        f
    }

    fn x(&self, v: f64) -> f64 {
        LEFT + (v - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn y(&self, acc: f64) -> f64 {
        TOP + (1.0 - acc.clamp(0.0, 1.0)) * (H - TOP - BOTTOM)
    }

    fn legend(&mut self, i: usize, label: &str, color: &str, dashed: bool) {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = W - RIGHT + 10.0;
        let dash = if dashed {
            r#" stroke-dasharray="5,3""#
        } else {
            ""
        };
        let _ = writeln!(
            self.svg,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
            x + 20.0,
            x + 26.0,
            y + 4.0,
            escape(label)
        );
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

fn fmt_tick(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Held-out accuracy against iteration, one line per label (mean over its
/// runs).
pub fn curves_svg(title: &str, results: &[ExperimentResult]) -> String {
    let max_it = results
        .iter()
        .flat_map(|r| r.curve.iter().map(|c| c.iteration))
        .max()
        .unwrap_or(1) as f64;
    let mut f = Frame::new(title, "iteration", 0.0, max_it);
    let mut labels: Vec<&str> = Vec::new();
    for r in results {
        if !labels.contains(&r.augmentation.label.as_str()) {
            labels.push(&r.augmentation.label);
        }
    }
    for (i, label) in labels.iter().enumerate() {
        let runs: Vec<&ExperimentResult> = results
            .iter()
            .filter(|r| r.augmentation.label == *label)
            .collect();
        let n = runs.iter().map(|r| r.curve.len()).min().unwrap_or(0);
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = (0..n)
            .map(|k| {
                let acc = runs.iter().map(|r| r.curve[k].accuracy).sum::<f64>() / runs.len() as f64;
                format!(
                    "{:.1},{:.1}",
                    f.x(runs[0].curve[k].iteration as f64),
                    f.y(acc)
                )
            })
            .collect();
        let _ = writeln!(
            f.svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            points.join(" ")
        );
        f.legend(i, label, color, false);
    }
    f.finish()
}

/// Grid-search figure: held-out accuracy against the swept value with one
/// standard deviation error bars, one series per value of the other
/// parameter, and the unaugmented baseline as a dashed line.
pub fn grid_svg(title: &str, report: &GridReport, sweep_alpha: bool) -> String {
    let key = |c: &CellSummary| if sweep_alpha { c.alpha } else { c.probability }.unwrap_or(0.0);
    let series_key =
        |c: &CellSummary| if sweep_alpha { c.probability } else { c.alpha }.unwrap_or(0.0);
    let xs: Vec<f64> = report.cells.iter().map(key).collect();
    let (x0, x1) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    let (x0, x1) = if x0.is_finite() { (x0, x1) } else { (0.0, 1.0) };
    let xlabel = if sweep_alpha {
        "style transfer strength alpha"
    } else {
        "augmentation probability p"
    };
    let mut f = Frame::new(title, xlabel, x0, x1);
    let mut series: Vec<f64> = Vec::new();
    for c in &report.cells {
        let s = series_key(c);
        if !series.iter().any(|v| (v - s).abs() < 1e-12) {
            series.push(s);
        }
    }
    let mut legend = 0;
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut cells: Vec<&CellSummary> = report
            .cells
            .iter()
            .filter(|c| (series_key(c) - s).abs() < 1e-12)
            .collect();
        cells.sort_by(|a, b| key(a).total_cmp(&key(b)));
        let points: Vec<String> = cells
            .iter()
            .map(|c| format!("{:.1},{:.1}", f.x(key(c)), f.y(c.mean)))
            .collect();
        let _ = writeln!(
            f.svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            points.join(" ")
        );
        for c in &cells {
            let x = f.x(key(c));
            let _ = writeln!(
                f.svg,
                r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="{color}"/><circle cx="{x:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                f.y(c.mean - c.std),
                f.y(c.mean + c.std),
                f.y(c.mean)
            );
        }
        let name = if sweep_alpha {
            format!("p = {s}")
        } else {
            format!("alpha = {s}")
        };
        f.legend(legend, &name, color, false);
        legend += 1;
    }
    if let Some(b) = &report.baseline {
        let y = f.y(b.mean);
        let _ = writeln!(
            f.svg,
            r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#555" stroke-width="2" stroke-dasharray="5,3"/>"##,
            W - RIGHT
        );
        f.legend(legend, "no augmentation", "#555", true);
    }
    f.finish()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Markdown rendering of an ablation table.
pub fn ablation_markdown(table: &AblationTable) -> String {
    let mut s = format!("| {} |\n", table.columns.join(" | "));
    s.push_str(&format!("|{}\n", " --- |".repeat(table.columns.len())));
    for (name, values) in &table.rows {
        let cells: Vec<String> = values
            .iter()
            .map(|v| format!("{:.1}%", 100.0 * v))
            .collect();
        s.push_str(&format!("| {name} | {} |\n", cells.join(" | ")));
    }
    s
}

/// `mean ± std` text summary of runs grouped by label.
pub fn summary_text(results: &[ExperimentResult]) -> String {
    let mut s = String::new();
    for c in summarize_by_label(results) {
        let _ = writeln!(
            s,
            "{:<24} {:.4} +/- {:.4} (n={})",
            c.label,
            c.mean,
            c.std,
            c.accuracies.len()
        );
    }
    s
}
