//! Tables and scatter plots.
//!
//! A report bundle directory holds `report.json`, `table.md`, `table.csv`,
//! `scatter.csv` and one `scatter_<predictor>.svg` per predictor.

use std::fmt::Write as _;
use std::path::Path;

use crate::runner::{ComparisonTable, ExperimentReport};
use crate::util::write_atomic;
use crate::{Error, Result};

/// `"27.4 (5.4)"`, or `"27.4 (—)"` when the std is undefined.
pub fn format_cell(mean: f64, std: Option<f64>) -> String {
    match std {
        Some(s) => format!("{mean:.1} ({s:.1})"),
        None => format!("{mean:.1} (—)"),
    }
}

fn md_escape(s: &str) -> String {
    s.replace('|', "\\|")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Markdown grid (predictors × conditions) and a full-precision CSV.
pub fn render_table(table: &ComparisonTable) -> (String, String) {
    let mut md = String::new();
    md.push_str("| Predictor |");
    for c in &table.conditions {
        let _ = write!(md, " {} |", md_escape(c));
    }
    md.push_str("\n|---|");
    for _ in &table.conditions {
        md.push_str("---|");
    }
    md.push('\n');
    for p in &table.predictors {
        let _ = write!(md, "| {} |", md_escape(p));
        for c in &table.conditions {
            let cell = table
                .cell(p, c)
                .map(|cell| format_cell(cell.mean_rmse, cell.std_rmse))
                .unwrap_or_default();
            let _ = write!(md, " {cell} |");
        }
        md.push('\n');
    }

    let mut csv = String::from("predictor,condition,mean_rmse,std_rmse,n_splits\n");
    for p in &table.predictors {
        for c in &table.conditions {
            if let Some(cell) = table.cell(p, c) {
                let std = cell.std_rmse.map(|s| s.to_string()).unwrap_or_default();
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{}",
                    csv_field(p),
                    csv_field(c),
                    cell.mean_rmse,
                    std,
                    cell.n_splits
                );
            }
        }
    }
    (md, csv)
}

pub fn render_report_table(report: &ExperimentReport) -> (String, String) {
    render_table(&ComparisonTable::from_reports([report]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterPoint {
    pub truth: f64,
    pub predicted: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterSpec {
    pub title: String,
    pub points: Vec<ScatterPoint>,
    /// Shared range of both axes.
    pub range: (f64, f64),
    pub identity_line: bool,
}

/// Smallest "nice" number (1, 2 or 5 × 10^k) that is ≥ `x`.
fn nice_ceil(x: f64) -> f64 {
    if x <= 0.0 || !x.is_finite() {
        return 1.0;
    }
    let mag = 10f64.powf(x.log10().floor());
    for m in [1.0, 2.0, 5.0, 10.0] {
        if m * mag >= x {
            return m * mag;
        }
    }
    10.0 * mag
}

impl ScatterSpec {
    /// Points of one predictor across every split of the report.
    pub fn from_report(report: &ExperimentReport, predictor: &str) -> Self {
        let points: Vec<ScatterPoint> = report
            .splits
            .iter()
            .filter(|s| s.predictor == predictor)
            .flat_map(|s| {
                s.predictions.iter().map(move |p| ScatterPoint {
                    truth: p.truth,
                    predicted: p.predicted,
                    seed: s.seed,
                })
            })
            .collect();
        let range = match report.metric.upper_bound() {
            Some(hi) => (0.0, hi),
            None => {
                let max = points
                    .iter()
                    .flat_map(|p| [p.truth, p.predicted])
                    .fold(0.0, f64::max);
                (0.0, nice_ceil(max))
            }
        };
        ScatterSpec {
            title: format!("{} — {predictor} ({})", report.condition.label, report.metric),
            points,
            range,
            identity_line: true,
        }
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const SIZE: f64 = 480.0;
const MARGIN: f64 = 56.0;
const TICKS: usize = 5;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn tick_label(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    }
}

/// Self-contained SVG: axes with ticks, the identity diagonal and one circle
/// (`class="point"`) per point, coloured by split seed.
pub fn render_scatter(spec: &ScatterSpec) -> Result<String> {
    if spec.points.is_empty() {
        return Err(Error::Empty("scatter spec"));
    }
    let (lo, hi) = spec.range;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let plot = SIZE - 2.0 * MARGIN;
    let sx = |v: f64| MARGIN + (v.clamp(lo, lo + span) - lo) / span * plot;
    let sy = |v: f64| SIZE - MARGIN - (v.clamp(lo, lo + span) - lo) / span * plot;
    let mut seeds: Vec<u64> = spec.points.iter().map(|p| p.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        SIZE / 2.0,
        xml_escape(&spec.title)
    );
    let _ = writeln!(svg, r#"<g class="axes" stroke="black" stroke-width="1">"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{m:.2}" y1="{b:.2}" x2="{r:.2}" y2="{b:.2}"/>"#,
        m = MARGIN,
        b = SIZE - MARGIN,
        r = SIZE - MARGIN
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{m:.2}" y1="{b:.2}" x2="{m:.2}" y2="{t:.2}"/>"#,
        m = MARGIN,
        b = SIZE - MARGIN,
        t = MARGIN
    );
    for i in 0..=TICKS {
        let v = lo + span * i as f64 / TICKS as f64;
        let (x, y) = (sx(v), sy(v));
        let _ = writeln!(
            svg,
            r#"<line class="tick" x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}"/>"#,
            SIZE - MARGIN,
            SIZE - MARGIN + 5.0
        );
        let _ = writeln!(
            svg,
            r#"<line class="tick" x1="{:.2}" y1="{y:.2}" x2="{MARGIN:.2}" y2="{y:.2}"/>"#,
            MARGIN - 5.0
        );
    }
    svg.push_str("</g>\n<g class=\"tick-labels\">\n");
    for i in 0..=TICKS {
        let v = lo + span * i as f64 / TICKS as f64;
        let label = tick_label(v);
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
            sx(v),
            SIZE - MARGIN + 18.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#,
            MARGIN - 8.0,
            sy(v) + 4.0
        );
    }
    svg.push_str("</g>\n");
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">true</text>"#,
        SIZE / 2.0,
        SIZE - 14.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">predicted</text>"#,
        SIZE / 2.0,
        SIZE / 2.0
    );
    if spec.identity_line {
        let _ = writeln!(
            svg,
            r#"<line class="identity" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 3"/>"#,
            sx(lo),
            sy(lo),
            sx(lo + span),
            sy(lo + span)
        );
    }
    svg.push_str("<g class=\"points\" fill-opacity=\"0.7\">\n");
    for p in &spec.points {
        let color = PALETTE[seeds.binary_search(&p.seed).unwrap_or(0) % PALETTE.len()];
        let _ = writeln!(
            svg,
            r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
            sx(p.truth),
            sy(p.predicted)
        );
    }
    svg.push_str("</g>\n</svg>\n");
    Ok(svg)
}

/// `predictor,task_id,true,predicted,seed` for every test prediction.
pub fn render_scatter_csv(report: &ExperimentReport) -> String {
    let mut csv = String::from("predictor,task_id,true,predicted,seed\n");
    for s in &report.splits {
        for p in &s.predictions {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                csv_field(&s.predictor),
                csv_field(&p.task_id),
                p.truth,
                p.predicted,
                s.seed
            );
        }
    }
    csv
}

pub fn scatter_file_name(predictor: &str) -> String {
    let safe: String = predictor
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("scatter_{safe}.svg")
}

/// Writes the full bundle for one report. Everything is rendered before the
/// first file is written.
pub fn write_bundle(dir: &Path, report: &ExperimentReport) -> Result<()> {
    let json = report.to_json()?;
    let (md, csv) = render_report_table(report);
    let scatter_csv = render_scatter_csv(report);
    let svgs = report
        .summaries
        .iter()
        .map(|s| {
            let spec = ScatterSpec::from_report(report, &s.predictor);
            Ok((scatter_file_name(&s.predictor), render_scatter(&spec)?))
        })
        .collect::<Result<Vec<_>>>()?;
    write_atomic(&dir.join("report.json"), json.as_bytes())?;
    write_atomic(&dir.join("table.md"), md.as_bytes())?;
    write_atomic(&dir.join("table.csv"), csv.as_bytes())?;
    write_atomic(&dir.join("scatter.csv"), scatter_csv.as_bytes())?;
    for (name, svg) in svgs {
        write_atomic(&dir.join(name), svg.as_bytes())?;
    }
    Ok(())
}

pub fn write_comparison(dir: &Path, table: &ComparisonTable) -> Result<()> {
    let (md, csv) = render_table(table);
    let json = crate::util::to_canonical_json(table)?;
    write_atomic(&dir.join("comparison.json"), json.as_bytes())?;
    write_atomic(&dir.join("table.md"), md.as_bytes())?;
    write_atomic(&dir.join("table.csv"), csv.as_bytes())
}
