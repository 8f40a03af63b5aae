//! CSV tables and hand-written SVG figures.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use tipping_core::logistic::{BifurcationScan, Period};
use tipping_core::stats::Interval;
use tipping_core::{BasinSet, Embedding, RolloutTrace};

use crate::experiments::{ResultRecord, Summary, RECORD_COLUMNS};
use crate::files::FileError;

pub const RESULTS_CSV: &str = "results.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const HISTOGRAM_SVG: &str = "histogram.svg";
pub const SUMMARY_COLUMNS: [&str; 8] = [
    "bin",
    "predicted",
    "observed",
    "ci_predicted_lower",
    "ci_predicted_upper",
    "ci_observed_lower",
    "ci_observed_upper",
    "overlap",
];
pub const SCAN_COLUMNS: [&str; 3] = ["r", "sample", "period"];

/// Cap on plotted samples per parameter value in the bifurcation figure.
const SCAN_PLOT_SAMPLES: usize = 64;

fn write_err(path: &Path, e: impl std::fmt::Display) -> FileError {
    FileError::Write {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

fn create_parent(path: &Path) -> Result<(), FileError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|source| FileError::Write {
            path: dir.to_path_buf(),
            source,
        }),
        _ => Ok(()),
    }
}

fn csv_writer(path: &Path, header: &[&str]) -> Result<csv::Writer<fs::File>, FileError> {
    create_parent(path)?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| write_err(path, e))?;
    w.write_record(header).map_err(|e| write_err(path, e))?;
    Ok(w)
}

/// One row per record; an empty slice leaves just the header.
pub fn write_records_csv(records: &[ResultRecord], path: &Path) -> Result<(), FileError> {
    let mut w = csv_writer(path, &RECORD_COLUMNS)?;
    for r in records {
        w.serialize(r).map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| write_err(path, e))
}

pub fn read_records_csv(path: &Path) -> Result<Vec<ResultRecord>, FileError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| FileError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| FileError::Line {
                path: path.to_path_buf(),
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

fn interval_cells(ci: Option<Interval>) -> [String; 2] {
    match ci {
        Some(c) => [c.lower.to_string(), c.upper.to_string()],
        None => [String::new(), String::new()],
    }
}

pub fn write_summary_csv(summary: &Summary, path: &Path) -> Result<(), FileError> {
    let mut w = csv_writer(path, &SUMMARY_COLUMNS)?;
    for row in &summary.bins {
        let [pl, pu] = interval_cells(row.ci_predicted);
        let [ol, ou] = interval_cells(row.ci_observed);
        w.write_record([
            row.bin.label().to_string(),
            row.predicted.to_string(),
            row.observed.to_string(),
            pl,
            pu,
            ol,
            ou,
            row.overlap.to_string(),
        ])
        .map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| write_err(path, e))
}

/// `(r, sample, period)` rows: every attractor point of every scanned `r`.
pub fn write_scan_csv(scan: &BifurcationScan, path: &Path) -> Result<(), FileError> {
    let mut w = csv_writer(path, &SCAN_COLUMNS)?;
    for p in &scan.points {
        let period = p.period.to_string();
        for x in &p.attractor {
            w.write_record([p.r.to_string(), x.to_string(), period.clone()])
                .map_err(|e| write_err(path, e))?;
        }
    }
    w.flush().map_err(|e| write_err(path, e))
}

fn write_text(text: &str, path: &Path) -> Result<(), FileError> {
    create_parent(path)?;
    fs::write(path, text).map_err(|source| FileError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Linear map from data coordinates onto a plot rectangle.
#[derive(Debug, Clone, Copy)]
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    left: f64,
    top: f64,
    width: f64,
    height: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x0) / (self.x1 - self.x0) * self.width
    }

    fn py(&self, y: f64) -> f64 {
        self.top + (self.y1 - y) / (self.y1 - self.y0) * self.height
    }
}

const SVG_WIDTH: f64 = 640.0;
const SVG_HEIGHT: f64 = 420.0;

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        SVG_WIDTH / 2.0,
        escape(title)
    );
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(s: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (l, r, t, b) = (f.left, f.left + f.width, f.top, f.top + f.height);
    let _ = writeln!(
        s,
        r#"<path d="M{l} {t} L{l} {b} L{r} {b}" stroke="black" fill="none"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        l + f.width / 2.0,
        b + 34.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        t + f.height / 2.0,
        t + f.height / 2.0,
        escape(y_label)
    );
}

fn y_ticks(s: &mut String, f: &Frame, ticks: &[f64]) {
    for &v in ticks {
        let y = f.py(v);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            f.left - 4.0,
            f.left,
            f.left - 6.0,
            y + 4.0,
            crate::format::sig_n(v, 3)
        );
    }
}

fn x_ticks(s: &mut String, f: &Frame, ticks: &[f64]) {
    let base = f.top + f.height;
    for &v in ticks {
        let x = f.px(v);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{base}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
            base + 4.0,
            base + 16.0,
            crate::format::sig_n(v, 3)
        );
    }
}

fn ticks_between(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

fn error_bar(s: &mut String, f: &Frame, x: f64, ci: Interval) {
    let (y_lo, y_hi) = (f.py(ci.lower), f.py(ci.upper));
    let _ = writeln!(
        s,
        r#"<path d="M{x:.2} {y_lo:.2} L{x:.2} {y_hi:.2} M{:.2} {y_lo:.2} L{:.2} {y_lo:.2} M{:.2} {y_hi:.2} L{:.2} {y_hi:.2}" stroke="black"/>"#,
        x - 4.0,
        x + 4.0,
        x - 4.0,
        x + 4.0
    );
}

/// Predicted and observed bin proportions with 95% exact intervals.
pub fn histogram_svg(summary: &Summary) -> String {
    let mut s = svg_open(&format!("Tipping point, n = {}", summary.evaluated));
    let f = Frame {
        x0: 0.0,
        x1: summary.bins.len().max(1) as f64,
        y0: 0.0,
        y1: 1.0,
        left: 60.0,
        top: 40.0,
        width: SVG_WIDTH - 180.0,
        height: SVG_HEIGHT - 100.0,
    };
    axes(&mut s, &f, "n*", "fraction of prompts");
    y_ticks(&mut s, &f, &ticks_between(0.0, 1.0, 4));
    let n = summary.evaluated.max(1) as f64;
    let bar = 0.35;
    for (i, row) in summary.bins.iter().enumerate() {
        let centre = i as f64 + 0.5;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            f.px(centre),
            f.top + f.height + 16.0,
            escape(row.bin.label())
        );
        for (offset, count, ci, colour) in [
            (-bar, row.predicted, row.ci_predicted, "#4878a8"),
            (0.0, row.observed, row.ci_observed, "#d08040"),
        ] {
            let p = count as f64 / n;
            let (x, y) = (f.px(centre + offset), f.py(p));
            let w = f.px(bar) - f.px(0.0);
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{:.2}" fill="{colour}"/>"#,
                f.py(0.0) - y
            );
            if let Some(ci) = ci {
                error_bar(&mut s, &f, x + w / 2.0, ci);
            }
        }
    }
    let lx = f.left + f.width + 16.0;
    for (i, (name, colour)) in [("predicted", "#4878a8"), ("observed", "#d08040")].iter().enumerate() {
        let y = f.top + 10.0 + 20.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{y}" width="12" height="12" fill="{colour}"/><text x="{}" y="{}">{name}</text>"#,
            lx + 18.0,
            y + 10.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Context trajectory in the plane with basin centroids and the `B`/`D`
/// decision line; `None` unless the geometry is two-dimensional.
pub fn trajectory_svg(title: &str, basins: &BasinSet, trace: &RolloutTrace) -> Option<String> {
    if basins.dimension != 2 {
        return None;
    }
    let xy = |e: &Embedding| (e.as_slice()[0], e.as_slice()[1]);
    let mut pts: Vec<(f64, f64)> = basins.basins.values().map(|b| xy(&b.centroid)).collect();
    let path: Vec<(f64, f64)> = trace.steps.iter().map(|s| xy(&s.context)).collect();
    pts.extend(&path);
    pts.push((0.0, 0.0));
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let pad = 0.1 * (x1 - x0).max(y1 - y0).max(1e-9);
    let (x0, x1, y0, y1) = (x0 - pad, x1 + pad, y0 - pad, y1 + pad);
    let f = Frame {
        x0,
        x1,
        y0,
        y1,
        left: 60.0,
        top: 40.0,
        width: SVG_WIDTH - 100.0,
        height: SVG_HEIGHT - 100.0,
    };
    let mut s = svg_open(title);
    axes(&mut s, &f, "dimension 1", "dimension 2");
    x_ticks(&mut s, &f, &ticks_between(x0, x1, 4));
    y_ticks(&mut s, &f, &ticks_between(y0, y1, 4));

    let (b, d) = basins.tipping_pair().ok()?;
    let (bx, by) = xy(b);
    let (dx, dy) = xy(d);
    // Points with c·B = c·D lie on the line through the origin orthogonal to B − D.
    let (nx, ny) = (bx - dx, by - dy);
    if nx != 0.0 || ny != 0.0 {
        let (ux, uy) = (-ny, nx);
        let reach = 4.0 * (x1 - x0).max(y1 - y0) / (ux * ux + uy * uy).sqrt();
        let _ = writeln!(
            s,
            r#"<clipPath id="plot"><rect x="{}" y="{}" width="{}" height="{}"/></clipPath>"#,
            f.left, f.top, f.width, f.height
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="6 4" clip-path="url(#plot)"/>"#,
            f.px(-reach * ux),
            f.py(-reach * uy),
            f.px(reach * ux),
            f.py(reach * uy)
        );
    }

    if !path.is_empty() {
        let mut d_attr = String::new();
        for (i, &(x, y)) in path.iter().enumerate() {
            let _ = write!(
                d_attr,
                "{}{:.2} {:.2} ",
                if i == 0 { 'M' } else { 'L' },
                f.px(x),
                f.py(y)
            );
        }
        let _ = writeln!(s, r##"<path d="{}" stroke="#4878a8" fill="none"/>"##, d_attr.trim_end());
        for (step, &(x, y)) in trace.steps.iter().zip(&path) {
            let colour = if step.chosen.is_d() { "#c03030" } else { "#4878a8" };
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{colour}"/>"#,
                f.px(x),
                f.py(y)
            );
        }
    }
    for (label, basin) in &basins.basins {
        let (x, y) = xy(&basin.centroid);
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="5" fill="none" stroke="black"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            f.px(x),
            f.py(y),
            f.px(x) + 7.0,
            f.py(y) - 7.0,
            escape(label.as_str())
        );
    }
    s.push_str("</svg>\n");
    Some(s)
}

/// Attractor samples against `r`.
pub fn bifurcation_svg(scan: &BifurcationScan) -> String {
    let (r0, r1) = match (scan.points.first(), scan.points.last()) {
        (Some(a), Some(b)) if b.r > a.r => (a.r, b.r),
        (Some(a), _) => (a.r - 0.5, a.r + 0.5),
        _ => (0.0, 4.0),
    };
    let f = Frame {
        x0: r0,
        x1: r1,
        y0: 0.0,
        y1: 1.0,
        left: 60.0,
        top: 40.0,
        width: SVG_WIDTH - 100.0,
        height: SVG_HEIGHT - 100.0,
    };
    let mut s = svg_open("Logistic map attractor");
    axes(&mut s, &f, "r", "x");
    x_ticks(&mut s, &f, &ticks_between(r0, r1, 4));
    y_ticks(&mut s, &f, &ticks_between(0.0, 1.0, 4));
    for p in &scan.points {
        let take = match p.period {
            Period::Cycle(n) => n,
            Period::Aperiodic => SCAN_PLOT_SAMPLES,
        };
        for &x in p.attractor.iter().take(take) {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="0.8"/>"#, f.px(p.r), f.py(x));
        }
    }
    for d in &scan.doublings {
        let x = f.px(d.r);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#c03030" stroke-dasharray="4 3"/>"##,
            f.top,
            f.top + f.height
        );
    }
    s.push_str("</svg>\n");
    s
}

/// A rollout to draw.
#[derive(Debug, Clone, Copy)]
pub struct Trajectory<'a> {
    pub name: &'a str,
    pub basins: &'a BasinSet,
    pub trace: &'a RolloutTrace,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportFiles {
    pub written: Vec<PathBuf>,
    pub notices: Vec<String>,
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes `results.csv` and `summary.csv`, the histogram, and one trajectory
/// figure per two-dimensional rollout into `out_dir`.
pub fn emit_report(
    records: &[ResultRecord],
    summary: &Summary,
    trajectories: &[Trajectory<'_>],
    out_dir: &Path,
) -> Result<ReportFiles, FileError> {
    let mut files = ReportFiles::default();
    let results = out_dir.join(RESULTS_CSV);
    write_records_csv(records, &results)?;
    files.written.push(results);
    let summary_path = out_dir.join(SUMMARY_CSV);
    write_summary_csv(summary, &summary_path)?;
    files.written.push(summary_path);
    let hist = out_dir.join(HISTOGRAM_SVG);
    write_text(&histogram_svg(summary), &hist)?;
    files.written.push(hist);

    for t in trajectories {
        match trajectory_svg(t.name, t.basins, t.trace) {
            Some(svg) => {
                let path = out_dir.join(format!("trajectory-{}.svg", file_stem(t.name)));
                write_text(&svg, &path)?;
                files.written.push(path);
            }
            None => files.notices.push(format!(
                "{}: trajectory figure skipped, geometry has dimension {} (needs 2)",
                t.name, t.basins.dimension
            )),
        }
    }
    Ok(files)
}

pub fn write_svg(svg: &str, path: &Path) -> Result<(), FileError> {
    write_text(svg, path)
}
