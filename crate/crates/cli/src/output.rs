//! CSV tables, aligned text tables and SVG figures.

use crate::error::Result;
use std::fmt::Write as _;
use std::path::Path;

/// Shortest round-trip formatting; `None` becomes an empty cell.
pub fn fmt_num(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v}"),
        None => String::new(),
    }
}

/// A header row plus string cells, written as CSV or as an aligned table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Table { header, rows })
    }

    /// Right-aligned columns separated by two spaces.
    pub fn to_text(&self) -> String {
        let mut width: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
        for r in &self.rows {
            for (w, c) in width.iter_mut().zip(r) {
                *w = (*w).max(display(c).len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: Vec<String>| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&width)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect();
            out.push_str(parts.join("  ").trim_end());
            out.push('\n');
        };
        line(&mut out, self.header.clone());
        for r in &self.rows {
            line(&mut out, r.iter().map(|c| display(c)).collect());
        }
        out
    }
}

fn display(cell: &str) -> String {
    match cell.parse::<f64>() {
        Ok(_) if !(cell.contains('.') || cell.contains('e')) => cell.to_string(),
        Ok(v) if v != 0.0 && v.abs() < 1e-3 => format!("{v:.3e}"),
        Ok(v) => format!("{v:.4}"),
        _ if cell.is_empty() => "-".into(),
        _ => cell.to_string(),
    }
}

pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const M: f64 = 50.0;

impl Frame {
    fn fit(points: impl Iterator<Item = [f64; 2]>, equal: bool) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for [x, y] in points.filter(|p| p[0].is_finite() && p[1].is_finite()) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        let pad = |a: &mut f64, b: &mut f64| {
            let d = (*b - *a).max(1e-9) * 0.05;
            *a -= d;
            *b += d;
        };
        pad(&mut x0, &mut x1);
        pad(&mut y0, &mut y1);
        if equal {
            let sx = (x1 - x0) / (W - 2.0 * M);
            let sy = (y1 - y0) / (H - 2.0 * M);
            let s = sx.max(sy);
            let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
            x0 = cx - s * (W - 2.0 * M) / 2.0;
            x1 = cx + s * (W - 2.0 * M) / 2.0;
            y0 = cy - s * (H - 2.0 * M) / 2.0;
            y1 = cy + s * (H - 2.0 * M) / 2.0;
        }
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, p: [f64; 2]) -> (f64, f64) {
        (
            M + (p[0] - self.x0) / (self.x1 - self.x0) * (W - 2.0 * M),
            H - M - (p[1] - self.y0) / (self.y1 - self.y0) * (H - 2.0 * M),
        )
    }

    fn polyline(&self, pts: &[[f64; 2]], color: &str, width: f64, opacity: f64) -> String {
        let coords: Vec<String> = pts
            .iter()
            .filter(|p| p[0].is_finite() && p[1].is_finite())
            .map(|&p| {
                let (x, y) = self.px(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\" stroke-opacity=\"{opacity}\"/>\n",
            coords.join(" ")
        )
    }

    fn axes(&self, out: &mut String, xlabel: &str, ylabel: &str) {
        let _ = writeln!(
            out,
            "<rect x=\"{M}\" y=\"{M}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>",
            W - 2.0 * M,
            H - 2.0 * M
        );
        let _ = write!(
            out,
            "<text x=\"{M}\" y=\"{}\" font-size=\"11\">{:.3}</text>\n<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{:.3}</text>\n",
            H - M + 15.0,
            self.x0,
            W - M,
            H - M + 15.0,
            self.x1
        );
        let _ = write!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{:.3}</text>\n<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{:.3}</text>\n",
            M - 4.0,
            H - M,
            self.y0,
            M - 4.0,
            M + 10.0,
            self.y1
        );
        let _ = write!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n<text x=\"14\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{}</text>\n",
            W / 2.0,
            H - 12.0,
            escape(xlabel),
            H / 2.0,
            H / 2.0,
            escape(ylabel)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<text x=\"{}\" y=\"24\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

/// A named `(x, y)` series.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<[f64; 2]>,
}

/// Line chart with a legend.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let frame = Frame::fit(series.iter().flat_map(|s| s.points.iter().copied()), false);
    let mut out = open(title);
    frame.axes(&mut out, xlabel, ylabel);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        out.push_str(&frame.polyline(&s.points, color, 1.5, 1.0));
        let y = M + 16.0 + 16.0 * i as f64;
        let _ = write!(
            out,
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{color}\" stroke-width=\"2\"/>\n<text x=\"{}\" y=\"{}\" font-size=\"11\">{}</text>\n",
            W - M - 110.0,
            W - M - 90.0,
            W - M - 85.0,
            y + 4.0,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Observed path, sampled futures colored by cluster label, ground truth on top.
pub fn trajectory_plot(
    title: &str,
    observed: &[[f64; 2]],
    truth: &[[f64; 2]],
    samples: &[Vec<[f64; 2]>],
    labels: &[usize],
) -> String {
    let all = observed
        .iter()
        .chain(truth)
        .chain(samples.iter().flatten())
        .copied();
    let frame = Frame::fit(all, true);
    let mut out = open(title);
    frame.axes(&mut out, "x", "y");
    let start = observed.last().copied().unwrap_or([0.0, 0.0]);
    for (s, &l) in samples.iter().zip(labels) {
        let mut p = vec![start];
        p.extend_from_slice(s);
        out.push_str(&frame.polyline(&p, PALETTE[l % PALETTE.len()], 1.0, 0.5));
    }
    out.push_str(&frame.polyline(observed, "#000000", 2.5, 1.0));
    let mut gt = vec![start];
    gt.extend_from_slice(truth);
    out.push_str(
        &frame
            .polyline(&gt, "#000000", 2.0, 1.0)
            .replace("/>", " stroke-dasharray=\"6 3\"/>"),
    );
    out.push_str("</svg>\n");
    out
}

/// Rows of grayscale frames; each row is `(label, frames)` and every frame is
/// a row-major `size x size` image scaled by the row's own maximum when
/// `normalize` is set, else clamped to `[0, 1]`.
pub fn frame_grid(title: &str, size: usize, rows: &[(String, Vec<Vec<f64>>, bool)]) -> String {
    let cell = 4.0;
    let gap = 6.0;
    let label_w = 90.0;
    let cols = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
    let fw = size as f64 * cell;
    let width = label_w + cols as f64 * (fw + gap) + gap;
    let height = 40.0 + rows.len() as f64 * (fw + gap) + gap;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<text x=\"{}\" y=\"24\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        width / 2.0,
        escape(title)
    );
    for (r, (label, frames, normalize)) in rows.iter().enumerate() {
        let y0 = 40.0 + r as f64 * (fw + gap);
        let _ = writeln!(
            out,
            "<text x=\"4\" y=\"{}\" font-size=\"12\">{}</text>",
            y0 + fw / 2.0,
            escape(label)
        );
        let scale = if *normalize {
            let m = frames.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
            if m > 0.0 {
                1.0 / m
            } else {
                1.0
            }
        } else {
            1.0
        };
        for (c, f) in frames.iter().enumerate() {
            let x0 = label_w + c as f64 * (fw + gap);
            for (i, v) in f.iter().enumerate() {
                let g = ((v * scale).clamp(0.0, 1.0) * 255.0).round() as u8;
                let _ = writeln!(
                    out,
                    "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{cell}\" height=\"{cell}\" fill=\"#{g:02x}{g:02x}{g:02x}\"/>",
                    x0 + (i % size) as f64 * cell,
                    y0 + (i / size) as f64 * cell
                );
            }
        }
    }
    out.push_str("</svg>\n");
    out
}
