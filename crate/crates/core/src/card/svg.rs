//! Minimal deterministic SVG plotting: one 640x480 frame per plot, with
//! symmetric 64px margins, continuous or categorical axes, and a handful
//! of glyph kinds. Panels lay plots out side by side.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 480.0;
pub const MARGIN: f64 = 64.0;
/// Axis ranges extend this fraction of the data span beyond each end.
pub const PAD_FRACTION: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum SvgError {
    #[error("no data to plot")]
    EmptyData,
    #[error("point {index} has a non-finite coordinate")]
    NonFiniteCoordinate { index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tick {
    pub value: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Axis {
    Continuous {
        label: String,
        lo: f64,
        hi: f64,
        ticks: Vec<Tick>,
    },
    /// Category `i` sits at coordinate `i`; the axis spans `[-0.5, n - 0.5]`.
    Categorical {
        label: String,
        categories: Vec<String>,
    },
}

impl Axis {
    /// Data range padded by [`PAD_FRACTION`]. A zero-width range is widened
    /// symmetrically so its single value lands mid-axis.
    pub fn fit(label: &str, values: impl IntoIterator<Item = f64>) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        let span = hi - lo;
        // Spans at rounding-noise scale are treated as a single value.
        let (lo, hi) = if span > 1e-12 * lo.abs().max(hi.abs()).max(1.0) {
            (lo - span * PAD_FRACTION, hi + span * PAD_FRACTION)
        } else {
            let half = if lo == 0.0 { 0.5 } else { lo.abs() * 0.5 };
            (lo - half, hi + half)
        };
        Axis::Continuous {
            label: label.to_string(),
            lo,
            hi,
            ticks: nice_ticks(lo, hi),
        }
    }

    pub fn categorical(label: &str, categories: Vec<String>) -> Axis {
        Axis::Categorical {
            label: label.to_string(),
            categories,
        }
    }

    fn domain(&self) -> (f64, f64) {
        match self {
            Axis::Continuous { lo, hi, .. } => (*lo, *hi),
            Axis::Categorical { categories, .. } => (-0.5, categories.len().max(1) as f64 - 0.5),
        }
    }

    fn label(&self) -> &str {
        match self {
            Axis::Continuous { label, .. } | Axis::Categorical { label, .. } => label,
        }
    }

    fn tick_marks(&self) -> Vec<(f64, String)> {
        match self {
            Axis::Continuous { ticks, .. } => ticks.iter().map(|t| (t.value, t.text.clone())).collect(),
            Axis::Categorical { categories, .. } => categories
                .iter()
                .enumerate()
                .map(|(i, c)| (i as f64, c.clone()))
                .collect(),
        }
    }
}

/// Multiples of a 1/2/5 x 10^k step inside `[lo, hi]`, about six of them.
pub fn nice_ticks(lo: f64, hi: f64) -> Vec<Tick> {
    let span = hi - lo;
    if !(span > 0.0) {
        return Vec::new();
    }
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last)
        .map(|k| {
            let value = k as f64 * step;
            let mut text = format!("{value:.decimals$}");
            if text.starts_with('-') && text.trim_start_matches(['-', '0', '.']).is_empty() {
                text.remove(0);
            }
            Tick { value, text }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "glyph", rename_all = "lowercase")]
pub enum Glyph {
    Marker {
        x: f64,
        y: f64,
        highlight: bool,
        label: String,
    },
    Bar {
        x0: f64,
        x1: f64,
        y0: f64,
        y1: f64,
        highlight: bool,
    },
    /// Closed polygon in data coordinates.
    Outline { points: Vec<[f64; 2]> },
    Line { x0: f64, y0: f64, x1: f64, y1: f64 },
    Label { x: f64, y: f64, text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plot {
    pub title: String,
    pub x: Axis,
    pub y: Axis,
    pub glyphs: Vec<Glyph>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    pub label: String,
    pub highlight: bool,
}

/// A scatter plot with both axes fitted to the data.
pub fn scatter_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    points: &[ScatterPoint],
) -> Result<Plot, SvgError> {
    if points.is_empty() {
        return Err(SvgError::EmptyData);
    }
    if let Some(index) = points.iter().position(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(SvgError::NonFiniteCoordinate { index });
    }
    Ok(Plot {
        title: title.to_string(),
        x: Axis::fit(x_label, points.iter().map(|p| p.x)),
        y: Axis::fit(y_label, points.iter().map(|p| p.y)),
        glyphs: points
            .iter()
            .map(|p| Glyph::Marker {
                x: p.x,
                y: p.y,
                highlight: p.highlight,
                label: p.label.clone(),
            })
            .collect(),
    })
}

pub fn render_scatter(
    title: &str,
    x_label: &str,
    y_label: &str,
    points: &[ScatterPoint],
) -> Result<String, SvgError> {
    Ok(render_plot(&scatter_plot(title, x_label, y_label, points)?))
}

/// Fixed two-decimal coordinates; `-0.00` is printed as `0.00`.
fn c(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

pub(crate) fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(ch),
        }
    }
    out
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn plot_body(plot: &Plot, out: &mut String) {
    let f = Frame {
        x: plot.x.domain(),
        y: plot.y.domain(),
    };
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        out,
        r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        c(l),
        c(t),
        c(r - l),
        c(b - t)
    );
    for (v, text) in plot.x.tick_marks() {
        let x = f.px(v);
        let _ = writeln!(
            out,
            r##"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="#444"/><text x="{0}" y="{3}" font-size="11" text-anchor="middle">{4}</text>"##,
            c(x),
            c(b),
            c(b + 5.0),
            c(b + 18.0),
            escape(&text)
        );
    }
    for (v, text) in plot.y.tick_marks() {
        let y = f.py(v);
        let _ = writeln!(
            out,
            r##"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="#444"/><text x="{3}" y="{4}" font-size="11" text-anchor="end">{5}</text>"##,
            c(l - 5.0),
            c(y),
            c(l),
            c(l - 8.0),
            c(y + 4.0),
            escape(&text)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">{}</text>"#,
        c(WIDTH / 2.0),
        c(HEIGHT - 20.0),
        escape(plot.x.label())
    );
    let _ = writeln!(
        out,
        r#"<text x="{0}" y="{1}" font-size="13" text-anchor="middle" transform="rotate(-90 {0} {1})">{2}</text>"#,
        c(20.0),
        c(HEIGHT / 2.0),
        escape(plot.y.label())
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="15" text-anchor="middle">{}</text>"#,
        c(WIDTH / 2.0),
        c(MARGIN / 2.0),
        escape(&plot.title)
    );
    for g in &plot.glyphs {
        match g {
            Glyph::Marker {
                x,
                y,
                highlight,
                label,
            } => {
                let (r, fill) = if *highlight { (6.0, "#c0392b") } else { (4.0, "#2c7fb8") };
                let _ = writeln!(
                    out,
                    r#"<circle cx="{}" cy="{}" r="{}" fill="{}" fill-opacity="0.8"><title>{}</title></circle>"#,
                    c(f.px(*x)),
                    c(f.py(*y)),
                    c(r),
                    fill,
                    escape(label)
                );
            }
            Glyph::Bar {
                x0,
                x1,
                y0,
                y1,
                highlight,
            } => {
                let (xa, xb) = (f.px(*x0).min(f.px(*x1)), f.px(*x0).max(f.px(*x1)));
                let (ya, yb) = (f.py(*y0).min(f.py(*y1)), f.py(*y0).max(f.py(*y1)));
                let fill = if *highlight { "#c0392b" } else { "#2c7fb8" };
                let _ = writeln!(
                    out,
                    r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}"/>"#,
                    c(xa),
                    c(ya),
                    c(xb - xa),
                    c(yb - ya),
                    fill
                );
            }
            Glyph::Outline { points } => {
                let pts: Vec<String> = points
                    .iter()
                    .map(|p| format!("{},{}", c(f.px(p[0])), c(f.py(p[1]))))
                    .collect();
                let _ = writeln!(
                    out,
                    r##"<polygon points="{}" fill="#2c7fb8" fill-opacity="0.35" stroke="#2c7fb8"/>"##,
                    pts.join(" ")
                );
            }
            Glyph::Line { x0, y0, x1, y1 } => {
                let _ = writeln!(
                    out,
                    r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#222"/>"##,
                    c(f.px(*x0)),
                    c(f.py(*y0)),
                    c(f.px(*x1)),
                    c(f.py(*y1))
                );
            }
            Glyph::Label { x, y, text } => {
                let _ = writeln!(
                    out,
                    r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
                    c(f.px(*x)),
                    c(f.py(*y) + 4.0),
                    escape(text)
                );
            }
        }
    }
}

/// A standalone 640x480 SVG document.
pub fn render_plot(plot: &Plot) -> String {
    render_panel(std::slice::from_ref(plot))
}

/// Plots side by side, each in its own 640x480 cell.
pub fn render_panel(plots: &[Plot]) -> String {
    let width = WIDTH * plots.len().max(1) as f64;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\">\n",
        width, HEIGHT
    );
    for (i, plot) in plots.iter().enumerate() {
        let _ = writeln!(
            out,
            "<svg x=\"{}\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\">",
            WIDTH * i as f64
        );
        plot_body(plot, &mut out);
        out.push_str("</svg>\n");
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64, y: f64) -> ScatterPoint {
        ScatterPoint {
            x,
            y,
            label: String::new(),
            highlight: false,
        }
    }

    fn circles(svg: &str) -> Vec<(String, String)> {
        svg.lines()
            .filter(|l| l.starts_with("<circle"))
            .map(|l| {
                let attr = |name: &str| {
                    let start = l.find(&format!("{name}=\"")).unwrap() + name.len() + 2;
                    l[start..].split('"').next().unwrap().to_string()
                };
                (attr("cx"), attr("cy"))
            })
            .collect()
    }

    #[test]
    fn single_point_is_centred() {
        let svg = render_scatter("t", "x", "y", &[pt(0.0, 0.0)]).unwrap();
        assert_eq!(circles(&svg), vec![("320.00".to_string(), "240.00".to_string())]);
        let svg = render_scatter("t", "x", "y", &[pt(3.0, -7.0)]).unwrap();
        assert_eq!(circles(&svg), vec![("320.00".to_string(), "240.00".to_string())]);
    }

    #[test]
    fn two_points_sit_inside_padding() {
        let svg = render_scatter("t", "x", "y", &[pt(0.0, 0.0), pt(1.0, 2.0)]).unwrap();
        let inner = WIDTH - 2.0 * MARGIN;
        let pad = inner * PAD_FRACTION / (1.0 + 2.0 * PAD_FRACTION);
        let want_lo = c(MARGIN + pad);
        let want_hi = c(WIDTH - MARGIN - pad);
        let cs = circles(&svg);
        assert_eq!(cs[0].0, want_lo);
        assert_eq!(cs[1].0, want_hi);
        match scatter_plot("t", "x", "y", &[pt(0.0, 0.0), pt(1.0, 2.0)]).unwrap().x {
            Axis::Continuous { lo, hi, .. } => assert_eq!((lo, hi), (-0.05, 1.05)),
            _ => unreachable!(),
        }
    }

    #[test]
    fn rejects_bad_points() {
        assert_eq!(render_scatter("t", "x", "y", &[]).unwrap_err(), SvgError::EmptyData);
        assert_eq!(
            render_scatter("t", "x", "y", &[pt(0.0, 0.0), pt(1.0, f64::NAN)]).unwrap_err(),
            SvgError::NonFiniteCoordinate { index: 1 }
        );
    }

    #[test]
    fn deterministic_and_highlighted() {
        let mut pts = vec![pt(0.0, 1.0), pt(2.0, 3.0)];
        pts[1].highlight = true;
        let a = render_scatter("t", "x", "y", &pts).unwrap();
        assert_eq!(a, render_scatter("t", "x", "y", &pts).unwrap());
        assert!(a.contains("#c0392b"));
        assert!(a.starts_with("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\""));
    }

    #[test]
    fn ticks_are_nice() {
        let t: Vec<String> = nice_ticks(-0.05, 1.05).into_iter().map(|t| t.text).collect();
        assert_eq!(t, ["0.0", "0.2", "0.4", "0.6", "0.8", "1.0"]);
        let t: Vec<String> = nice_ticks(-12.0, 12.0).into_iter().map(|t| t.text).collect();
        assert_eq!(t, ["-10", "-5", "0", "5", "10"]);
    }

    #[test]
    fn escapes_text() {
        let mut p = pt(0.0, 0.0);
        p.label = "a<b & \"c\"".into();
        let svg = render_scatter("t", "x", "y", &[p]).unwrap();
        assert!(svg.contains("a&lt;b &amp; &quot;c&quot;"));
    }
}
