//! Static SVG charts: a rate-per-bin scatter, per-group allocation strips
//! with a median line, and per-rho bound ribbons with a dashed zero line.
//!
//! Charts take already-computed numbers; callers read them back from the
//! CSV/JSON outputs so a chart never disagrees with its data file.

use std::fmt::Write;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SvgError {
    #[error("nothing to render")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterChart {
    pub title: String,
    /// `(bin label, rate)` in bin order.
    pub points: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StripPanel {
    pub group: String,
    /// `(prop_white, disparity)`; `None` share for groups without NA rows.
    pub points: Vec<(Option<f64>, f64)>,
    pub median: f64,
    pub ignore_na: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RibbonEntry {
    pub label: String,
    pub naive: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RibbonPanel {
    pub rho: f64,
    pub entries: Vec<RibbonEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Chart {
    Scatter(ScatterChart),
    Strip(Vec<StripPanel>),
    Ribbon(Vec<RibbonPanel>),
}

pub fn render_svg(chart: &Chart) -> Result<String, SvgError> {
    match chart {
        Chart::Scatter(c) => scatter(c),
        Chart::Strip(p) => strip(p),
        Chart::Ribbon(p) => ribbon(p),
    }
}

const W: f64 = 640.0;
const MARGIN: f64 = 48.0;

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Maps `[lo, hi]` onto `[a, b]`; a degenerate range maps to the midpoint.
fn scale(v: f64, lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    if hi > lo {
        a + (v - lo) / (hi - lo) * (b - a)
    } else {
        (a + b) / 2.0
    }
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
}

/// Extent widened to include zero, with a small pad.
fn padded_with_zero(lo: f64, hi: f64) -> (f64, f64) {
    let (lo, hi) = (lo.min(0.0), hi.max(0.0));
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

fn header(out: &mut String, height: f64) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{height}\" viewBox=\"0 0 {W} {height}\">\n\
         <rect width=\"{W}\" height=\"{height}\" fill=\"white\"/>\n"
    );
}

/// Blue at share 0 to orange at share 1; grey without a share.
fn share_colour(share: Option<f64>) -> String {
    match share {
        None => "#808080".to_string(),
        Some(s) => {
            let s = s.clamp(0.0, 1.0);
            let mix = |a: f64, b: f64| (a + (b - a) * s).round() as u8;
            format!(
                "#{:02x}{:02x}{:02x}",
                mix(31.0, 255.0),
                mix(119.0, 127.0),
                mix(180.0, 14.0)
            )
        }
    }
}

fn scatter(c: &ScatterChart) -> Result<String, SvgError> {
    if c.points.is_empty() {
        return Err(SvgError::Empty);
    }
    let h = 360.0;
    let (lo, hi) = extent(c.points.iter().map(|p| p.1));
    let (lo, hi) = (lo.min(0.0), hi.max(lo.min(0.0) + 1e-3));
    let n = c.points.len();
    let mut out = String::new();
    header(&mut out, h);
    let _ = writeln!(
        out,
        "<text x=\"{MARGIN}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">{}</text>",
        escape(&c.title)
    );
    let (y0, y1) = (h - MARGIN, MARGIN);
    let _ = writeln!(
        out,
        "<line class=\"axis\" x1=\"{MARGIN}\" y1=\"{y0}\" x2=\"{}\" y2=\"{y0}\" stroke=\"black\"/>",
        W - MARGIN
    );
    let _ = writeln!(
        out,
        "<line class=\"axis\" x1=\"{MARGIN}\" y1=\"{y0}\" x2=\"{MARGIN}\" y2=\"{y1}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"4\" y=\"{y1}\" font-family=\"sans-serif\" font-size=\"10\">{hi:.3}</text>\n\
         <text x=\"4\" y=\"{y0}\" font-family=\"sans-serif\" font-size=\"10\">{lo:.3}</text>"
    );
    let _ = writeln!(out, "<g class=\"marks\">");
    for (i, (label, rate)) in c.points.iter().enumerate() {
        let x = scale(i as f64, 0.0, (n - 1) as f64, MARGIN, W - MARGIN);
        let y = scale(*rate, lo, hi, y0, y1);
        let _ = writeln!(
            out,
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2.5\" fill=\"#1f77b4\"><title>{} {rate}</title></circle>",
            escape(label)
        );
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

fn strip(panels: &[StripPanel]) -> Result<String, SvgError> {
    if panels.is_empty() || panels.iter().all(|p| p.points.is_empty()) {
        return Err(SvgError::Empty);
    }
    let row = 28.0;
    let h = 2.0 * MARGIN + row * panels.len() as f64;
    let (lo, hi) = extent(
        panels
            .iter()
            .flat_map(|p| p.points.iter().map(|q| q.1).chain(p.ignore_na)),
    );
    let (lo, hi) = padded_with_zero(lo, hi);
    let left = MARGIN * 3.0;
    let x_of = |v: f64| scale(v, lo, hi, left, W - MARGIN);
    let mut out = String::new();
    header(&mut out, h);
    let x0 = x_of(0.0);
    let _ = writeln!(
        out,
        "<line class=\"zero\" x1=\"{x0:.2}\" y1=\"{MARGIN}\" x2=\"{x0:.2}\" y2=\"{:.2}\" stroke=\"black\" stroke-dasharray=\"4 3\"/>",
        h - MARGIN
    );
    let _ = writeln!(
        out,
        "<text x=\"{left}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\">{lo:.3}</text>\n\
         <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{hi:.3}</text>",
        h - MARGIN / 2.0,
        W - MARGIN,
        h - MARGIN / 2.0
    );
    for (k, panel) in panels.iter().enumerate() {
        let yc = MARGIN + row * (k as f64 + 0.5);
        let _ = writeln!(
            out,
            "<g class=\"panel\" data-group=\"{}\">",
            escape(&panel.group)
        );
        let _ = writeln!(
            out,
            "<text x=\"4\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\">{}</text>",
            yc + 3.0,
            escape(&panel.group)
        );
        for (share, d) in &panel.points {
            let _ = writeln!(
                out,
                "<circle cx=\"{:.2}\" cy=\"{yc:.2}\" r=\"2\" fill=\"{}\" fill-opacity=\"0.6\"/>",
                x_of(*d),
                share_colour(*share)
            );
        }
        if let Some(ign) = panel.ignore_na {
            let _ = writeln!(
                out,
                "<circle class=\"ignore-na\" cx=\"{:.2}\" cy=\"{yc:.2}\" r=\"4\" fill=\"none\" stroke=\"black\"/>",
                x_of(ign)
            );
        }
        let xm = x_of(panel.median);
        let _ = writeln!(
            out,
            "<line class=\"median\" x1=\"{xm:.2}\" y1=\"{:.2}\" x2=\"{xm:.2}\" y2=\"{:.2}\" stroke=\"black\" stroke-width=\"2\"/>",
            yc - row * 0.4,
            yc + row * 0.4
        );
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn ribbon(panels: &[RibbonPanel]) -> Result<String, SvgError> {
    if panels.is_empty() || panels.iter().all(|p| p.entries.is_empty()) {
        return Err(SvgError::Empty);
    }
    let ph = 220.0;
    let h = MARGIN + ph * panels.len() as f64;
    let (lo, hi) = extent(
        panels
            .iter()
            .flat_map(|p| p.entries.iter().flat_map(|e| [e.naive, e.lower, e.upper])),
    );
    let (lo, hi) = padded_with_zero(lo, hi);
    let mut out = String::new();
    header(&mut out, h);
    for (k, panel) in panels.iter().enumerate() {
        let top = MARGIN / 2.0 + ph * k as f64;
        let (y1, y0) = (top + 24.0, top + ph - 24.0);
        let y_of = |v: f64| scale(v, lo, hi, y0, y1);
        let _ = writeln!(out, "<g class=\"panel\" data-rho=\"{}\">", panel.rho);
        let _ = writeln!(
            out,
            "<text x=\"{MARGIN}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\">rho = {}</text>",
            top + 14.0,
            panel.rho
        );
        let _ = writeln!(
            out,
            "<text x=\"4\" y=\"{y1:.2}\" font-family=\"sans-serif\" font-size=\"10\">{hi:.3}</text>\n\
             <text x=\"4\" y=\"{y0:.2}\" font-family=\"sans-serif\" font-size=\"10\">{lo:.3}</text>"
        );
        let yz = y_of(0.0);
        let _ = writeln!(
            out,
            "<line class=\"zero\" x1=\"{MARGIN}\" y1=\"{yz:.2}\" x2=\"{}\" y2=\"{yz:.2}\" stroke=\"black\" stroke-dasharray=\"4 3\"/>",
            W - MARGIN
        );
        let n = panel.entries.len();
        let step = (W - 2.0 * MARGIN) / n.max(1) as f64;
        for (i, e) in panel.entries.iter().enumerate() {
            let x = MARGIN + step * (i as f64 + 0.5);
            let (ya, yb) = (y_of(e.upper), y_of(e.lower));
            let bw = (step * 0.6).min(16.0);
            let _ = writeln!(
                out,
                "<rect class=\"band\" x=\"{:.2}\" y=\"{ya:.2}\" width=\"{bw:.2}\" height=\"{:.2}\" fill=\"#1f77b4\" fill-opacity=\"0.3\"><title>{}</title></rect>",
                x - bw / 2.0,
                (yb - ya).max(0.5),
                escape(&e.label)
            );
            let _ = writeln!(
                out,
                "<circle cx=\"{x:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"black\"/>",
                y_of(e.naive)
            );
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    Ok(out)
}
