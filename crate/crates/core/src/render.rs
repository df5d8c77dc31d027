//! Standalone SVG renderings: a trace with its detected events, a ΔR
//! scatter with an optional decision surface, and ROC curves.

use std::fmt::Write;

use crate::events::{EventAnalysis, EventKind};
use crate::ml::RocPoint;
use crate::preprocess::CleanSignal;
use crate::SAMPLE_RATE_HZ;

const W: f64 = 900.0;
const PAD: f64 = 50.0;

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Maps data ranges onto a plot rectangle.
struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        self.x0 + (v - self.xr.0) / (self.xr.1 - self.xr.0).max(1e-12) * self.w
    }

    fn y(&self, v: f64) -> f64 {
        self.y0 + self.h - (v - self.yr.0) / (self.yr.1 - self.yr.0).max(1e-12) * self.h
    }

    fn axes(&self, svg: &mut String, xlabel: &str, ylabel: &str) {
        let _ = write!(
            svg,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>"##,
            self.x0, self.y0, self.w, self.h
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.xr.0 + f * (self.xr.1 - self.xr.0);
            let yv = self.yr.0 + f * (self.yr.1 - self.yr.0);
            let _ = write!(
                svg,
                r##"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text><text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{}</text>"##,
                self.x(xv),
                self.y0 + self.h + 14.0,
                tick(xv),
                self.x0 - 4.0,
                self.y(yv) + 4.0,
                tick(yv)
            );
        }
        let _ = write!(
            svg,
            r##"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text><text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{}</text>"##,
            self.x0 + self.w / 2.0,
            self.y0 + self.h + 30.0,
            escape(xlabel),
            self.x0 - 36.0,
            self.y0 + self.h / 2.0,
            self.x0 - 36.0,
            self.y0 + self.h / 2.0,
            escape(ylabel)
        );
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(h: f64) -> String {
    format!(r##"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{h}" viewBox="0 0 {W} {h}" font-family="sans-serif"><rect width="100%" height="100%" fill="white"/>"##)
}

/// Polyline segments over finite, valid points; gaps break the line.
fn polyline(svg: &mut String, f: &Frame, xs: impl Iterator<Item = (f64, Option<f64>)>, color: &str, width: f64) {
    let mut seg = String::new();
    let flush = |seg: &mut String, svg: &mut String| {
        if !seg.is_empty() {
            let _ = write!(svg, r##"<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{seg}"/>"##);
            seg.clear();
        }
    };
    for (x, y) in xs {
        match y.filter(|v| v.is_finite()) {
            Some(y) => {
                let _ = write!(seg, "{:.1},{:.1} ", f.x(x), f.y(y));
            }
            None => flush(&mut seg, svg),
        }
    }
    flush(&mut seg, svg);
}

/// Downsampling stride that keeps at most ~2000 points per line.
fn stride(n: usize) -> usize {
    (n / 2000).max(1)
}

/// FHR with baseline and shaded events (top), UC with tone and
/// contractions (bottom).
pub fn trace_svg(title: &str, fhr: &CleanSignal, uc: &CleanSignal, events: Option<&EventAnalysis>) -> String {
    let n = fhr.len();
    let dur = n as f64 / SAMPLE_RATE_HZ / 60.0;
    let h = 560.0;
    let mut svg = header(h);
    let _ = write!(svg, r##"<text x="{}" y="22" font-size="15" text-anchor="middle">{}</text>"##, W / 2.0, escape(title));
    let top = Frame { x0: PAD + 20.0, y0: 40.0, w: W - 2.0 * PAD - 20.0, h: 260.0, xr: (0.0, dur), yr: (50.0, 210.0) };
    let uc_max = uc.valid_values().fold(50.0f64, f64::max).ceil();
    let bot = Frame { x0: top.x0, y0: 360.0, w: top.w, h: 140.0, xr: (0.0, dur), yr: (0.0, uc_max) };
    let t = |k: usize| k as f64 / SAMPLE_RATE_HZ / 60.0;
    let s = stride(n);

    if let Some(ev) = events {
        for (list, color, frame) in [
            (&ev.accels, event_color(EventKind::Accel), &top),
            (&ev.decels, event_color(EventKind::Decel), &top),
            (&ev.contractions, event_color(EventKind::Contraction), &bot),
        ] {
            for e in list.iter() {
                let _ = write!(
                    svg,
                    r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{color}" fill-opacity="0.18"><title>{} {:.0}s</title></rect>"##,
                    frame.x(t(e.start_idx)),
                    frame.y0,
                    (frame.x(t(e.end_idx + 1)) - frame.x(t(e.start_idx))).max(1.0),
                    frame.h,
                    e.kind.name(),
                    e.duration_s
                );
            }
        }
    }
    polyline(&mut svg, &top, (0..n).step_by(s).map(|k| (t(k), fhr.valid[k].then_some(fhr.samples[k]))), "#1f77b4", 1.0);
    polyline(&mut svg, &bot, (0..uc.len()).step_by(s).map(|k| (t(k), uc.valid[k].then_some(uc.samples[k]))), "#444", 1.0);
    if let Some(ev) = events {
        polyline(&mut svg, &top, (0..n).step_by(s).map(|k| (t(k), Some(ev.baseline.values[k]))), "#000", 1.5);
        polyline(&mut svg, &bot, (0..ev.uc_tone.len()).step_by(s).map(|k| (t(k), Some(ev.uc_tone[k]))), "#999", 1.0);
        let counts = format!(
            "{} accelerations, {} decelerations, {} contractions",
            ev.accels.len(),
            ev.decels.len(),
            ev.contractions.len()
        );
        let _ = write!(svg, r##"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"##, W / 2.0, h - 8.0, counts);
    }
    top.axes(&mut svg, "", "FHR (bpm)");
    bot.axes(&mut svg, "time (min)", "UC");
    svg.push_str("</svg>");
    svg
}

/// A labelled point for [`scatter_svg`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    pub class: u8,
}

/// Two-class scatter. `surface` evaluates the model probability on the
/// plotted plane; it is drawn as a grid shaded by class and confidence.
pub fn scatter_svg(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    points: &[ScatterPoint],
    surface: Option<&dyn Fn(f64, f64) -> f64>,
) -> String {
    let h = 600.0;
    let mut svg = header(h);
    let _ = write!(svg, r##"<text x="{}" y="22" font-size="15" text-anchor="middle">{}</text>"##, W / 2.0, escape(title));
    let range = |vals: Vec<f64>| {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() && hi > lo {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        } else if lo.is_finite() {
            (lo - 1.0, lo + 1.0)
        } else {
            (0.0, 1.0)
        }
    };
    let f = Frame {
        x0: PAD + 30.0,
        y0: 40.0,
        w: h - 2.0 * PAD - 40.0,
        h: h - 2.0 * PAD - 40.0,
        xr: range(points.iter().map(|p| p.x).collect()),
        yr: range(points.iter().map(|p| p.y).collect()),
    };
    if let Some(prob) = surface {
        let cells = 60;
        let (cw, ch) = (f.w / cells as f64, f.h / cells as f64);
        for i in 0..cells {
            for j in 0..cells {
                let x = f.xr.0 + (i as f64 + 0.5) / cells as f64 * (f.xr.1 - f.xr.0);
                let y = f.yr.0 + (j as f64 + 0.5) / cells as f64 * (f.yr.1 - f.yr.0);
                let p = prob(x, y);
                let color = if p >= 0.5 { "#d62728" } else { "#1f77b4" };
                let alpha = 0.05 + 0.25 * (p - 0.5).abs() * 2.0;
                let _ = write!(
                    svg,
                    r##"<rect x="{:.1}" y="{:.1}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="{alpha:.3}"/>"##,
                    f.x0 + i as f64 * cw,
                    f.y0 + f.h - (j + 1) as f64 * ch,
                    cw + 0.3,
                    ch + 0.3
                );
            }
        }
    }
    for p in points {
        let (color, shape) = if p.class == 1 { (COLORS[1], "rect") } else { (COLORS[0], "circle") };
        if shape == "circle" {
            let _ = write!(svg, r##"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{color}" fill-opacity="0.8"/>"##, f.x(p.x), f.y(p.y));
        } else {
            let _ = write!(svg, r##"<rect x="{:.1}" y="{:.1}" width="8" height="8" fill="{color}"/>"##, f.x(p.x) - 4.0, f.y(p.y) - 4.0);
        }
    }
    f.axes(&mut svg, xlabel, ylabel);
    let lx = f.x0 + f.w + 20.0;
    let _ = write!(
        svg,
        r##"<circle cx="{lx}" cy="60" r="4" fill="{}"/><text x="{}" y="64" font-size="12">normal</text><rect x="{}" y="76" width="8" height="8" fill="{}"/><text x="{}" y="84" font-size="12">at-risk</text>"##,
        COLORS[0],
        lx + 10.0,
        lx - 4.0,
        COLORS[1],
        lx + 10.0
    );
    svg.push_str("</svg>");
    svg
}

/// One or more ROC curves with the chance diagonal.
pub fn roc_svg(title: &str, curves: &[(String, Vec<RocPoint>)]) -> String {
    let h = 560.0;
    let mut svg = header(h);
    let _ = write!(svg, r##"<text x="{}" y="22" font-size="15" text-anchor="middle">{}</text>"##, W / 2.0, escape(title));
    let f = Frame { x0: PAD + 30.0, y0: 40.0, w: 440.0, h: 440.0, xr: (0.0, 1.0), yr: (0.0, 1.0) };
    let _ = write!(
        svg,
        r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#bbb" stroke-dasharray="4 4"/>"##,
        f.x(0.0),
        f.y(0.0),
        f.x(1.0),
        f.y(1.0)
    );
    for (i, (name, pts)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        polyline(&mut svg, &f, pts.iter().map(|p| (p.fpr, Some(p.tpr))), color, 2.0);
        let ly = 60.0 + 18.0 * i as f64;
        let lx = f.x0 + f.w + 20.0;
        let _ = write!(
            svg,
            r##"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}" font-size="12">{}</text>"##,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(name)
        );
    }
    f.axes(&mut svg, "false positive rate", "true positive rate");
    svg.push_str("</svg>");
    svg
}

/// Shading colour used for each event kind.
pub fn event_color(kind: EventKind) -> &'static str {
    match kind {
        EventKind::Accel => "#2ca02c",
        EventKind::Decel => "#d62728",
        EventKind::Contraction => "#ff7f0e",
    }
}
