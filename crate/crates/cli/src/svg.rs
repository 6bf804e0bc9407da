//! Static SVG line and bar charts.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub struct LineChart<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub series: Vec<Series>,
}

pub struct BarChart<'a> {
    pub title: &'a str,
    pub y_label: &'a str,
    pub bars: Vec<(String, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Padded `[lo, hi]` covering `values`, never degenerate.
fn range(values: impl Iterator<Item = f64>, include_zero: bool) -> (f64, f64) {
    let (mut lo, mut hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if include_zero {
        lo = lo.min(0.0);
        hi = hi.max(0.0);
    }
    if hi - lo < 1e-12 {
        let pad = lo.abs().max(1.0) * 0.05;
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (if include_zero && lo == 0.0 { 0.0 } else { lo - pad }, hi + pad)
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, y: (f64, f64), x_label: &str, y_label: &str) {
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        out,
        r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let v = y.0 + (y.1 - y.0) * i as f64 / 4.0;
        let py = y0 - (y0 - y1) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r##"<line x1="{x0}" y1="{py:.2}" x2="{x1}" y2="{py:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            x0 - 6.0,
            py + 4.0,
            tick(v)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

impl LineChart<'_> {
    pub fn render(&self) -> String {
        let mut out = String::new();
        header(&mut out, self.title);
        let all = || self.series.iter().flat_map(|s| s.points.iter());
        let x = range(all().map(|p| p.0), false);
        let y = range(all().map(|p| p.1), false);
        axes(&mut out, y, self.x_label, self.y_label);
        let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
        let sx = |v: f64| x0 + (v - x.0) / (x.1 - x.0) * (x1 - x0);
        let sy = |v: f64| y0 - (v - y.0) / (y.1 - y.0) * (y0 - y1);
        for i in 0..=4 {
            let v = x.0 + (x.1 - x.0) * i as f64 / 4.0;
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(v),
                y0 + 16.0,
                tick(v)
            );
        }
        for (i, s) in self.series.iter().enumerate() {
            let colour = PALETTE[i % PALETTE.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1)))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
                pts.join(" ")
            );
            for p in &pts {
                let (cx, cy) = p.split_once(',').unwrap_or(("0", "0"));
                let _ = writeln!(out, r#"<circle cx="{cx}" cy="{cy}" r="2.5" fill="{colour}"/>"#);
            }
            let ly = TOP + 10.0 + 18.0 * i as f64;
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="12" height="3" fill="{colour}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                x1 + 12.0,
                ly - 4.0,
                x1 + 30.0,
                ly,
                escape(&s.name)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

impl BarChart<'_> {
    pub fn render(&self) -> String {
        let mut out = String::new();
        header(&mut out, self.title);
        let y = range(self.bars.iter().map(|b| b.1), true);
        axes(&mut out, y, "", self.y_label);
        let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
        let sy = |v: f64| y0 - (v - y.0) / (y.1 - y.0) * (y0 - y1);
        let n = self.bars.len().max(1) as f64;
        let slot = (x1 - x0) / n;
        let label_size = if self.bars.len() > 8 { 8 } else { 11 };
        let crowded = self.bars.len() > 12;
        let stride = self.bars.len().div_ceil(10).max(1);
        for (i, (label, v)) in self.bars.iter().enumerate() {
            let colour = PALETTE[i % PALETTE.len()];
            let left = x0 + slot * i as f64 + slot * 0.15;
            let (top, bottom) = if v.is_finite() { (sy(v.max(0.0)), sy(v.min(0.0))) } else { (y0, y0) };
            let _ = writeln!(
                out,
                r#"<rect x="{left:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{colour}"/>"#,
                slot * 0.7,
                (bottom - top).max(0.0)
            );
            let cx = left + slot * 0.35;
            if !crowded {
                let _ = writeln!(
                    out,
                    r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle" font-size="{label_size}">{}</text>"#,
                    top - 4.0,
                    tick(*v)
                );
            }
            if i % stride == 0 {
                let _ = writeln!(
                    out,
                    r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle" font-size="{label_size}">{}</text>"#,
                    y0 + 16.0,
                    escape(label)
                );
            }
        }
        out.push_str("</svg>\n");
        out
    }
}
