//! Minimal SVG charts: polylines, step lines and bars on a pair of axes.
//!
//! Coordinates are printed with fixed precision so identical data gives
//! byte-identical files.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 32.0;
const BOTTOM: f64 = 44.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Style {
    Line,
    Step,
}

pub struct Series {
    pub name: String,
    pub y: Vec<f64>,
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub style: Style,
    pub series: Vec<Series>,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="18" font-size="13" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title));
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (l, r, t, b) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(out, r#"<path d="M{l:.1},{t:.1} L{l:.1},{b:.1} L{r:.1},{b:.1}" stroke="black" fill="none"/>"#);
    for i in 0..=4 {
        let fy = f.y0 + (f.y1 - f.y0) * i as f64 / 4.0;
        let y = f.py(fy);
        let _ = writeln!(out, r##"<line x1="{:.1}" y1="{y:.1}" x2="{l:.1}" y2="{y:.1}" stroke="black"/>"##, l - 4.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, l - 6.0, y + 4.0, tick(fy));
        let fx = f.x0 + (f.x1 - f.x0) * i as f64 / 4.0;
        let x = f.px(fx);
        let _ = writeln!(out, r#"<line x1="{x:.1}" y1="{b:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#, b + 4.0);
        let _ = writeln!(out, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, b + 16.0, tick(fx));
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (l + r) / 2.0, HEIGHT - 8.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(y_label)
    );
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e5).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 14.0 * i as f64 + 6.0;
        let x = WIDTH - RIGHT + 12.0;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(out, r#"<line x1="{x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{color}" stroke-width="2"/>"#, x + 16.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, x + 20.0, y + 4.0, escape(name));
    }
}

pub fn render(chart: &Chart) -> String {
    let n = chart.series.iter().map(|s| s.y.len()).max().unwrap_or(0);
    let (y0, y1) = range(chart.series.iter().flat_map(|s| s.y.iter().copied()));
    let x1 = match chart.style {
        Style::Line => (n.max(2) - 1) as f64,
        Style::Step => n.max(1) as f64,
    };
    let f = Frame { x0: 0.0, x1, y0, y1 };
    let mut out = String::new();
    header(&mut out, &chart.title);
    axes(&mut out, &f, &chart.x_label, &chart.y_label);
    for (i, s) in chart.series.iter().enumerate() {
        let mut d = String::new();
        for (t, &v) in s.y.iter().enumerate() {
            if !v.is_finite() {
                continue;
            }
            let cmd = if d.is_empty() { 'M' } else { 'L' };
            match chart.style {
                Style::Line => {
                    let _ = write!(d, "{cmd}{:.2},{:.2} ", f.px(t as f64), f.py(v));
                }
                Style::Step => {
                    let _ = write!(d, "{cmd}{:.2},{:.2} L{:.2},{:.2} ", f.px(t as f64), f.py(v), f.px(t as f64 + 1.0), f.py(v));
                }
            }
        }
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(out, r#"<path d="{}" stroke="{color}" stroke-width="1.2" fill="none"/>"#, d.trim_end());
    }
    let names: Vec<&str> = chart.series.iter().map(|s| s.name.as_str()).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

/// Bar chart with one group per category and one bar per series.
pub fn render_bars(title: &str, x_label: &str, y_label: &str, categories: &[String], series: &[Series]) -> String {
    let (_, y1) = range(series.iter().flat_map(|s| s.y.iter().copied()).chain([0.0]));
    let f = Frame {
        x0: 0.0,
        x1: categories.len().max(1) as f64,
        y0: 0.0,
        y1,
    };
    let mut out = String::new();
    header(&mut out, title);
    let (l, r, b) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM);
    let _ = writeln!(out, r#"<path d="M{l:.1},{TOP:.1} L{l:.1},{b:.1} L{r:.1},{b:.1}" stroke="black" fill="none"/>"#);
    for i in 0..=4 {
        let fy = f.y1 * i as f64 / 4.0;
        let y = f.py(fy);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, l - 6.0, y + 4.0, tick(fy));
    }
    let group = (r - l) / f.x1;
    let bar = 0.8 * group / series.len().max(1) as f64;
    for (c, name) in categories.iter().enumerate() {
        let gx = l + group * c as f64;
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, gx + group / 2.0, b + 16.0, escape(name));
        for (i, s) in series.iter().enumerate() {
            let v = s.y.get(c).copied().unwrap_or(0.0);
            let top = f.py(v);
            let x = gx + 0.1 * group + bar * i as f64;
            let color = PALETTE[i % PALETTE.len()];
            let _ = writeln!(out, r#"<rect x="{x:.2}" y="{top:.2}" width="{bar:.2}" height="{:.2}" fill="{color}"/>"#, b - top);
        }
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (l + r) / 2.0, HEIGHT - 8.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        (TOP + b) / 2.0,
        (TOP + b) / 2.0,
        escape(y_label)
    );
    let names: Vec<&str> = series.iter().map(|s| s.name.as_str()).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_well_formed_svg() {
        let chart = Chart {
            title: "a < b".into(),
            x_label: "t".into(),
            y_label: "kW".into(),
            style: Style::Step,
            series: vec![Series { name: "s".into(), y: vec![0.0, 1.0, f64::NAN, 2.0] }],
        };
        let svg = render(&chart);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("a &lt; b"));
        assert!(!svg.contains("NaN"));
        let bars = render_bars("h", "EC", "count", &["0".into(), "1".into()], &[Series { name: "n1".into(), y: vec![3.0, 4.0] }]);
        assert_eq!(bars.matches("<rect").count(), 3);
    }

    #[test]
    fn flat_series_do_not_divide_by_zero() {
        let chart = Chart {
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
            style: Style::Line,
            series: vec![Series { name: "z".into(), y: vec![0.0; 3] }],
        };
        assert!(!render(&chart).contains("inf"));
    }
}
