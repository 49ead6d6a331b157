//! Minimal SVG rendering: line plots (optionally with a second y-axis) and
//! projected 3-D scatter plots. Numbers are written with fixed precision so
//! output is byte-stable.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 70.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Left,
    Right,
}

#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub axis: Axis,
}

#[derive(Clone, Debug, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub left_label: String,
    pub right_label: String,
    pub left_log: bool,
    pub series: Vec<Series>,
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W:.0}" height="{H:.0}" viewBox="0 0 {W:.0} {H:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// `[lo, hi]` of finite values, widened when degenerate.
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
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

struct Scale {
    lo: f64,
    hi: f64,
    a: f64,
    b: f64,
}

impl Scale {
    fn map(&self, v: f64) -> f64 {
        self.a + (v - self.lo) / (self.hi - self.lo) * (self.b - self.a)
    }
}

fn fmt_tick(v: f64, log: bool) -> String {
    if log {
        format!("1e{v:.0}")
    } else if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

impl LinePlot {
    pub fn render(&self) -> String {
        let mut out = String::new();
        header(&mut out, &self.title);
        let tf = |v: f64, log: bool| if log { if v > 0.0 { v.log10() } else { f64::NAN } } else { v };
        let pts = |axis: Axis| {
            self.series
                .iter()
                .filter(move |s| s.axis == axis)
                .flat_map(|s| s.points.iter().copied())
        };
        let (x0, x1) = range(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
        let x = Scale { lo: x0, hi: x1, a: LEFT, b: W - RIGHT };
        let (l0, l1) = range(pts(Axis::Left).map(|p| tf(p.1, self.left_log)));
        let left = Scale { lo: l0, hi: l1, a: H - BOTTOM, b: TOP };
        let (r0, r1) = range(pts(Axis::Right).map(|p| p.1));
        let right = Scale { lo: r0, hi: r1, a: H - BOTTOM, b: TOP };
        let has_right = self.series.iter().any(|s| s.axis == Axis::Right);

        let _ = writeln!(
            out,
            r##"<rect x="{LEFT:.1}" y="{TOP:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>"##,
            W - LEFT - RIGHT,
            H - TOP - BOTTOM
        );
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let xv = x0 + t * (x1 - x0);
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                x.map(xv),
                H - BOTTOM + 16.0,
                fmt_tick(xv, false)
            );
            let lv = l0 + t * (l1 - l0);
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                left.map(lv) + 4.0,
                fmt_tick(lv, self.left_log)
            );
            if has_right {
                let rv = r0 + t * (r1 - r0);
                let _ = writeln!(
                    out,
                    r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
                    W - RIGHT + 6.0,
                    right.map(rv) + 4.0,
                    fmt_tick(rv, false)
                );
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            W / 2.0,
            H - 12.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            esc(&self.left_label)
        );
        if has_right {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" transform="rotate(90 {:.1} {:.1})">{}</text>"#,
                W - 16.0,
                H / 2.0,
                W - 16.0,
                H / 2.0,
                esc(&self.right_label)
            );
        }
        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let mut path = String::new();
            for &(px, py) in &s.points {
                let (sx, sy) = match s.axis {
                    Axis::Left => (x.map(px), left.map(tf(py, self.left_log))),
                    Axis::Right => (x.map(px), right.map(py)),
                };
                if sx.is_finite() && sy.is_finite() {
                    let _ = write!(path, "{}{sx:.2},{sy:.2}", if path.is_empty() { "M" } else { " L" });
                }
            }
            let dash = if s.axis == Axis::Right { r#" stroke-dasharray="6 3""# } else { "" };
            let _ = writeln!(out, r#"<path d="{path}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#);
            let ly = TOP + 14.0 + 16.0 * i as f64;
            let _ = writeln!(
                out,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"{dash}/>"#,
                LEFT + 10.0,
                ly - 4.0,
                LEFT + 30.0,
                ly - 4.0
            );
            let _ = writeln!(out, r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#, LEFT + 36.0, esc(&s.name));
        }
        out.push_str("</svg>\n");
        out
    }
}

/// 3-D scatter under a fixed oblique projection.
#[derive(Clone, Debug, Default)]
pub struct Scatter3 {
    pub title: String,
    /// Point coordinates and a group index selecting the color.
    pub points: Vec<([f64; 3], usize)>,
    pub legend: Vec<String>,
}

impl Scatter3 {
    fn project(p: [f64; 3]) -> (f64, f64) {
        let (az, el) = (35f64.to_radians(), 25f64.to_radians());
        let x = p[0] * az.cos() - p[1] * az.sin();
        let y = p[0] * az.sin() + p[1] * az.cos();
        (x, p[2] * el.cos() - y * el.sin())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        header(&mut out, &self.title);
        let half = self
            .points
            .iter()
            .flat_map(|(p, _)| p.iter().map(|v| v.abs()))
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max)
            .max(1e-12);
        let cx = W / 2.0;
        let cy = (H + TOP) / 2.0;
        let s = 0.42 * (H - TOP - 20.0) / half;
        for (k, name) in ["z1", "z2", "z3"].iter().enumerate() {
            let mut e = [0.0; 3];
            e[k] = half;
            let (ex, ey) = Self::project(e);
            let _ = writeln!(
                out,
                r##"<line x1="{cx:.1}" y1="{cy:.1}" x2="{:.2}" y2="{:.2}" stroke="#999"/>"##,
                cx + s * ex,
                cy - s * ey
            );
            let _ = writeln!(out, r##"<text x="{:.2}" y="{:.2}" fill="#555">{name}</text>"##, cx + 1.08 * s * ex, cy - 1.08 * s * ey);
        }
        for (p, g) in &self.points {
            let (px, py) = Self::project(*p);
            if px.is_finite() && py.is_finite() {
                let _ = writeln!(
                    out,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}" fill-opacity="0.7"/>"#,
                    cx + s * px,
                    cy - s * py,
                    PALETTE[g % PALETTE.len()]
                );
            }
        }
        for (i, name) in self.legend.iter().enumerate() {
            let ly = TOP + 14.0 + 16.0 * i as f64;
            let _ = writeln!(
                out,
                r#"<circle cx="20" cy="{:.1}" r="4" fill="{}"/><text x="30" y="{ly:.1}">{}</text>"#,
                ly - 4.0,
                PALETTE[i % PALETTE.len()],
                esc(name)
            );
        }
        let _ = writeln!(out, r##"<text x="{:.1}" y="{:.1}" text-anchor="end" fill="#555">half-width {half:.3e}</text>"##, W - 10.0, H - 10.0);
        out.push_str("</svg>\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_is_well_formed_and_stable() {
        let plot = LinePlot {
            title: "a < b".into(),
            x_label: "epoch".into(),
            left_label: "ratio".into(),
            right_label: "norm".into(),
            left_log: true,
            series: vec![
                Series { name: "ratio".into(), points: vec![(0.0, 100.0), (1.0, 10.0), (2.0, 0.0)], axis: Axis::Left },
                Series { name: "norm".into(), points: vec![(0.0, 0.1), (2.0, 0.3)], axis: Axis::Right },
            ],
        };
        let a = plot.render();
        assert_eq!(a, plot.render());
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        assert!(a.contains("a &lt; b"));
        assert_eq!(a.matches("<path").count(), 2);
    }

    #[test]
    fn scatter_handles_all_zero_points() {
        let s = Scatter3 { title: "t".into(), points: vec![([0.0; 3], 0), ([0.0; 3], 1)], legend: vec!["a".into()] };
        assert_eq!(s.render().matches("<circle").count(), 3);
    }
}
