//! Minimal SVG line and scatter plots.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 40.0;
const PALETTE: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

pub struct Series {
    pub points: Vec<(f64, f64)>,
    /// Index into the palette.
    pub color: usize,
    /// Lines when set, dots otherwise.
    pub line: bool,
    pub width: f64,
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(series: &[Series]) -> Self {
        let mut x = (f64::INFINITY, f64::NEG_INFINITY);
        let mut y = x;
        for (a, b) in series.iter().flat_map(|s| &s.points) {
            if a.is_finite() && b.is_finite() {
                x = (x.0.min(*a), x.1.max(*a));
                y = (y.0.min(*b), y.1.max(*b));
            }
        }
        let widen = |(lo, hi): (f64, f64)| {
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let m = 0.05 * (hi - lo);
                (lo - m, hi + m)
            }
        };
        Self {
            x: widen(x),
            y: widen(y),
        }
    }

    fn px(&self, (a, b): (f64, f64)) -> (f64, f64) {
        (
            PAD + (a - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * PAD),
            H - PAD - (b - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * PAD),
        )
    }
}

pub fn plot(title: &str, series: &[Series], legend: &[(usize, &str)]) -> String {
    let f = Frame::fit(series);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(s, r#"<text x="{PAD}" y="24">{}</text>"#, escape(title));
    for (v, anchor, (x, y)) in [
        (f.x.0, "start", (PAD, H - PAD + 16.0)),
        (f.x.1, "end", (W - PAD, H - PAD + 16.0)),
    ] {
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{v:.3}</text>"#
        );
    }
    for (v, y) in [(f.y.0, H - PAD), (f.y.1, PAD + 10.0)] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" text-anchor="end">{v:.3}</text>"#,
            PAD - 4.0
        );
    }
    for ser in series {
        let color = PALETTE[ser.color % PALETTE.len()];
        if ser.line {
            let pts: Vec<String> = ser
                .points
                .iter()
                .map(|&p| {
                    let (x, y) = f.px(p);
                    format!("{x:.1},{y:.1}")
                })
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="{}" stroke-opacity="0.8" points="{}"/>"#,
                ser.width,
                pts.join(" ")
            );
        } else {
            for &p in &ser.points {
                let (x, y) = f.px(p);
                let _ = writeln!(
                    s,
                    r#"<circle cx="{x:.1}" cy="{y:.1}" r="{}" fill="{color}" fill-opacity="0.7"/>"#,
                    ser.width
                );
            }
        }
    }
    for (i, (color, label)) in legend.iter().enumerate() {
        let y = PAD + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" text-anchor="end" fill="{}">{}</text>"#,
            W - PAD - 6.0,
            PALETTE[color % PALETTE.len()],
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_stays_finite() {
        let ser = Series {
            points: vec![(0.0, 1.0), (1.0, 1.0)],
            color: 0,
            line: true,
            width: 1.0,
        };
        let out = plot("a < b", &[ser], &[(0, "x")]);
        assert!(!out.contains("NaN") && !out.contains("inf"));
        assert!(out.contains("a &lt; b"));
    }
}
