//! Minimal standalone SVG line charts.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisScale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl Series {
    pub fn new(label: impl Into<String>, xs: Vec<f64>, ys: Vec<f64>) -> Self {
        Series {
            label: label.into(),
            xs,
            ys,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_scale: AxisScale,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
    "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    /// Points that can be drawn on the chosen x scale (positive x for log axes).
    fn drawable<'a>(&self, s: &'a Series) -> impl Iterator<Item = (f64, f64)> + 'a {
        let log = self.x_scale == AxisScale::Log;
        s.xs.iter()
            .zip(&s.ys)
            .filter(move |(x, y)| x.is_finite() && y.is_finite() && (!log || **x > 0.0))
            .map(move |(&x, &y)| (if log { x.log10() } else { x }, y))
    }

    pub fn render(&self) -> Result<String> {
        if self.series.is_empty() || self.series.iter().all(|s| s.xs.is_empty()) {
            return Err(Error::domain("chart has no data"));
        }
        if self.series.iter().any(|s| s.xs.len() != s.ys.len()) {
            return Err(Error::domain("series x and y lengths differ"));
        }
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for s in &self.series {
            for (x, y) in self.drawable(s) {
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
        }
        if !x0.is_finite() {
            return Err(Error::domain("chart has no drawable points"));
        }
        if x1 == x0 {
            x1 = x0 + 1.0;
        }
        if y1 == y0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let py = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            out,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        // ticks
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let xv = x0 + f * (x1 - x0);
            let yv = y0 + f * (y1 - y0);
            let xt = match self.x_scale {
                AxisScale::Log => format!("1e{xv:.1}"),
                AxisScale::Linear => format!("{xv:.3}"),
            };
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="11">{xt}</text>"#,
                px(xv),
                TOP + ph + 16.0
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{yv:.3}</text>"#,
                LEFT - 6.0,
                py(yv) + 4.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 16.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="16" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 16 {:.1})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for (idx, s) in self.series.iter().enumerate() {
            let color = PALETTE[idx % PALETTE.len()];
            let points: Vec<String> = self
                .drawable(s)
                .map(|(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
                points.join(" "),
                escape(&s.label)
            );
        }
        let _ = writeln!(out, "</svg>");
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let svg = self.render()?;
        std::fs::write(path, svg).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart(series: Vec<Series>, x_scale: AxisScale) -> Chart {
        Chart {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            x_scale,
            series,
        }
    }

    #[test]
    fn one_polyline_per_series() {
        let series = (1..=3)
            .map(|r| Series::new(format!("r={r}"), vec![0.0, 0.1, 1.0, 10.0], vec![1.0 / r as f64, 0.5, 0.2, 0.01]))
            .collect();
        let svg = chart(series, AxisScale::Log).render().unwrap();
        assert_eq!(svg.matches("<polyline").count(), 3);
        // omega = 0 is skipped on a log axis
        let first = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        assert_eq!(first.split("points=\"").nth(1).unwrap().split('"').next().unwrap().split(' ').count(), 3);
    }

    #[test]
    fn empty_is_error() {
        assert!(chart(vec![], AxisScale::Linear).render().is_err());
        assert!(chart(vec![Series::new("a", vec![], vec![])], AxisScale::Linear).render().is_err());
    }

    #[test]
    fn deterministic() {
        let s = vec![Series::new("a<b", vec![0.0, 1.0], vec![0.0, 2.0])];
        let a = chart(s.clone(), AxisScale::Linear).render().unwrap();
        let b = chart(s, AxisScale::Linear).render().unwrap();
        assert_eq!(a, b);
        assert!(a.contains("a&lt;b"));
    }
}
