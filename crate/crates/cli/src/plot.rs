//! Minimal SVG line plots and their CSV twins.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::{io_err, CliError};

/// Version column written into every report table.
pub const TABLE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn label(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{}", (v * 1000.0).round() / 1000.0)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl LinePlot {
    fn finite_points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let log_x = self.log_x;
        self.series
            .iter()
            .flat_map(|s| s.points.iter().copied())
            .filter(move |&(x, y)| x.is_finite() && y.is_finite() && (!log_x || x > 0.0))
    }

    pub fn to_svg(&self) -> String {
        let tx = |x: f64| if self.log_x { x.log10() } else { x };
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in self.finite_points() {
            x0 = x0.min(tx(x));
            x1 = x1.max(tx(x));
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 == x0 {
            x1 = x0 + 1.0;
        }
        if y1 == y0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let px = |x: f64| MARGIN + (tx(x) - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
        let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#,
            W = WIDTH,
            H = HEIGHT
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
            fmt(WIDTH / 2.0),
            escape(&self.title)
        );
        let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(
            s,
            r#"<path d="M{} {} L{} {} L{} {}" fill="none" stroke="black"/>"#,
            fmt(l),
            fmt(t),
            fmt(l),
            fmt(b),
            fmt(r),
            fmt(b)
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let yv = y0 + f * (y1 - y0);
            let xv = x0 + f * (x1 - x0);
            let xl = if self.log_x { 10f64.powf(xv) } else { xv };
            let ypos = py(yv);
            let xpos = MARGIN + f * (WIDTH - 2.0 * MARGIN);
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                fmt(l - 6.0),
                fmt(ypos + 4.0),
                label(yv)
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                fmt(xpos),
                fmt(b + 16.0),
                label(xl)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            fmt(WIDTH / 2.0),
            fmt(HEIGHT - 16.0),
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            fmt(HEIGHT / 2.0),
            fmt(HEIGHT / 2.0),
            escape(&self.y_label)
        );
        for (k, series) in self.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let pts: Vec<String> = series
                .points
                .iter()
                .filter(|&&(x, y)| x.is_finite() && y.is_finite() && (!self.log_x || x > 0.0))
                .map(|&(x, y)| format!("{},{}", fmt(px(x)), fmt(py(y))))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
            let ly = MARGIN + 14.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
                fmt(WIDTH - MARGIN + 4.0),
                fmt(ly),
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }

    /// Long-format table: `schema,series,x,y`.
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["schema", "series", &self.x_label, &self.y_label])?;
        for s in &self.series {
            for &(x, y) in &s.points {
                w.serialize((TABLE_SCHEMA_VERSION, &s.name, x, y))?;
            }
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes `<stem>.svg` and `<stem>.csv` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), CliError> {
        let svg = dir.join(format!("{stem}.svg"));
        fs::write(&svg, self.to_svg()).map_err(|e| io_err(&svg, e))?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let text = self.to_csv().map_err(|e| io_err(&csv_path, e))?;
        fs::write(&csv_path, text).map_err(|e| io_err(&csv_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plot() -> LinePlot {
        LinePlot {
            title: "a < b".into(),
            x_label: "tau".into(),
            y_label: "rho".into(),
            log_x: true,
            series: vec![
                Series {
                    name: "A".into(),
                    points: vec![(0.01, -0.2), (0.5, 0.8), (5.0, 0.7)],
                },
                Series {
                    name: "B".into(),
                    points: vec![(0.01, f64::NAN), (0.5, -0.6)],
                },
            ],
        }
    }

    #[test]
    fn svg_has_one_polyline_per_series() {
        let svg = plot().to_svg();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a &lt; b"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn csv_holds_every_plotted_point() {
        let text = plot().to_csv().unwrap();
        let mut r = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(r.headers().unwrap(), vec!["schema", "series", "tau", "rho"]);
        let rows: Vec<(u32, String, f64, f64)> = r.deserialize().map(|x| x.unwrap()).collect();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[1], (1, "A".to_string(), 0.5, 0.8));
    }

    #[test]
    fn output_is_deterministic() {
        assert_eq!(plot().to_svg(), plot().to_svg());
        let empty = LinePlot { series: vec![], ..plot() };
        assert!(empty.to_svg().ends_with("</svg>\n"));
    }
}
