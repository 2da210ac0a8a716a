//! Report artifacts: two-column CSV tables and standalone SVG line plots.

use std::fmt::Write as _;
use std::path::Path;

use super::curves::EvalReport;
use crate::error::{Error, Result};
use crate::raster::write_atomic;

/// `(metric, value)` rows for an evaluation report, with the positive-class
/// prevalence as the PR baseline.
pub fn report_rows(report: &EvalReport) -> Vec<(String, f64)> {
    let mut rows = vec![
        ("auroc".to_string(), report.auroc),
        ("auprc".to_string(), report.auprc),
    ];
    if let Some(f) = report.fpr95 {
        rows.push(("fpr95".to_string(), f));
    }
    rows.push(("positives".to_string(), report.positives as f64));
    rows.push(("negatives".to_string(), report.negatives as f64));
    rows.push(("prevalence".to_string(), report.prevalence()));
    rows
}

pub fn rows_to_csv(rows: &[(String, f64)]) -> Result<String> {
    let mut out = String::from("metric,value\n");
    for (k, v) in rows {
        if k.contains([',', '\n']) {
            return Err(Error::invalid(format!("metric name {k:?} is not CSV-safe")));
        }
        writeln!(out, "{k},{v}").unwrap();
    }
    Ok(out)
}

pub fn write_rows_csv(rows: &[(String, f64)], path: &Path) -> Result<()> {
    write_atomic(path, rows_to_csv(rows)?.as_bytes())
}

pub struct Series<'a> {
    pub name: &'a str,
    pub points: &'a [(f64, f64)],
}

pub struct Plot<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    /// Axis ranges; `None` fits the data.
    pub x_range: Option<(f64, f64)>,
    pub y_range: Option<(f64, f64)>,
    pub series: Vec<Series<'a>>,
}

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

fn fit_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
        (l.min(v), h.max(v))
    });
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo <= 0.0 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

impl Plot<'_> {
    pub fn to_svg(&self) -> String {
        let all = || self.series.iter().flat_map(|s| s.points.iter());
        let (x0, x1) = self
            .x_range
            .unwrap_or_else(|| fit_range(all().map(|p| p.0)));
        let (y0, y1) = self
            .y_range
            .unwrap_or_else(|| fit_range(all().map(|p| p.1)));
        let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
        let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

        let mut s = String::new();
        writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        )
        .unwrap();
        writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(self.title)
        )
        .unwrap();
        writeln!(
            s,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            WIDTH - 2.0 * MARGIN,
            HEIGHT - 2.0 * MARGIN
        )
        .unwrap();
        for (v, anchor_x) in [(x0, px(x0)), (x1, px(x1))] {
            writeln!(
                s,
                r#"<text x="{anchor_x:.6}" y="{}" text-anchor="middle">{v:.3}</text>"#,
                HEIGHT - MARGIN + 16.0
            )
            .unwrap();
        }
        for (v, anchor_y) in [(y0, py(y0)), (y1, py(y1))] {
            writeln!(
                s,
                r#"<text x="{}" y="{anchor_y:.6}" text-anchor="end">{v:.3}</text>"#,
                MARGIN - 6.0
            )
            .unwrap();
        }
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 12.0,
            escape(self.x_label)
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(self.y_label)
        )
        .unwrap();
        for (i, series) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let pts: Vec<String> = series
                .points
                .iter()
                .map(|&(x, y)| format!("{:.6},{:.6}", px(x), py(y)))
                .collect();
            writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
                pts.join(" "),
                escape(series.name)
            )
            .unwrap();
            writeln!(
                s,
                r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
                MARGIN + 8.0,
                MARGIN + 16.0 * (i + 1) as f64,
                escape(series.name)
            )
            .unwrap();
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_svg().as_bytes())
    }
}

/// Steps `(recall, precision)` points into a staircase, as PR curves are drawn.
pub fn step_points(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(points.len() * 2);
    for (i, &(x, y)) in points.iter().enumerate() {
        if i > 0 {
            out.push((x, points[i - 1].1));
        }
        out.push((x, y));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_rows() {
        let r = EvalReport {
            auroc: 0.75,
            auprc: 0.5,
            fpr95: None,
            positives: 1,
            negatives: 3,
        };
        let csv = rows_to_csv(&report_rows(&r)).unwrap();
        assert_eq!(
            csv,
            "metric,value\nauroc,0.75\nauprc,0.5\npositives,1\nnegatives,3\nprevalence,0.25\n"
        );
        assert!(rows_to_csv(&[("a,b".into(), 1.0)]).is_err());
    }

    #[test]
    fn polyline_has_six_decimals() {
        let pts = [(0.0, 0.0), (0.5, 0.25), (1.0, 1.0)];
        let svg = Plot {
            title: "ROC <test>",
            x_label: "FPR",
            y_label: "TPR",
            x_range: Some((0.0, 1.0)),
            y_range: Some((0.0, 1.0)),
            series: vec![Series {
                name: "mlp",
                points: &pts,
            }],
        }
        .to_svg();
        assert!(svg.contains(
            r#"points="56.000000,344.000000 240.000000,272.000000 424.000000,56.000000""#
        ));
        assert!(svg.contains("ROC &lt;test&gt;"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn staircase() {
        assert_eq!(
            step_points(&[(0.0, 1.0), (0.5, 0.5)]),
            vec![(0.0, 1.0), (0.5, 1.0), (0.5, 0.5)]
        );
    }
}
