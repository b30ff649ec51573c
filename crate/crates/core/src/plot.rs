//! Standalone SVG charts of trace CSVs.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

/// A trace CSV with every cell parsed as an optional float.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl TraceTable {
    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            rows.push(rec.iter().map(|c| c.parse::<f64>().ok()).collect());
        }
        if rows.is_empty() {
            return Err(Error::Input(format!("{}: no rows", path.display())));
        }
        Ok(Self { headers, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.headers.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r.get(i).copied().flatten()).collect())
    }

    /// Columns named `prefix_0`, `prefix_1`, ... in order.
    pub fn family(&self, prefix: &str) -> Vec<(String, Vec<Option<f64>>)> {
        (0..)
            .map(|i| format!("{prefix}_{i}"))
            .map_while(|name| self.column(&name).map(|c| (name, c)))
            .collect()
    }
}

/// Provenance embedded in every chart.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PlotMeta {
    pub config_sha256: Option<String>,
    pub seed: Option<u64>,
    pub source: String,
}

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub values: Vec<Option<f64>>,
    /// Optional `(low, high)` band drawn under the line.
    pub band: Option<Vec<Option<(f64, f64)>>>,
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn tick_label(v: f64, log: bool) -> String {
    if log {
        format!("1e{}", v.round() as i64)
    } else if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e5) {
        format!("{v:.2e}")
    } else {
        format!("{}", (v * 1e4).round() / 1e4)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart over `x`. With `log_y`, nonpositive values are dropped.
pub fn line_chart(title: &str, x_label: &str, x: &[f64], series: &[Series], log_y: bool, meta: &PlotMeta) -> Result<String> {
    let ty = |v: f64| if log_y { (v > 0.0).then(|| v.log10()) } else { Some(v) };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        for v in s.values.iter().flatten().filter_map(|&v| ty(v)) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        for (a, b) in s.band.iter().flatten().flatten() {
            for v in [*a, *b].into_iter().filter_map(ty) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if !lo.is_finite() {
        return Err(Error::Input(format!("{title}: no plottable values")));
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let (x0, x1) = (x.first().copied().unwrap_or(0.0), x.last().copied().unwrap_or(1.0).max(x[0] + 1.0));
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let px = |v: f64| MARGIN_L + (v - x0) / (x1 - x0) * pw;
    let py = |v: f64| MARGIN_T + (hi - v) / (hi - lo) * ph;

    let mut svg = String::new();
    let meta_json = serde_json::to_string(meta)?;
    writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(svg, "<metadata>{}</metadata>", escape(&meta_json)).unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(svg, r#"<text x="{}" y="22" font-size="15" text-anchor="middle">{}</text>"#, fmt(MARGIN_L + pw / 2.0), escape(title)).unwrap();
    writeln!(
        svg,
        r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        fmt(MARGIN_L),
        fmt(MARGIN_T),
        fmt(pw),
        fmt(ph)
    )
    .unwrap();
    for t in 0..=4 {
        let fy = lo + (hi - lo) * t as f64 / 4.0;
        let fx = x0 + (x1 - x0) * t as f64 / 4.0;
        writeln!(svg, r##"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/>"##, fmt(MARGIN_L), fmt(MARGIN_L + pw), y = fmt(py(fy))).unwrap();
        writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, fmt(MARGIN_L - 6.0), fmt(py(fy) + 4.0), tick_label(fy, log_y)).unwrap();
        writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, fmt(px(fx)), fmt(MARGIN_T + ph + 18.0), tick_label(fx, false)).unwrap();
    }
    writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, fmt(MARGIN_L + pw / 2.0), fmt(HEIGHT - 10.0), escape(x_label)).unwrap();

    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        if let Some(band) = &s.band {
            let pts: Vec<(f64, f64, f64)> = x
                .iter()
                .zip(band)
                .filter_map(|(&xv, b)| b.and_then(|(a, c)| Some((xv, ty(a)?, ty(c)?))))
                .collect();
            if pts.len() > 1 {
                let mut d = String::new();
                for (xv, _, top) in &pts {
                    write!(d, "{},{} ", fmt(px(*xv)), fmt(py(*top))).unwrap();
                }
                for (xv, bottom, _) in pts.iter().rev() {
                    write!(d, "{},{} ", fmt(px(*xv)), fmt(py(*bottom))).unwrap();
                }
                writeln!(svg, r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#, d.trim_end()).unwrap();
            }
        }
        let mut d = String::new();
        for (&xv, v) in x.iter().zip(&s.values) {
            if let Some(y) = v.and_then(ty) {
                write!(d, "{},{} ", fmt(px(xv)), fmt(py(y))).unwrap();
            }
        }
        writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.3"/>"#, d.trim_end()).unwrap();
        let ly = MARGIN_T + 14.0 + 18.0 * si as f64;
        let lx = MARGIN_L + pw + 12.0;
        writeln!(svg, r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/>"#, fmt(lx), fmt(lx + 18.0), y = fmt(ly)).unwrap();
        writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, fmt(lx + 24.0), fmt(ly + 4.0), escape(&s.label)).unwrap();
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Charts for one trace: cost, per-center gradient norms and `P̂` with a
/// two-standard-error band when the window lengths are known.
///
/// `window(n)` gives the estimator window at iteration `n`.
pub fn trace_charts(table: &TraceTable, meta: &PlotMeta, window: Option<&dyn Fn(u64) -> u64>) -> Result<Vec<(String, String)>> {
    let n: Vec<f64> = table
        .column("n")
        .ok_or_else(|| Error::Input("trace has no `n` column".into()))?
        .into_iter()
        .map(|v| v.unwrap_or(f64::NAN))
        .collect();
    let mut out = Vec::new();
    if let Some(f) = table.column("f").filter(|c| c.iter().any(Option::is_some)) {
        let s = [Series { label: "f(W)".into(), values: f, band: None }];
        out.push(("cost.svg".to_string(), line_chart("k-means cost", "iteration n", &n, &s, false, meta)?));
    }
    let grads: Vec<Series> = table
        .family("gradnorm")
        .into_iter()
        .filter(|(_, c)| c.iter().any(|v| v.is_some_and(|x| x > 0.0)))
        .map(|(label, values)| Series { label, values, band: None })
        .collect();
    if !grads.is_empty() {
        out.push(("gradnorm.svg".to_string(), line_chart("gradient norm per center", "iteration n", &n, &grads, true, meta)?));
    }
    let phat: Vec<Series> = table
        .family("Phat")
        .into_iter()
        .map(|(label, values)| {
            let band = window.map(|win| {
                values
                    .iter()
                    .zip(&n)
                    .map(|(v, &nv)| {
                        let p = (*v)?;
                        let s = win(nv as u64);
                        (s > 0).then(|| {
                            let half = 2.0 * (p * (1.0 - p) / s as f64).sqrt();
                            ((p - half).max(0.0), (p + half).min(1.0))
                        })
                    })
                    .collect()
            });
            Series { label, values, band }
        })
        .collect();
    if !phat.is_empty() {
        out.push(("phat.svg".to_string(), line_chart("estimated cell masses", "iteration n", &n, &phat, false, meta)?));
    }
    if out.is_empty() {
        return Err(Error::Input("trace has no plottable columns".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_embeds_metadata_and_series() {
        let meta = PlotMeta { config_sha256: Some("abc".into()), seed: Some(4), source: "t.csv".into() };
        let s = [Series { label: "a<b".into(), values: vec![Some(1.0), None, Some(3.0)], band: None }];
        let svg = line_chart("demo", "n", &[0.0, 1.0, 2.0], &s, false, &meta).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains(r#"<metadata>{"config_sha256":"abc","seed":4,"source":"t.csv"}</metadata>"#));
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        let again = line_chart("demo", "n", &[0.0, 1.0, 2.0], &s, false, &meta).unwrap();
        assert_eq!(svg, again);
    }

    #[test]
    fn empty_trace_has_no_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        std::fs::write(&p, "n,I,f\n").unwrap();
        let err = TraceTable::read(&p).unwrap_err();
        assert!(err.to_string().contains("no rows"));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn log_chart_skips_nonpositive() {
        let s = [Series { label: "g".into(), values: vec![Some(0.0), Some(1e-3), Some(1e-1)], band: None }];
        let svg = line_chart("g", "n", &[0.0, 1.0, 2.0], &s, true, &PlotMeta::default()).unwrap();
        assert!(svg.contains("1e-3"));
    }
}
