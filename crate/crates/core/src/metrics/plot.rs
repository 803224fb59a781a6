//! Plot emission: a CSV of curve samples (the machine-readable contract)
//! and a self-contained SVG rendering of the same curves.

use super::curves::MetricCurve;
use crate::error::{Error, Result};
use std::fs;
use std::path::{Path, PathBuf};

const COLORS: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Write `<stem>.csv` and `<stem>.svg` for a named set of curves.
/// Returns both paths. Values print in shortest round-trip form, so
/// re-parsing the CSV reproduces them exactly.
pub fn emit_plot(curves: &[(String, MetricCurve)], stem: &Path) -> Result<(PathBuf, PathBuf)> {
    if curves.is_empty() {
        return Err(Error::Empty("plot curve list".into()));
    }
    for (name, _) in curves {
        if name.contains(',') || name.contains('\n') || name.is_empty() {
            return Err(Error::Config(format!("curve name {name:?} cannot appear in CSV")));
        }
    }
    let csv_path = stem.with_extension("csv");
    let svg_path = stem.with_extension("svg");
    fs::write(&csv_path, render_csv(curves))?;
    fs::write(&svg_path, render_svg(curves))?;
    Ok((csv_path, svg_path))
}

fn render_csv(curves: &[(String, MetricCurve)]) -> String {
    let mut out = String::from("curve,threshold,value\n");
    for (name, curve) in curves {
        for (t, v) in curve.thresholds.iter().zip(&curve.values) {
            out.push_str(&format!("{name},{t},{v}\n"));
        }
    }
    out
}

/// Parse a file written by [`emit_plot`] back into (name, threshold,
/// value) rows.
pub fn parse_plot_csv(text: &str) -> Result<Vec<(String, f64, f64)>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("curve,threshold,value") => {}
        other => {
            return Err(Error::Format(format!("unexpected CSV header {other:?}")));
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut parts = line.splitn(3, ',');
        let (name, t, v) = (parts.next(), parts.next(), parts.next());
        let (name, t, v) = match (name, t, v) {
            (Some(n), Some(t), Some(v)) => (n, t, v),
            _ => return Err(Error::Format(format!("CSV row {} is malformed", i + 2))),
        };
        let t: f64 = t
            .parse()
            .map_err(|_| Error::Format(format!("bad threshold {t:?} on row {}", i + 2)))?;
        let v: f64 =
            v.parse().map_err(|_| Error::Format(format!("bad value {v:?} on row {}", i + 2)))?;
        rows.push((name.to_string(), t, v));
    }
    Ok(rows)
}

fn render_svg(curves: &[(String, MetricCurve)]) -> String {
    let (w, h) = (640.0, 480.0);
    let (ml, mr, mt, mb) = (60.0, 20.0, 20.0, 60.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let t_min = curves
        .iter()
        .flat_map(|(_, c)| c.thresholds.first().copied())
        .fold(f64::INFINITY, f64::min);
    let t_max = curves
        .iter()
        .flat_map(|(_, c)| c.thresholds.last().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    let span = if t_max > t_min { t_max - t_min } else { 1.0 };
    let sx = |t: f64| ml + (t - t_min) / span * pw;
    let sy = |v: f64| mt + (1.0 - v) * ph;

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    ));
    // Axes and gridlines at quarter steps.
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let y = sy(f);
        let x = sx(t_min + f * span);
        s.push_str(&format!(
            "<line x1=\"{ml}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>\n",
            w - mr
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{y:.1}\" font-size=\"12\" text-anchor=\"end\" \
             dominant-baseline=\"middle\">{f:.2}</text>\n",
            ml - 6.0
        ));
        s.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">{:.2}</text>\n",
            h - mb + 18.0,
            t_min + f * span
        ));
    }
    s.push_str(&format!(
        "<rect x=\"{ml}\" y=\"{mt}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#333\"/>\n"
    ));
    for (k, (name, curve)) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = curve
            .thresholds
            .iter()
            .zip(&curve.values)
            .map(|(&t, &v)| format!("{:.2},{:.2}", sx(t), sy(v)))
            .collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            pts.join(" ")
        ));
        let ly = mt + 18.0 + 18.0 * k as f64;
        s.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" \
             stroke=\"{color}\" stroke-width=\"2\"/>\n",
            ml + 10.0,
            ml + 34.0
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{ly:.1}\" font-size=\"12\" dominant-baseline=\"middle\">\
             {} ({:.3})</text>\n",
            ml + 40.0,
            xml_escape(name),
            curve.summary
        ));
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::curves::success_auc;

    fn tmp_stem(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("stk-plot-test");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn csv_has_a_row_per_sample() {
        let curve = success_auc(&[0.3, 0.8, 0.55]).unwrap();
        let (csv, svg) = emit_plot(
            &[("success".to_string(), curve)],
            &tmp_stem("single"),
        )
        .unwrap();
        let text = fs::read_to_string(&csv).unwrap();
        assert_eq!(text.lines().count(), 52);
        assert!(fs::read_to_string(&svg).unwrap().contains("<polyline"));
    }

    #[test]
    fn csv_round_trips_exact_values() {
        let curve = success_auc(&[0.123456789012345, 0.5, 0.99]).unwrap();
        let (csv, _) =
            emit_plot(&[("success".to_string(), curve.clone())], &tmp_stem("exact")).unwrap();
        let rows = parse_plot_csv(&fs::read_to_string(&csv).unwrap()).unwrap();
        assert_eq!(rows.len(), curve.len());
        for (i, (name, t, v)) in rows.iter().enumerate() {
            assert_eq!(name, "success");
            assert_eq!(t.to_bits(), curve.thresholds[i].to_bits());
            assert_eq!(v.to_bits(), curve.values[i].to_bits());
        }
    }

    #[test]
    fn empty_curve_list_is_an_error() {
        assert!(emit_plot(&[], &tmp_stem("none")).is_err());
    }

    #[test]
    fn comma_in_curve_name_is_rejected() {
        let curve = success_auc(&[0.5]).unwrap();
        assert!(emit_plot(&[("a,b".to_string(), curve)], &tmp_stem("bad")).is_err());
    }
}
