//! CSV and SVG artifacts for a set of curves.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detectors::DetectorKind;
use crate::error::{Error, Result};
use crate::waveforms::SignalKind;

use super::eval::EvalCurve;

pub const CSV_HEADER: &str = "detector,snr_db,pd,ci_lo,ci_hi,pfa_achieved";

/// One CSV line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub detector: String,
    pub snr_db: i8,
    pub pd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub pfa_achieved: f64,
}

pub fn csv_rows(curves: &[EvalCurve]) -> Vec<CsvRow> {
    curves
        .iter()
        .flat_map(|c| {
            c.points.iter().map(move |p| CsvRow {
                detector: c.label.clone(),
                snr_db: p.snr_db,
                pd: p.pd,
                ci_lo: p.ci_lo,
                ci_hi: p.ci_hi,
                pfa_achieved: c.pfa_check.pfa,
            })
        })
        .collect()
}

/// Serializes curves with shortest round-trip float formatting.
pub fn to_csv(curves: &[EvalCurve]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
    for row in csv_rows(curves) {
        w.serialize(row).expect("in-memory CSV write");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV flush")).expect("CSV is UTF-8")
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r
        .headers()
        .map_err(|e| Error::Config(format!("CSV header: {e}")))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != CSV_HEADER {
        return Err(Error::Config(format!("unexpected CSV header `{header}`")));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Config(format!("CSV row: {e}"))))
        .collect()
}

fn color(d: DetectorKind) -> &'static str {
    match d {
        DetectorKind::Energy => "#1f77b4",
        DetectorKind::Fisher => "#ff7f0e",
        DetectorKind::MatchedFilter => "#2ca02c",
        DetectorKind::Learned => "#d62728",
    }
}

fn dash(k: Option<SignalKind>) -> &'static str {
    match k {
        None | Some(SignalKind::Sine) => "",
        Some(SignalKind::Qpsk) => r#" stroke-dasharray="7 4""#,
        Some(SignalKind::Ofdm) => r#" stroke-dasharray="2 3""#,
    }
}

fn legend_name(c: &EvalCurve) -> String {
    let d = match c.detector {
        DetectorKind::Energy => "Energy Detector",
        DetectorKind::Fisher => "Fisher Statistic",
        DetectorKind::MatchedFilter => "Matched Filter",
        DetectorKind::Learned => "Kernel Classifier",
    };
    match c.kind {
        Some(k) => format!("{d} ({})", k.name().to_uppercase()),
        None => d.to_string(),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Pd-vs-SNR chart with all curves overlaid and 95% interval whiskers.
pub fn svg_chart(title: &str, curves: &[EvalCurve]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 480.0;
    const L: f64 = 70.0;
    const R: f64 = 210.0;
    const T: f64 = 50.0;
    const B: f64 = 60.0;
    let (lo, hi) = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.snr_db as f64))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s), b.max(s)));
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (-1.0, 1.0) };
    let x = |s: f64| L + (s - lo) / (hi - lo) * (W - L - R);
    let y = |p: f64| T + (1.0 - p) * (H - T - B);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="28" text-anchor="middle" font-size="16">{}</text>"#,
        (L + W - R) / 2.0,
        escape(title)
    );
    for k in 0..=10 {
        let p = k as f64 / 10.0;
        let _ = writeln!(
            s,
            r##"<line x1="{L}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{p:.1}</text>"##,
            W - R,
            L - 6.0,
            y(p) + 4.0,
            yy = y(p)
        );
    }
    let step = if hi - lo > 20.0 { 5 } else { 1 };
    let mut tick = (lo as i64).div_euclid(step) * step;
    while tick as f64 <= hi {
        if tick as f64 >= lo {
            let xx = x(tick as f64);
            let _ = writeln!(
                s,
                r##"<line x1="{xx:.2}" y1="{T}" x2="{xx:.2}" y2="{:.2}" stroke="#eee"/><text x="{xx:.2}" y="{:.2}" text-anchor="middle">{tick}</text>"##,
                H - B,
                H - B + 18.0
            );
        }
        tick += step;
    }
    let _ = writeln!(
        s,
        r#"<rect x="{L}" y="{T}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        W - L - R,
        H - T - B
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">SNR (dB)</text>"#,
        (L + W - R) / 2.0,
        H - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">Probability of Detection</text>"#,
        (T + H - B) / 2.0,
        (T + H - B) / 2.0
    );

    for (i, c) in curves.iter().enumerate() {
        let col = color(c.detector);
        let _ = writeln!(s, r#"<g class="curve" data-label="{}">"#, escape(&c.label));
        for p in &c.points {
            let xx = x(p.snr_db as f64);
            let _ = writeln!(
                s,
                r#"<line x1="{xx:.2}" y1="{:.2}" x2="{xx:.2}" y2="{:.2}" stroke="{col}" stroke-opacity="0.4"/>"#,
                y(p.ci_lo),
                y(p.ci_hi)
            );
        }
        let pts: Vec<String> = c
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", x(p.snr_db as f64), y(p.pd)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{col}" stroke-width="1.8"{}/>"#,
            pts.join(" "),
            dash(c.kind)
        );
        let _ = writeln!(s, "</g>");
        let ly = T + 10.0 + 20.0 * i as f64;
        let lx = W - R + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{col}" stroke-width="1.8"{}/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 24.0,
            dash(c.kind),
            lx + 30.0,
            ly + 4.0,
            escape(&legend_name(c))
        );
    }
    let _ = writeln!(
        s,
        r##"<text x="{:.2}" y="{:.2}" font-size="10" fill="#555">P_FA target {}</text>"##,
        W - R + 12.0,
        H - B,
        curves.first().map(|c| c.calibration.target_pfa).unwrap_or(f64::NAN)
    );
    s.push_str("</svg>\n");
    s
}

/// Chart title for an experiment.
pub fn chart_title(kinds: &[SignalKind]) -> String {
    match kinds {
        [SignalKind::Sine] => "Sine Wave Performance".into(),
        [SignalKind::Qpsk] => "QPSK Performance".into(),
        [SignalKind::Ofdm] => "OFDM Performance".into(),
        _ => "Universal Classifier Performance".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{verify_pfa, CalibrationResult};
    use crate::harness::eval::CurvePoint;

    fn sample_curves() -> Vec<EvalCurve> {
        let mk = |d: DetectorKind, kind: Option<SignalKind>, shift: f64| EvalCurve {
            label: crate::harness::eval::curve_label(d, kind),
            detector: d,
            kind,
            calibration: CalibrationResult {
                detector: d,
                gamma: 1.0 / 3.0,
                target_pfa: 0.01,
                achieved_pfa: 0.01,
                n_trials: 100_000,
            },
            pfa_check: verify_pfa(0.5, &[0.1, 0.7, 0.2]),
            points: (-30..=5)
                .map(|s: i8| {
                    let pd = 1.0 / (1.0 + (-(s as f64 + shift) / 1.7).exp());
                    CurvePoint {
                        snr_db: s,
                        pd,
                        n_trials: 500,
                        ci_lo: (pd - 0.0123456789).max(0.0),
                        ci_hi: (pd + 0.0123456789).min(1.0),
                    }
                })
                .collect(),
        };
        vec![
            mk(DetectorKind::Energy, None, 10.0),
            mk(DetectorKind::Learned, Some(SignalKind::Qpsk), 11.1),
        ]
    }

    #[test]
    fn csv_round_trips_exactly() {
        let curves = sample_curves();
        let text = to_csv(&curves);
        assert!(text.starts_with(CSV_HEADER));
        let rows = parse_csv(&text).unwrap();
        assert_eq!(rows, csv_rows(&curves));
        assert_eq!(rows.len(), 72);
        assert_eq!(rows[40].detector, "learned:qpsk");
    }

    #[test]
    fn single_curve_has_one_row_per_bin() {
        let curves = &sample_curves()[..1];
        assert_eq!(parse_csv(&to_csv(curves)).unwrap().len(), 36);
    }

    #[test]
    fn csv_rejects_foreign_header() {
        assert!(parse_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn svg_structure() {
        let curves = sample_curves();
        let svg = svg_chart("QPSK Performance", &curves);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches(r#"class="curve""#).count(), 2);
        assert!(svg.contains("SNR (dB)") && svg.contains("Probability of Detection"));
        assert!(svg.contains("Kernel Classifier (QPSK)"));
        assert_eq!(svg, svg_chart("QPSK Performance", &curves));
    }
}
