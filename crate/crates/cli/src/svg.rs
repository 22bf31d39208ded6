//! Minimal log-log line plot as standalone SVG.

use std::fmt::Write as _;

use difftv::metrics::ConvergenceReport;
use difftv::samplers::SamplerKind;

const W: f64 = 640.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

fn color(kind: SamplerKind) -> &'static str {
    match kind {
        SamplerKind::OdePlain => "#1f77b4",
        SamplerKind::OdeAccel => "#2ca02c",
        SamplerKind::DdpmPlain => "#d62728",
        SamplerKind::DdpmAccel => "#9467bd",
    }
}

/// Corrected TV against `T`, one polyline per sampler, decade ticks on the
/// TV axis and one tick per step count.
pub fn loglog_plot(report: &ConvergenceReport) -> String {
    let pts: Vec<(f64, f64)> = report
        .rows
        .iter()
        .filter(|r| r.tv_corrected > 0.0)
        .map(|r| ((r.steps as f64).log10(), r.tv_corrected.log10()))
        .collect();
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    if pts.is_empty() {
        out.push_str("<text x=\"20\" y=\"40\">no positive TV values</text>\n</svg>\n");
        return out;
    }
    let (mut x0, mut x1) = bounds(pts.iter().map(|p| p.0));
    let (y0, y1) = bounds(pts.iter().map(|p| p.1));
    if x1 - x0 < 1e-9 {
        x0 -= 0.1;
        x1 += 0.1;
    }
    let (y0, y1) = (y0.floor(), y1.ceil().max(y0.floor() + 1.0));
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let py = |y: f64| TOP + (y1 - y) / (y1 - y0) * (H - TOP - BOTTOM);

    let _ = writeln!(
        out,
        r#"<path d="M{:.1},{:.1} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
        LEFT,
        TOP,
        H - BOTTOM,
        W - RIGHT
    );
    let mut ts: Vec<usize> = report.rows.iter().map(|r| r.steps).collect();
    ts.sort_unstable();
    ts.dedup();
    for t in ts {
        let x = px((t as f64).log10());
        let _ = writeln!(
            out,
            r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{t}</text>"#,
            H - BOTTOM,
            H - BOTTOM + 5.0,
            H - BOTTOM + 20.0
        );
    }
    let mut e = y0 as i32;
    while e as f64 <= y1 {
        let y = py(e as f64);
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">1e{e}</text>"##,
            LEFT,
            W - RIGHT,
            LEFT - 6.0,
            y + 4.0
        );
        e += 1;
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">T (steps)</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 10.0
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">TV(q1, p1)</text>"#,
        (TOP + H - BOTTOM) / 2.0,
        (TOP + H - BOTTOM) / 2.0
    );

    for (i, kind) in SamplerKind::ALL.into_iter().enumerate() {
        let mut rows: Vec<_> = report
            .rows
            .iter()
            .filter(|r| r.kind == kind && r.tv_corrected > 0.0)
            .collect();
        if rows.is_empty() {
            continue;
        }
        rows.sort_by_key(|r| r.steps);
        let poly: Vec<String> = rows
            .iter()
            .map(|r| {
                format!(
                    "{:.1},{:.1}",
                    px((r.steps as f64).log10()),
                    py(r.tv_corrected.log10())
                )
            })
            .collect();
        let c = color(kind);
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#,
            poly.join(" ")
        );
        for p in &poly {
            let (x, y) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(out, r#"<circle cx="{x}" cy="{y}" r="3" fill="{c}"/>"#);
        }
        let ly = TOP + 20.0 * i as f64 + 10.0;
        let label = match report.slope(kind) {
            Some(s) => format!("{kind} ({:.2})", s.fit.slope),
            None => kind.to_string(),
        };
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{c}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{label}</text>"#,
            W - RIGHT + 10.0,
            W - RIGHT + 30.0,
            W - RIGHT + 35.0,
            ly + 4.0
        );
    }
    out.push_str("</svg>\n");
    out
}

fn bounds(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    })
}
