//! Minimal SVG plots written by hand.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::eval::{EvalCurve, SettingKind};
use crate::map::{DecisionRecord, Region, RegionBox, MAX_DISTANCE};

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn region_color(r: Region) -> &'static str {
    match r {
        Region::Lm => PALETTE[0],
        Region::Ctx => PALETTE[1],
        Region::Pt => PALETTE[2],
        Region::Ft => PALETTE[3],
        Region::Other => "#7f7f7f",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Decision map: x and y both span [0, 2], region boxes outlined.
pub fn scatter_svg(records: &[DecisionRecord], boxes: &[RegionBox]) -> String {
    let (size, margin) = (400.0, 50.0);
    let sx = |x: f64| margin + x / MAX_DISTANCE * size;
    let sy = |y: f64| margin + size - y / MAX_DISTANCE * size;
    let mut s = String::new();
    let total = size + 2.0 * margin;
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect x="{margin}" y="{margin}" width="{size}" height="{size}" fill="white" stroke="black"/>"#);
    for b in boxes {
        let (x0, y0, x1, y1) = (sx(b.lower.0), sy(b.upper.1), sx(b.upper.0), sy(b.lower.1));
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.1}" y="{y0:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="{}" stroke-dasharray="4 3"/>"#,
            x1 - x0,
            y1 - y0,
            region_color(b.label)
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" fill="{}">{}</text>"#, x0 + 4.0, y0 + 14.0, region_color(b.label), b.label.as_str());
    }
    for r in records {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{}" fill-opacity="0.6"/>"#, sx(r.x), sy(r.y), region_color(r.region));
    }
    for t in [0.0, 0.5, 1.0, 1.5, 2.0] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{t}</text>"#, sx(t), margin + size + 16.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{t}</text>"#, margin - 6.0, sy(t) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">L1(LM, full)</text>"#, margin + size / 2.0, total - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">L1(S empty, full)</text>"#,
        margin + size / 2.0,
        margin + size / 2.0
    );
    s.push_str("</svg>\n");
    s
}

/// Four panels (DispTok, RmTok, DispSent, RmSent), one line per method.
pub fn curves_svg(curves: &[EvalCurve]) -> String {
    let (pw, ph, margin) = (300.0, 220.0, 50.0);
    let width = 2.0 * (pw + 2.0 * margin);
    let height = 2.0 * (ph + 2.0 * margin) + 30.0;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#);
    let methods: Vec<_> = {
        let mut m: Vec<_> = curves.iter().map(|c| c.method).collect();
        m.sort();
        m.dedup();
        m
    };
    for (panel, kind) in SettingKind::ALL.iter().enumerate() {
        let ox = (panel % 2) as f64 * (pw + 2.0 * margin) + margin;
        let oy = (panel / 2) as f64 * (ph + 2.0 * margin) + margin;
        let cs: Vec<&EvalCurve> = curves.iter().filter(|c| c.setting == *kind).collect();
        let _ = writeln!(s, r#"<rect x="{ox}" y="{oy}" width="{pw}" height="{ph}" fill="white" stroke="black"/>"#);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-weight="bold">{}</text>"#, ox + pw / 2.0, oy - 8.0, kind.as_str());
        let budgets: Vec<usize> = {
            let mut b: Vec<usize> = cs.iter().flat_map(|c| c.points.iter().map(|p| p.budget)).collect();
            b.sort_unstable();
            b.dedup();
            b
        };
        let vals: Vec<f64> = cs.iter().flat_map(|c| c.points.iter().map(|p| p.mean_nll)).collect();
        if budgets.is_empty() {
            continue;
        }
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(lo + 1e-9);
        let step = pw / (budgets.len().max(2) - 1) as f64;
        let px = |b: usize| ox + budgets.iter().position(|&x| x == b).unwrap_or(0) as f64 * step;
        let py = |v: f64| oy + ph - (v - lo) / (hi - lo) * ph;
        for &b in &budgets {
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{b}</text>"#, px(b), oy + ph + 16.0);
        }
        for v in [lo, (lo + hi) / 2.0, hi] {
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, ox - 6.0, py(v) + 4.0);
        }
        for c in cs {
            let color = PALETTE[methods.iter().position(|m| *m == c.method).unwrap_or(0) % PALETTE.len()];
            let pts: Vec<String> = c.points.iter().map(|p| format!("{:.1},{:.1}", px(p.budget), py(p.mean_nll))).collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        }
    }
    let mut lx = margin;
    let ly = height - 12.0;
    let names: BTreeMap<usize, String> = methods.iter().enumerate().map(|(i, m)| (i, escape(m.as_str()))).collect();
    for (i, name) in names {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(s, r#"<rect x="{lx}" y="{:.1}" width="12" height="12" fill="{color}"/>"#, ly - 10.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{ly}">{name}</text>"#, lx + 16.0);
        lx += 100.0;
    }
    s.push_str("</svg>\n");
    s
}
