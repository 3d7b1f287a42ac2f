//! Minimal hand-rolled SVG plots. Best-effort companions to the CSV data;
//! nothing downstream depends on them.

use std::path::Path;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 48.0;

fn header(title: &str) -> String {
    format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{x}" y="20" font-family="monospace" font-size="14" text-anchor="middle">{title}</text>
"#,
        x = W / 2.0
    )
}

fn axis_box() -> String {
    format!(
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{w}" height="{h}" fill="none" stroke="#999"/>
"##,
        w = W - 2.0 * MARGIN,
        h = H - 2.0 * MARGIN
    )
}

fn scale(points: &[(f64, f64)]) -> Option<(f64, f64, f64, f64)> {
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        if !x.is_finite() || !y.is_finite() {
            continue;
        }
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x0.is_finite() && y0.is_finite()) {
        return None;
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    Some((x0, x1, y0, y1))
}

/// A single polyline over `(x, y)` points, e.g. a loss curve or sweep curve.
pub fn line_chart(path: &Path, title: &str, points: &[(f64, f64)]) -> std::io::Result<()> {
    let Some((x0, x1, y0, y1)) = scale(points) else {
        return Ok(());
    };
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
    let mut svg = header(title);
    svg.push_str(&axis_box());
    let coords: Vec<String> = points
        .iter()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y)))
        .collect();
    svg.push_str(&format!(
        r##"<polyline points="{}" fill="none" stroke="#c33" stroke-width="1.5"/>
"##,
        coords.join(" ")
    ));
    for (v, anchor, x, y) in [
        (y1, "end", MARGIN - 4.0, MARGIN + 4.0),
        (y0, "end", MARGIN - 4.0, H - MARGIN),
        (x0, "middle", MARGIN, H - MARGIN + 16.0),
        (x1, "middle", W - MARGIN, H - MARGIN + 16.0),
    ] {
        svg.push_str(&format!(
            r#"<text x="{x:.1}" y="{y:.1}" font-family="monospace" font-size="11" text-anchor="{anchor}">{v:.3}</text>
"#
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)
}

/// Labeled horizontal bars in `[0, 1]`, e.g. the ablation ladder.
pub fn bar_chart(path: &Path, title: &str, bars: &[(String, f64)]) -> std::io::Result<()> {
    if bars.is_empty() {
        return Ok(());
    }
    let mut svg = header(title);
    let row_h = (H - 2.0 * MARGIN) / bars.len() as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let y = MARGIN + i as f64 * row_h;
        let w = v.clamp(0.0, 1.0) * (W - 2.0 * MARGIN - 120.0);
        svg.push_str(&format!(
            r##"<text x="{:.1}" y="{:.1}" font-family="monospace" font-size="12">{label}</text>
<rect x="{:.1}" y="{:.1}" width="{w:.1}" height="{:.1}" fill="#36c"/>
<text x="{:.1}" y="{:.1}" font-family="monospace" font-size="12">{v:.4}</text>
"##,
            MARGIN,
            y + row_h * 0.55,
            MARGIN + 100.0,
            y + row_h * 0.2,
            row_h * 0.5,
            MARGIN + 110.0 + w,
            y + row_h * 0.55,
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)
}
