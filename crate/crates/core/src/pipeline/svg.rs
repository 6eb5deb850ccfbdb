//! Minimal SVG charts. Every printed number carries `class="value"` so it
//! can be parsed back and checked against its table.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 70.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(title: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11"><rect width="100%" height="100%" fill="white"/><text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        esc(title)
    );
    s
}

fn value_text(s: &mut String, x: f64, y: f64, v: f64, anchor: &str) {
    let _ = write!(s, r#"<text class="value" x="{x:.1}" y="{y:.1}" text-anchor="{anchor}">{v:.3}</text>"#);
}

fn shade(v: f64) -> String {
    let t = v.clamp(0.0, 1.0);
    let r = (255.0 * (1.0 - 0.8 * t)) as u8;
    let g = (255.0 * (1.0 - 0.5 * t)) as u8;
    format!("rgb({r},{g},255)")
}

/// Heatmap with the value printed in every cell.
pub fn heatmap(title: &str, rows: &[String], cols: &[String], values: &ndarray::Array2<f64>) -> String {
    let mut s = open(title);
    let (nr, nc) = values.dim();
    let cw = (W - 2.0 * PAD) / nc.max(1) as f64;
    let ch = (H - 2.0 * PAD) / nr.max(1) as f64;
    for i in 0..nr {
        for j in 0..nc {
            let x = PAD + j as f64 * cw;
            let y = PAD + i as f64 * ch;
            let v = values[[i, j]];
            let _ = write!(s, r#"<rect x="{x:.1}" y="{y:.1}" width="{cw:.1}" height="{ch:.1}" fill="{}" stroke="white"/>"#, shade(v));
            value_text(&mut s, x + cw / 2.0, y + ch / 2.0 + 4.0, v, "middle");
        }
    }
    for (i, r) in rows.iter().enumerate() {
        let _ = write!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, PAD - 6.0, PAD + (i as f64 + 0.5) * ch + 4.0, esc(r));
    }
    for (j, c) in cols.iter().enumerate() {
        let _ = write!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, PAD + (j as f64 + 0.5) * cw, PAD - 8.0, esc(c));
    }
    s.push_str("</svg>\n");
    s
}

/// Grouped bars on a `[0, y_max]` axis with values printed above each bar.
pub fn bars(title: &str, groups: &[String], series: &[String], values: &[Vec<f64>], y_max: f64) -> String {
    let mut s = open(title);
    let ng = groups.len().max(1);
    let ns = series.len().max(1);
    let gw = (W - 2.0 * PAD) / ng as f64;
    let bw = gw * 0.8 / ns as f64;
    let base = H - PAD;
    let scale = (H - 2.0 * PAD) / y_max.max(1e-12);
    let palette = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b2"];
    for (g, row) in values.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            let x = PAD + g as f64 * gw + gw * 0.1 + k as f64 * bw;
            let h = (v.max(0.0) * scale).min(H - 2.0 * PAD);
            let _ = write!(s, r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{}"/>"#, base - h, bw * 0.9, palette[k % palette.len()]);
            value_text(&mut s, x + bw * 0.45, base - h - 3.0, v, "middle");
        }
        let _ = write!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, PAD + (g as f64 + 0.5) * gw, base + 16.0, esc(&groups[g]));
    }
    for (k, name) in series.iter().enumerate() {
        let _ = write!(s, r#"<rect x="{:.1}" y="36" width="10" height="10" fill="{}"/><text x="{:.1}" y="45">{}</text>"#, PAD + k as f64 * 120.0, palette[k % palette.len()], PAD + k as f64 * 120.0 + 14.0, esc(name));
    }
    let _ = write!(s, r#"<line x1="{PAD}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#, W - PAD);
    s.push_str("</svg>\n");
    s
}

/// Line chart; `marks` highlights x positions (e.g. executive steps).
/// Non-finite points are left out.
pub fn lines(title: &str, x: &[f64], series: &[(String, Vec<f64>)], y_range: (f64, f64), marks: &[f64]) -> String {
    let mut s = open(title);
    let (x0, x1) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if x1 > x0 { x1 - x0 } else { 1.0 };
    let px = |v: f64| PAD + (v - x0) / span * (W - 2.0 * PAD);
    let py = |v: f64| H - PAD - (v - y_range.0) / (y_range.1 - y_range.0).max(1e-12) * (H - 2.0 * PAD);
    for &m in marks {
        let _ = write!(s, r##"<line x1="{0:.1}" y1="{1}" x2="{0:.1}" y2="{2}" stroke="#bbb" stroke-dasharray="4 3"/>"##, px(m), PAD, H - PAD);
    }
    let palette = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b2"];
    for (k, (name, ys)) in series.iter().enumerate() {
        let pts: Vec<String> = x.iter().zip(ys).filter(|p| p.1.is_finite()).map(|(&a, &b)| format!("{:.1},{:.1}", px(a), py(b))).collect();
        let color = palette[k % palette.len()];
        let _ = write!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        for (&a, &b) in x.iter().zip(ys).filter(|p| p.1.is_finite()) {
            let _ = write!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, px(a), py(b));
            value_text(&mut s, px(a), py(b) - 6.0, b, "middle");
        }
        let _ = write!(s, r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#, W - PAD + 4.0, 60.0 + 14.0 * k as f64, esc(name));
    }
    for &v in x {
        let _ = write!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, px(v), H - PAD + 16.0, v);
    }
    let _ = write!(s, r#"<line x1="{PAD}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#, H - PAD, W - PAD);
    s.push_str("</svg>\n");
    s
}

/// Every number printed with `class="value"`, in document order.
pub fn parse_values(svg: &str) -> Vec<f64> {
    let mut out = Vec::new();
    let mut rest = svg;
    while let Some(k) = rest.find(r#"class="value""#) {
        rest = &rest[k..];
        let Some(gt) = rest.find('>') else { break };
        let Some(lt) = rest[gt..].find('<') else { break };
        if let Ok(v) = rest[gt + 1..gt + lt].trim().parse() {
            out.push(v);
        }
        rest = &rest[gt + lt..];
    }
    out
}
