//! Minimal SVG charts for loss traces, n-shot curves and ablation sweeps.

use std::fmt::Write as _;

const W: f64 = 480.0;
const H: f64 = 300.0;
const PAD: f64 = 48.0;

fn frame(title: &str, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>"#,
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let m = 0.05 * (hi - lo);
        (lo - m, hi + m)
    }
}

fn y_ticks(s: &mut String, lo: f64, hi: f64) {
    for i in 0..=4 {
        let v = lo + (hi - lo) * f64::from(i) / 4.0;
        let y = H - PAD - (H - 2.0 * PAD) * f64::from(i) / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.3}</text>"#, PAD - 4.0, y + 4.0);
    }
}

/// Line chart of `(x, y, half_width)` points; error bars when the half
/// width is positive.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64, f64)]) -> String {
    let mut s = frame(title, x_label, y_label);
    let (x0, x1) = range(points.iter().map(|p| p.0));
    let (y0, y1) = range(points.iter().flat_map(|p| [p.1 - p.2, p.1 + p.2]));
    let px = |x: f64| PAD + (W - 2.0 * PAD) * (x - x0) / (x1 - x0);
    let py = |y: f64| H - PAD - (H - 2.0 * PAD) * (y - y0) / (y1 - y0);
    y_ticks(&mut s, y0, y1);
    let path: Vec<String> = points.iter().map(|p| format!("{:.1},{:.1}", px(p.0), py(p.1))).collect();
    let _ = writeln!(s, r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#, path.join(" "));
    for p in points {
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="steelblue"/>"#, px(p.0), py(p.1));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, px(p.0), H - PAD + 14.0, p.0);
        if p.2 > 0.0 {
            let _ = writeln!(
                s,
                r#"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="steelblue"/>"#,
                px(p.0),
                py(p.1 - p.2),
                py(p.1 + p.2)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Bar chart of labelled values.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let mut s = frame(title, "", y_label);
    let (_, y1) = range(bars.iter().map(|b| b.1).chain([0.0]));
    let y0 = 0.0f64.min(bars.iter().map(|b| b.1).fold(0.0, f64::min));
    y_ticks(&mut s, y0, y1);
    let slot = (W - 2.0 * PAD) / bars.len().max(1) as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let h = (H - 2.0 * PAD) * (v - y0) / (y1 - y0);
        let x = PAD + slot * i as f64 + slot * 0.15;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="steelblue"/>"#,
            H - PAD - h,
            slot * 0.7
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, x + slot * 0.35, H - PAD + 14.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}
