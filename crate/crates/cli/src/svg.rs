//! Titration plot: one marker per replica fraction plus the fitted curve.

use std::fmt::Write;

const W: f64 = 480.0;
const H: f64 = 320.0;
const LEFT: f64 = 56.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 28.0;
const BOTTOM: f64 = 44.0;

pub fn titration_svg(title: &str, points: &[(f64, f64)], curve: impl Fn(f64) -> f64) -> String {
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min) - 0.5;
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max) + 0.5;
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, 14.0) };
    let x = |ph: f64| LEFT + (ph - lo) / (hi - lo) * (W - LEFT - RIGHT);
    let y = |f: f64| TOP + (1.0 - f) * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, y(0.0), y(1.0));
    let _ = writeln!(s, r#"<path d="M{x0} {y1}V{y0}H{x1}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{f}</text>"#, LEFT - 6.0, y(f) + 4.0);
    }
    let mut ph = lo.ceil();
    while ph <= hi {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{ph}</text>"#, x(ph), y0 + 16.0);
        ph += 1.0;
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">pH</text>"#, (x0 + x1) / 2.0, H - 6.0);
    let _ = writeln!(s, r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">deprotonated fraction</text>"#, (y0 + y1) / 2.0, (y0 + y1) / 2.0);

    let mut d = String::new();
    for k in 0..=200 {
        let ph = lo + (hi - lo) * k as f64 / 200.0;
        let _ = write!(d, "{}{:.2} {:.2}", if k == 0 { "M" } else { "L" }, x(ph), y(curve(ph).clamp(0.0, 1.0)));
    }
    let _ = writeln!(s, r##"<path d="{d}" fill="none" stroke="#1f5fa8" stroke-width="2"/>"##);
    for &(ph, f) in points {
        let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#d2691e" fill-opacity="0.7"/>"##, x(ph), y(f));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
