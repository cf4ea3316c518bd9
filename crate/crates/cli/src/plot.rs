//! Minimal dependency-free SVG charts.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn frame(title: &str, y_label: &str, y_min: f64, y_max: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (x0, y0, x1, y1) = (
        MARGIN,
        HEIGHT - MARGIN,
        WIDTH - MARGIN / 2.0,
        MARGIN / 2.0 + 8.0,
    );
    let _ = writeln!(
        s,
        r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#
    );
    for i in 0..=4 {
        let v = y_min + (y_max - y_min) * i as f64 / 4.0;
        let y = y0 - (y0 - y1) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<line x1="{x0}" y1="{y:.1}" x2="{x1}" y2="{y:.1}" stroke="#ddd"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.1}</text>"#,
            x0 - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    s
}

fn y_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let lo = (lo / 10.0).floor() * 10.0;
    let hi = (hi / 10.0).ceil() * 10.0;
    if hi > lo {
        (lo, hi)
    } else {
        (lo, lo + 10.0)
    }
}

/// One polyline per named series, x being the point index.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<f64>)],
) -> String {
    let (y_min, y_max) = y_range(series.iter().flat_map(|(_, v)| v.iter().copied()));
    let mut s = frame(title, y_label, y_min, y_max);
    let n = series
        .iter()
        .map(|(_, v)| v.len())
        .max()
        .unwrap_or(0)
        .max(2);
    let (x0, y0, x1, y1) = (
        MARGIN,
        HEIGHT - MARGIN,
        WIDTH - MARGIN / 2.0,
        MARGIN / 2.0 + 8.0,
    );
    let px = |i: usize| x0 + (x1 - x0) * i as f64 / (n - 1) as f64;
    let py = |v: f64| y0 - (y0 - y1) * (v - y_min) / (y_max - y_min);
    for i in 0..n {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{i}</text>"#,
            px(i),
            y0 + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    for (k, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, v)| format!("{:.1},{:.1}", px(i), py(*v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        let ly = y1 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{:.1}" width="12" height="3" fill="{color}"/>"#,
            x1 - 120.0,
            ly - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly:.1}">{}</text>"#,
            x1 - 104.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Vertical bars, one per label.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let (y_min, y_max) = y_range(bars.iter().map(|(_, v)| *v).chain([0.0]));
    let mut s = frame(title, y_label, y_min, y_max);
    let (x0, y0, x1, y1) = (
        MARGIN,
        HEIGHT - MARGIN,
        WIDTH - MARGIN / 2.0,
        MARGIN / 2.0 + 8.0,
    );
    let slot = (x1 - x0) / bars.len().max(1) as f64;
    let py = |v: f64| y0 - (y0 - y1) * (v - y_min) / (y_max - y_min);
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = x0 + slot * i as f64 + slot * 0.15;
        let top = py(v.max(y_min));
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="{color}"/>"#,
            slot * 0.7,
            (y0 - top).max(0.0)
        );
        let cx = x + slot * 0.35;
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{}" text-anchor="end" transform="rotate(-35 {cx:.1} {})">{}</text>"#,
            y0 + 14.0,
            y0 + 14.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed_svg() {
        let l = line_chart(
            "acc",
            "epoch",
            "%",
            &[("a<b".into(), vec![50.0, 60.0, 70.0])],
        );
        assert!(l.starts_with("<svg") && l.trim_end().ends_with("</svg>"));
        assert!(l.contains("a&lt;b") && l.contains("<polyline"));
        let b = bar_chart("abl", "%", &[("x".into(), 55.0), ("y".into(), 80.0)]);
        assert_eq!(b.matches("<rect").count(), 3);
    }

    #[test]
    fn range_covers_values() {
        assert_eq!(y_range([43.0, 87.5].into_iter()), (40.0, 90.0));
        assert_eq!(y_range(std::iter::empty()), (0.0, 1.0));
    }
}
