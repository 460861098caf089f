//! Minimal SVG rendering of simplex scatter plots.

use std::fmt::Write;

use super::report::SimplexSeries;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 40.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Maps simplex-plane coordinates (triangle with unit side) to pixels.
fn to_px(x: f64, y: f64) -> (f64, f64) {
    let side = SIZE - 2.0 * MARGIN;
    let height = side * 3f64.sqrt() / 2.0;
    let top = (SIZE - height) / 2.0;
    (MARGIN + x * side, top + height - y * side)
}

/// Ternary scatter: triangle outline, tick marks every 0.2 along each edge,
/// one colour per series, and a legend.
pub fn simplex_scatter(series: &[SimplexSeries]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let corners = [(0.0, 0.0), (1.0, 0.0), (0.5, 3f64.sqrt() / 2.0)];
    let px: Vec<(f64, f64)> = corners.iter().map(|&(x, y)| to_px(x, y)).collect();
    let _ = writeln!(
        s,
        r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="none" stroke="black" stroke-width="1"/>"#,
        px[0].0, px[0].1, px[1].0, px[1].1, px[2].0, px[2].1
    );
    for edge in 0..3 {
        let (a, b) = (corners[edge], corners[(edge + 1) % 3]);
        for i in 1..5 {
            let t = i as f64 / 5.0;
            let (x, y) = to_px(a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
            let _ = writeln!(
                s,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.5" fill="black"/>"#
            );
        }
    }
    let labels = [("p0", 0.0, 16.0), ("p1", 0.0, 16.0), ("p2", 0.0, -8.0)];
    for ((x, y), (text, dx, dy)) in px.iter().zip(labels) {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{text}</text>"#,
            x + dx,
            y + dy
        );
    }
    for (i, series) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let _ = writeln!(s, r#"<g fill="{colour}" fill-opacity="0.5">"#);
        for &(x, y) in &series.points {
            let (cx, cy) = to_px(x, y);
            let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="2"/>"#);
        }
        let _ = writeln!(s, "</g>");
        let ly = 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="10" height="10" fill="{colour}"/><text x="{:.2}" y="{:.2}" font-size="12">{}</text>"#,
            SIZE - 110.0,
            ly - 9.0,
            SIZE - 95.0,
            ly,
            escape(&series.source)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
