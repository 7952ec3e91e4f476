//! Static SVG snapshots of node fields.

use std::fmt::Write as _;

use crate::graph::Graph;

const VIRIDIS: [[u8; 3]; 8] = [
    [0x44, 0x01, 0x54],
    [0x46, 0x32, 0x7e],
    [0x36, 0x5c, 0x8d],
    [0x27, 0x7f, 0x8e],
    [0x1f, 0xa1, 0x87],
    [0x4a, 0xc1, 0x6d],
    [0xa0, 0xda, 0x39],
    [0xfd, 0xe7, 0x25],
];

/// Piecewise-linear 8-stop colormap on `t ∈ [0, 1]`.
pub fn viridis(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (VIRIDIS.len() - 1) as f64;
    let k = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let f = x - k as f64;
    let (a, b) = (VIRIDIS[k], VIRIDIS[k + 1]);
    let mix = |i: usize| (a[i] as f64 + f * (b[i] as f64 - a[i] as f64)).round() as u8;
    [mix(0), mix(1), mix(2)]
}

const SIZE: f64 = 640.0;
const MARGIN: f64 = 24.0;

/// Nodes as filled circles colored by `values` scaled to their own
/// [min, max]; edges as thin gray segments.
pub fn render_svg(graph: &Graph, values: &[f64], title: &str) -> String {
    assert_eq!(values.len(), graph.n(), "one value per node");
    let xs = graph.coords();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in xs {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-9);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let px = |p: [f64; 2]| (MARGIN + (p[0] - x0) * scale, SIZE - MARGIN - (p[1] - y0) * scale);

    let mean_len = if graph.m() > 0 {
        graph.edges().iter().map(|e| {
            let (a, b) = (xs[e.i], xs[e.j]);
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
        }).sum::<f64>() / graph.m() as f64
    } else {
        span / 10.0
    };
    let radius = (0.4 * mean_len * scale).clamp(1.0, 12.0);

    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{h}" viewBox="0 0 {SIZE} {h}">"#,
        h = SIZE + 20.0
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r##"<g stroke="#b0b0b0" stroke-width="0.5">"##);
    for e in graph.edges() {
        let (ax, ay) = px(xs[e.i]);
        let (bx, by) = px(xs[e.j]);
        let _ = writeln!(out, r#"<line x1="{ax:.2}" y1="{ay:.2}" x2="{bx:.2}" y2="{by:.2}"/>"#);
    }
    let _ = writeln!(out, "</g>\n<g>");
    for (p, &v) in xs.iter().zip(values) {
        let t = if range > 0.0 { (v - lo) / range } else { 0.5 };
        let [r, g, b] = viridis(t);
        let (cx, cy) = px(*p);
        let _ = writeln!(out, r##"<circle cx="{cx:.2}" cy="{cy:.2}" r="{radius:.2}" fill="#{r:02x}{g:02x}{b:02x}"/>"##);
    }
    let _ = writeln!(out, "</g>");
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="{y}" font-family="monospace" font-size="12">{} [min {lo:.4e}, max {hi:.4e}]</text>"#,
        escape(title),
        y = SIZE + 8.0
    );
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
