//! Direct SVG markup for the report charts. Every chart uses a 960x540 viewBox.

use std::f64::consts::PI;
use std::fmt::Write;

pub const WIDTH: f64 = 960.0;
pub const HEIGHT: f64 = 540.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;
const NODE_RADIUS: f64 = 26.0;

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn open(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<svg viewBox=\"0 0 {WIDTH} {HEIGHT}\" width=\"{WIDTH}\" height=\"{HEIGHT}\" role=\"img\" font-family=\"sans-serif\">"
    );
    let _ = write!(out, "<title>{}</title>", escape(title));
    let _ = write!(out, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>");
    let _ = write!(
        out,
        "<text x=\"{}\" y=\"28\" text-anchor=\"middle\" font-size=\"18\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );
}

/// Axis tick label; display only, never an artifact value.
fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 {
        "0".into()
    } else if !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Linear map from a data box onto the plotting area.
#[derive(Debug, Clone, Copy)]
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>, zero_based: bool) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if zero_based {
            x0 = x0.min(0.0);
            y0 = y0.min(0.0);
        }
        let pad = |lo: f64, hi: f64| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1 + 0.05 * (y1 - y0).abs());
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }

    fn axes(&self, out: &mut String, x_label: &str, y_label: &str) {
        let (bx, by) = (LEFT, HEIGHT - BOTTOM);
        let _ = write!(
            out,
            "<g stroke=\"#444\" stroke-width=\"1\"><line x1=\"{bx}\" y1=\"{by}\" x2=\"{}\" y2=\"{by}\"/><line x1=\"{bx}\" y1=\"{by}\" x2=\"{bx}\" y2=\"{TOP}\"/></g>",
            WIDTH - RIGHT
        );
        let _ = write!(out, "<g font-size=\"11\" fill=\"#444\">");
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.x0 + f * (self.x1 - self.x0);
            let yv = self.y0 + f * (self.y1 - self.y0);
            let _ = write!(
                out,
                "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
                self.px(xv),
                by + 16.0,
                tick_label(xv)
            );
            let _ = write!(
                out,
                "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
                bx - 6.0,
                self.py(yv) + 4.0,
                tick_label(yv)
            );
        }
        let _ = write!(out, "</g>");
        let _ = write!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">{}</text>",
            (LEFT + WIDTH - RIGHT) / 2.0,
            HEIGHT - 18.0,
            escape(x_label)
        );
        let _ = write!(
            out,
            "<text transform=\"translate(20 {}) rotate(-90)\" text-anchor=\"middle\" font-size=\"13\">{}</text>",
            (TOP + HEIGHT - BOTTOM) / 2.0,
            escape(y_label)
        );
    }

    fn polyline(&self, out: &mut String, pts: &[(f64, f64)], color: &str, extra: &str) {
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y))).collect();
        let _ = write!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" {extra} points=\"{}\"/>",
            coords.join(" ")
        );
    }
}

/// One directed edge for [`dag_chart`]; `weight_text` is shown verbatim.
pub struct DagEdge<'a> {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
    pub weight_text: &'a str,
}

/// Nodes on a circle, edges as arrows with stroke width proportional to |weight|.
pub fn dag_chart(labels: &[String], edges: &[DagEdge<'_>]) -> String {
    let mut out = String::new();
    open(&mut out, "Channel dependency graph");
    let _ = write!(
        out,
        "<defs><marker id=\"arrow\" viewBox=\"0 0 10 10\" refX=\"9\" refY=\"5\" markerWidth=\"7\" markerHeight=\"7\" orient=\"auto-start-reverse\"><path d=\"M0,0 L10,5 L0,10 z\" fill=\"#333\"/></marker></defs>"
    );
    let n = labels.len();
    let (cx, cy, radius) = (WIDTH / 2.0, HEIGHT / 2.0 + 15.0, 190.0);
    let pos: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let angle = -PI / 2.0 + 2.0 * PI * i as f64 / n.max(1) as f64;
            (cx + radius * angle.cos(), cy + radius * angle.sin())
        })
        .collect();
    let max_w = edges.iter().map(|e| e.weight.abs()).fold(0.0, f64::max);
    let _ = write!(out, "<g class=\"edges\">");
    for e in edges.iter().filter(|e| e.source < n && e.target < n && e.source != e.target) {
        let (x1, y1) = pos[e.source];
        let (x2, y2) = pos[e.target];
        let len = ((x2 - x1).powi(2) + (y2 - y1).powi(2)).sqrt().max(1e-9);
        let (ux, uy) = ((x2 - x1) / len, (y2 - y1) / len);
        let (sx, sy) = (x1 + ux * NODE_RADIUS, y1 + uy * NODE_RADIUS);
        let (tx, ty) = (x2 - ux * (NODE_RADIUS + 2.0), y2 - uy * (NODE_RADIUS + 2.0));
        let width = if max_w > 0.0 { 1.0 + 5.0 * e.weight.abs() / max_w } else { 1.0 };
        let color = if e.weight >= 0.0 { "#2b6cb0" } else { "#c53030" };
        let _ = write!(
            out,
            "<line x1=\"{sx:.2}\" y1=\"{sy:.2}\" x2=\"{tx:.2}\" y2=\"{ty:.2}\" stroke=\"{color}\" stroke-width=\"{width:.3}\" marker-end=\"url(#arrow)\" data-weight=\"{}\"/>",
            escape(e.weight_text)
        );
        let _ = write!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" fill=\"{color}\" text-anchor=\"middle\">{}</text>",
            (sx + tx) / 2.0 - uy * 10.0,
            (sy + ty) / 2.0 + ux * 10.0,
            escape(e.weight_text)
        );
    }
    let _ = write!(out, "</g><g class=\"nodes\">");
    for (label, (x, y)) in labels.iter().zip(&pos) {
        let _ = write!(
            out,
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{NODE_RADIUS}\" fill=\"#edf2f7\" stroke=\"#2d3748\"/><text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"12\">{}</text>",
            y + 4.0,
            escape(label)
        );
    }
    let _ = write!(out, "</g></svg>");
    out
}

/// Fitted response curve with observed points, annotated at the half-saturation point.
pub struct CurveChart<'a> {
    pub channel: &'a str,
    pub observed: &'a [(f64, f64)],
    pub fitted: &'a [(f64, f64)],
    pub saturation: f64,
    pub half_response: f64,
    /// Artifact strings for the annotation.
    pub saturation_text: &'a str,
    pub half_response_text: &'a str,
}

pub fn curve_chart(c: &CurveChart<'_>) -> String {
    let mut out = String::new();
    open(&mut out, &format!("Response curve: {}", c.channel));
    let frame = Frame::fit(c.observed.iter().chain(c.fitted).copied(), true);
    frame.axes(&mut out, "driver level", "contribution");
    let _ = write!(out, "<g fill=\"#718096\" fill-opacity=\"0.7\">");
    for &(x, y) in c.observed {
        let _ = write!(out, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\"/>", frame.px(x), frame.py(y));
    }
    let _ = write!(out, "</g>");
    frame.polyline(&mut out, c.fitted, "#2b6cb0", "");
    let (gx, gy) = (frame.px(c.saturation), frame.py(c.half_response));
    let _ = write!(
        out,
        "<g class=\"half-saturation\" data-x=\"{}\" data-y=\"{}\"><line x1=\"{gx:.2}\" y1=\"{}\" x2=\"{gx:.2}\" y2=\"{gy:.2}\" stroke=\"#dd6b20\" stroke-dasharray=\"5 4\"/><circle cx=\"{gx:.2}\" cy=\"{gy:.2}\" r=\"5\" fill=\"#dd6b20\"/><text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" fill=\"#dd6b20\">50% of max at x={}</text></g>",
        escape(c.saturation_text),
        escape(c.half_response_text),
        HEIGHT - BOTTOM,
        gx + 8.0,
        gy - 8.0,
        escape(c.saturation_text)
    );
    let _ = write!(out, "</svg>");
    out
}

/// Actual and predicted KPI over weeks, with the holdout boundary marked.
pub fn series_chart(actual: &[f64], predicted: &[f64], holdout_start: usize) -> String {
    let mut out = String::new();
    open(&mut out, "Actual vs predicted KPI (all regions)");
    let a: Vec<(f64, f64)> = actual.iter().enumerate().map(|(t, &v)| (t as f64, v)).collect();
    let p: Vec<(f64, f64)> = predicted.iter().enumerate().map(|(t, &v)| (t as f64, v)).collect();
    let frame = Frame::fit(a.iter().chain(&p).copied(), false);
    frame.axes(&mut out, "week index", "KPI");
    if holdout_start < actual.len() {
        let x = frame.px(holdout_start as f64 - 0.5);
        let _ = write!(
            out,
            "<line x1=\"{x:.2}\" y1=\"{TOP}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"#a0aec0\" stroke-dasharray=\"4 4\"/><text x=\"{:.2}\" y=\"{}\" font-size=\"11\" fill=\"#718096\">holdout</text>",
            HEIGHT - BOTTOM,
            x + 4.0,
            TOP + 12.0
        );
    }
    frame.polyline(&mut out, &a, "#2d3748", "");
    frame.polyline(&mut out, &p, "#dd6b20", "stroke-dasharray=\"6 3\"");
    let _ = write!(
        out,
        "<g font-size=\"12\"><rect x=\"{}\" y=\"{}\" width=\"14\" height=\"3\" fill=\"#2d3748\"/><text x=\"{}\" y=\"{}\">actual</text><rect x=\"{}\" y=\"{}\" width=\"14\" height=\"3\" fill=\"#dd6b20\"/><text x=\"{}\" y=\"{}\">predicted</text></g>",
        WIDTH - 170.0,
        TOP + 2.0,
        WIDTH - 150.0,
        TOP + 7.0,
        WIDTH - 90.0,
        TOP + 2.0,
        WIDTH - 70.0,
        TOP + 7.0
    );
    let _ = write!(out, "</svg>");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_graph_has_nodes_and_no_edges() {
        let labels: Vec<String> = ["tv", "radio", "search"].iter().map(|s| s.to_string()).collect();
        let svg = dag_chart(&labels, &[]);
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(!svg.contains("<line"));
        assert!(svg.contains("viewBox=\"0 0 960 540\""));
    }

    #[test]
    fn edge_width_tracks_weight() {
        let labels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let edges = [
            DagEdge { source: 0, target: 1, weight: 0.8, weight_text: "0.8" },
            DagEdge { source: 1, target: 2, weight: -0.4, weight_text: "-0.4" },
        ];
        let svg = dag_chart(&labels, &edges);
        assert!(svg.contains("stroke-width=\"6.000\""));
        assert!(svg.contains("stroke-width=\"3.500\""));
        assert_eq!(svg.matches("marker-end=\"url(#arrow)\"").count(), 2);
    }

    #[test]
    fn annotation_sits_at_half_saturation() {
        let fitted: Vec<(f64, f64)> = (0..=40).map(|i| {
            let x = i as f64 * 100.0;
            (x, 100.0 * x * x / (x * x + 1e6))
        }).collect();
        let chart = CurveChart {
            channel: "tv",
            observed: &[],
            fitted: &fitted,
            saturation: 1000.0,
            half_response: 50.0,
            saturation_text: "1000",
            half_response_text: "50",
        };
        let svg = curve_chart(&chart);
        assert!(svg.contains("data-x=\"1000\""));
        assert!(svg.contains("50% of max at x=1000"));
        let frame = Frame::fit(fitted.iter().copied(), true);
        assert!(svg.contains(&format!("x1=\"{:.2}\"", frame.px(1000.0))));
        assert!(!svg.contains("http"));
    }

    #[test]
    fn escapes_markup() {
        assert_eq!(escape("a<b & \"c\""), "a&lt;b &amp; &quot;c&quot;");
    }
}
