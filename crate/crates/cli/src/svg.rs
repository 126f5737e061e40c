//! Trajectory overlay plot.

use std::fmt::Write;

use coopercept_core::track::{Source, Trajectory};

fn style(source: Source) -> (&'static str, &'static str) {
    match source {
        Source::Gaze => ("#d62728", ""),
        Source::Detector => ("#1f77b4", ""),
        Source::Fused => ("#2ca02c", ""),
        Source::GroundTruth => ("#000000", " stroke-dasharray=\"4 3\""),
    }
}

/// Polylines in camera-frame pixels over a `width × height` canvas, one per
/// trajectory, with a legend in the top-left corner.
pub fn trajectories_svg(width: f64, height: f64, trajectories: &[&Trajectory]) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    )
    .unwrap();
    writeln!(s, "<rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"#ffffff\" stroke=\"#999999\"/>").unwrap();
    for (i, t) in trajectories.iter().enumerate() {
        let (color, extra) = style(t.source());
        let points: Vec<String> = t.points().iter().map(|p| format!("{:.2},{:.2}", p.x, p.y)).collect();
        writeln!(
            s,
            "<polyline id=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{extra} points=\"{}\"/>",
            t.source(),
            points.join(" ")
        )
        .unwrap();
        let y = 14 + 14 * i;
        writeln!(
            s,
            "<line x1=\"6\" y1=\"{y}\" x2=\"26\" y2=\"{y}\" stroke=\"{color}\" stroke-width=\"2\"{extra}/><text x=\"30\" y=\"{}\" font-size=\"11\" font-family=\"sans-serif\">{}</text>",
            y + 4,
            t.source()
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}
