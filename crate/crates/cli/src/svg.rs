//! Static SVG figures. Output is a pure function of the input data, with
//! coordinates printed at fixed precision so files compare byte for byte.

use std::fmt::Write;

use perspective_core::analysis::{HysteresisReport, QuantileBand, SignalReport};

use crate::pipeline::OccupancyTable;

const ZONE_COLORS: [&str; 3] = ["#c0392b", "#e67e22", "#27ae60"];
const AB_COLOR: &str = "#1f77b4";
const BA_COLOR: &str = "#d62728";
const FONT: &str = "font-family=\"sans-serif\" font-size=\"12\"";

/// Maps data coordinates into a pixel rectangle (y grows downward).
struct Frame {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        let (lo, hi) = self.x_range;
        self.left + (v - lo) / (hi - lo) * self.width
    }

    fn y(&self, v: f64) -> f64 {
        let (lo, hi) = self.y_range;
        self.top + self.height - (v - lo) / (hi - lo) * self.height
    }

    fn bottom(&self) -> f64 {
        self.top + self.height
    }

    fn axes(&self, svg: &mut String, y_ticks: &[f64]) {
        let _ = writeln!(
            svg,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#333\"/>",
            self.left, self.top, self.width, self.height
        );
        for &t in y_ticks {
            let y = self.y(t);
            let _ = writeln!(
                svg,
                "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#ddd\"/>",
                self.left,
                self.left + self.width
            );
            let _ = writeln!(
                svg,
                "<text x=\"{:.2}\" y=\"{:.2}\" {FONT} text-anchor=\"end\">{}</text>",
                self.left - 6.0,
                y + 4.0,
                tick_label(t)
            );
        }
    }
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn header(width: u32, height: u32) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Grouped bars of mean zone occupancy for the early and late training
/// windows, with one dot per seed.
pub fn occupancy_chart(table: &OccupancyTable) -> String {
    let mut svg = header(560, 360);
    let frame = Frame {
        left: 60.0,
        top: 40.0,
        width: 460.0,
        height: 260.0,
        x_range: (0.0, 2.0),
        y_range: (0.0, 1.0),
    };
    let _ = writeln!(
        svg,
        "<text x=\"280\" y=\"22\" {FONT} text-anchor=\"middle\">Zone occupancy (mean over seeds)</text>"
    );
    frame.axes(&mut svg, &[0.0, 0.25, 0.5, 0.75, 1.0]);

    let groups = [
        (table.early_episodes, table.early_mean, 0usize),
        (table.late_episodes, table.late_mean, 1usize),
    ];
    let bar = 0.22;
    for ((a, b), mean, g) in groups {
        let center = g as f64 + 0.5;
        for (z, &value) in mean.iter().enumerate() {
            let x0 = center + (z as f64 - 1.5) * bar;
            let (px, pw) = (frame.x(x0), frame.x(x0 + bar) - frame.x(x0));
            let py = frame.y(value);
            let _ = writeln!(
                svg,
                "<rect x=\"{px:.2}\" y=\"{py:.2}\" width=\"{pw:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                frame.bottom() - py,
                ZONE_COLORS[z]
            );
            for s in &table.seeds {
                let v = if g == 0 { s.early[z] } else { s.late[z] };
                let _ = writeln!(
                    svg,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"#222\" fill-opacity=\"0.6\"/>",
                    px + pw / 2.0,
                    frame.y(v)
                );
            }
        }
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" {FONT} text-anchor=\"middle\">episodes {a}-{b}</text>",
            frame.x(center),
            frame.bottom() + 18.0
        );
    }
    for (z, color) in ZONE_COLORS.iter().enumerate() {
        let x = 80.0 + 90.0 * z as f64;
        let _ = writeln!(
            svg,
            "<rect x=\"{x:.2}\" y=\"330\" width=\"12\" height=\"12\" fill=\"{color}\"/>\n<text x=\"{:.2}\" y=\"340\" {FONT}>Z{z}</text>",
            x + 16.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn band_range(signal: &SignalReport) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for band in [&signal.a_to_b, &signal.b_to_a] {
        for v in band.q25.iter().chain(&band.q75).chain(&band.median) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if !(hi > lo) {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn draw_band(svg: &mut String, frame: &Frame, band: &QuantileBand, color: &str) {
    let mut outline = String::new();
    for (tau, v) in band.q75.iter().enumerate() {
        let _ = write!(outline, "{:.2},{:.2} ", frame.x(tau as f64), frame.y(*v));
    }
    for (tau, v) in band.q25.iter().enumerate().rev() {
        let _ = write!(outline, "{:.2},{:.2} ", frame.x(tau as f64), frame.y(*v));
    }
    let _ = writeln!(
        svg,
        "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>",
        outline.trim_end()
    );
    let line: Vec<String> = band
        .median
        .iter()
        .enumerate()
        .map(|(tau, v)| format!("{:.2},{:.2}", frame.x(tau as f64), frame.y(*v)))
        .collect();
    let _ = writeln!(
        svg,
        "<polyline class=\"median\" data-direction=\"{}\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
        escape(band.direction.label()),
        line.join(" ")
    );
}

fn panel(svg: &mut String, signal: &SignalReport, left: f64, title: &str, period: usize) {
    let (lo, hi) = band_range(signal);
    let frame = Frame {
        left,
        top: 40.0,
        width: 320.0,
        height: 240.0,
        x_range: (0.0, period.saturating_sub(1).max(1) as f64),
        y_range: (lo, hi),
    };
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"28\" {FONT} text-anchor=\"middle\">{}</text>",
        left + 160.0,
        escape(title)
    );
    let ticks: Vec<f64> = (0..5).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect();
    frame.axes(svg, &ticks);
    for tau in [0, period / 2, period.saturating_sub(1)] {
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" {FONT} text-anchor=\"middle\">{tau}</text>",
            frame.x(tau as f64),
            frame.bottom() + 16.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" {FONT} text-anchor=\"middle\">steps since switch</text>",
        left + 160.0,
        frame.bottom() + 32.0
    );
    draw_band(svg, &frame, &signal.a_to_b, AB_COLOR);
    draw_band(svg, &frame, &signal.b_to_a, BA_COLOR);
}

/// Two panels (g-score, entropy z-score) of switch-aligned median
/// trajectories with interquartile bands, one color per direction.
pub fn hysteresis_chart(report: &HysteresisReport) -> String {
    let mut svg = header(800, 360);
    panel(&mut svg, &report.g_score, 60.0, "g-score", report.period);
    panel(
        &mut svg,
        &report.entropy_z,
        460.0,
        "policy entropy (z)",
        report.period,
    );
    for (i, (label, color)) in [("A->B", AB_COLOR), ("B->A", BA_COLOR)].iter().enumerate() {
        let x = 300.0 + 110.0 * i as f64;
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"340\" x2=\"{:.2}\" y2=\"340\" stroke=\"{color}\" stroke-width=\"2\"/>\n<text x=\"{:.2}\" y=\"344\" {FONT}>{}</text>",
            x + 20.0,
            x + 26.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
