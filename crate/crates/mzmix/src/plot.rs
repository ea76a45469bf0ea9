//! Static SVG overlays of a spectrum, its mixture model and detected
//! peaks: signal in black, components in green, the model in red, peak
//! markers in blue. Output is deterministic (fixed float formatting, no
//! timestamps).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::model::MixtureModel;
use crate::spectrum::Spectrum;

const WIDTH: f64 = 1200.0;
const HEIGHT: f64 = 600.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 20.0;
const MARGIN_BOTTOM: f64 = 50.0;

/// Sigma span a component curve is drawn over.
const COMPONENT_SPAN: f64 = 6.0;

struct Frame {
    x_min: f64,
    x_max: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        MARGIN_LEFT + (v - self.x_min) / (self.x_max - self.x_min) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        let h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        HEIGHT - MARGIN_BOTTOM - (v / self.y_max).clamp(0.0, 1.0) * h
    }
}

fn path_from(frame: &Frame, xs: &[f64], ys: &[f64]) -> String {
    let mut d = String::with_capacity(xs.len() * 14);
    for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let cmd = if i == 0 { 'M' } else { 'L' };
        let _ = write!(d, "{}{:.2},{:.2}", cmd, frame.x(x), frame.y(y));
    }
    d
}

/// Render the overlay as an SVG string.
pub fn render_svg(
    spectrum: &Spectrum,
    model: Option<&MixtureModel>,
    peak_positions: Option<&[f64]>,
) -> String {
    let (x_min, x_max) = spectrum.span();
    let rendered = model.map(|m| {
        m.render_scaled(spectrum.mz(), 0..spectrum.len())
            .expect("full range render")
    });
    let mut y_max = spectrum.intensity().iter().cloned().fold(0.0, f64::max);
    if let Some(r) = &rendered {
        y_max = r.iter().cloned().fold(y_max, f64::max);
    }
    if y_max <= 0.0 {
        y_max = 1.0;
    }
    y_max *= 1.05;
    let frame = Frame { x_min, x_max, y_max };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    // Axes.
    let _ = writeln!(
        svg,
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#444\"/>",
        MARGIN_LEFT,
        HEIGHT - MARGIN_BOTTOM,
        WIDTH - MARGIN_RIGHT,
        HEIGHT - MARGIN_BOTTOM
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#444\"/>",
        MARGIN_LEFT,
        MARGIN_TOP,
        MARGIN_LEFT,
        HEIGHT - MARGIN_BOTTOM
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{:.1}</text>",
        MARGIN_LEFT,
        HEIGHT - MARGIN_BOTTOM + 16.0,
        x_min
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{:.1}</text>",
        WIDTH - MARGIN_RIGHT,
        HEIGHT - MARGIN_BOTTOM + 16.0,
        x_max
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\">{:.1}</text>",
        MARGIN_LEFT - 6.0,
        MARGIN_TOP + 10.0,
        y_max
    );

    // Components first so the model and signal draw over them.
    if let Some(m) = model {
        let weights = m.weights();
        for (c, &w) in m.components().iter().zip(&weights) {
            let lo = c.mu - COMPONENT_SPAN * c.sigma;
            let hi = c.mu + COMPONENT_SPAN * c.sigma;
            let from = spectrum.mz().partition_point(|&x| x < lo);
            let to = spectrum.mz().partition_point(|&x| x <= hi);
            if to <= from {
                continue;
            }
            let xs = &spectrum.mz()[from..to];
            let ys: Vec<f64> = xs.iter().map(|&x| w * c.pdf(x)).collect();
            let _ = writeln!(
                svg,
                "<path class=\"component\" d=\"{}\" fill=\"none\" stroke=\"#1a8f1a\" stroke-width=\"1\"/>",
                path_from(&frame, xs, &ys)
            );
        }
    }
    let _ = writeln!(
        svg,
        "<path class=\"signal\" d=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>",
        path_from(&frame, spectrum.mz(), spectrum.intensity())
    );
    if let Some(r) = &rendered {
        let _ = writeln!(
            svg,
            "<path class=\"model\" d=\"{}\" fill=\"none\" stroke=\"#d02020\" stroke-width=\"1\"/>",
            path_from(&frame, spectrum.mz(), r)
        );
    }
    if let Some(positions) = peak_positions {
        for &p in positions {
            if p < x_min || p > x_max {
                continue;
            }
            let idx = spectrum.nearest_index(p);
            let _ = writeln!(
                svg,
                "<circle class=\"peak\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"none\" stroke=\"#2020d0\"/>",
                frame.x(p),
                frame.y(spectrum.intensity()[idx])
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Write the overlay to a file.
pub fn emit_plot(
    spectrum: &Spectrum,
    model: Option<&MixtureModel>,
    peak_positions: Option<&[f64]>,
    path: impl AsRef<Path>,
) -> Result<()> {
    std::fs::write(path, render_svg(spectrum, model, peak_positions))?;
    Ok(())
}
