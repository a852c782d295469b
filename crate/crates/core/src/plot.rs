//! Deterministic SVG rendering of variance curves.
//!
//! A plot shows the measured variance points connected by a line, vertical
//! error bars of +/- one spread, and optionally the fitted `y = a/N + b`
//! curve as a dashed overlay with its coefficients in the legend. Axes may be
//! log-scaled; a clip floor applies to rendering only and never alters the
//! stored data. Identical inputs produce byte-identical SVG.

use crate::error::{Error, Result};
use crate::stability::{CurveFit, VariancePoint};

#[derive(Debug, Clone, Copy)]
pub struct PlotAxes {
    pub log_x: bool,
    pub log_y: bool,
    /// Rendered y values are clamped to at least this (when positive).
    pub clip_floor: f64,
}

impl Default for PlotAxes {
    fn default() -> Self {
        PlotAxes {
            log_x: false,
            log_y: true,
            clip_floor: 0.0,
        }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 20.0;
const MARGIN_BOTTOM: f64 = 50.0;

struct AxisScale {
    min: f64,
    max: f64,
    log: bool,
}

impl AxisScale {
    fn new(values: impl Iterator<Item = f64>, log: bool) -> AxisScale {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            if log && v <= 0.0 {
                continue;
            }
            min = min.min(v);
            max = max.max(v);
        }
        if !min.is_finite() || !max.is_finite() {
            min = if log { 0.1 } else { 0.0 };
            max = 1.0;
        }
        if min == max {
            // Degenerate range: widen symmetrically.
            if log {
                min /= 2.0;
                max *= 2.0;
            } else {
                min -= 0.5;
                max += 0.5;
            }
        }
        AxisScale { min, max, log }
    }

    fn fraction(&self, v: f64) -> f64 {
        if self.log {
            let v = v.max(self.min);
            (v.ln() - self.min.ln()) / (self.max.ln() - self.min.ln())
        } else {
            (v - self.min) / (self.max - self.min)
        }
    }

    /// Five tick positions spanning the range.
    fn ticks(&self) -> Vec<f64> {
        const COUNT: usize = 5;
        (0..COUNT)
            .map(|i| {
                let f = i as f64 / (COUNT - 1) as f64;
                if self.log {
                    (self.min.ln() + f * (self.max.ln() - self.min.ln())).exp()
                } else {
                    self.min + f * (self.max - self.min)
                }
            })
            .collect()
    }
}

fn fmt(v: f64) -> String {
    // Shortest round-trip decimal, with a compact form for tick labels.
    format!("{v}")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (0.01..10_000.0).contains(&a) {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.').to_string();
        if s.is_empty() {
            "0".into()
        } else {
            s
        }
    } else {
        format!("{v:.2e}")
    }
}

/// Render points, error bars, and an optional fitted overlay as SVG.
pub fn render_variance_plot(
    points: &[VariancePoint],
    fit: Option<&CurveFit>,
    axes: PlotAxes,
) -> Result<String> {
    if points.is_empty() {
        return Err(Error::Domain("plot needs at least one point".into()));
    }

    let clip = |y: f64| -> f64 {
        if axes.clip_floor > 0.0 {
            y.max(axes.clip_floor)
        } else {
            y
        }
    };
    let all_clipped =
        axes.clip_floor > 0.0 && points.iter().all(|p| p.mean_variance < axes.clip_floor);

    let x_scale = AxisScale::new(points.iter().map(|p| p.x), axes.log_x);
    let y_values = points
        .iter()
        .flat_map(|p| {
            let y = clip(p.mean_variance);
            [y, clip(y - p.spread), y + p.spread]
        })
        .chain(fit.iter().flat_map(|f| {
            points
                .iter()
                .map(|p| clip(f.a / p.x + f.b))
                .collect::<Vec<_>>()
        }));
    let y_scale = AxisScale::new(y_values, axes.log_y);

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let to_px = |x: f64, y: f64| -> (f64, f64) {
        let fx = x_scale.fraction(x).clamp(0.0, 1.0);
        let fy = y_scale.fraction(y).clamp(0.0, 1.0);
        (MARGIN_LEFT + fx * plot_w, MARGIN_TOP + (1.0 - fy) * plot_h)
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    // Frame.
    svg.push_str(&format!(
        "<rect x=\"{MARGIN_LEFT}\" y=\"{MARGIN_TOP}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n",
        fmt(plot_w),
        fmt(plot_h)
    ));

    // Ticks and labels.
    for t in x_scale.ticks() {
        let (px, _) = to_px(t, y_scale.min);
        let y0 = MARGIN_TOP + plot_h;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\" stroke-width=\"1\"/>\n",
            fmt(px),
            fmt(y0),
            fmt(px),
            fmt(y0 + 5.0)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            fmt(px),
            fmt(y0 + 18.0),
            fmt_tick(t)
        ));
    }
    for t in y_scale.ticks() {
        let (_, py) = to_px(x_scale.min, t);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\" stroke-width=\"1\"/>\n",
            fmt(MARGIN_LEFT - 5.0),
            fmt(py),
            fmt(MARGIN_LEFT),
            fmt(py)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            fmt(MARGIN_LEFT - 8.0),
            fmt(py + 4.0),
            fmt_tick(t)
        ));
    }

    // Error bars.
    for p in points {
        let y = clip(p.mean_variance);
        let (px, py_low) = to_px(p.x, clip(y - p.spread));
        let (_, py_high) = to_px(p.x, y + p.spread);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"steelblue\" stroke-width=\"1\"/>\n",
            fmt(px),
            fmt(py_low),
            fmt(px),
            fmt(py_high)
        ));
        for py in [py_low, py_high] {
            svg.push_str(&format!(
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"steelblue\" stroke-width=\"1\"/>\n",
                fmt(px - 3.0),
                fmt(py),
                fmt(px + 3.0),
                fmt(py)
            ));
        }
    }

    // Connecting line.
    if points.len() >= 2 {
        let mut path = String::from("M");
        for (i, p) in points.iter().enumerate() {
            let (px, py) = to_px(p.x, clip(p.mean_variance));
            if i > 0 {
                path.push_str(" L");
            }
            path.push_str(&format!("{} {}", fmt(px), fmt(py)));
        }
        svg.push_str(&format!(
            "<path d=\"{path}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\"/>\n"
        ));
    }

    // Markers.
    for p in points {
        let (px, py) = to_px(p.x, clip(p.mean_variance));
        svg.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"steelblue\"/>\n",
            fmt(px),
            fmt(py)
        ));
    }

    // Fitted curve overlay, dashed, sampled across the x range.
    if let Some(f) = fit {
        let samples = 100usize;
        let mut path = String::from("M");
        for i in 0..=samples {
            let frac = i as f64 / samples as f64;
            let x = if axes.log_x {
                (x_scale.min.ln() + frac * (x_scale.max.ln() - x_scale.min.ln())).exp()
            } else {
                x_scale.min + frac * (x_scale.max - x_scale.min)
            };
            let y = clip(f.a / x + f.b);
            let (px, py) = to_px(x, y);
            if i > 0 {
                path.push_str(" L");
            }
            path.push_str(&format!("{} {}", fmt(px), fmt(py)));
        }
        svg.push_str(&format!(
            "<path d=\"{path}\" fill=\"none\" stroke=\"crimson\" stroke-width=\"1.5\" stroke-dasharray=\"6 4\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"crimson\">a={}, b={}</text>\n",
            fmt(MARGIN_LEFT + 10.0),
            fmt(MARGIN_TOP + 16.0),
            fmt(f.a),
            fmt(f.b)
        ));
    }

    if all_clipped {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"darkorange\">warning: all points below clip floor {}</text>\n",
            fmt(MARGIN_LEFT + 10.0),
            fmt(MARGIN_TOP + 32.0),
            fmt(axes.clip_floor)
        ));
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(x: f64, y: f64, spread: f64) -> VariancePoint {
        VariancePoint {
            x,
            mean_variance: y,
            spread,
            per_run: vec![y],
        }
    }

    #[test]
    fn single_point_without_fit_is_valid_svg() {
        let svg = render_variance_plot(
            &[point(10.0, 0.5, 0.0)],
            None,
            PlotAxes {
                log_x: false,
                log_y: false,
                clip_floor: 0.0,
            },
        )
        .unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<circle").count(), 1);
    }

    #[test]
    fn identical_inputs_render_byte_identical_svg() {
        let points = vec![
            point(10.0, 0.9, 0.1),
            point(20.0, 0.5, 0.05),
            point(40.0, 0.3, 0.02),
        ];
        let fit = CurveFit {
            a: 8.0,
            b: 0.1,
            residual_rms: 0.01,
            loglog_slope: -0.9,
            points_used: 3,
        };
        let axes = PlotAxes::default();
        let a = render_variance_plot(&points, Some(&fit), axes).unwrap();
        let b = render_variance_plot(&points, Some(&fit), axes).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fit_legend_uses_shortest_round_trip_format() {
        let points = vec![point(10.0, 0.9, 0.0), point(100.0, 0.2, 0.0)];
        let fit = CurveFit {
            a: 7.71,
            b: 0.0999,
            residual_rms: 0.0,
            loglog_slope: -1.0,
            points_used: 2,
        };
        let svg = render_variance_plot(&points, Some(&fit), PlotAxes::default()).unwrap();
        assert!(svg.contains("a=7.71, b=0.0999"), "legend text missing");
    }

    #[test]
    fn clip_floor_warning_annotation() {
        let points = vec![point(10.0, 1e-9, 0.0), point(20.0, 1e-10, 0.0)];
        let axes = PlotAxes {
            log_x: true,
            log_y: true,
            clip_floor: 1e-4,
        };
        let svg = render_variance_plot(&points, None, axes).unwrap();
        assert!(svg.contains("warning: all points below clip floor"));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(render_variance_plot(&[], None, PlotAxes::default()).is_err());
    }
}
