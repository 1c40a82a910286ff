//! Standalone SVG rendering of demonstrations, model rollouts, and a quiver
//! of the model's vector field restricted to a coordinate plane.
//!
//! The output is self-contained SVG 1.1: one `<polyline class="demo">` per
//! demonstration trajectory, one `<polyline class="rollout">` per model
//! rollout (started from each demonstration's first state), and — when a
//! field is supplied — exactly `grid × grid` `<path class="arrow">`
//! elements sampling the field on the `(dims.0, dims.1)` plane with every
//! other coordinate pinned at the anchor point. Arrows are normalized to
//! equal length by default so direction stays readable where speeds differ
//! by orders of magnitude; `normalize_arrows: false` scales them by speed
//! instead.

use crate::data::Dataset;
use crate::rollout::{integrate, IntegratorConfig};
use crate::{Error, Result};

// ── options ─────────────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct PlotOptions {
    /// The two state coordinates spanning the plot plane.
    pub dims: (usize, usize),
    /// Quiver resolution per axis; `grid * grid` arrows total. 0 disables
    /// the quiver even when a field is supplied.
    pub grid: usize,
    /// Draw every arrow at the same length (direction-only quiver). When
    /// false, arrow length is proportional to speed, scaled so the fastest
    /// arrow fits one grid cell.
    pub normalize_arrows: bool,
    /// Integrate the supplied field from each demonstration's first state.
    pub rollouts: bool,
    /// Canvas size in pixels.
    pub width: f64,
    pub height: f64,
}

impl Default for PlotOptions {
    fn default() -> PlotOptions {
        PlotOptions {
            dims: (0, 1),
            grid: 20,
            normalize_arrows: true,
            rollouts: true,
            width: 640.0,
            height: 480.0,
        }
    }
}

/// A vector field to visualize: evaluation closure (same calling convention
/// as the integrators), the full-dimensional anchor fixing the coordinates
/// outside the plot plane (normally the equilibrium), and the rollout
/// integrator settings.
pub struct FieldPlot<'a> {
    pub field: &'a mut dyn FnMut(&[f64], &mut [f64]),
    pub anchor: Vec<f64>,
    pub integrator: IntegratorConfig,
}

// ── rendering ───────────────────────────────────────────────────────────────

struct Frame {
    x_min: f64,
    x_span: f64,
    y_min: f64,
    y_span: f64,
    width: f64,
    height: f64,
}

impl Frame {
    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.x_min) / self.x_span * self.width,
            // SVG y grows downward.
            self.height - (y - self.y_min) / self.y_span * self.height,
        )
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// Render the dataset (and optionally a model field) to an SVG document.
///
/// Errors when the plane is invalid: equal indices, or an index outside the
/// data dimension.
pub fn render_svg(data: &Dataset, field: Option<FieldPlot<'_>>, opts: &PlotOptions) -> Result<String> {
    let d = data.dim();
    let (ix, iy) = opts.dims;
    if ix == iy {
        return Err(Error::Config(format!(
            "plot plane needs two distinct coordinates, got ({ix}, {iy})"
        )));
    }
    if ix >= d || iy >= d {
        return Err(Error::Config(format!(
            "plot plane ({ix}, {iy}) is outside the data dimension {d}"
        )));
    }
    if let Some(fp) = &field {
        if fp.anchor.len() != d {
            return Err(Error::DimensionMismatch {
                context: "plot anchor",
                expected: d,
                got: fp.anchor.len(),
            });
        }
    }

    // Gather everything drawn first so the frame can enclose it.
    let mut rollouts: Vec<Vec<(f64, f64)>> = Vec::new();
    let anchor_xy = field.as_ref().map(|fp| (fp.anchor[ix], fp.anchor[iy]));
    let mut field = field;
    if let Some(fp) = field.as_mut() {
        if opts.rollouts {
            for traj in &data.trajectories {
                if traj.is_empty() {
                    continue;
                }
                if let Ok(r) = integrate(&mut *fp.field, traj.first_state(), &fp.integrator) {
                    rollouts.push((0..r.len()).map(|k| (r.state(k)[ix], r.state(k)[iy])).collect());
                }
            }
        }
    }

    let mut bounds: Vec<(f64, f64)> = Vec::new();
    for traj in &data.trajectories {
        for k in 0..traj.len() {
            bounds.push((traj.state(k)[ix], traj.state(k)[iy]));
        }
    }
    for r in &rollouts {
        bounds.extend(r.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()));
    }
    if let Some((ax, ay)) = anchor_xy {
        bounds.push((ax, ay));
    }
    if bounds.is_empty() {
        bounds.push((0.0, 0.0));
    }
    let (mut x_min, mut x_max, mut y_min, mut y_max) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in bounds {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    // 7% margin, and a floor so a single point still gets a visible frame.
    let pad_x = (0.07 * (x_max - x_min)).max(0.5);
    let pad_y = (0.07 * (y_max - y_min)).max(0.5);
    let frame = Frame {
        x_min: x_min - pad_x,
        x_span: (x_max - x_min) + 2.0 * pad_x,
        y_min: y_min - pad_y,
        y_span: (y_max - y_min) + 2.0 * pad_y,
        width: opts.width,
        height: opts.height,
    };

    let mut svg = String::new();
    svg.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
        fmt(opts.width), fmt(opts.height), fmt(opts.width), fmt(opts.height)
    ));
    svg.push_str("<style>\n");
    svg.push_str(".demo { fill: none; stroke: #1f77b4; stroke-width: 1.6; }\n");
    svg.push_str(".rollout { fill: none; stroke: #d62728; stroke-width: 1.3; stroke-dasharray: 5 3; }\n");
    svg.push_str(".arrow { fill: none; stroke: #8a8a8a; stroke-width: 0.9; }\n");
    svg.push_str(".anchor { fill: #2ca02c; stroke: none; }\n");
    svg.push_str("</style>\n");
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n");

    // Quiver first so trajectories draw on top of it.
    if let Some(fp) = field.as_mut() {
        if opts.grid > 0 {
            let g = opts.grid;
            let cell_px = (opts.width / g as f64).min(opts.height / g as f64);
            let shaft = 0.70 * cell_px;
            // Precompute samples; raw mode scales by the fastest arrow.
            let mut samples = Vec::with_capacity(g * g);
            let mut v = vec![0.0; d];
            let mut x = fp.anchor.clone();
            let mut v_max: f64 = 0.0;
            for r in 0..g {
                for c in 0..g {
                    // Cell centers of a g×g lattice over the world frame.
                    let wx = frame.x_min + (c as f64 + 0.5) / g as f64 * frame.x_span;
                    let wy = frame.y_min + (r as f64 + 0.5) / g as f64 * frame.y_span;
                    x.copy_from_slice(&fp.anchor);
                    x[ix] = wx;
                    x[iy] = wy;
                    (fp.field)(&x, &mut v);
                    let (vx, vy) = (v[ix], v[iy]);
                    let speed = (vx * vx + vy * vy).sqrt();
                    if speed.is_finite() {
                        v_max = v_max.max(speed);
                    }
                    samples.push((wx, wy, vx, vy, speed));
                }
            }
            for (wx, wy, vx, vy, speed) in samples {
                let (px, py) = frame.map(wx, wy);
                // Exactly one arrow element per lattice point, even where
                // the field vanishes or misbehaves (degenerate path).
                if !(speed.is_finite() && speed > 1e-300) {
                    svg.push_str(&format!(
                        "<path class=\"arrow\" d=\"M{} {}\"/>\n",
                        fmt(px),
                        fmt(py)
                    ));
                    continue;
                }
                let len = if opts.normalize_arrows {
                    shaft
                } else {
                    shaft * speed / v_max
                };
                // Screen-space direction (y flipped).
                let (dx, dy) = (vx / speed * len, -vy / speed * len);
                let (hx, hy) = (px + dx, py + dy);
                // Two head strokes at ±150° from the shaft direction.
                let head = 0.30 * len;
                let (ux, uy) = (dx / len, dy / len);
                let rot = |ca: f64, sa: f64| (hx + head * (ca * ux - sa * uy), hy + head * (sa * ux + ca * uy));
                let (h1x, h1y) = rot(-0.866, 0.5);
                let (h2x, h2y) = rot(-0.866, -0.5);
                svg.push_str(&format!(
                    "<path class=\"arrow\" d=\"M{} {} L{} {} M{} {} L{} {} M{} {} L{} {}\"/>\n",
                    fmt(px), fmt(py), fmt(hx), fmt(hy),
                    fmt(hx), fmt(hy), fmt(h1x), fmt(h1y),
                    fmt(hx), fmt(hy), fmt(h2x), fmt(h2y)
                ));
            }
        }
    }

    for r in &rollouts {
        let pts: Vec<String> = r
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| {
                let (px, py) = frame.map(x, y);
                format!("{},{}", fmt(px), fmt(py))
            })
            .collect();
        svg.push_str(&format!(
            "<polyline class=\"rollout\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
    }

    for traj in &data.trajectories {
        let pts: Vec<String> = (0..traj.len())
            .map(|k| {
                let (px, py) = frame.map(traj.state(k)[ix], traj.state(k)[iy]);
                format!("{},{}", fmt(px), fmt(py))
            })
            .collect();
        svg.push_str(&format!(
            "<polyline class=\"demo\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
    }

    if let Some((ax, ay)) = anchor_xy {
        let (px, py) = frame.map(ax, ay);
        svg.push_str(&format!(
            "<circle class=\"anchor\" cx=\"{}\" cy=\"{}\" r=\"4\"/>\n",
            fmt(px),
            fmt(py)
        ));
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

// ── tests ───────────────────────────────────────────────────────────────────
