//! Minimal static SVG plots: residual decay on a log scale, an occupancy
//! heat strip, and parameter-estimate traces against their true values.

use freeway_control::closed_loop::Trajectory;
use freeway_control::observer::ParameterEstimate;
use std::fmt::Write;

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 46.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    t_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, t: f64) -> f64 {
        MARGIN_L + (WIDTH - MARGIN_L - MARGIN_R) * t / self.t_max.max(1.0)
    }

    fn y(&self, v: f64) -> f64 {
        let span = (self.y_max - self.y_min).max(1e-12);
        HEIGHT - MARGIN_B - (HEIGHT - MARGIN_T - MARGIN_B) * (v - self.y_min) / span
    }

    fn axes(&self, out: &mut String, x_label: &str, y_label: &str, y_ticks: &[(f64, String)]) {
        let x0 = MARGIN_L;
        let x1 = WIDTH - MARGIN_R;
        let y0 = HEIGHT - MARGIN_B;
        let _ = write!(
            out,
            "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
             <line x1=\"{x0}\" y1=\"{MARGIN_T}\" x2=\"{x0}\" y2=\"{y0}\" stroke=\"black\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            (x0 + x1) / 2.0,
            HEIGHT - 10.0,
            escape(x_label)
        );
        let _ = write!(
            out,
            "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
            (MARGIN_T + y0) / 2.0,
            (MARGIN_T + y0) / 2.0,
            escape(y_label)
        );
        for (v, label) in y_ticks {
            let y = self.y(*v);
            let _ = write!(
                out,
                "<line x1=\"{}\" y1=\"{y}\" x2=\"{x0}\" y2=\"{y}\" stroke=\"black\"/>\n\
                 <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{label}</text>\n",
                x0 - 4.0,
                x0 - 7.0,
                y + 4.0
            );
        }
        for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let t = self.t_max * frac;
            let x = self.x(t);
            let _ = write!(
                out,
                "<line x1=\"{x}\" y1=\"{y0}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\n\
                 <text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                y0 + 4.0,
                y0 + 18.0,
                t.round() as i64
            );
        }
    }
}

fn polyline(out: &mut String, pts: &[(f64, f64)], color: &str, dashed: bool) {
    if pts.is_empty() {
        return;
    }
    let mut points = String::new();
    for (x, y) in pts {
        let _ = write!(points, "{x:.2},{y:.2} ");
    }
    let dash = if dashed { " stroke-dasharray=\"6 4\"" } else { "" };
    let _ = write!(
        out,
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash} points=\"{}\"/>\n",
        points.trim_end()
    );
}

/// Residual decay on a log10 scale; values at numerical zero are floored
/// to 1e-16 so they stay on the canvas.
pub fn residual_plot(residuals: &[f64], title: &str) -> String {
    let logs: Vec<f64> = residuals.iter().map(|r| r.max(1e-16).log10()).collect();
    let y_min = logs.iter().copied().fold(f64::INFINITY, f64::min).floor() - 0.5;
    let y_max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil() + 0.5;
    let frame = Frame {
        t_max: (residuals.len().saturating_sub(1)) as f64,
        y_min,
        y_max,
    };
    let mut out = header(title);
    let mut ticks = Vec::new();
    let step = (((y_max - y_min) / 6.0).ceil() as i64).max(1);
    let mut v = y_min.ceil() as i64;
    while (v as f64) <= y_max {
        ticks.push((v as f64, format!("1e{v}")));
        v += step;
    }
    frame.axes(&mut out, "step", "residual", &ticks);
    let pts: Vec<(f64, f64)> = logs
        .iter()
        .enumerate()
        .map(|(t, l)| (frame.x(t as f64), frame.y(*l)))
        .collect();
    polyline(&mut out, &pts, PALETTE[0], false);
    out.push_str("</svg>\n");
    out
}

fn ramp(frac: f64) -> String {
    // Blue (empty) through yellow to red (full).
    let f = frac.clamp(0.0, 1.0);
    let (r, g, b) = if f < 0.5 {
        let t = f / 0.5;
        (43.0 + t * (236.0 - 43.0), 108.0 + t * (201.0 - 108.0), 176.0 + t * (75.0 - 176.0))
    } else {
        let t = (f - 0.5) / 0.5;
        (236.0 + t * (229.0 - 236.0), 201.0 + t * (62.0 - 201.0), 75.0 + t * (62.0 - 75.0))
    };
    format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
}

/// Heat strip of relative occupancies `x_i(t) / a_i`: one row per cell,
/// one column per (possibly strided) step.
pub fn density_heatmap(traj: &Trajectory, a: &[f64], title: &str) -> String {
    let n = a.len();
    let steps = traj.records.len() + 1;
    let stride = steps.div_ceil(800);
    let cols: Vec<&[f64]> = traj
        .records
        .iter()
        .map(|r| r.x.as_slice())
        .chain(std::iter::once(traj.final_state.as_slice()))
        .step_by(stride)
        .collect();
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let cell_w = plot_w / cols.len() as f64;
    let cell_h = plot_h / n as f64;
    let mut out = header(title);
    for (j, x) in cols.iter().enumerate() {
        for i in 0..n {
            let _ = write!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>\n",
                MARGIN_L + j as f64 * cell_w,
                MARGIN_T + i as f64 * cell_h,
                cell_w + 0.5,
                cell_h,
                ramp(x[i] / a[i])
            );
        }
    }
    for i in 0..n {
        let _ = write!(
            out,
            "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">cell {}</text>\n",
            MARGIN_L - 6.0,
            MARGIN_T + (i as f64 + 0.6) * cell_h,
            i + 1
        );
    }
    let _ = write!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">step (x{stride})</text>\n",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 10.0
    );
    out.push_str("</svg>\n");
    out
}

/// Traces of every estimate component over time (solid) against its true
/// value (dashed, same color).
pub fn estimate_traces(traj: &Trajectory, truth: &ParameterEstimate, title: &str) -> String {
    let series: Vec<(String, Vec<f64>, f64)> = {
        let mut s = Vec::new();
        let pick = |f: &dyn Fn(&ParameterEstimate) -> &Vec<f64>, names: &dyn Fn(usize) -> String| {
            let count = f(truth).len();
            (0..count)
                .map(|k| {
                    let mut vals: Vec<f64> =
                        traj.records.iter().map(|r| f(&r.theta_hat)[k]).collect();
                    vals.push(f(&traj.final_estimate)[k]);
                    (names(k), vals, f(truth)[k])
                })
                .collect::<Vec<_>>()
        };
        s.extend(pick(&|t| &t.p_exit, &|k| format!("P{}", k + 1)));
        s.extend(pick(&|t| &t.r, &|k| format!("r{}", k + 1)));
        s.extend(pick(&|t| &t.v_uncontrolled, &|k| format!("v{}", k + 1)));
        s
    };
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (_, vals, truth_v) in &series {
        for v in vals.iter().chain(std::iter::once(truth_v)) {
            y_min = y_min.min(*v);
            y_max = y_max.max(*v);
        }
    }
    let pad = 0.05 * (y_max - y_min).max(1e-6);
    let frame = Frame {
        t_max: traj.records.len() as f64,
        y_min: y_min - pad,
        y_max: y_max + pad,
    };
    let mut out = header(title);
    let ticks: Vec<(f64, String)> = (0..=4)
        .map(|k| {
            let v = frame.y_min + (frame.y_max - frame.y_min) * k as f64 / 4.0;
            (v, format!("{v:.2}"))
        })
        .collect();
    frame.axes(&mut out, "step", "estimate", &ticks);
    for (idx, (label, vals, truth_v)) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let pts: Vec<(f64, f64)> = vals
            .iter()
            .enumerate()
            .map(|(t, v)| (frame.x(t as f64), frame.y(*v)))
            .collect();
        polyline(&mut out, &pts, color, false);
        let truth_pts = [
            (frame.x(0.0), frame.y(*truth_v)),
            (frame.x(frame.t_max), frame.y(*truth_v)),
        ];
        polyline(&mut out, &truth_pts, color, true);
        let _ = write!(
            out,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{label}</text>\n",
            WIDTH - MARGIN_R - 40.0,
            MARGIN_T + 14.0 * (idx as f64 + 1.0)
        );
    }
    out.push_str("</svg>\n");
    out
}
