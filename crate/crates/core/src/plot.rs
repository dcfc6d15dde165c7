//! SVG figures drawn from a trajectory log.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::engine::TrajectoryLog;
use crate::error::{NesError, Result};
use crate::output::axis_name;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Output paths in the plane, start and end marked.
    Trajectories,
    /// Every agent's tracker estimate against the true reference mean.
    Estimates,
    /// References per agent with the equilibrium as dashed lines.
    PerAgentConvergence,
    /// Summed distance to the equilibrium on a log axis.
    ErrorSum,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [
        PlotKind::Trajectories,
        PlotKind::Estimates,
        PlotKind::PerAgentConvergence,
        PlotKind::ErrorSum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::Trajectories => "trajectories",
            PlotKind::Estimates => "estimates",
            PlotKind::PerAgentConvergence => "per_agent_convergence",
            PlotKind::ErrorSum => "error_sum",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.svg", self.name())
    }
}

impl FromStr for PlotKind {
    type Err = NesError;

    fn from_str(s: &str) -> Result<Self> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| NesError::Plot(format!("unknown plot kind '{s}'")))
    }
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 520.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

struct Series {
    points: Vec<(f64, f64)>,
    color: String,
    width: f64,
    dashed: bool,
    class: &'static str,
}

struct Marker {
    at: (f64, f64),
    color: &'static str,
}

struct Chart {
    title: String,
    x_label: String,
    y_label: String,
    log_y: bool,
    series: Vec<Series>,
    markers: Vec<Marker>,
}

impl Chart {
    fn new(title: impl Into<String>, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_y: false,
            series: Vec::new(),
            markers: Vec::new(),
        }
    }

    fn line(&mut self, points: Vec<(f64, f64)>, color: &str, width: f64, dashed: bool) {
        self.series.push(Series {
            points,
            color: color.to_string(),
            width,
            dashed,
            class: if dashed { "oracle" } else { "series" },
        });
    }

    fn ty(&self, y: f64) -> f64 {
        if self.log_y {
            y.max(1e-300).log10()
        } else {
            y
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
        let mut ys = (f64::INFINITY, f64::NEG_INFINITY);
        let pts = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().copied())
            .chain(self.markers.iter().map(|m| m.at));
        for (x, y) in pts {
            if !x.is_finite() || !y.is_finite() {
                continue;
            }
            let y = self.ty(y);
            xs = (xs.0.min(x), xs.1.max(x));
            ys = (ys.0.min(y), ys.1.max(y));
        }
        if !xs.0.is_finite() {
            return (0.0, 1.0, 0.0, 1.0);
        }
        let pad = |lo: f64, hi: f64| {
            if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let m = 0.04 * (hi - lo);
                (lo - m, hi + m)
            }
        };
        let (x0, x1) = pad(xs.0, xs.1);
        let (y0, y1) = pad(ys.0, ys.1);
        (x0, x1, y0, y1)
    }

    fn render(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (1.0 - (self.ty(y) - y0) / (y1 - y0)) * ph;
        let sy_raw = |t: f64| TOP + (1.0 - (t - y0) / (y1 - y0)) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for t in ticks(x0, x1) {
            let x = sx(t);
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                TOP,
                TOP + ph,
                TOP + ph + 16.0,
                tick_label(t)
            );
        }
        let yticks = if self.log_y {
            (y0.ceil() as i64..=y1.floor() as i64)
                .map(|e| e as f64)
                .collect()
        } else {
            ticks(y0, y1)
        };
        for t in yticks {
            let y = sy_raw(t);
            let label = if self.log_y {
                format!("1e{t}")
            } else {
                tick_label(t)
            };
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"##,
                LEFT + pw,
                LEFT - 6.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for series in &self.series {
            let mut pts = String::new();
            for &(x, y) in &series.points {
                if x.is_finite() && y.is_finite() {
                    let _ = write!(pts, "{:.2},{:.2} ", sx(x), sy(y));
                }
            }
            let dash = if series.dashed {
                r#" stroke-dasharray="6 4""#
            } else {
                ""
            };
            let _ = writeln!(
                s,
                r#"<polyline class="{}" points="{}" fill="none" stroke="{}" stroke-width="{}"{dash}/>"#,
                series.class,
                pts.trim_end(),
                series.color,
                series.width
            );
        }
        for m in &self.markers {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{}"/>"#,
                sx(m.at.0),
                sy(m.at.1),
                m.color
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    if span <= 0.0 || !span.is_finite() {
        return vec![lo];
    }
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-9 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn tick_label(t: f64) -> String {
    if t != 0.0 && (t.abs() >= 1e5 || t.abs() < 1e-3) {
        format!("{t:.1e}")
    } else {
        let s = format!("{t:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

/// Renders one figure for the selected agents.
pub fn emit_plot(log: &TrajectoryLog, kind: PlotKind, agents: &[usize]) -> Result<String> {
    if agents.is_empty() {
        return Err(NesError::Plot("no agents selected".into()));
    }
    let n = log.n_agents();
    if let Some(&bad) = agents.iter().find(|&&i| i >= n) {
        return Err(NesError::IndexOutOfRange {
            index: bad,
            n_agents: n,
        });
    }
    if log.rows.is_empty() {
        return Err(NesError::Plot("trajectory log is empty".into()));
    }
    let dim = log.dim();
    let steps: Vec<f64> = log.rows.iter().map(|r| r.step as f64).collect();
    let chart = match kind {
        PlotKind::Trajectories => {
            let (xl, yl) = if dim >= 2 {
                ("y_x".to_string(), "y_y".to_string())
            } else {
                ("k".to_string(), "y_x".to_string())
            };
            let mut c = Chart::new("Agent outputs", &xl, &yl);
            for &i in agents {
                let pts: Vec<(f64, f64)> = log
                    .rows
                    .iter()
                    .map(|r| {
                        let y = &r.agents[i].y;
                        if dim >= 2 {
                            (y[0], y[1])
                        } else {
                            (r.step as f64, y[0])
                        }
                    })
                    .collect();
                let start = pts[0];
                let end = *pts.last().unwrap();
                c.line(pts, color(i), 1.5, false);
                c.markers.push(Marker {
                    at: start,
                    color: "black",
                });
                c.markers.push(Marker {
                    at: end,
                    color: "red",
                });
            }
            c
        }
        PlotKind::Estimates => {
            let mut c = Chart::new("Tracker estimates of the mean reference", "k", "estimate");
            for &i in agents {
                for ax in 0..dim {
                    let pts = log
                        .rows
                        .iter()
                        .zip(&steps)
                        .map(|(r, &k)| (k, r.agents[i].v_hat[ax]))
                        .collect();
                    c.line(pts, color(ax), 0.6, false);
                }
            }
            for ax in 0..dim {
                let pts = log
                    .rows
                    .iter()
                    .zip(&steps)
                    .map(|(r, &k)| (k, r.xi_mean[ax]))
                    .collect();
                c.line(pts, ["#d62728", "#1f3fbf", "#2ca02c"][ax % 3], 2.5, false);
            }
            c
        }
        PlotKind::PerAgentConvergence => {
            let mut c = Chart::new("References against the equilibrium", "k", "reference");
            let k_end = *steps.last().unwrap();
            for &i in agents {
                for ax in 0..dim {
                    let pts = log
                        .rows
                        .iter()
                        .zip(&steps)
                        .map(|(r, &k)| (k, r.agents[i].xi[ax]))
                        .collect();
                    let col = color(i * dim + ax);
                    c.line(pts, col, 1.5, false);
                    let target = log.oracle.y_star[i][ax];
                    c.line(vec![(steps[0], target), (k_end, target)], col, 1.0, true);
                }
            }
            c.title = format!(
                "References against the equilibrium ({})",
                (0..dim).map(axis_name).collect::<Vec<_>>().join(", ")
            );
            c
        }
        PlotKind::ErrorSum => {
            let mut c = Chart::new("Summed distance to the equilibrium", "k", "sum |xi - y*|");
            c.log_y = true;
            let pts = log
                .rows
                .iter()
                .zip(&steps)
                .map(|(r, &k)| {
                    let e: f64 = agents
                        .iter()
                        .map(|&i| {
                            r.agents[i]
                                .xi
                                .iter()
                                .zip(log.oracle.y_star[i].iter())
                                .map(|(a, b)| (a - b).abs())
                                .sum::<f64>()
                        })
                        .sum();
                    (k, e)
                })
                .collect();
            c.line(pts, color(0), 1.5, false);
            c
        }
    };
    Ok(chart.render())
}

/// Renders `kind` for every agent into `dir/<kind>.svg`.
pub fn write_plot(log: &TrajectoryLog, kind: PlotKind, dir: impl AsRef<Path>) -> Result<()> {
    let agents: Vec<usize> = (0..log.n_agents()).collect();
    let svg = emit_plot(log, kind, &agents)?;
    std::fs::write(dir.as_ref().join(kind.file_name()), svg)?;
    Ok(())
}
