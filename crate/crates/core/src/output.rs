//! Result files: trajectory CSV, run summary, oracle and gain reports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::engine::TrajectoryLog;
use crate::error::{NesError, Result};
use crate::game::{GradientConvention, NePoint, OracleMethod};
use crate::plant::{self, matrix_to_rows, RegulatorGains};
use crate::scenario::Scenario;

/// Column suffix for decision coordinate `axis`.
pub fn axis_name(axis: usize) -> String {
    match axis {
        0 => "x".into(),
        1 => "y".into(),
        2 => "z".into(),
        k => format!("a{k}"),
    }
}

/// Shortest decimal that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn csv_header(dim: usize) -> Vec<String> {
    let mut h = vec!["k".to_string(), "agent".to_string()];
    for prefix in ["xi", "y", "vhat"] {
        for ax in 0..dim {
            h.push(format!("{prefix}_{}", axis_name(ax)));
        }
    }
    for c in ["cost", "ne_err", "track_err", "V", "consensus_err"] {
        h.push(c.to_string());
    }
    h
}

/// One header row, then for every logged round one row per agent followed by
/// a `GLOBAL` row.
pub fn write_csv<W: Write>(log: &TrajectoryLog, dest: W) -> Result<()> {
    if log.rows.is_empty() {
        return Err(NesError::InvalidArgument("trajectory log is empty".into()));
    }
    let dim = log.dim();
    let width = 2 + 3 * dim + 5;
    let mut w = csv::Writer::from_writer(dest);
    w.write_record(csv_header(dim))?;
    let mut rec: Vec<String> = Vec::with_capacity(width);
    for row in &log.rows {
        for (i, a) in row.agents.iter().enumerate() {
            rec.clear();
            rec.push(row.step.to_string());
            rec.push(i.to_string());
            rec.extend(a.xi.iter().chain(&a.y).chain(&a.v_hat).map(|&v| num(v)));
            rec.extend([num(a.cost), num(a.ne_err), num(a.track_err)]);
            rec.extend([String::new(), String::new()]);
            w.write_record(&rec)?;
        }
        rec.clear();
        rec.push(row.step.to_string());
        rec.push("GLOBAL".into());
        rec.extend(std::iter::repeat_n(String::new(), 3 * dim + 3));
        rec.extend([num(row.lyapunov), num(row.consensus_err)]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(log: &TrajectoryLog, path: impl AsRef<Path>) -> Result<()> {
    write_csv(log, BufWriter::new(File::create(path)?))
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunSummary {
    pub scenario: String,
    pub convention: GradientConvention,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_clock_seconds: f64,
    pub oracle_method: OracleMethod,
    /// `‖ξ_i - y_i*‖_∞` per agent at the final round.
    pub final_ne_error: Vec<f64>,
    pub max_final_ne_error: f64,
    pub final_ne_error_sum: f64,
    pub final_lyapunov: f64,
    pub final_consensus_error: f64,
    pub final_tracking_error: f64,
}

/// Summarizes the final round of `log` against `oracle`.
pub fn write_summary(log: &TrajectoryLog, oracle: &NePoint) -> Result<RunSummary> {
    if oracle.convention != log.oracle.convention {
        return Err(NesError::ConventionMismatch {
            oracle: oracle.convention.to_string(),
            scenario: log.oracle.convention.to_string(),
        });
    }
    let last = &log.last;
    let mut final_ne_error = Vec::with_capacity(last.agents.len());
    let mut sum = 0.0;
    let mut lyapunov = 0.0;
    for (a, y) in last.agents.iter().zip(&oracle.y_star) {
        let mut sup = 0.0_f64;
        for (p, q) in a.xi.iter().zip(y.iter()) {
            let e = (p - q).abs();
            sup = sup.max(e);
            sum += e;
            lyapunov += e * e;
        }
        final_ne_error.push(sup);
    }
    Ok(RunSummary {
        scenario: log.scenario.clone(),
        convention: oracle.convention,
        seed: log.seed,
        iterations: log.iterations,
        converged: log.converged,
        wall_clock_seconds: log.wall_clock_seconds,
        oracle_method: oracle.method,
        max_final_ne_error: final_ne_error.iter().copied().fold(0.0, f64::max),
        final_ne_error,
        final_ne_error_sum: sum,
        final_lyapunov: lyapunov,
        final_consensus_error: last.consensus_err,
        final_tracking_error: last.max_track_err(),
    })
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub convention: GradientConvention,
    pub method: OracleMethod,
    pub y_star: Vec<Vec<f64>>,
    pub aggregate: Vec<f64>,
    pub residual: f64,
    /// Sup-norm gap to the independent best-response fixed point.
    pub cross_check_gap: Option<f64>,
}

impl OracleReport {
    pub fn new(ne: &NePoint, cross_check_gap: Option<f64>) -> Self {
        Self {
            convention: ne.convention,
            method: ne.method,
            y_star: ne
                .y_star
                .iter()
                .map(|v| v.iter().copied().collect())
                .collect(),
            aggregate: ne.aggregate.iter().copied().collect(),
            residual: ne.residual,
            cross_check_gap,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChannelGains {
    pub agent: usize,
    pub channel: usize,
    /// Content hash of `(A, B, C, weights)`.
    pub key: String,
    pub k: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub residual_state: f64,
    pub residual_output: f64,
    pub spectral_radius: f64,
}

pub fn gains_report(scenario: &Scenario, gains: &[Vec<RegulatorGains>]) -> Vec<ChannelGains> {
    let gw = &scenario.file.gains;
    let mut out = Vec::new();
    for (i, (agent, gs)) in scenario.agents.iter().zip(gains).enumerate() {
        for (c, (p, g)) in agent.channels.iter().zip(gs).enumerate() {
            let (r1, r2) = plant::regulator_residuals(p, &g.psi, &g.g);
            out.push(ChannelGains {
                agent: i,
                channel: c,
                key: crate::engine::gains_key(p, gw.state_weight, gw.input_weight),
                k: matrix_to_rows(&g.k),
                psi: matrix_to_rows(&g.psi),
                g: matrix_to_rows(&g.g),
                residual_state: r1,
                residual_output: r2,
                spectral_radius: plant::spectral_radius(&(p.a() - p.b() * &g.k)),
            });
        }
    }
    out
}
