//! Aggregative game with costs `f_i(y_i, ȳ) = ‖y_i - r_i‖² + ‖y_i - ȳ‖²`
//! over box-constrained decision sets, and two independent equilibrium oracles.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{NesError, Result};

/// Default sup-norm stopping tolerance for best-response iteration.
pub const ORACLE_TOL: f64 = 1e-10;
pub const ORACLE_MAX_SWEEPS: usize = 100_000;

/// Whether an agent differentiates through its own `1/N` share of the
/// aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradientConvention {
    /// Gradient of the cost each agent actually incurs: `ȳ` moves with `y_i`.
    #[default]
    FullChainRule,
    /// Aggregate held fixed while differentiating.
    PartialFixedAggregate,
}

impl GradientConvention {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::FullChainRule => "full_chain_rule",
            Self::PartialFixedAggregate => "partial_fixed_aggregate",
        }
    }
}

impl fmt::Display for GradientConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GradientConvention {
    type Err = NesError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full_chain_rule" | "full" => Ok(Self::FullChainRule),
            "partial_fixed_aggregate" | "partial" => Ok(Self::PartialFixedAggregate),
            other => Err(NesError::InvalidArgument(format!(
                "unknown gradient convention {other:?}"
            ))),
        }
    }
}

/// Axis-aligned box `[lo, hi]` per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxSet {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = Self { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Self {
        Self {
            lo: vec![lo; dim],
            hi: vec![hi; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() {
            return Err(NesError::DimensionMismatch(format!(
                "box bounds have {} lower and {} upper entries",
                self.lo.len(),
                self.hi.len()
            )));
        }
        for (coord, (&lo, &hi)) in self.lo.iter().zip(&self.hi).enumerate() {
            // also rejects NaN bounds
            if !(lo <= hi) {
                return Err(NesError::EmptyBox { coord, lo, hi });
            }
        }
        Ok(())
    }

    pub fn contains(&self, v: &DVector<f64>) -> bool {
        v.len() == self.dim()
            && v.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&x, (&lo, &hi))| lo <= x && x <= hi)
    }

    /// Largest edge length.
    pub fn diameter(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .fold(0.0_f64, |acc, (lo, hi)| acc.max(hi - lo))
    }

    /// Distance (sup-norm) from `v` to the box.
    pub fn excess(&self, v: &DVector<f64>) -> f64 {
        v.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .fold(0.0_f64, |acc, (&x, (&lo, &hi))| acc.max(lo - x).max(x - hi))
    }
}

/// Per-coordinate clamp onto `bx`.
pub fn project_box(v: &DVector<f64>, bx: &BoxSet) -> Result<DVector<f64>> {
    bx.validate()?;
    if v.len() != bx.dim() {
        return Err(NesError::DimensionMismatch(format!(
            "vector of length {} projected onto a {}-dimensional box",
            v.len(),
            bx.dim()
        )));
    }
    Ok(clamp_into(v, bx))
}

pub(crate) fn clamp_into(v: &DVector<f64>, bx: &BoxSet) -> DVector<f64> {
    DVector::from_iterator(
        v.len(),
        v.iter()
            .zip(bx.lo.iter().zip(&bx.hi))
            .map(|(&x, (&lo, &hi))| x.clamp(lo, hi)),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameSpec {
    targets: Vec<DVector<f64>>,
    boxes: Vec<BoxSet>,
    step_size: f64,
    convention: GradientConvention,
}

impl GameSpec {
    pub fn new(
        targets: Vec<DVector<f64>>,
        boxes: Vec<BoxSet>,
        step_size: f64,
        convention: GradientConvention,
    ) -> Result<Self> {
        if targets.is_empty() {
            return Err(NesError::InvalidArgument(
                "game needs at least one agent".into(),
            ));
        }
        if targets.len() != boxes.len() {
            return Err(NesError::DimensionMismatch(format!(
                "{} targets but {} boxes",
                targets.len(),
                boxes.len()
            )));
        }
        if !(step_size > 0.0) || !step_size.is_finite() {
            return Err(NesError::InvalidArgument(format!(
                "step size must be positive, got {step_size}"
            )));
        }
        let d = targets[0].len();
        if d == 0 {
            return Err(NesError::InvalidArgument(
                "decision dimension is zero".into(),
            ));
        }
        for (i, (r, b)) in targets.iter().zip(&boxes).enumerate() {
            if r.len() != d || b.dim() != d {
                return Err(NesError::DimensionMismatch(format!(
                    "agent {i}: target dim {} / box dim {}, expected {d}",
                    r.len(),
                    b.dim()
                )));
            }
            b.validate()?;
        }
        Ok(Self {
            targets,
            boxes,
            step_size,
            convention,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.targets.len()
    }
    pub fn dim(&self) -> usize {
        self.targets[0].len()
    }
    pub fn targets(&self) -> &[DVector<f64>] {
        &self.targets
    }
    pub fn target(&self, i: usize) -> &DVector<f64> {
        &self.targets[i]
    }
    pub fn boxes(&self) -> &[BoxSet] {
        &self.boxes
    }
    pub fn box_of(&self, i: usize) -> &BoxSet {
        &self.boxes[i]
    }
    pub fn step_size(&self) -> f64 {
        self.step_size
    }
    pub fn convention(&self) -> GradientConvention {
        self.convention
    }

    pub fn with_convention(&self, convention: GradientConvention) -> Self {
        Self {
            convention,
            ..self.clone()
        }
    }

    pub fn with_step_size(&self, step_size: f64) -> Result<Self> {
        Self::new(
            self.targets.clone(),
            self.boxes.clone(),
            step_size,
            self.convention,
        )
    }

    pub fn mean_target(&self) -> DVector<f64> {
        mean(&self.targets)
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.n_agents() {
            return Err(NesError::IndexOutOfRange {
                index: i,
                n_agents: self.n_agents(),
            });
        }
        Ok(())
    }

    fn check_dims(&self, vs: &[&DVector<f64>]) -> Result<()> {
        let d = self.dim();
        match vs.iter().find(|v| v.len() != d) {
            Some(v) => Err(NesError::DimensionMismatch(format!(
                "expected vectors of length {d}, got {}",
                v.len()
            ))),
            None => Ok(()),
        }
    }

    /// Coefficient on `(y_i - z)` in the pseudo-gradient, halved.
    fn aggregate_weight(&self) -> f64 {
        match self.convention {
            GradientConvention::FullChainRule => 1.0 - 1.0 / self.n_agents() as f64,
            GradientConvention::PartialFixedAggregate => 1.0,
        }
    }
}

pub fn mean(vs: &[DVector<f64>]) -> DVector<f64> {
    let mut acc = DVector::zeros(vs[0].len());
    for v in vs {
        acc += v;
    }
    acc / vs.len() as f64
}

/// `‖y_i - r_i‖² + ‖y_i - y_bar‖²`.
pub fn cost(spec: &GameSpec, i: usize, y_i: &DVector<f64>, y_bar: &DVector<f64>) -> Result<f64> {
    spec.check_index(i)?;
    spec.check_dims(&[y_i, y_bar])?;
    Ok((y_i - spec.target(i)).norm_squared() + (y_i - y_bar).norm_squared())
}

/// `F_i(y_i, z)` with the aggregate estimate `z` substituted for `ȳ`.
pub fn pseudo_gradient(
    spec: &GameSpec,
    i: usize,
    y_i: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    spec.check_index(i)?;
    spec.check_dims(&[y_i, z])?;
    Ok(gradient_unchecked(spec, i, y_i, z))
}

pub(crate) fn gradient_unchecked(
    spec: &GameSpec,
    i: usize,
    y_i: &DVector<f64>,
    z: &DVector<f64>,
) -> DVector<f64> {
    let w = spec.aggregate_weight();
    (y_i - spec.target(i)) * 2.0 + (y_i - z) * (2.0 * w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    ClosedForm,
    BestResponse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NePoint {
    pub y_star: Vec<DVector<f64>>,
    pub aggregate: DVector<f64>,
    /// Sup-norm natural-map residual `max_i ‖y_i - P(y_i - F_i(y_i, ȳ))‖`.
    pub residual: f64,
    pub convention: GradientConvention,
    pub method: OracleMethod,
}

impl NePoint {
    fn new(spec: &GameSpec, y_star: Vec<DVector<f64>>, method: OracleMethod) -> Self {
        let aggregate = mean(&y_star);
        let residual = ne_residual(spec, &y_star);
        Self {
            y_star,
            aggregate,
            residual,
            convention: spec.convention(),
            method,
        }
    }

    /// Largest per-coordinate gap to another candidate equilibrium.
    pub fn sup_distance(&self, other: &NePoint) -> f64 {
        self.y_star
            .iter()
            .zip(&other.y_star)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }
}

/// First-order condition violation of a joint decision.
pub fn ne_residual(spec: &GameSpec, ys: &[DVector<f64>]) -> f64 {
    let y_bar = mean(ys);
    ys.iter()
        .enumerate()
        .map(|(i, y)| {
            let g = gradient_unchecked(spec, i, y, &y_bar);
            (y - clamp_into(&(y - g), spec.box_of(i))).amax()
        })
        .fold(0.0, f64::max)
}

/// Interior equilibrium in closed form. Summing the stationarity conditions
/// forces `ȳ* = r̄`, after which each agent solves its own scalar equation.
pub fn closed_form_ne(spec: &GameSpec) -> Result<NePoint> {
    let r_bar = spec.mean_target();
    let w = spec.aggregate_weight();
    let y_star: Vec<DVector<f64>> = spec
        .targets()
        .iter()
        .map(|r| (r + &r_bar * w) / (1.0 + w))
        .collect();
    if let Some(agent) = (0..spec.n_agents()).find(|&i| !spec.box_of(i).contains(&y_star[i])) {
        return Err(NesError::BoxActive { agent });
    }
    Ok(NePoint::new(spec, y_star, OracleMethod::ClosedForm))
}

/// Cyclic exact best responses until a full sweep moves nothing by more
/// than `tol` in sup-norm. Each response is a separable 1-D convex quadratic,
/// so clamping its unconstrained minimizer is exact.
pub fn best_response_fixed_point(spec: &GameSpec, tol: f64, max_sweeps: usize) -> Result<NePoint> {
    if !(tol > 0.0) {
        return Err(NesError::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let n = spec.n_agents();
    let nf = n as f64;
    let c = 1.0 - 1.0 / nf;
    let mut ys: Vec<DVector<f64>> = (0..n)
        .map(|i| clamp_into(spec.target(i), spec.box_of(i)))
        .collect();
    let mut total = ys.iter().fold(DVector::zeros(spec.dim()), |acc, y| acc + y);

    for _ in 0..max_sweeps {
        let mut change = 0.0_f64;
        for i in 0..n {
            let others = (&total - &ys[i]) / nf;
            let r = spec.target(i);
            let unconstrained = match spec.convention() {
                // argmin ‖y - r‖² + ‖c y - s‖², s = Σ_{j≠i} y_j / N
                GradientConvention::FullChainRule => (r + &others * c) / (1.0 + c * c),
                // fixed point of y = (r + (y + Σ_{j≠i} y_j)/N) / 2
                GradientConvention::PartialFixedAggregate => (r + &others) / (2.0 - 1.0 / nf),
            };
            let next = clamp_into(&unconstrained, spec.box_of(i));
            change = change.max((&next - &ys[i]).amax());
            total += &next - &ys[i];
            ys[i] = next;
        }
        // refresh the running sum so rounding cannot accumulate across sweeps
        total = ys.iter().fold(DVector::zeros(spec.dim()), |acc, y| acc + y);
        if change < tol {
            return Ok(NePoint::new(spec, ys, OracleMethod::BestResponse));
        }
    }
    Err(NesError::NoConvergence(max_sweeps))
}

/// Closed form when every box is inactive, otherwise best response.
pub fn compute_oracle(spec: &GameSpec) -> Result<NePoint> {
    match closed_form_ne(spec) {
        Ok(ne) => Ok(ne),
        Err(NesError::BoxActive { agent }) => {
            log::info!("closed-form equilibrium leaves box of agent {agent}; using best response");
            best_response_fixed_point(spec, ORACLE_TOL, ORACLE_MAX_SWEEPS)
        }
        Err(e) => Err(e),
    }
}
