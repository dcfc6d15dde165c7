//! Synchronous-round simulation of the distributed seeking scheme.
//!
//! Each round every agent
//! 1. forms `v̂_i = Σ_j a_ij v_j` from last round's messages (stale values on
//!    dropped links),
//! 2. takes a projected pseudo-gradient step `ξ_i ← P(ξ_i - α F_i(ξ_i, v̂_i))`,
//! 3. updates its tracker `v_i ← v̂_i + Δξ_i`,
//! 4. drives its plant with `u = -K x + (G + K Psi) ξ_i`, using the reference
//!    from before the update.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{NesError, Result};
use crate::game::{self, clamp_into, GameSpec, NePoint};
use crate::graph::{self, CommGraph, DropoutMask};
use crate::plant::{self, PlantModel, RegulatorGains};
use crate::scenario::{LinkFailure, Scenario};

/// Number of consecutive quiet rounds required by the stopping rule.
pub const QUIET_ROUNDS: usize = 10;

/// One output channel of an agent: a plant copy, its gains and its state.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub plant: PlantModel,
    pub gains: RegulatorGains,
    pub x: DVector<f64>,
    /// First coordinate of the decision vector this channel tracks.
    pub offset: usize,
}

impl Channel {
    fn width(&self) -> usize {
        self.plant.n_outputs()
    }

    fn reference(&self, xi: &DVector<f64>) -> DVector<f64> {
        xi.rows(self.offset, self.width()).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRuntime {
    pub channels: Vec<Channel>,
    pub xi: DVector<f64>,
    pub v: DVector<f64>,
    pub v_hat: DVector<f64>,
    /// Last message received from each neighbor, sorted by neighbor id.
    pub last_received: Vec<(usize, DVector<f64>)>,
}

impl AgentRuntime {
    /// Stacked plant outputs `y_i = C x`.
    pub fn output(&self) -> DVector<f64> {
        let mut y = DVector::zeros(self.xi.len());
        for ch in &self.channels {
            y.rows_mut(ch.offset, ch.width())
                .copy_from(&(ch.plant.c() * &ch.x));
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub step: usize,
    pub agents: Vec<AgentRuntime>,
    /// Seed of the per-round dropout streams.
    pub seed: u64,
}

impl SwarmState {
    pub fn xi_mean(&self) -> DVector<f64> {
        game::mean(&self.xi())
    }

    pub fn xi(&self) -> Vec<DVector<f64>> {
        self.agents.iter().map(|a| a.xi.clone()).collect()
    }

    pub fn outputs(&self) -> Vec<DVector<f64>> {
        self.agents.iter().map(AgentRuntime::output).collect()
    }

    /// `‖Σ v_i - Σ ξ_i‖_max`; zero up to rounding without dropout.
    pub fn tracking_sum_residual(&self) -> f64 {
        let d = self.agents[0].xi.len();
        let mut acc = DVector::zeros(d);
        for a in &self.agents {
            acc += &a.v - &a.xi;
        }
        acc.amax()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentTelemetry {
    pub y: Vec<f64>,
    pub xi: Vec<f64>,
    pub v_hat: Vec<f64>,
    pub cost: f64,
    /// `‖ξ_i - y_i*‖_∞`
    pub ne_err: f64,
    /// `‖y_i - ξ_i‖`
    pub track_err: f64,
    /// `‖ξ_i(k+1) - ξ_i(k)‖`
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TelemetryRow {
    pub step: usize,
    pub agents: Vec<AgentTelemetry>,
    pub lyapunov: f64,
    pub ne_err_sup: f64,
    /// Sum of `|ξ_i - y_i*|` over every agent and coordinate.
    pub ne_err_sum: f64,
    pub consensus_err: f64,
    pub sum_residual: f64,
    pub xi_mean: Vec<f64>,
    pub max_delta: f64,
    pub dropped_edges: usize,
}

impl TelemetryRow {
    pub fn max_track_err(&self) -> f64 {
        self.agents.iter().map(|a| a.track_err).fold(0.0, f64::max)
    }

    /// Lyapunov value recomputed from the stored references.
    pub fn recompute_lyapunov(&self, ne: &NePoint) -> f64 {
        self.agents
            .iter()
            .zip(&ne.y_star)
            .map(|(a, y)| {
                a.xi.iter()
                    .zip(y.iter())
                    .map(|(p, q)| (p - q).powi(2))
                    .sum::<f64>()
            })
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    pub scenario: String,
    pub rows: Vec<TelemetryRow>,
    /// Row of the final round, kept even when the stride skips it.
    pub last: TelemetryRow,
    pub stride: usize,
    pub oracle: NePoint,
    pub converged: bool,
    pub iterations: usize,
    pub wall_clock_seconds: f64,
    pub seed: u64,
}

impl TrajectoryLog {
    pub fn n_agents(&self) -> usize {
        self.last.agents.len()
    }
    pub fn dim(&self) -> usize {
        self.last.xi_mean.len()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: TrajectoryLog,
    pub state: SwarmState,
    pub gains: Vec<Vec<RegulatorGains>>,
}

/// SHA-256 over the plant matrices and LQR weights; identical plants share
/// gains.
pub fn gains_key(p: &PlantModel, state_weight: f64, input_weight: f64) -> String {
    let mut h = Sha256::new();
    for m in [p.a(), p.b(), p.c()] {
        h.update((m.nrows() as u64).to_le_bytes());
        h.update((m.ncols() as u64).to_le_bytes());
        for v in m.iter() {
            h.update(v.to_le_bytes());
        }
    }
    h.update(state_weight.to_le_bytes());
    h.update(input_weight.to_le_bytes());
    hex::encode(h.finalize())
}

/// Synthesizes gains for every channel of every agent, once per distinct
/// plant.
pub fn synthesize_all(scenario: &Scenario) -> Result<Vec<Vec<RegulatorGains>>> {
    let gw = &scenario.file.gains;
    let mut cache: HashMap<String, RegulatorGains> = HashMap::new();
    let mut out = Vec::with_capacity(scenario.n_agents());
    for (i, agent) in scenario.agents.iter().enumerate() {
        let mut per = Vec::with_capacity(agent.channels.len());
        for p in &agent.channels {
            let key = gains_key(p, gw.state_weight, gw.input_weight);
            let g = match cache.get(&key) {
                Some(g) => g.clone(),
                None => {
                    let g = plant::synthesize_gains(p, gw.state_weight, gw.input_weight)
                        .map_err(|e| NesError::InvalidArgument(format!("agent {i}: {e}")))?;
                    cache.insert(key, g.clone());
                    g
                }
            };
            per.push(g);
        }
        out.push(per);
    }
    Ok(out)
}

/// Starts every agent at rest on its initial point: `ξ(0) = v(0) = p_i` and
/// `x(0) = Psi p_i`, so `y(0) = ξ(0)`.
pub fn init_state(scenario: &Scenario, gains: &[Vec<RegulatorGains>]) -> Result<SwarmState> {
    if gains.len() != scenario.n_agents() {
        return Err(NesError::DimensionMismatch(format!(
            "{} gain sets for {} agents",
            gains.len(),
            scenario.n_agents()
        )));
    }
    let mut agents = Vec::with_capacity(scenario.n_agents());
    for (i, (spec, gs)) in scenario.agents.iter().zip(gains).enumerate() {
        if !spec.bounds.contains(&spec.initial) {
            return Err(NesError::InitOutsideBox { agent: i });
        }
        if gs.len() != spec.channels.len() {
            return Err(NesError::DimensionMismatch(format!(
                "agent {i}: {} gain sets for {} channels",
                gs.len(),
                spec.channels.len()
            )));
        }
        let xi = spec.initial.clone();
        let mut offset = 0;
        let channels = spec
            .channels
            .iter()
            .zip(gs)
            .map(|(p, g)| {
                let q = p.n_outputs();
                let x = &g.psi * xi.rows(offset, q);
                let ch = Channel {
                    plant: p.clone(),
                    gains: g.clone(),
                    x,
                    offset,
                };
                offset += q;
                ch
            })
            .collect();
        agents.push(AgentRuntime {
            channels,
            v: xi.clone(),
            v_hat: xi.clone(),
            xi,
            last_received: Vec::new(),
        });
    }
    let graph = &scenario.graph;
    for i in 0..agents.len() {
        agents[i].last_received = graph
            .neighbors(i)
            .iter()
            .map(|&j| (j, agents[j].v.clone()))
            .collect();
    }
    let mut state = SwarmState {
        step: 0,
        agents,
        seed: scenario.run_config().seed,
    };
    consensus_estimate(graph, &DropoutMask::empty(0, state.seed), &mut state.agents);
    Ok(state)
}

/// Sets every `v̂_i = Σ_j a_ij ṽ_j`, where `ṽ_j` is the live `v_j` or, on a
/// dropped link, the last value received from `j`. Live links refresh the
/// stored value.
pub fn consensus_estimate(graph: &CommGraph, mask: &DropoutMask, agents: &mut [AgentRuntime]) {
    consensus_estimate_with(graph, mask, LinkFailure::Stale, agents)
}

/// [`consensus_estimate`] with an explicit link-failure mode.
pub fn consensus_estimate_with(
    graph: &CommGraph,
    mask: &DropoutMask,
    mode: LinkFailure,
    agents: &mut [AgentRuntime],
) {
    let n = agents.len();
    let mut estimates = Vec::with_capacity(n);
    for i in 0..n {
        let mut est = &agents[i].v * graph.weight(i, i);
        for (j, stale) in &agents[i].last_received {
            let w = graph.weight(i, *j);
            if mask.is_dropped(i, *j) {
                est.axpy(w, stale, 1.0);
                if mode == LinkFailure::Compensated {
                    // links drop both ways, so j still holds the copy of v_i
                    // that i last delivered; i knows that copy too
                    let delivered = last_delivered(&agents[*j], i);
                    est.axpy(w, &agents[i].v, 1.0);
                    est.axpy(-w, delivered, 1.0);
                }
            } else {
                est.axpy(w, &agents[*j].v, 1.0);
            }
        }
        estimates.push(est);
    }
    for i in 0..n {
        for k in 0..agents[i].last_received.len() {
            let j = agents[i].last_received[k].0;
            if !mask.is_dropped(i, j) {
                let fresh = agents[j].v.clone();
                agents[i].last_received[k].1 = fresh;
            }
        }
    }
    for (a, est) in agents.iter_mut().zip(estimates) {
        a.v_hat = est;
    }
}

fn last_delivered(receiver: &AgentRuntime, sender: usize) -> &DVector<f64> {
    let pos = receiver
        .last_received
        .binary_search_by_key(&sender, |(id, _)| *id)
        .expect("links are symmetric");
    &receiver.last_received[pos].1
}

/// `P_Ω(ξ - α F_i(ξ, v̂))`.
pub fn reference_update(
    spec: &GameSpec,
    i: usize,
    xi: &DVector<f64>,
    v_hat: &DVector<f64>,
) -> Result<DVector<f64>> {
    let g = game::pseudo_gradient(spec, i, xi, v_hat)?;
    Ok(clamp_into(&(xi - g * spec.step_size()), spec.box_of(i)))
}

/// `v̂ + ξ(k+1) - ξ(k)`.
pub fn tracking_update(
    v_hat: &DVector<f64>,
    xi_next: &DVector<f64>,
    xi: &DVector<f64>,
) -> DVector<f64> {
    v_hat + xi_next - xi
}

/// `Σ_i ‖ξ_i - y_i*‖²`.
pub fn lyapunov_value(state: &SwarmState, ne: &NePoint) -> f64 {
    state
        .agents
        .iter()
        .zip(&ne.y_star)
        .map(|(a, y)| (&a.xi - y).norm_squared())
        .sum()
}

/// `max_i ‖v̂_i - ξ̄‖`.
pub fn consensus_error(state: &SwarmState) -> f64 {
    let mean = state.xi_mean();
    state
        .agents
        .iter()
        .map(|a| (&a.v_hat - &mean).norm())
        .fold(0.0, f64::max)
}

fn finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Advances one synchronous round and reports the state it started from.
pub fn step(state: &mut SwarmState, scenario: &Scenario, oracle: &NePoint) -> Result<TelemetryRow> {
    let k = state.step;
    let spec = &scenario.game;
    let graph = &scenario.graph;
    let frac = scenario.run_config().dropout_fraction;
    let link_failure = scenario.run_config().link_failure;

    let mask = if frac > 0.0 {
        graph::apply_dropout(graph, frac, k, state.seed)?
    } else {
        DropoutMask::empty(k, state.seed)
    };
    consensus_estimate_with(graph, &mask, link_failure, &mut state.agents);

    let n = state.agents.len();
    let mut xi_next = Vec::with_capacity(n);
    for (i, a) in state.agents.iter().enumerate() {
        let g = game::gradient_unchecked(spec, i, &a.xi, &a.v_hat);
        let candidate = &a.xi - g * spec.step_size();
        if !finite(&candidate) {
            return Err(NesError::DivergenceDetected {
                step: k,
                reason: format!("non-finite reference for agent {i}"),
            });
        }
        // a single step that overshoots the whole box means α is far too large
        let bx = spec.box_of(i);
        let overshoot = bx.excess(&candidate);
        if bx.diameter() > 0.0 && overshoot > bx.diameter() {
            return Err(NesError::DivergenceDetected {
                step: k,
                reason: format!(
                    "gradient step of agent {i} overshoots its box by {overshoot:.3} (box size {:.3}); step size too large",
                    bx.diameter()
                ),
            });
        }
        xi_next.push(clamp_into(&candidate, bx));
    }

    let xi_mean = state.xi_mean();
    let outputs = state.outputs();
    let y_bar = game::mean(&outputs);
    let mut agent_rows = Vec::with_capacity(n);
    let mut lyapunov = 0.0;
    let mut ne_err_sup = 0.0_f64;
    let mut ne_err_sum = 0.0;
    let mut consensus_err = 0.0_f64;
    let mut max_delta = 0.0_f64;
    for (i, a) in state.agents.iter().enumerate() {
        let off = &a.xi - &oracle.y_star[i];
        lyapunov += off.norm_squared();
        let ne_err = off.amax();
        ne_err_sup = ne_err_sup.max(ne_err);
        ne_err_sum += off.abs().sum();
        consensus_err = consensus_err.max((&a.v_hat - &xi_mean).norm());
        let delta = (&xi_next[i] - &a.xi).norm();
        max_delta = max_delta.max((&xi_next[i] - &a.xi).amax());
        let y = &outputs[i];
        agent_rows.push(AgentTelemetry {
            y: y.iter().copied().collect(),
            xi: a.xi.iter().copied().collect(),
            v_hat: a.v_hat.iter().copied().collect(),
            cost: game::cost(spec, i, y, &y_bar)?,
            ne_err,
            track_err: (y - &a.xi).norm(),
            delta,
        });
    }
    let row = TelemetryRow {
        step: k,
        agents: agent_rows,
        lyapunov,
        ne_err_sup,
        ne_err_sum,
        consensus_err,
        sum_residual: state.tracking_sum_residual(),
        xi_mean: xi_mean.iter().copied().collect(),
        max_delta,
        dropped_edges: mask.len(),
    };

    for (i, (a, next)) in state.agents.iter_mut().zip(xi_next).enumerate() {
        for ch in &mut a.channels {
            let reference = ch.reference(&a.xi);
            let u = plant::control_input(&ch.gains, &ch.x, &reference)?;
            let (x_next, _) = plant::plant_step(&ch.plant, &ch.x, &u)?;
            if !finite(&x_next) {
                return Err(NesError::DivergenceDetected {
                    step: k,
                    reason: format!("non-finite plant state for agent {i}"),
                });
            }
            ch.x = x_next;
        }
        a.v = tracking_update(&a.v_hat, &next, &a.xi);
        a.xi = next;
    }
    state.step += 1;
    Ok(row)
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub max_iters: usize,
    pub stop_tol: f64,
    pub stride: usize,
}

impl RunOptions {
    pub fn from_scenario(scenario: &Scenario) -> Self {
        let r = scenario.run_config();
        Self {
            max_iters: r.max_iters,
            stop_tol: r.stop_tol,
            stride: r.telemetry_stride,
        }
    }
}

/// Runs with the scenario's own run settings.
pub fn run(scenario: &Scenario) -> Result<RunOutcome> {
    run_with(scenario, RunOptions::from_scenario(scenario))
}

/// Iterates until the reference moves less than `stop_tol` (sup-norm) for
/// [`QUIET_ROUNDS`] consecutive rounds, or `max_iters` rounds have run.
pub fn run_with(scenario: &Scenario, opts: RunOptions) -> Result<RunOutcome> {
    if opts.stride == 0 || opts.max_iters == 0 {
        return Err(NesError::InvalidArgument(
            "stride and max_iters must be positive".into(),
        ));
    }
    let started = Instant::now();
    let oracle = game::compute_oracle(&scenario.game)?;
    let gains = synthesize_all(scenario)?;
    let mut state = init_state(scenario, &gains)?;
    let mut rows = Vec::with_capacity(opts.max_iters / opts.stride + 1);
    let mut quiet = 0;
    let mut converged = false;
    let mut last = None;
    while state.step < opts.max_iters {
        let row = step(&mut state, scenario, &oracle)?;
        quiet = if row.max_delta < opts.stop_tol {
            quiet + 1
        } else {
            0
        };
        if row.step.is_multiple_of(opts.stride) {
            rows.push(row.clone());
        }
        last = Some(row);
        if quiet >= QUIET_ROUNDS {
            converged = true;
            break;
        }
    }
    let iterations = state.step;
    log::info!(
        "{}: {} rounds, converged = {converged}",
        scenario.name(),
        iterations
    );
    Ok(RunOutcome {
        log: TrajectoryLog {
            scenario: scenario.name().to_string(),
            rows,
            last: last.expect("at least one round runs"),
            stride: opts.stride,
            oracle,
            converged,
            iterations,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            seed: state.seed,
        },
        state,
        gains,
    })
}

/// Tracking errors `‖C x(k) - ξ‖` for `steps` rounds with the reference
/// frozen at `xi`.
pub fn frozen_reference_errors(
    plant: &PlantModel,
    gains: &RegulatorGains,
    x0: &DVector<f64>,
    xi: &DVector<f64>,
    steps: usize,
) -> Result<Vec<f64>> {
    let mut x = x0.clone();
    let mut out = Vec::with_capacity(steps + 1);
    for _ in 0..=steps {
        let u = plant::control_input(gains, &x, xi)?;
        let (x_next, y) = plant::plant_step(plant, &x, &u)?;
        out.push((y - xi).norm());
        x = x_next;
    }
    Ok(out)
}

/// Closed-loop matrix `A - B K`.
pub fn closed_loop(plant: &PlantModel, gains: &RegulatorGains) -> DMatrix<f64> {
    plant.a() - plant.b() * &gains.k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::GradientConvention;
    use crate::scenario::{load_bundled, parse_scenario};
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    fn integrator() -> Scenario {
        load_bundled("integrator.json")
    }

    #[test]
    fn integrator_first_step() {
        let s = integrator();
        let oracle = game::compute_oracle(&s.game).unwrap();
        let gains = synthesize_all(&s).unwrap();
        let mut st = init_state(&s, &gains).unwrap();
        assert_eq!(st.agents[0].v_hat, st.agents[0].v);
        step(&mut st, &s, &oracle).unwrap();
        let a = &st.agents[0];
        assert_relative_eq!(a.xi[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(a.v[0], 1.0, epsilon = 1e-15);
        // v̂ is formed at the start of the next round
        consensus_estimate(&s.graph, &DropoutMask::empty(1, 0), &mut st.agents);
        assert_relative_eq!(st.agents[0].v_hat[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn integrator_run_converges() {
        let out = run(&integrator()).unwrap();
        assert!(out.log.converged);
        assert!((out.state.agents[0].xi[0] - 5.0).abs() < 1e-6);
        assert!((out.state.agents[0].output()[0] - 5.0).abs() < 1e-4);
    }

    #[test]
    fn initial_outputs_equal_initial_references() {
        let s = load_bundled("six_robot.json");
        let gains = synthesize_all(&s).unwrap();
        let st = init_state(&s, &gains).unwrap();
        assert_eq!(st.agents[0].xi, dvector![6.0, 8.0]);
        assert_eq!(st.agents[0].v, dvector![6.0, 8.0]);
        for a in &st.agents {
            assert!((a.output() - &a.xi).amax() < 1e-12);
        }
    }

    fn two_agents(v: [f64; 2]) -> (CommGraph, Vec<AgentRuntime>) {
        let g = graph::build_ring(2, 1).unwrap();
        let agents = (0..2)
            .map(|i| AgentRuntime {
                channels: Vec::new(),
                xi: dvector![0.0],
                v: dvector![v[i]],
                v_hat: dvector![0.0],
                last_received: vec![(1 - i, dvector![v[1 - i]])],
            })
            .collect();
        (g, agents)
    }

    #[test]
    fn consensus_on_two_agents() {
        let (g, mut agents) = two_agents([0.0, 4.0]);
        consensus_estimate(&g, &DropoutMask::empty(0, 0), &mut agents);
        assert_eq!(agents[0].v_hat[0], 2.0);
        assert_eq!(agents[1].v_hat[0], 2.0);
    }

    #[test]
    fn consensus_uses_stale_value_on_dropped_edge() {
        let (g, mut agents) = two_agents([0.0, 4.0]);
        agents[1].v = dvector![9.0];
        let mask = graph::apply_dropout(&g, 1.0, 0, 0).unwrap();
        consensus_estimate(&g, &mask, &mut agents);
        assert_eq!(agents[0].v_hat[0], 2.0);
        assert_eq!(agents[0].last_received[0].1[0], 4.0);
        consensus_estimate(&g, &DropoutMask::empty(1, 0), &mut agents);
        assert_eq!(agents[0].v_hat[0], 4.5);
        assert_eq!(agents[0].last_received[0].1[0], 9.0);
    }

    #[test]
    fn consensus_preserves_common_value() {
        let s = load_bundled("six_robot.json");
        let gains = synthesize_all(&s).unwrap();
        let mut st = init_state(&s, &gains).unwrap();
        for a in &mut st.agents {
            a.v = dvector![3.0, -1.0];
            for (_, lr) in &mut a.last_received {
                *lr = dvector![3.0, -1.0];
            }
        }
        consensus_estimate(&s.graph, &DropoutMask::empty(0, 0), &mut st.agents);
        for a in &st.agents {
            assert!((&a.v_hat - dvector![3.0, -1.0]).amax() < 1e-15);
        }
    }

    #[test]
    fn reference_update_examples() {
        let g = GameSpec::new(
            vec![dvector![5.0]],
            vec![game::BoxSet::uniform(1, -10.0, 10.0)],
            0.1,
            GradientConvention::FullChainRule,
        )
        .unwrap();
        let next = reference_update(&g, 0, &dvector![0.0], &dvector![0.0]).unwrap();
        assert_relative_eq!(next[0], 1.0, epsilon = 1e-15);
        let huge = g.with_step_size(1e6).unwrap();
        let next = reference_update(&huge, 0, &dvector![0.0], &dvector![0.0]).unwrap();
        assert_eq!(next[0], 10.0);

        let six = load_bundled("six_robot.json");
        let ne = game::closed_form_ne(&six.game).unwrap();
        for i in 0..6 {
            let next = reference_update(&six.game, i, &ne.y_star[i], &ne.aggregate).unwrap();
            assert!((&next - &ne.y_star[i]).amax() < 1e-14);
        }
    }

    #[test]
    fn tracking_update_examples() {
        assert_eq!(
            tracking_update(
                &dvector![2.0, 2.0],
                &dvector![1.0, -1.0],
                &dvector![0.0, 0.0]
            ),
            dvector![3.0, 1.0]
        );
        let xi = dvector![4.0, 5.0];
        assert_eq!(
            tracking_update(&dvector![7.0, 8.0], &xi, &xi),
            dvector![7.0, 8.0]
        );
    }

    #[test]
    fn lyapunov_and_consensus_examples() {
        let s = integrator();
        let gains = synthesize_all(&s).unwrap();
        let mut st = init_state(&s, &gains).unwrap();
        st.agents[0].xi = dvector![3.0];
        let mut ne = game::compute_oracle(&s.game).unwrap();
        ne.y_star = vec![dvector![1.0]];
        assert_eq!(lyapunov_value(&st, &ne), 4.0);
        ne.y_star = vec![dvector![3.0]];
        assert_eq!(lyapunov_value(&st, &ne), 0.0);
        st.agents[0].v_hat = dvector![3.0];
        assert_eq!(consensus_error(&st), 0.0);
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let s = load_bundled("six_robot.json");
        let oracle = game::compute_oracle(&s.game).unwrap();
        let gains = synthesize_all(&s).unwrap();
        let mut st = init_state(&s, &gains).unwrap();
        for (a, y) in st.agents.iter_mut().zip(&oracle.y_star) {
            a.xi = y.clone();
            // trackers sit at the aggregate, not at the agent's own point
            a.v = oracle.aggregate.clone();
            for ch in &mut a.channels {
                ch.x = &ch.gains.psi * y.rows(ch.offset, ch.plant.n_outputs());
            }
        }
        let x0: Vec<_> = st.agents.iter().map(|a| a.channels[0].x.clone()).collect();
        for i in 0..st.agents.len() {
            let nbrs: Vec<_> = s.graph.neighbors(i).to_vec();
            st.agents[i].last_received = nbrs
                .iter()
                .map(|&j| (j, oracle.aggregate.clone()))
                .collect();
        }
        for _ in 0..50 {
            let row = step(&mut st, &s, &oracle).unwrap();
            assert!(row.max_delta < 1e-13);
        }
        for (i, a) in st.agents.iter().enumerate() {
            assert!((&a.xi - &oracle.y_star[i]).amax() < 1e-12);
            assert!((&a.channels[0].x - &x0[i]).amax() < 1e-10);
        }
    }

    #[test]
    fn step_zero_lyapunov_matches_oracle() {
        let s = load_bundled("six_robot.json");
        let oracle = game::compute_oracle(&s.game).unwrap();
        let gains = synthesize_all(&s).unwrap();
        let mut st = init_state(&s, &gains).unwrap();
        let expected: f64 = s
            .agents
            .iter()
            .zip(&oracle.y_star)
            .map(|(a, y)| (&a.initial - y).norm_squared())
            .sum();
        let row = step(&mut st, &s, &oracle).unwrap();
        assert_relative_eq!(row.lyapunov, expected, max_relative = 1e-14);
        assert_relative_eq!(
            row.recompute_lyapunov(&oracle),
            expected,
            max_relative = 1e-14
        );
    }

    #[test]
    fn huge_step_size_reports_divergence() {
        let s = load_bundled("six_robot.json")
            .with_overrides(&["alpha=10"])
            .unwrap();
        assert!(matches!(run(&s), Err(NesError::DivergenceDetected { .. })));
    }

    #[test]
    fn unbounded_box_divergence_is_caught_as_non_finite() {
        let text = r#"{"schema": 1, "name": "wide",
          "agents": [{"plant": {"a": [[1]], "b": [[1]], "c": [[1]]}, "initial": [0], "target": [1],
                      "box": {"lo": [-1e308], "hi": [1e308]}}],
          "topology": {"kind": "complete"}, "game": {"step_size": 5.0}}"#;
        let s = parse_scenario(text.as_bytes()).unwrap();
        assert!(matches!(run(&s), Err(NesError::DivergenceDetected { .. })));
    }

    #[test]
    fn runs_are_deterministic_with_dropout() {
        let s = load_bundled("six_robot.json")
            .with_overrides(&["dropout_fraction=0.5", "max_iters=300"])
            .unwrap();
        let a = run(&s).unwrap();
        let b = run(&s).unwrap();
        assert_eq!(a.log.rows, b.log.rows);
        assert_eq!(a.state, b.state);
        assert!(a.log.rows.iter().all(|r| r.dropped_edges == 3));
    }

    #[test]
    fn stride_thins_rows() {
        let s = integrator()
            .with_overrides(&["max_iters=10", "stop_tol=0"])
            .unwrap();
        let out = run_with(
            &s,
            RunOptions {
                max_iters: 10,
                stop_tol: 0.0,
                stride: 3,
            },
        )
        .unwrap();
        assert_eq!(
            out.log.rows.iter().map(|r| r.step).collect::<Vec<_>>(),
            vec![0, 3, 6, 9]
        );
        assert_eq!(out.log.last.step, 9);
        assert!(!out.log.converged);
    }
}
