//! Scenario documents: a single JSON file describing agents, plants, topology,
//! game parameters and run settings, plus the validators every run needs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NesError, Result};
use crate::game::{BoxSet, GameSpec, GradientConvention};
use crate::graph::{self, CommGraph};
use crate::plant::{self, PlantModel};

pub const SCHEMA_VERSION: u32 = 1;

/// Scenario fields that `--set key=value` may touch.
pub const OVERRIDE_KEYS: &[&str] = &[
    "alpha",
    "max_iters",
    "seed",
    "convention",
    "dropout_fraction",
    "stop_tol",
    "link_failure",
];

/// What a receiver uses in place of a message lost on a dropped link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LinkFailure {
    /// The last value received on that link; weights are not renormalized.
    #[default]
    Stale,
    /// Stale value plus a local correction, `v_i - (last v_i delivered to j)`,
    /// that keeps `Σ v̂_i = Σ v_i` exactly.
    Compensated,
}

impl std::str::FromStr for LinkFailure {
    type Err = NesError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stale" => Ok(Self::Stale),
            "compensated" => Ok(Self::Compensated),
            other => Err(NesError::InvalidArgument(format!(
                "unknown link failure mode {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlantRef {
    Named(String),
    Inline(PlantSpec),
}

/// One plant replicated over every axis, or an explicit plant per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AgentPlant {
    PerAxis(Vec<PlantRef>),
    Shared(PlantRef),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEntry {
    pub plant: AgentPlant,
    pub initial: Vec<f64>,
    pub target: Vec<f64>,
    #[serde(rename = "box")]
    pub bounds: BoxSet,
}

/// Seeded generator for large swarms: plants are assigned cyclically,
/// initial points and targets are drawn uniformly from their regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub count: usize,
    pub plants: Vec<PlantRef>,
    pub initial_region: BoxSet,
    pub target_region: BoxSet,
    #[serde(rename = "box")]
    pub bounds: BoxSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    Ring { neighbors_per_side: usize },
    Complete,
    Edges { edges: Vec<[usize; 2]> },
}

fn default_step_size() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameSection {
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default)]
    pub convention: GradientConvention,
}

impl Default for GameSection {
    fn default() -> Self {
        Self {
            step_size: default_step_size(),
            convention: GradientConvention::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSection {
    pub state_weight: f64,
    pub input_weight: f64,
}

impl Default for GainSection {
    fn default() -> Self {
        Self {
            state_weight: 1.0,
            input_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub max_iters: usize,
    pub stop_tol: f64,
    pub telemetry_stride: usize,
    pub seed: u64,
    pub dropout_fraction: f64,
    pub link_failure: LinkFailure,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            stop_tol: 1e-9,
            telemetry_stride: 1,
            seed: 0,
            dropout_fraction: 0.0,
            link_failure: LinkFailure::Stale,
        }
    }
}

/// The document as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub plants: BTreeMap<String, PlantSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agents: Vec<AgentEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenerateSpec>,
    pub topology: TopologySpec,
    #[serde(default)]
    pub game: GameSection,
    #[serde(default)]
    pub gains: GainSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Connectivity,
    DoublyStochastic,
    Controllability,
    RankCondition,
    InitOutsideBox,
}

impl ViolationKind {
    fn label(self) -> &'static str {
        match self {
            Self::Connectivity => "connectivity",
            Self::DoublyStochastic => "doubly stochastic weights",
            Self::Controllability => "controllability",
            Self::RankCondition => "rank condition",
            Self::InitOutsideBox => "initial position outside box",
        }
    }
}

/// One failed modelling assumption.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub agent: Option<usize>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind.label())?;
        if let Some(a) = self.agent {
            write!(f, ": agent {a}")?;
        }
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

/// A resolved agent: one plant per output channel, stacked along the
/// decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub channels: Vec<PlantModel>,
    pub initial: DVector<f64>,
    pub target: DVector<f64>,
    pub bounds: BoxSet,
}

/// A document that passed every schema and assumption check.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub agents: Vec<AgentSpec>,
    pub graph: CommGraph,
    pub game: GameSpec,
}

impl Scenario {
    pub fn name(&self) -> &str {
        &self.file.name
    }
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }
    pub fn dim(&self) -> usize {
        self.game.dim()
    }
    pub fn run_config(&self) -> &RunSection {
        &self.file.run
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self> {
        build(file)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.file)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        parse_scenario(&bytes)
    }

    /// Applies whitelisted `key=value` overrides and re-validates.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut file = self.file.clone();
        for kv in overrides {
            let kv = kv.as_ref();
            let (key, value) = kv.split_once('=').ok_or_else(|| {
                NesError::InvalidArgument(format!("override {kv:?} is not key=value"))
            })?;
            apply_override(&mut file, key.trim(), value.trim())?;
        }
        build(file)
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| NesError::InvalidArgument(format!("bad value {value:?} for {key}")))
}

pub fn apply_override(file: &mut ScenarioFile, key: &str, value: &str) -> Result<()> {
    match key {
        "alpha" | "step_size" => file.game.step_size = parse_value(key, value)?,
        "max_iters" => file.run.max_iters = parse_value(key, value)?,
        "seed" => file.run.seed = parse_value(key, value)?,
        "convention" => file.game.convention = value.parse()?,
        "dropout_fraction" => file.run.dropout_fraction = parse_value(key, value)?,
        "stop_tol" => file.run.stop_tol = parse_value(key, value)?,
        "link_failure" => file.run.link_failure = value.parse()?,
        other => {
            return Err(NesError::InvalidArgument(format!(
                "{other:?} cannot be overridden (allowed: {})",
                OVERRIDE_KEYS.join(", ")
            )))
        }
    }
    Ok(())
}

/// Parses and fully validates a scenario document. Schema problems are
/// reported together; assumption failures likewise.
pub fn parse_scenario(text: &[u8]) -> Result<Scenario> {
    let text = std::str::from_utf8(text)
        .map_err(|e| NesError::Schema(vec![format!("not valid UTF-8: {e}")]))?;
    let file: ScenarioFile =
        serde_json::from_str(text).map_err(|e| NesError::Schema(vec![e.to_string()]))?;
    build(file)
}

fn resolve_plant(
    r: &PlantRef,
    library: &BTreeMap<String, PlantSpec>,
    ctx: &str,
    errors: &mut Vec<String>,
) -> Option<PlantModel> {
    let spec = match r {
        PlantRef::Named(name) => match library.get(name) {
            Some(s) => s,
            None => {
                errors.push(format!("{ctx}: unknown plant {name:?}"));
                return None;
            }
        },
        PlantRef::Inline(s) => s,
    };
    match PlantModel::from_rows(&spec.a, &spec.b, &spec.c) {
        Ok(p) => Some(p),
        Err(e) => {
            errors.push(format!("{ctx}: {e}"));
            None
        }
    }
}

fn resolve_channels(
    plant: &AgentPlant,
    dim: usize,
    library: &BTreeMap<String, PlantSpec>,
    ctx: &str,
    errors: &mut Vec<String>,
) -> Option<Vec<PlantModel>> {
    let channels = match plant {
        AgentPlant::Shared(r) => {
            let p = resolve_plant(r, library, ctx, errors)?;
            let q = p.n_outputs();
            if !dim.is_multiple_of(q) {
                errors.push(format!(
                    "{ctx}: shared plant has {q} outputs, which does not divide dimension {dim}"
                ));
                return None;
            }
            vec![p; dim / q]
        }
        AgentPlant::PerAxis(rs) => {
            let ps: Vec<_> = rs
                .iter()
                .enumerate()
                .map(|(k, r)| resolve_plant(r, library, &format!("{ctx} channel {k}"), errors))
                .collect::<Option<_>>()?;
            let total: usize = ps.iter().map(PlantModel::n_outputs).sum();
            if total != dim {
                errors.push(format!(
                    "{ctx}: channel outputs total {total}, expected dimension {dim}"
                ));
                return None;
            }
            ps
        }
    };
    Some(channels)
}

fn generate_agents(gen: &GenerateSpec, seed: u64, errors: &mut Vec<String>) -> Vec<AgentEntry> {
    if gen.plants.is_empty() {
        errors.push("generate: plant list is empty".into());
        return Vec::new();
    }
    for (label, b) in [
        ("initial_region", &gen.initial_region),
        ("target_region", &gen.target_region),
    ] {
        if let Err(e) = b.validate() {
            errors.push(format!("generate.{label}: {e}"));
            return Vec::new();
        }
    }
    let dim = gen.initial_region.dim();
    if gen.target_region.dim() != dim {
        errors.push("generate: region dimensions differ".into());
        return Vec::new();
    }
    // stream u64::MAX is reserved for scenario generation; dropout uses the
    // round index as its stream
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut draw = |b: &BoxSet| -> Vec<f64> {
        b.lo.iter()
            .zip(&b.hi)
            .map(|(&lo, &hi)| if lo == hi { lo } else { rng.gen_range(lo..hi) })
            .collect()
    };
    (0..gen.count)
        .map(|i| {
            let initial = draw(&gen.initial_region);
            let target = draw(&gen.target_region);
            AgentEntry {
                plant: AgentPlant::Shared(gen.plants[i % gen.plants.len()].clone()),
                initial,
                target,
                bounds: gen.bounds.clone(),
            }
        })
        .collect()
}

fn build(file: ScenarioFile) -> Result<Scenario> {
    let mut errors = Vec::new();
    if file.schema != SCHEMA_VERSION {
        errors.push(format!(
            "unsupported schema version {} (expected {SCHEMA_VERSION})",
            file.schema
        ));
    }

    let mut entries = file.agents.clone();
    if let Some(gen) = &file.generate {
        if !entries.is_empty() {
            errors.push("both explicit agents and a generator were given".into());
        }
        entries = generate_agents(gen, file.run.seed, &mut errors);
    }
    if entries.is_empty() && errors.is_empty() {
        errors.push("scenario has no agents".into());
    }

    let dim = entries.first().map_or(0, |a| a.target.len());
    if !entries.is_empty() && dim == 0 {
        errors.push("agent 0: empty target".into());
    }
    let mut agents = Vec::with_capacity(entries.len());
    for (i, a) in entries.iter().enumerate() {
        let ctx = format!("agent {i}");
        if a.initial.len() != dim || a.target.len() != dim || a.bounds.dim() != dim {
            errors.push(format!(
                "{ctx}: initial/target/box dimensions {}/{}/{} differ from {dim}",
                a.initial.len(),
                a.target.len(),
                a.bounds.dim()
            ));
            continue;
        }
        if let Err(e) = a.bounds.validate() {
            errors.push(format!("{ctx}: {e}"));
            continue;
        }
        if a.initial.iter().chain(&a.target).any(|v| !v.is_finite()) {
            errors.push(format!("{ctx}: non-finite initial point or target"));
            continue;
        }
        if let Some(channels) = resolve_channels(&a.plant, dim, &file.plants, &ctx, &mut errors) {
            agents.push(AgentSpec {
                channels,
                initial: DVector::from_row_slice(&a.initial),
                target: DVector::from_row_slice(&a.target),
                bounds: a.bounds.clone(),
            });
        }
    }

    let n = entries.len();
    if !(file.game.step_size > 0.0 && file.game.step_size.is_finite()) {
        errors.push(format!(
            "game.step_size must be positive, got {}",
            file.game.step_size
        ));
    }
    if !(file.gains.state_weight >= 0.0) || !(file.gains.input_weight > 0.0) {
        errors.push("gains: need state_weight >= 0 and input_weight > 0".into());
    }
    if file.run.telemetry_stride == 0 {
        errors.push("run.telemetry_stride must be at least 1".into());
    }
    if !(0.0..=1.0).contains(&file.run.dropout_fraction) {
        errors.push(format!(
            "run.dropout_fraction {} outside [0, 1]",
            file.run.dropout_fraction
        ));
    }
    if !(file.run.stop_tol >= 0.0) {
        errors.push("run.stop_tol must be nonnegative".into());
    }

    let mut violations = Vec::new();
    let adjacency = match &file.topology {
        TopologySpec::Ring { neighbors_per_side } => {
            let k = *neighbors_per_side;
            if n < 2 || k == 0 || 2 * k > n {
                errors.push(format!("topology: ring of {n} with {k} neighbors per side"));
                None
            } else {
                let mut adj = vec![vec![false; n]; n];
                for i in 0..n {
                    for off in 1..=k {
                        adj[i][(i + off) % n] = true;
                        adj[(i + off) % n][i] = true;
                    }
                }
                Some(adj)
            }
        }
        TopologySpec::Complete => Some((0..n).map(|i| (0..n).map(|j| i != j).collect()).collect()),
        TopologySpec::Edges { edges } => {
            let mut adj = vec![vec![false; n]; n];
            let mut ok = true;
            for &[i, j] in edges {
                if i >= n || j >= n || i == j {
                    errors.push(format!("topology: invalid edge [{i}, {j}] for {n} agents"));
                    ok = false;
                } else {
                    adj[i][j] = true;
                    adj[j][i] = true;
                }
            }
            ok.then_some(adj)
        }
    };

    if !errors.is_empty() {
        return Err(NesError::Schema(errors));
    }
    let adjacency = adjacency.expect("adjacency built when no schema errors");

    let graph = if graph::is_strongly_connected(&adjacency) {
        let g = graph::metropolis_weights(&adjacency)?;
        for detail in g.stochasticity_violations() {
            violations.push(Violation {
                kind: ViolationKind::DoublyStochastic,
                agent: None,
                detail,
            });
        }
        Some(g)
    } else {
        violations.push(Violation {
            kind: ViolationKind::Connectivity,
            agent: None,
            detail: "communication graph is not connected".into(),
        });
        None
    };

    for (i, a) in agents.iter().enumerate() {
        for (ch, p) in a.channels.iter().enumerate() {
            let detail = if a.channels.len() > 1 {
                format!("channel {ch}")
            } else {
                String::new()
            };
            if !plant::check_controllability(p) {
                violations.push(Violation {
                    kind: ViolationKind::Controllability,
                    agent: Some(i),
                    detail: detail.clone(),
                });
            }
            if !plant::check_regulator_rank(p) {
                violations.push(Violation {
                    kind: ViolationKind::RankCondition,
                    agent: Some(i),
                    detail,
                });
            }
        }
        if !a.bounds.contains(&a.initial) {
            violations.push(Violation {
                kind: ViolationKind::InitOutsideBox,
                agent: Some(i),
                detail: String::new(),
            });
        }
    }

    if !violations.is_empty() {
        return Err(NesError::AssumptionViolated(violations));
    }

    let game = GameSpec::new(
        agents.iter().map(|a| a.target.clone()).collect(),
        agents.iter().map(|a| a.bounds.clone()).collect(),
        file.game.step_size,
        file.game.convention,
    )?;
    Ok(Scenario {
        file,
        agents,
        graph: graph.expect("graph exists when no violations"),
        game,
    })
}

/// Scenarios shipped with the crate, by file name.
pub const BUNDLED: &[(&str, &str)] = &[
    (
        "six_robot.json",
        include_str!("../scenarios/six_robot.json"),
    ),
    ("ring200.json", include_str!("../scenarios/ring200.json")),
    (
        "ring200_dropout.json",
        include_str!("../scenarios/ring200_dropout.json"),
    ),
    (
        "integrator.json",
        include_str!("../scenarios/integrator.json"),
    ),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Loads a bundled scenario; panics if the name is unknown or it fails to
/// validate.
pub fn load_bundled(name: &str) -> Scenario {
    let text = bundled(name).unwrap_or_else(|| panic!("no bundled scenario {name}"));
    parse_scenario(text.as_bytes()).unwrap_or_else(|e| panic!("bundled {name}: {e}"))
}
