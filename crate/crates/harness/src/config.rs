//! Scenario files: TOML with `game`, `graph`, `params`, `run` and an optional
//! `baseline` section. Any derived quantity may be written as `"auto"`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

const REQUIRED_SECTIONS: [&str; 4] = ["game", "graph", "params", "run"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoKeyword {
    Auto,
}

/// A value fixed in the file or left to be derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AutoOr<T> {
    Auto(AutoKeyword),
    Value(T),
}

impl<T> AutoOr<T> {
    pub fn auto() -> Self {
        AutoOr::Auto(AutoKeyword::Auto)
    }

    pub fn value(&self) -> Option<&T> {
        match self {
            AutoOr::Auto(_) => None,
            AutoOr::Value(v) => Some(v),
        }
    }

    pub fn is_auto(&self) -> bool {
        matches!(self, AutoOr::Auto(_))
    }
}

impl<T> Default for AutoOr<T> {
    fn default() -> Self {
        Self::auto()
    }
}

/// One number for every agent, or a full list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerAgent {
    Uniform(f64),
    List(Vec<f64>),
}

impl PerAgent {
    pub fn expand(&self, len: usize, key: &str) -> Result<Vec<f64>> {
        match self {
            PerAgent::Uniform(v) => Ok(vec![*v; len]),
            PerAgent::List(v) if v.len() == len => Ok(v.clone()),
            PerAgent::List(v) => Err(HarnessError::config(
                key,
                format!("expected {len} entries, found {}", v.len()),
            )),
        }
    }

    /// Collapses equal entries back to a scalar.
    pub fn compact(values: &[f64]) -> Self {
        match values.first() {
            Some(first) if values.iter().all(|v| v == first) => PerAgent::Uniform(*first),
            _ => PerAgent::List(values.to_vec()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameKind {
    Cournot,
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSpec {
    #[serde(default)]
    pub mu: AutoOr<f64>,
    #[serde(default)]
    pub lfx: AutoOr<f64>,
    #[serde(default)]
    pub lfu: AutoOr<f64>,
    #[serde(default)]
    pub lf: AutoOr<f64>,
    /// Samples for estimating any `auto` constant.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    2000
}

impl Default for ConstantsSpec {
    fn default() -> Self {
        ConstantsSpec {
            mu: AutoOr::auto(),
            lfx: AutoOr::auto(),
            lfu: AutoOr::auto(),
            lf: AutoOr::auto(),
            samples: default_samples(),
        }
    }
}

/// `J_i = ½a‖x_i‖² + e⟨x_i, y⟩ + ½d‖y‖² + ⟨q_i, x_i⟩ + ⟨r_i, y⟩` with box and coupling data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    pub action_dim: usize,
    pub own: PerAgent,
    pub cross: PerAgent,
    #[serde(default = "zero_per_agent")]
    pub aggregate: PerAgent,
    /// One row of length `action_dim` per agent.
    pub own_linear: Vec<Vec<f64>>,
    #[serde(default)]
    pub aggregate_linear: Option<Vec<Vec<f64>>>,
    /// Stacked per-agent bounds, or one value for all.
    pub lower: PerAgent,
    pub upper: PerAgent,
    /// `coupling[i]` is `A_i`, given as rows.
    pub coupling: Vec<Vec<Vec<f64>>>,
    /// Stacked `b_i`.
    pub offsets: PerAgent,
}

fn zero_per_agent() -> PerAgent {
    PerAgent::Uniform(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameSpec {
    pub kind: GameKind,
    pub n_agents: usize,
    /// Market capacity of the Cournot game.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadratic: Option<QuadraticSpec>,
    #[serde(default)]
    pub constants: ConstantsSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Star,
    Ring,
    Path,
    Complete,
    EdgeList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub topology: TopologyKind,
    /// Defaults to `game.n_agents`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_agents: Option<usize>,
    /// 1-based node pairs for `edge_list`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSpec {
    pub c: f64,
    #[serde(default)]
    pub delta: AutoOr<f64>,
    #[serde(default)]
    pub kappa_inv: AutoOr<f64>,
    #[serde(default)]
    pub tau_inv: AutoOr<PerAgent>,
    #[serde(default)]
    pub upsilon_inv: AutoOr<PerAgent>,
    #[serde(default)]
    pub alpha_inv: AutoOr<PerAgent>,
    #[serde(default = "default_delta_margin")]
    pub delta_margin: f64,
    #[serde(default = "default_kappa_fraction")]
    pub kappa_fraction: f64,
}

impl ParamsSpec {
    /// True when nothing is left to derive; the certificate is then informational.
    pub fn fully_pinned(&self) -> bool {
        !(self.delta.is_auto()
            || self.kappa_inv.is_auto()
            || self.tau_inv.is_auto()
            || self.upsilon_inv.is_auto()
            || self.alpha_inv.is_auto())
    }
}

fn default_delta_margin() -> f64 {
    0.1
}

fn default_kappa_fraction() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Serial,
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub max_iter: usize,
    pub tol: f64,
    pub record_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub schedule: ScheduleKind,
    #[serde(default = "default_true")]
    pub fejer_check: bool,
    #[serde(default = "default_reference_tol")]
    pub reference_tol: f64,
    /// Stacked initial actions; zero (projected) when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

fn default_true() -> bool {
    true
}

fn default_reference_tol() -> f64 {
    1e-11
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSpec {
    pub nu: usize,
    pub tau: f64,
    pub mixing_eps: f64,
    pub max_updates: usize,
    #[serde(default = "default_baseline_record")]
    pub record_every: usize,
}

fn default_baseline_record() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub game: GameSpec,
    pub graph: GraphSpec,
    pub params: ParamsSpec,
    pub run: RunSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineSpec>,
}

impl Scenario {
    /// Checks cross-field constraints that the schema cannot express.
    pub fn validate(&self) -> Result<()> {
        let g = &self.game;
        if g.n_agents < 2 {
            return Err(HarnessError::config("game.n_agents", "need at least 2 agents"));
        }
        match (g.kind, &g.quadratic) {
            (GameKind::Quadratic, None) => {
                return Err(HarnessError::config(
                    "game.quadratic",
                    "required when kind = \"quadratic\"",
                ))
            }
            (GameKind::Cournot, Some(_)) => {
                return Err(HarnessError::config(
                    "game.quadratic",
                    "only allowed when kind = \"quadratic\"",
                ))
            }
            _ => {}
        }
        if let Some(n) = self.graph.n_agents {
            if n != g.n_agents {
                return Err(HarnessError::config(
                    "graph.n_agents",
                    format!("graph has {n} nodes but the game has {} agents", g.n_agents),
                ));
            }
        }
        match (self.graph.topology, &self.graph.edges) {
            (TopologyKind::EdgeList, None) => {
                return Err(HarnessError::config(
                    "graph.edges",
                    "required for topology = \"edge_list\"",
                ))
            }
            (TopologyKind::EdgeList, Some(_)) | (_, None) => {}
            (_, Some(_)) => {
                return Err(HarnessError::config(
                    "graph.edges",
                    "only allowed for topology = \"edge_list\"",
                ))
            }
        }
        if !(self.params.c > 0.0) {
            return Err(HarnessError::config("params.c", "must be positive"));
        }
        if self.run.record_every == 0 {
            return Err(HarnessError::config("run.record_every", "must be positive"));
        }
        if !(self.run.tol > 0.0) {
            return Err(HarnessError::config("run.tol", "must be positive"));
        }
        if let Some(b) = &self.baseline {
            if b.nu == 0 || b.record_every == 0 || !(b.tau > 0.0) {
                return Err(HarnessError::config(
                    "baseline",
                    "nu, record_every and tau must be positive",
                ));
            }
        }
        Ok(())
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| "scenario".into())
    }

    /// TOML text that [`parse_scenario`] reads back to an equal scenario.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::config("<emit>", e.to_string()))
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.to_toml() {
            Ok(s) => f.write_str(&s),
            Err(e) => write!(f, "<unprintable scenario: {e}>"),
        }
    }
}

/// Parses and validates scenario text.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| HarnessError::config("<root>", e.message().to_string()))?;
    if let Some(missing) = REQUIRED_SECTIONS.iter().find(|s| !table.contains_key(**s)) {
        return Err(HarnessError::config(*missing, "missing section"));
    }
    let scenario: Scenario = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        HarnessError::config(path, e.into_inner().to_string())
    })?;
    scenario.validate()?;
    Ok(scenario)
}

/// Reads a scenario file; its stem becomes the default name.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut scenario = parse_scenario(&text)?;
    if scenario.name.is_none() {
        scenario.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    }
    Ok(scenario)
}
