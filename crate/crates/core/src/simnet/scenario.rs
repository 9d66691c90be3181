//! Scenario documents and their expansion into concrete agents.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::grid::{load_topology, BusId, NetworkTopology, TopologyDocument};
use crate::market::{AgentId, ConsumerParams, GridTariff, NegotiationConfig, PreferenceWeights, ProducerParams};

const CASE33: &str = include_str!("../../data/scenarios/case33.json");
const TINY1X1: &str = include_str!("../../data/scenarios/tiny1x1.json");
const TINY2X2: &str = include_str!("../../data/scenarios/tiny2x2.json");

pub const BUNDLED: [&str; 3] = ["case33", "tiny1x1", "tiny2x2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopologyRef {
    Bundled(String),
    Inline(TopologyDocument),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Producer,
    Consumer,
}

/// One agent entry. Omitted economic parameters are drawn from the
/// sampling ranges with the scenario seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: u32,
    pub role: AgentRole,
    pub bus: BusId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reputation: Option<f64>,
    /// Weight on reputation; proximity gets `1 − alpha`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

/// A producer that injects only part of what it agreed to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Misbehavior {
    pub producer: u32,
    /// Share of the agreed energy actually delivered, in [0, 1].
    pub delivered_fraction: f64,
    /// Intervals where it applies; all when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervals: Option<Vec<usize>>,
}

impl Misbehavior {
    pub fn applies(&self, interval: usize) -> bool {
        self.intervals.as_ref().is_none_or(|v| v.contains(&interval))
    }
}

fn default_true() -> bool {
    true
}
fn default_groups() -> usize {
    1
}
fn default_intervals() -> usize {
    1
}
fn default_epsilon() -> f64 {
    NegotiationConfig::default().epsilon
}
fn default_max_iter() -> usize {
    NegotiationConfig::default().max_iter
}
fn default_funding() -> u64 {
    1_000_000
}
fn default_expiry() -> u64 {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub topology: TopologyRef,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub tariff: GridTariff,
    /// Service-charge rate, ¢/kWh per km.
    #[serde(default)]
    pub omega: f64,
    #[serde(default = "default_groups")]
    pub groups: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_intervals")]
    pub intervals: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub ad_mode: bool,
    #[serde(default)]
    pub misbehavior: Vec<Misbehavior>,
    /// Starting balance of every consumer, ¢.
    #[serde(default = "default_funding")]
    pub funding_cents: u64,
    /// Ticks an LP waits for its EI.
    #[serde(default = "default_expiry")]
    pub expiry_ticks: u64,
    /// Leaf keys per meter commitment; at least one per interval is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaf_count: Option<usize>,
}

impl Scenario {
    pub fn bundled(name: &str) -> Result<Self, SimError> {
        let text = match name {
            "case33" => CASE33,
            "tiny1x1" => TINY1X1,
            "tiny2x2" => TINY2X2,
            other => return Err(SimError::UnknownScenario(other.to_string())),
        };
        Self::from_json(text)
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let scenario: Self = serde_json::from_str(text).map_err(|e| SimError::InvalidScenario {
            line: Some(e.line()),
            message: e.to_string(),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Bundled name or path to a JSON file.
    pub fn load(name_or_path: &str) -> Result<Self, SimError> {
        if BUNDLED.contains(&name_or_path) {
            return Self::bundled(name_or_path);
        }
        let text = std::fs::read_to_string(name_or_path).map_err(|e| SimError::InvalidScenario {
            line: None,
            message: format!("cannot read {name_or_path}: {e}"),
        })?;
        Self::from_json(&text)
    }

    pub fn topology(&self) -> Result<NetworkTopology, SimError> {
        let invalid = |message: String| SimError::InvalidScenario { line: None, message };
        match &self.topology {
            TopologyRef::Bundled(name) if name == "case33" => Ok(NetworkTopology::case33()),
            TopologyRef::Bundled(name) => Err(invalid(format!("unknown bundled topology {name:?}"))),
            TopologyRef::Inline(doc) => load_topology(doc).map_err(|e| invalid(format!("topology: {e}"))),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |message: String| Err(SimError::InvalidScenario { line: None, message });
        let topo = self.topology()?;
        if self.groups == 0 {
            return invalid("groups must be at least 1".into());
        }
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return invalid(format!("omega must be a non-negative number, got {}", self.omega));
        }
        if !(self.epsilon > 0.0) {
            return invalid(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.intervals == 0 {
            return invalid("intervals must be at least 1".into());
        }
        if let Err(e) = GridTariff::new(self.tariff.feed_in, self.tariff.retail) {
            return invalid(e.to_string());
        }
        let mut ids = BTreeSet::new();
        for a in &self.agents {
            if !ids.insert(a.id) {
                return invalid(format!("agent id {} declared twice", a.id));
            }
            if !topo.contains_bus(a.bus) {
                return invalid(format!("agent {} sits on unknown bus {}", a.id, a.bus));
            }
        }
        if self.agents.len() < 2 {
            return invalid("a market needs at least two agents".into());
        }
        for m in &self.misbehavior {
            let known = self
                .agents
                .iter()
                .any(|a| a.id == m.producer && a.role == AgentRole::Producer);
            if !known {
                return invalid(format!("misbehavior names unknown producer {}", m.producer));
            }
            if !(0.0..=1.0).contains(&m.delivered_fraction) {
                return invalid(format!("delivered_fraction {} outside [0, 1]", m.delivered_fraction));
            }
        }
        let (producers, consumers) = self.agents_params();
        for p in &producers {
            if let Err(e) = p.validate() {
                return invalid(e.to_string());
            }
        }
        for c in &consumers {
            if let Err(e) = c.validate() {
                return invalid(e.to_string());
            }
        }
        Ok(())
    }

    pub fn negotiation_config(&self) -> NegotiationConfig {
        NegotiationConfig {
            epsilon: self.epsilon,
            max_iter: self.max_iter,
            ..NegotiationConfig::default()
        }
    }

    /// Concrete producer and consumer parameters. Missing values are
    /// sampled in roster order from a stream seeded by `seed`.
    pub fn agents_params(&self) -> (Vec<ProducerParams>, Vec<ConsumerParams>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut producers = Vec::new();
        let mut consumers = Vec::new();
        for spec in &self.agents {
            // Draw every field so a fixed value never shifts later samples.
            let mut draw = |lo: f64, hi: f64| rng.gen_range(lo..=hi);
            match spec.role {
                AgentRole::Producer => {
                    let s = [draw(0.5, 1.0), draw(5.0, 10.0), draw(0.0, 5.0), draw(5.0, 10.0), draw(0.0, 1.0), draw(0.0, 1.0)];
                    producers.push(ProducerParams {
                        id: AgentId(spec.id),
                        a: spec.a.unwrap_or(s[0]),
                        b: spec.b.unwrap_or(s[1]),
                        c: spec.c.unwrap_or(0.0),
                        e_min: spec.e_min.unwrap_or(s[2]),
                        e_max: spec.e_max.unwrap_or(s[3]),
                        bus: spec.bus,
                        reputation: spec.reputation.unwrap_or(s[4]),
                        weights: PreferenceWeights::from_alpha(spec.alpha.unwrap_or(s[5])),
                    });
                }
                AgentRole::Consumer => {
                    let s = [draw(0.5, 10.0), draw(10.0, 20.0), draw(1.0, 4.0), draw(6.0, 10.0), draw(0.0, 1.0), draw(0.0, 1.0)];
                    consumers.push(ConsumerParams {
                        id: AgentId(spec.id),
                        a: spec.a.unwrap_or(s[0]),
                        b: spec.b.unwrap_or(s[1]),
                        e_min: spec.e_min.unwrap_or(s[2]),
                        e_max: spec.e_max.unwrap_or(s[3]),
                        bus: spec.bus,
                        reputation: spec.reputation.unwrap_or(s[4]),
                        weights: PreferenceWeights::from_alpha(spec.alpha.unwrap_or(s[5])),
                    });
                }
            }
        }
        (producers, consumers)
    }
}
