use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agents::AgentSpec;
use crate::consensus::ConsensusConfig;
use crate::contract::ContractRules;
use crate::crypto::{HashAlg, SigScheme};
use crate::netsim::{DropRule, NetConfig, PartitionSpec};
use crate::topology::{Topology, TopologyError};
use crate::types::{NodeId, Tick, TrainId};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("scenario does not parse: {0}")]
    Parse(String),
    #[error("topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// A path resolved against the scenario file's directory, or the topology itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopologySource {
    Path(String),
    Inline(Value),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub id: TrainId,
    /// Label of the account in `allocations`.
    pub wallet: String,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    pub wallet: String,
    #[serde(default = "yes")]
    pub whitelisted: bool,
}

/// Accounts are named by label; every key pair is derived from its label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenesisSpec {
    pub allocations: BTreeMap<String, u64>,
    #[serde(default)]
    pub trains: Vec<TrainSpec>,
    pub nodes: Vec<NodeSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultSpec {
    Partition {
        groups: Vec<BTreeSet<NodeId>>,
        from_tick: Tick,
        to_tick: Tick,
    },
    DropMessage {
        message: String,
        from_tick: Tick,
        to_tick: Tick,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from: Option<NodeId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        to: Option<NodeId>,
    },
    InduceBookingFailure {
        train: TrainId,
        at_index: usize,
    },
}

impl FaultSpec {
    pub fn partition(&self) -> Option<PartitionSpec> {
        match self {
            FaultSpec::Partition {
                groups,
                from_tick,
                to_tick,
            } => Some(PartitionSpec {
                groups: groups.clone(),
                from_tick: *from_tick,
                to_tick: *to_tick,
            }),
            _ => None,
        }
    }

    pub fn drop_rule(&self) -> Option<DropRule> {
        match self {
            FaultSpec::DropMessage {
                message,
                from_tick,
                to_tick,
                from,
                to,
            } => Some(DropRule {
                message: message.clone(),
                from_tick: *from_tick,
                to_tick: *to_tick,
                from: from.clone(),
                to: to.clone(),
            }),
            _ => None,
        }
    }
}

fn one() -> Tick {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwinsSpec {
    #[serde(default = "one")]
    pub actuation_delay: Tick,
    /// Node the element twins submit through; the first node by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
}

impl Default for TwinsSpec {
    fn default() -> Self {
        TwinsSpec {
            actuation_delay: 1,
            node: None,
        }
    }
}

fn default_drain() -> Tick {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub topology: TopologySource,
    #[serde(default)]
    pub hash_alg: HashAlg,
    #[serde(default)]
    pub sig_scheme: SigScheme,
    pub genesis: GenesisSpec,
    #[serde(default)]
    pub rules: ContractRules,
    pub consensus: ConsensusConfig,
    pub net: NetConfig,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub twins: TwinsSpec,
    pub run_until: Tick,
    #[serde(default)]
    pub seed: u64,
    /// Upper bound on ticks spent draining messages after `run_until`.
    #[serde(default = "default_drain")]
    pub drain_limit: Tick,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    /// Reads a scenario and inlines a topology given by path.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut s = Self::from_json(&text)?;
        if let TopologySource::Path(rel) = &s.topology {
            let topo_path = path.parent().unwrap_or(Path::new(".")).join(rel);
            let bytes = std::fs::read(&topo_path).map_err(|source| ScenarioError::Io {
                path: topo_path.clone(),
                source,
            })?;
            let v: Value = serde_json::from_slice(&bytes)
                .map_err(|e| ScenarioError::Topology(TopologyError::Parse(e.to_string())))?;
            s.topology = TopologySource::Inline(v);
        }
        Ok(s)
    }

    pub fn topology(&self) -> Result<Topology, ScenarioError> {
        match &self.topology {
            TopologySource::Inline(v) => {
                let bytes = serde_json::to_vec(v).expect("value serializes");
                Ok(Topology::from_slice(&bytes)?)
            }
            TopologySource::Path(p) => Err(ScenarioError::Invalid(format!(
                "topology path {p} must be resolved by loading the scenario from a file"
            ))),
        }
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = self.genesis.nodes.iter().map(|n| n.id.clone()).collect();
        v.sort();
        v
    }

    pub fn max_latency(&self) -> Tick {
        self.net.latency_ticks.max
    }

    /// Cross-reference checks that do not need the built ledger.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.run_until == 0 {
            return bad("run_until must be positive".into());
        }
        self.net.validate().map_err(ScenarioError::Invalid)?;
        let g = &self.genesis;
        if g.nodes.is_empty() {
            return bad("at least one node is required".into());
        }
        let nodes = self.node_ids();
        if nodes.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate node id".into());
        }
        for w in g
            .nodes
            .iter()
            .map(|n| &n.wallet)
            .chain(g.trains.iter().map(|t| &t.wallet))
        {
            if !g.allocations.contains_key(w) {
                return bad(format!("wallet label {w} has no allocation"));
            }
        }
        let trains: BTreeSet<&TrainId> = g.trains.iter().map(|t| &t.id).collect();
        let mut agents = BTreeSet::new();
        for a in &self.agents {
            if !trains.contains(&a.train) {
                return bad(format!("agent train {} is not in genesis", a.train));
            }
            if !agents.insert(&a.train) {
                return bad(format!("train {} has two agents", a.train));
            }
            if !nodes.contains(&a.home_node) {
                return bad(format!("agent {} home node {} is unknown", a.train, a.home_node));
            }
            if a.ticks_per_element == 0 {
                return bad(format!("agent {} ticks_per_element must be at least 1", a.train));
            }
        }
        for f in &self.faults {
            match f {
                FaultSpec::Partition { .. } => f
                    .partition()
                    .expect("partition")
                    .validate(&nodes)
                    .map_err(ScenarioError::Invalid)?,
                FaultSpec::DropMessage {
                    message,
                    from_tick,
                    to_tick,
                    ..
                } => {
                    if !crate::consensus::message::MESSAGE_KINDS.contains(&message.as_str()) {
                        return bad(format!("unknown message kind {message}"));
                    }
                    if from_tick >= to_tick {
                        return bad("drop_message from_tick must be before to_tick".into());
                    }
                }
                FaultSpec::InduceBookingFailure { train, .. } => {
                    if !agents.contains(train) {
                        return bad(format!("induced failure names train {train} without an agent"));
                    }
                }
            }
        }
        if let Some(n) = &self.twins.node {
            if !nodes.contains(n) {
                return bad(format!("twin node {n} is unknown"));
            }
        }
        Ok(())
    }
}
