//! Track network: reservable elements (blocks, switches, platforms), directed
//! edges between them, the topology file format and one-hop traversal.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::crypto::{Digest, HashAlg};
use crate::types::{ElementId, WalletAddress};

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("topology parse error: {0}")]
    Parse(String),
    #[error("topology validation error: {0}")]
    Validation(String),
    #[error("unknown element {0}")]
    UnknownElement(ElementId),
    #[error("reading topology file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Block,
    Switch,
    Platform,
}

/// Optional layout hint for schematic rendering; carried through untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UiHint {
    pub x: i64,
    pub y: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackElement {
    pub id: ElementId,
    pub kind: ElementKind,
    pub length_m: u64,
    pub price_per_tick: u64,
    pub owner_wallet: WalletAddress,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_position: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ui_hint: Option<UiHint>,
}

impl TrackElement {
    pub fn is_switch(&self) -> bool {
        self.kind == ElementKind::Switch
    }

    pub fn has_position(&self, position: &str) -> bool {
        self.positions.as_ref().is_some_and(|p| p.contains(position))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub from: ElementId,
    pub to: ElementId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required_position: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyFile {
    elements: Vec<TrackElement>,
    edges: Vec<Edge>,
}

/// Validated, immutable track graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    elements: BTreeMap<ElementId, TrackElement>,
    edges: Vec<Edge>,
    outgoing: BTreeMap<ElementId, Vec<(ElementId, Option<String>)>>,
    warnings: Vec<String>,
}

impl Topology {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TopologyError> {
        let bytes = std::fs::read(path)?;
        Self::from_slice(&bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, TopologyError> {
        let file: TopologyFile = serde_json::from_slice(bytes).map_err(|e| TopologyError::Parse(e.to_string()))?;
        let mut elements = BTreeMap::new();
        for el in file.elements {
            if elements.contains_key(&el.id) {
                return Err(TopologyError::Parse(format!("duplicate element id {}", el.id)));
            }
            elements.insert(el.id.clone(), el);
        }
        Self::new(elements.into_values().collect(), file.edges)
    }

    /// Builds and validates a topology from parts.
    pub fn new(elements: Vec<TrackElement>, edges: Vec<Edge>) -> Result<Self, TopologyError> {
        let mut map = BTreeMap::new();
        for el in elements {
            validate_element(&el)?;
            if let Some(prev) = map.insert(el.id.clone(), el) {
                return Err(TopologyError::Validation(format!("duplicate element id {}", prev.id)));
            }
        }
        let mut seen = BTreeSet::new();
        let mut outgoing: BTreeMap<ElementId, Vec<(ElementId, Option<String>)>> =
            map.keys().map(|k| (k.clone(), Vec::new())).collect();
        for edge in &edges {
            let from = map.get(&edge.from).ok_or_else(|| {
                TopologyError::Validation(format!(
                    "edge {}->{}: unknown element {}",
                    edge.from, edge.to, edge.from
                ))
            })?;
            let to = map.get(&edge.to).ok_or_else(|| {
                TopologyError::Validation(format!("edge {}->{}: unknown element {}", edge.from, edge.to, edge.to))
            })?;
            if edge.from == edge.to {
                return Err(TopologyError::Validation(format!("self-loop edge on {}", edge.from)));
            }
            if !seen.insert((edge.from.clone(), edge.to.clone())) {
                return Err(TopologyError::Validation(format!(
                    "duplicate edge {}->{}",
                    edge.from, edge.to
                )));
            }
            if let Some(pos) = &edge.required_position {
                let switches: Vec<&TrackElement> = [from, to].into_iter().filter(|e| e.is_switch()).collect();
                if switches.is_empty() {
                    return Err(TopologyError::Validation(format!(
                        "edge {}->{} requires position {pos:?} but touches no switch",
                        edge.from, edge.to
                    )));
                }
                for sw in switches {
                    if !sw.has_position(pos) {
                        return Err(TopologyError::Validation(format!(
                            "edge {}->{} requires position {pos:?} not offered by switch {}",
                            edge.from, edge.to, sw.id
                        )));
                    }
                }
            }
            outgoing
                .get_mut(&edge.from)
                .expect("endpoint checked above")
                .push((edge.to.clone(), edge.required_position.clone()));
        }
        for list in outgoing.values_mut() {
            list.sort();
        }
        let mut topo = Topology {
            elements: map,
            edges,
            outgoing,
            warnings: Vec::new(),
        };
        topo.warnings = topo.connectivity_warnings();
        Ok(topo)
    }

    fn connectivity_warnings(&self) -> Vec<String> {
        let Some(start) = self.elements.keys().next() else {
            return Vec::new();
        };
        // weakly connected components
        let mut undirected: BTreeMap<&ElementId, Vec<&ElementId>> = BTreeMap::new();
        for e in &self.edges {
            undirected.entry(&e.from).or_default().push(&e.to);
            undirected.entry(&e.to).or_default().push(&e.from);
        }
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(at) = queue.pop_front() {
            for next in undirected.get(at).into_iter().flatten() {
                if seen.insert(*next) {
                    queue.push_back(next);
                }
            }
        }
        if seen.len() == self.elements.len() {
            Vec::new()
        } else {
            vec![format!(
                "topology is not connected: {} of {} elements reachable from {start}",
                seen.len(),
                self.elements.len()
            )]
        }
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn element(&self, id: &ElementId) -> Option<&TrackElement> {
        self.elements.get(id)
    }

    pub fn elements(&self) -> impl Iterator<Item = &TrackElement> {
        self.elements.values()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// One-hop successors of `at` with the switch position each traversal requires,
    /// sorted by element id.
    pub fn neighbors(&self, at: &ElementId) -> Result<&[(ElementId, Option<String>)], TopologyError> {
        self.outgoing
            .get(at)
            .map(Vec::as_slice)
            .ok_or_else(|| TopologyError::UnknownElement(at.clone()))
    }

    /// The file form with elements sorted by id and edges sorted.
    pub fn to_file_value(&self) -> serde_json::Value {
        let mut edges = self.edges.clone();
        edges.sort();
        serde_json::to_value(TopologyFile {
            elements: self.elements.values().cloned().collect(),
            edges,
        })
        .expect("topology serializes")
    }

    pub fn to_canonical_string(&self) -> String {
        canonical::value_to_string(&self.to_file_value())
    }

    /// Hash binding a chain's genesis block to this topology.
    pub fn content_hash(&self, alg: HashAlg) -> Digest {
        alg.digest(self.to_canonical_string().as_bytes())
    }
}

fn validate_element(el: &TrackElement) -> Result<(), TopologyError> {
    let bad = |msg: String| Err(TopologyError::Validation(format!("element {}: {msg}", el.id)));
    if el.length_m == 0 {
        return bad("length_m must be positive".into());
    }
    match (el.is_switch(), &el.positions, &el.default_position) {
        (true, Some(positions), Some(default)) => {
            if positions.len() < 2 {
                return bad("a switch needs at least two positions".into());
            }
            if !positions.contains(default) {
                return bad(format!("default_position {default:?} is not one of its positions"));
            }
            Ok(())
        }
        (true, _, _) => bad("a switch needs positions and default_position".into()),
        (false, None, None) => Ok(()),
        (false, _, _) => bad("only switches may declare positions".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn tiny3_loads_with_four_edges() {
        let topo = Topology::from_slice(fixtures::TINY3.as_bytes()).unwrap();
        assert_eq!(topo.len(), 3);
        assert_eq!(topo.edges().len(), 4);
        assert!(topo.warnings().is_empty());
    }

    #[test]
    fn tiny3_neighbors_of_middle_block() {
        let topo = Topology::from_slice(fixtures::TINY3.as_bytes()).unwrap();
        let n = topo.neighbors(&ElementId::new("B2").unwrap()).unwrap();
        let ids: Vec<_> = n.iter().map(|(id, p)| (id.as_str(), p.clone())).collect();
        assert_eq!(ids, vec![("B1", None), ("B3", None)]);
    }

    #[test]
    fn switchy_neighbors_of_switch() {
        let topo = Topology::from_slice(fixtures::SWITCHY.as_bytes()).unwrap();
        let n = topo.neighbors(&ElementId::new("S1").unwrap()).unwrap();
        let ids: Vec<_> = n.iter().map(|(id, p)| (id.as_str(), p.as_deref())).collect();
        assert_eq!(ids, vec![("B1", None), ("B2", Some("left")), ("B3", Some("right"))]);
    }

    #[test]
    fn diamond_neighbors_match_edge_enumeration() {
        let topo = Topology::from_slice(fixtures::DIAMOND.as_bytes()).unwrap();
        let raw: serde_json::Value = serde_json::from_str(fixtures::DIAMOND).unwrap();
        for el in topo.elements() {
            // independent enumeration straight from the file's edge list
            let mut expected: Vec<(String, Option<String>)> = raw["edges"]
                .as_array()
                .unwrap()
                .iter()
                .filter(|e| e["from"] == el.id.as_str())
                .map(|e| {
                    (
                        e["to"].as_str().unwrap().to_string(),
                        e.get("required_position").map(|p| p.as_str().unwrap().to_string()),
                    )
                })
                .collect();
            expected.sort();
            let got: Vec<(String, Option<String>)> = topo
                .neighbors(&el.id)
                .unwrap()
                .iter()
                .map(|(id, p)| (id.to_string(), p.clone()))
                .collect();
            assert_eq!(got, expected, "neighbors of {}", el.id);
            assert!(got.iter().all(|(id, _)| id != el.id.as_str()));
        }
        let s2 = topo.neighbors(&ElementId::new("S2").unwrap()).unwrap();
        let preds: Vec<_> = s2
            .iter()
            .filter(|(id, _)| id.as_str().starts_with("B2"))
            .map(|(id, _)| id.as_str())
            .collect();
        assert_eq!(preds, vec!["B2a", "B2b"]);
    }

    #[test]
    fn unknown_position_is_validation_error() {
        let bad = fixtures::SWITCHY.replace("\"required_position\":\"right\"", "\"required_position\":\"up\"");
        match Topology::from_slice(bad.as_bytes()) {
            Err(TopologyError::Validation(msg)) => assert!(msg.contains("up"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_element_is_parse_error() {
        let dup = fixtures::TINY3.replacen("\"id\":\"B3\"", "\"id\":\"B1\"", 1);
        assert!(matches!(
            Topology::from_slice(dup.as_bytes()),
            Err(TopologyError::Parse(msg)) if msg.contains("B1")
        ));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let extra = fixtures::TINY3.replacen("{\"elements\"", "{\"colour\":1,\"elements\"", 1);
        assert!(matches!(
            Topology::from_slice(extra.as_bytes()),
            Err(TopologyError::Parse(_))
        ));
    }

    #[test]
    fn self_loops_and_duplicates_fail() {
        let topo = Topology::from_slice(fixtures::TINY3.as_bytes()).unwrap();
        let els: Vec<_> = topo.elements().cloned().collect();
        let b1 = els[0].id.clone();
        let loop_edge = Edge {
            from: b1.clone(),
            to: b1.clone(),
            required_position: None,
        };
        assert!(Topology::new(els.clone(), vec![loop_edge]).is_err());
        let e = Edge {
            from: b1.clone(),
            to: els[1].id.clone(),
            required_position: None,
        };
        assert!(Topology::new(els, vec![e.clone(), e]).is_err());
    }

    #[test]
    fn disconnected_topology_warns() {
        let topo = Topology::from_slice(fixtures::TINY3.as_bytes()).unwrap();
        let els: Vec<_> = topo.elements().cloned().collect();
        let t = Topology::new(els, vec![]).unwrap();
        assert_eq!(t.warnings().len(), 1);
    }

    #[test]
    fn same_bytes_same_topology() {
        let a = Topology::from_slice(fixtures::DIAMOND.as_bytes()).unwrap();
        let b = Topology::from_slice(fixtures::DIAMOND.as_bytes()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.content_hash(HashAlg::Sha256), b.content_hash(HashAlg::Sha256));
    }
}
