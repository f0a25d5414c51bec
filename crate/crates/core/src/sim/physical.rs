use std::collections::BTreeMap;

use crate::topology::Topology;
use crate::types::{ElementId, TrainId};

/// Ground truth the ledger mirrors: where trains are and how switches lie.
#[derive(Debug, Clone, Default)]
pub struct Physical {
    pub occupancy: BTreeMap<ElementId, TrainId>,
    pub switches: BTreeMap<ElementId, String>,
    /// Safety breaches observed while moving trains; drained by the world.
    pub violations: Vec<String>,
}

impl Physical {
    pub fn new(topo: &Topology) -> Self {
        let switches = topo
            .elements()
            .filter(|e| e.is_switch())
            .map(|e| (e.id.clone(), e.default_position.clone().expect("switch has a default")))
            .collect();
        Physical {
            occupancy: BTreeMap::new(),
            switches,
            violations: Vec::new(),
        }
    }

    pub fn is_free(&self, el: &ElementId) -> bool {
        !self.occupancy.contains_key(el)
    }

    /// Moves `train` from `from` (if any) onto `to`, recording any breach.
    pub fn enter(&mut self, train: &TrainId, from: Option<&ElementId>, to: &ElementId, required: Option<&str>) {
        if let Some(other) = self.occupancy.get(to) {
            if other != train {
                self.violations
                    .push(format!("{train} entered {to} while {other} occupies it"));
            }
        }
        if let (Some(req), Some(actual)) = (required, self.switches.get(to)) {
            if req != actual {
                self.violations
                    .push(format!("{train} entered switch {to} lying {actual}, needed {req}"));
            }
        }
        if let Some(f) = from {
            self.leave(train, f);
        }
        self.occupancy.insert(to.clone(), train.clone());
    }

    pub fn leave(&mut self, train: &TrainId, from: &ElementId) {
        if self.occupancy.get(from) == Some(train) {
            self.occupancy.remove(from);
        }
    }
}
