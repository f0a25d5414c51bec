//! Trackside twins: switches follow the ledger's should-be position and
//! acknowledge what they physically did; blocks optionally report occupancy.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::consensus::node::{Outbox, TxStatus};
use crate::consensus::Node;
use crate::crypto::{Digest, KeyPair};
use crate::ledger::tx::{OccupancyPayload, SwitchAckPayload};
use crate::ledger::{Transaction, TxBody};
use crate::sim::physical::Physical;
use crate::topology::Topology;
use crate::types::{ElementId, Tick, WalletAddress};

#[derive(Debug)]
pub struct Twins {
    actuation_delay: Tick,
    report_occupancy: bool,
    retry_gap: Tick,
    owners: BTreeMap<WalletAddress, KeyPair>,
    nonces: BTreeMap<WalletAddress, u64>,
    moving: BTreeMap<ElementId, (String, Tick)>,
    acks: BTreeMap<ElementId, (Digest, Tick)>,
    reports: BTreeMap<ElementId, (Digest, Tick)>,
}

impl Twins {
    pub fn new(
        actuation_delay: Tick,
        report_occupancy: bool,
        retry_gap: Tick,
        owners: BTreeMap<WalletAddress, KeyPair>,
    ) -> Self {
        Twins {
            actuation_delay,
            report_occupancy,
            retry_gap,
            owners,
            nonces: BTreeMap::new(),
            moving: BTreeMap::new(),
            acks: BTreeMap::new(),
            reports: BTreeMap::new(),
        }
    }

    fn submit(
        &mut self,
        node: &mut Node,
        out: &mut Outbox,
        now: Tick,
        owner: &WalletAddress,
        body: TxBody,
    ) -> Option<Digest> {
        let key = self.owners.get(owner)?;
        let committed = node.head_state().last_nonce(owner).unwrap_or(0);
        let n = self.nonces.entry(owner.clone()).or_insert(0);
        *n = (*n).max(committed) + 1;
        let tx = Transaction::new_signed(key, *n, body, node.rules().alg);
        let id = tx.txid;
        node.submit(tx, now, out);
        Some(id)
    }

    fn busy(node: &Node, slot: Option<&(Digest, Tick)>, now: Tick, gap: Tick) -> bool {
        slot.is_some_and(|(id, at)| node.tx_status(id) == Some(TxStatus::Pending) || now < at + gap)
    }

    pub fn step(
        &mut self,
        now: Tick,
        topo: &Topology,
        node: &mut Node,
        out: &mut Outbox,
        physical: &mut Physical,
        events: &mut Vec<(&'static str, Value)>,
    ) {
        let state = node.head_state();
        for el in topo.elements().filter(|e| e.is_switch()) {
            let id = &el.id;
            let Some(should) = state.switch_should_be.get(id) else {
                continue;
            };
            let actual = physical.switches.get(id).cloned().unwrap_or_default();
            if &actual != should {
                match self.moving.get(id) {
                    Some((target, done)) if target == should => {
                        if now >= *done {
                            physical.switches.insert(id.clone(), should.clone());
                            self.moving.remove(id);
                            events.push(("SwitchActuated", json!({"element": id, "position": should})));
                        }
                    }
                    // A switch never moves under a train.
                    _ if physical.is_free(id) => {
                        self.moving
                            .insert(id.clone(), (should.clone(), now + self.actuation_delay));
                    }
                    _ => {}
                }
                continue;
            }
            self.moving.remove(id);
            if state.switch_is.get(id) == Some(&actual) || Self::busy(node, self.acks.get(id), now, self.retry_gap) {
                continue;
            }
            let body = TxBody::SwitchAck(SwitchAckPayload {
                element: id.clone(),
                position: actual.clone(),
            });
            if let Some(tx) = self.submit(node, out, now, &el.owner_wallet, body) {
                self.acks.insert(id.clone(), (tx, now));
            }
        }

        if !self.report_occupancy {
            return;
        }
        for el in topo.elements() {
            let id = &el.id;
            let actual = physical.occupancy.get(id);
            if state.occupancy_is.get(id) == actual || Self::busy(node, self.reports.get(id), now, self.retry_gap) {
                continue;
            }
            let body = TxBody::OccupancyReport(OccupancyPayload {
                element: id.clone(),
                train: actual.cloned(),
            });
            if let Some(tx) = self.submit(node, out, now, &el.owner_wallet, body) {
                self.reports.insert(id.clone(), (tx, now));
            }
        }
    }
}
