use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::contract::Reservation;
use crate::crypto::{Digest, HashAlg};
use crate::ledger::genesis::GenesisConfig;
use crate::topology::Topology;
use crate::types::{ElementId, Tick, TimeWindow, TrainId, WalletAddress};

/// Committed reservations indexed by element, then by window start.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReservationTable {
    by_element: BTreeMap<ElementId, BTreeMap<Tick, Reservation>>,
    len: usize,
}

impl ReservationTable {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Some committed reservation on `element` overlapping `window`, if any.
    pub fn first_conflict(&self, element: &ElementId, window: &TimeWindow) -> Option<&Reservation> {
        let slots = self.by_element.get(element)?;
        // Only the last reservation starting before `window.end` can overlap,
        // because committed windows on one element never overlap each other.
        slots
            .range(..window.end())
            .next_back()
            .map(|(_, r)| r)
            .filter(|r| r.window.overlaps(window))
    }

    /// Inserts without checking exclusivity; the gatekeeper does that.
    pub fn insert(&mut self, r: Reservation) {
        let slot = self.by_element.entry(r.element.clone()).or_default();
        if slot.insert(r.window.start(), r).is_none() {
            self.len += 1;
        }
    }

    pub fn find(&self, train: &TrainId, element: &ElementId, window: &TimeWindow) -> Option<&Reservation> {
        self.by_element
            .get(element)?
            .get(&window.start())
            .filter(|r| &r.train == train && &r.window == window)
    }

    pub fn remove(&mut self, train: &TrainId, element: &ElementId, window: &TimeWindow) -> Option<Reservation> {
        self.find(train, element, window)?;
        let slots = self.by_element.get_mut(element)?;
        let r = slots.remove(&window.start());
        if slots.is_empty() {
            self.by_element.remove(element);
        }
        self.len -= 1;
        r
    }

    /// Reservations on one element in start order.
    pub fn on_element<'a>(&'a self, element: &ElementId) -> impl Iterator<Item = &'a Reservation> + 'a {
        self.by_element.get(element).into_iter().flat_map(|m| m.values())
    }

    /// All reservations ordered by (element, start).
    pub fn iter(&self) -> impl Iterator<Item = &Reservation> {
        self.by_element.values().flat_map(|m| m.values())
    }

    pub fn for_train<'a>(&'a self, train: &'a TrainId) -> impl Iterator<Item = &'a Reservation> + 'a {
        self.iter().filter(move |r| &r.train == train)
    }
}

impl Serialize for ReservationTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for ReservationTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let list = Vec::<Reservation>::deserialize(d)?;
        let mut t = ReservationTable::default();
        for r in list {
            t.insert(r);
        }
        Ok(t)
    }
}

/// State derived by folding a chain through the contract.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerState {
    pub balances: BTreeMap<WalletAddress, u64>,
    pub reservations: ReservationTable,
    pub switch_should_be: BTreeMap<ElementId, String>,
    /// Physical switch positions as acknowledged by the switch twins.
    pub switch_is: BTreeMap<ElementId, String>,
    pub occupancy_is: BTreeMap<ElementId, TrainId>,
    pub nonces: BTreeMap<WalletAddress, u64>,
    pub tick_of_head: Tick,
}

impl LedgerState {
    pub fn from_genesis(g: &GenesisConfig, topo: &Topology) -> Self {
        let mut s = LedgerState::default();
        for a in &g.accounts {
            *s.balances.entry(a.address.clone()).or_default() += a.balance;
        }
        for el in topo.elements().filter(|e| e.is_switch()) {
            let default = el.default_position.clone().expect("switch has a default");
            s.switch_should_be.insert(el.id.clone(), default.clone());
            s.switch_is.insert(el.id.clone(), default);
        }
        s
    }

    pub fn balance(&self, wallet: &WalletAddress) -> u64 {
        self.balances.get(wallet).copied().unwrap_or(0)
    }

    pub fn last_nonce(&self, wallet: &WalletAddress) -> Option<u64> {
        self.nonces.get(wallet).copied()
    }

    /// Moves `amount` between wallets. Callers guarantee sufficient funds.
    pub fn move_funds(&mut self, from: &WalletAddress, to: &WalletAddress, amount: u64) {
        let src = self.balances.entry(from.clone()).or_default();
        *src = src.checked_sub(amount).expect("validated balance");
        *self.balances.entry(to.clone()).or_default() += amount;
    }

    pub fn total_balance(&self) -> u128 {
        self.balances.values().map(|b| *b as u128).sum()
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical::to_bytes(self)
    }

    pub fn state_hash(&self, alg: HashAlg) -> Digest {
        alg.digest(&self.canonical_bytes())
    }
}
