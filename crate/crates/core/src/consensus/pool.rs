use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::crypto::Digest;
use crate::ledger::Transaction;
use crate::types::{Tick, WalletAddress};

#[derive(Debug, Clone)]
pub struct PoolEntry {
    pub tx: Arc<Transaction>,
    pub arrival: Tick,
    /// Re-entered the pool from a branch that lost fork choice.
    pub reproposed: bool,
}

/// Pending transactions awaiting inclusion.
#[derive(Debug, Clone, Default)]
pub struct Pool {
    entries: BTreeMap<Digest, PoolEntry>,
}

impl Pool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, txid: &Digest) -> bool {
        self.entries.contains_key(txid)
    }

    pub fn get(&self, txid: &Digest) -> Option<&PoolEntry> {
        self.entries.get(txid)
    }

    pub fn insert(&mut self, entry: PoolEntry) -> bool {
        let id = entry.tx.txid;
        if self.entries.contains_key(&id) {
            return false;
        }
        self.entries.insert(id, entry);
        true
    }

    pub fn remove(&mut self, txid: &Digest) -> Option<PoolEntry> {
        self.entries.remove(txid)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PoolEntry> {
        self.entries.values()
    }

    /// Proposal order: by (arrival, txid), then each sender's transactions are
    /// re-sorted by nonce within the slots that sender occupies.
    pub fn ordered(&self) -> Vec<&PoolEntry> {
        let mut list: Vec<&PoolEntry> = self.entries.values().collect();
        list.sort_by_key(|e| (e.arrival, e.tx.txid));
        let mut by_sender: HashMap<&WalletAddress, Vec<usize>> = HashMap::new();
        for (i, e) in list.iter().enumerate() {
            by_sender.entry(&e.tx.sender).or_default().push(i);
        }
        let mut out = list.clone();
        for slots in by_sender.values() {
            let mut txs: Vec<&PoolEntry> = slots.iter().map(|i| list[*i]).collect();
            txs.sort_by_key(|e| (e.tx.nonce, e.tx.txid));
            for (slot, e) in slots.iter().zip(txs) {
                out[*slot] = e;
            }
        }
        out
    }
}
