use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::config::ConsensusConfig;
use crate::contract::ContractRules;
use crate::crypto::{Digest, HashAlg, KeyPair, KeyRing, SigScheme};
use crate::ledger::block::{LedgerBlock, Proof};
use crate::ledger::tx::{Transaction, TxFault};
use crate::topology::Topology;
use crate::types::{NodeId, TrainId, WalletAddress};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Account {
    pub label: String,
    pub address: WalletAddress,
    pub public_key: String,
    pub balance: u64,
}

impl Account {
    pub fn derive(label: &str, balance: u64, scheme: SigScheme, alg: HashAlg) -> Self {
        let kp = KeyPair::derive(label, scheme, alg);
        Account {
            label: label.to_string(),
            address: kp.address().clone(),
            public_key: hex::encode(kp.public_key()),
            balance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRecord {
    pub id: TrainId,
    pub wallet: WalletAddress,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: NodeId,
    pub wallet: WalletAddress,
    pub whitelisted: bool,
}

/// Payload of block 0: initial allocations, identity registries and the
/// rules every replica must agree on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenesisConfig {
    pub hash_alg: HashAlg,
    pub sig_scheme: SigScheme,
    pub topology_hash: Digest,
    pub accounts: Vec<Account>,
    pub trains: Vec<TrainRecord>,
    pub nodes: Vec<NodeRecord>,
    pub consensus: ConsensusConfig,
    #[serde(default)]
    pub rules: ContractRules,
}

impl GenesisConfig {
    pub fn total_allocation(&self) -> u128 {
        self.accounts.iter().map(|a| a.balance as u128).sum()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GenesisError {
    #[error("block 0 is not a genesis block")]
    NotGenesis,
    #[error("invalid genesis: {0}")]
    Invalid(String),
    #[error("genesis is bound to topology {expected}, got {actual}")]
    TopologyMismatch { expected: Digest, actual: Digest },
}

/// Train and node identities from genesis.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    trains: BTreeMap<TrainId, WalletAddress>,
    wallet_trains: BTreeMap<WalletAddress, TrainId>,
    nodes: BTreeMap<NodeId, NodeRecord>,
    wallet_nodes: BTreeMap<WalletAddress, NodeId>,
}

impl Registry {
    pub fn new(trains: &[TrainRecord], nodes: &[NodeRecord]) -> Result<Self, String> {
        let mut r = Registry::default();
        for t in trains {
            if r.trains.insert(t.id.clone(), t.wallet.clone()).is_some() {
                return Err(format!("duplicate train {}", t.id));
            }
            if r.wallet_trains.insert(t.wallet.clone(), t.id.clone()).is_some() {
                return Err(format!("wallet {} bound to two trains", t.wallet));
            }
        }
        for n in nodes {
            if r.nodes.insert(n.id.clone(), n.clone()).is_some() {
                return Err(format!("duplicate node {}", n.id));
            }
            if r.wallet_nodes.insert(n.wallet.clone(), n.id.clone()).is_some() {
                return Err(format!("wallet {} bound to two nodes", n.wallet));
            }
        }
        Ok(r)
    }

    pub fn train_wallet(&self, train: &TrainId) -> Option<&WalletAddress> {
        self.trains.get(train)
    }

    pub fn wallet_train(&self, wallet: &WalletAddress) -> Option<&TrainId> {
        self.wallet_trains.get(wallet)
    }

    pub fn trains(&self) -> impl Iterator<Item = (&TrainId, &WalletAddress)> {
        self.trains.iter()
    }

    pub fn node(&self, id: &NodeId) -> Option<&NodeRecord> {
        self.nodes.get(id)
    }

    pub fn is_whitelisted(&self, id: &NodeId) -> bool {
        self.nodes.get(id).is_some_and(|n| n.whitelisted)
    }

    /// True for wallets of whitelisted nodes; only those may sign implicit releases.
    pub fn is_node_wallet(&self, wallet: &WalletAddress) -> bool {
        self.wallet_nodes.get(wallet).is_some_and(|id| self.is_whitelisted(id))
    }

    /// Whitelisted validators, sorted.
    pub fn whitelisted(&self) -> Vec<NodeId> {
        self.nodes
            .values()
            .filter(|n| n.whitelisted)
            .map(|n| n.id.clone())
            .collect()
    }
}

/// Everything a replica needs to check blocks and transactions, derived from
/// the genesis block alone.
#[derive(Debug)]
pub struct ChainRules {
    pub alg: HashAlg,
    pub scheme: SigScheme,
    pub keyring: KeyRing,
    pub registry: Registry,
    pub consensus: ConsensusConfig,
    pub contract: ContractRules,
    pub topology_hash: Digest,
    pub genesis_hash: Digest,
    pub proposer_order: Vec<NodeId>,
    pub genesis: GenesisConfig,
}

impl ChainRules {
    pub fn from_genesis(block: &LedgerBlock) -> Result<Self, GenesisError> {
        let g = match (&block.genesis, &block.proof) {
            (Some(g), Proof::Genesis)
                if block.index == 0 && block.prev_hash == Digest::ZERO && block.tx_list.is_empty() =>
            {
                g
            }
            _ => return Err(GenesisError::NotGenesis),
        };
        if block.computed_hash(g.hash_alg) != block.block_hash {
            return Err(GenesisError::Invalid("genesis hash mismatch".into()));
        }
        let invalid = |m: String| GenesisError::Invalid(m);
        let mut keyring = KeyRing::default();
        let mut seen = BTreeMap::new();
        for a in &g.accounts {
            if seen.insert(a.address.clone(), ()).is_some() {
                return Err(invalid(format!("duplicate account {}", a.address)));
            }
            keyring
                .register(&a.label, &a.address, &a.public_key, g.sig_scheme, g.hash_alg)
                .map_err(|e| invalid(format!("account {}: {e}", a.label)))?;
        }
        for t in &g.trains {
            if !keyring.contains(&t.wallet) {
                return Err(invalid(format!("train {} wallet has no account", t.id)));
            }
        }
        for n in &g.nodes {
            if !keyring.contains(&n.wallet) {
                return Err(invalid(format!("node {} wallet has no account", n.id)));
            }
        }
        let registry = Registry::new(&g.trains, &g.nodes).map_err(invalid)?;
        let whitelisted = registry.whitelisted();
        g.consensus.validate(&whitelisted).map_err(invalid)?;
        let proposer_order = g.consensus.proposer_order(&whitelisted);
        Ok(ChainRules {
            alg: g.hash_alg,
            scheme: g.sig_scheme,
            keyring,
            registry,
            consensus: g.consensus.clone(),
            contract: g.rules.clone(),
            topology_hash: g.topology_hash,
            genesis_hash: block.block_hash,
            proposer_order,
            genesis: g.clone(),
        })
    }

    /// Checks that `topo` is the topology this chain was created for, and that
    /// every wallet that must sign for an element has an account.
    pub fn check_topology(&self, topo: &Topology) -> Result<(), GenesisError> {
        let actual = topo.content_hash(self.alg);
        if actual != self.topology_hash {
            return Err(GenesisError::TopologyMismatch {
                expected: self.topology_hash,
                actual,
            });
        }
        let element_reports = self.contract.occupancy_reporter == crate::contract::OccupancyReporter::Element;
        for el in topo.elements() {
            if (el.is_switch() || element_reports) && !self.keyring.contains(&el.owner_wallet) {
                return Err(GenesisError::Invalid(format!(
                    "owner wallet of {} has no account",
                    el.id
                )));
            }
        }
        Ok(())
    }

    /// Ledger-level integrity: txid, known sender, signature.
    pub fn check_tx_integrity(&self, tx: &Transaction, cache: Option<&SigCache>) -> Result<(), TxFault> {
        if tx.computed_txid(self.alg) != tx.txid {
            return Err(TxFault::BadTxid);
        }
        if !self.keyring.contains(&tx.sender) {
            return Err(TxFault::UnknownSender);
        }
        if let Some(c) = cache {
            if c.is_known(&tx.txid, &tx.signature.0) {
                return Ok(());
            }
        }
        if !self.keyring.verify(&tx.sender, &tx.signing_bytes(), &tx.signature) {
            return Err(TxFault::BadSignature);
        }
        if let Some(c) = cache {
            c.remember(tx.txid, &tx.signature.0);
        }
        Ok(())
    }

    pub fn node_count(&self) -> u64 {
        self.proposer_order.len() as u64
    }
}

/// Remembers (txid, signature) pairs that already verified, so re-validating
/// the pool after every head change does not redo signature checks.
#[derive(Debug, Default)]
pub struct SigCache {
    verified: Mutex<HashMap<Digest, Vec<u8>>>,
}

impl SigCache {
    fn is_known(&self, txid: &Digest, sig: &[u8]) -> bool {
        self.verified
            .lock()
            .expect("sig cache lock")
            .get(txid)
            .is_some_and(|s| s == sig)
    }

    fn remember(&self, txid: Digest, sig: &[u8]) {
        self.verified.lock().expect("sig cache lock").insert(txid, sig.to_vec());
    }
}
