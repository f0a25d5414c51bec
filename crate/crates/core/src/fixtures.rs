//! Canonical micro-topologies used by tests, examples and benchmarks.
//!
//! Every element is owned by the wallet derived from label `infra` under the
//! default Ed25519/SHA-256 configuration.

use std::collections::BTreeMap;

use crate::consensus::{mine_pow, ConsensusConfig, ConsensusMode, Decision, Vote};
use crate::contract::{fee_for, ContractRules, Gatekeeper};
use crate::crypto::{HashAlg, KeyPair, SigScheme};
use crate::ledger::tx::{OccupancyPayload, ReleasePayload, ReservePayload};
use crate::ledger::{
    Account, ChainRules, GenesisConfig, LedgerBlock, LedgerState, NodeRecord, Proof, TrainRecord, Transaction, TxBody,
};
use crate::topology::Topology;
use crate::types::{ElementId, NodeId, Tick, TimeWindow, TrainId, WalletAddress};

/// Owner wallet of every fixture element (`infra`, ed25519, sha256).
pub const INFRA_WALLET: &str = "663c626256135ed12e8c278c7a498562fb76204f";

/// B1 - B2 - B3, bidirectional, price 1 per tick each.
pub const TINY3: &str = r#"{"elements":[{"id":"B1","kind":"block","length_m":100,"price_per_tick":1,"owner_wallet":"663c626256135ed12e8c278c7a498562fb76204f"},{"id":"B2","kind":"block","length_m":100,"price_per_tick":1,"owner_wallet":"663c626256135ed12e8c278c7a498562fb76204f"},{"id":"B3","kind":"block","length_m":100,"price_per_tick":1,"owner_wallet":"663c626256135ed12e8c278c7a498562fb76204f"}],"edges":[{"from":"B1","to":"B2"},{"from":"B2","to":"B1"},{"from":"B2","to":"B3"},{"from":"B3","to":"B2"}]}"#;

/// B1 feeds switch S1; `left` leads to B2, `right` to B3.
pub const SWITCHY: &str = r#"{"elements":[{"id":"B1","kind":"block","length_m":100,"price_per_tick":1,"owner_wallet":"663c626256135ed12e8c278c7a498562fb76204f"},{"id":"S1","kind":"switch","length_m":30,"price_per_tick":2,"owner_wallet":"663c626256135ed12e8c278c7a498562fb76204f","positions":["left","right"],"default_position":"left"},{"id":"B2","kind":"block","length_m":100,"price_per_tick":1,"owner_wallet":"663c626256135ed12e8c278c7a498562fb76204f"},{"id":"B3","kind":"block","length_m":100,"price_per_tick":1,"owner_wallet":"663c626256135ed12e8c278c7a498562fb76204f"}],"edges":[{"from":"B1","to":"S1"},{"from":"S1","to":"B1"},{"from":"S1","to":"B2","required_position":"left"},{"from":"B2","to":"S1","required_position":"left"},{"from":"S1","to":"B3","required_position":"right"},{"from":"B3","to":"S1","required_position":"right"}]}"#;

/// B1 -> S1 -> {B2a, B2b} -> S2 -> B3, bidirectional. B2b is the shorter middle.
pub const DIAMOND: &str = r#"{"elements":[{"id":"B1","kind":"block","length_m":100,"price_per_tick":1,"owner_wallet":"663c626256135ed12e8c278c7a498562fb76204f"},{"id":"S1","kind":"switch","length_m":30,"price_per_tick":2,"owner_wallet":"663c626256135ed12e8c278c7a498562fb76204f","positions":["left","right"],"default_position":"left"},{"id":"B2a","kind":"block","length_m":150,"price_per_tick":1,"owner_wallet":"663c626256135ed12e8c278c7a498562fb76204f"},{"id":"B2b","kind":"block","length_m":100,"price_per_tick":1,"owner_wallet":"663c626256135ed12e8c278c7a498562fb76204f"},{"id":"S2","kind":"switch","length_m":30,"price_per_tick":2,"owner_wallet":"663c626256135ed12e8c278c7a498562fb76204f","positions":["left","right"],"default_position":"left"},{"id":"B3","kind":"block","length_m":100,"price_per_tick":1,"owner_wallet":"663c626256135ed12e8c278c7a498562fb76204f"}],"edges":[{"from":"B1","to":"S1"},{"from":"S1","to":"B1"},{"from":"S1","to":"B2a","required_position":"left"},{"from":"B2a","to":"S1","required_position":"left"},{"from":"S1","to":"B2b","required_position":"right"},{"from":"B2b","to":"S1","required_position":"right"},{"from":"B2a","to":"S2","required_position":"left"},{"from":"S2","to":"B2a","required_position":"left"},{"from":"B2b","to":"S2","required_position":"right"},{"from":"S2","to":"B2b","required_position":"right"},{"from":"S2","to":"B3"},{"from":"B3","to":"S2"}]}"#;

/// A genesis, its rules and a keyring of labelled wallets for tests and benches.
pub struct TestLedger {
    pub topo: Topology,
    pub genesis: LedgerBlock,
    pub rules: ChainRules,
    pub keys: BTreeMap<String, KeyPair>,
    nonces: BTreeMap<String, u64>,
}

impl TestLedger {
    /// `trains` are `(train id, balance)`; each train's wallet label equals its id.
    /// Nodes get wallets labelled by their id and zero balance.
    pub fn new(topology_json: &str, trains: &[(&str, u64)], nodes: &[&str], consensus: ConsensusConfig) -> Self {
        Self::with_rules(topology_json, trains, nodes, consensus, ContractRules::default())
    }

    pub fn with_rules(
        topology_json: &str,
        trains: &[(&str, u64)],
        nodes: &[&str],
        consensus: ConsensusConfig,
        rules: ContractRules,
    ) -> Self {
        let (scheme, alg) = (SigScheme::Ed25519, HashAlg::Sha256);
        let topo = Topology::from_slice(topology_json.as_bytes()).expect("fixture topology");
        let mut accounts = vec![Account::derive("infra", 0, scheme, alg)];
        let mut keys = BTreeMap::new();
        keys.insert("infra".to_string(), KeyPair::derive("infra", scheme, alg));
        let mut train_records = Vec::new();
        for (id, balance) in trains {
            let acct = Account::derive(id, *balance, scheme, alg);
            train_records.push(TrainRecord {
                id: TrainId::new(*id).expect("train id"),
                wallet: acct.address.clone(),
            });
            accounts.push(acct);
            keys.insert(id.to_string(), KeyPair::derive(id, scheme, alg));
        }
        let mut node_records = Vec::new();
        for id in nodes {
            let acct = Account::derive(id, 0, scheme, alg);
            node_records.push(NodeRecord {
                id: NodeId::new(*id).expect("node id"),
                wallet: acct.address.clone(),
                whitelisted: true,
            });
            accounts.push(acct);
            keys.insert(id.to_string(), KeyPair::derive(id, scheme, alg));
        }
        let genesis = LedgerBlock::genesis(GenesisConfig {
            hash_alg: alg,
            sig_scheme: scheme,
            topology_hash: topo.content_hash(alg),
            accounts,
            trains: train_records,
            nodes: node_records,
            consensus,
            rules,
        });
        let rules = ChainRules::from_genesis(&genesis).expect("fixture genesis");
        rules.check_topology(&topo).expect("fixture topology binding");
        TestLedger {
            topo,
            genesis,
            rules,
            keys,
            nonces: BTreeMap::new(),
        }
    }

    pub fn gate(&self) -> Gatekeeper<'_> {
        Gatekeeper::new(&self.topo, &self.rules.registry, &self.rules.contract)
    }

    pub fn initial_state(&self) -> LedgerState {
        LedgerState::from_genesis(&self.rules.genesis, &self.topo)
    }

    pub fn address(&self, label: &str) -> WalletAddress {
        self.keys[label].address().clone()
    }

    /// Signs `body` as `label` with the next nonce for that label.
    pub fn tx(&mut self, label: &str, body: TxBody) -> Transaction {
        let n = self.nonces.entry(label.to_string()).or_insert(0);
        *n += 1;
        Transaction::new_signed(&self.keys[label], *n, body, self.rules.alg)
    }

    /// Reserve body with the exact fee and the position a route would require.
    pub fn reserve(&self, train: &str, element: &str, start: Tick, end: Tick, position: Option<&str>) -> TxBody {
        let el = self
            .topo
            .element(&ElementId::new(element).expect("id"))
            .expect("element");
        let window = TimeWindow::new(start, end).expect("window");
        TxBody::Reserve(ReservePayload {
            train: TrainId::new(train).expect("id"),
            element: el.id.clone(),
            window,
            required_position: position.map(str::to_string),
            fee: fee_for(el.price_per_tick, &window),
        })
    }

    pub fn release(&self, train: &str, element: &str, start: Tick, end: Tick, rollback: bool) -> TxBody {
        TxBody::Release(ReleasePayload {
            train: TrainId::new(train).expect("id"),
            element: ElementId::new(element).expect("id"),
            window: TimeWindow::new(start, end).expect("window"),
            rollback,
            implicit: false,
        })
    }

    pub fn occupancy(&self, element: &str, train: Option<&str>) -> TxBody {
        TxBody::OccupancyReport(OccupancyPayload {
            element: ElementId::new(element).expect("id"),
            train: train.map(|t| TrainId::new(t).expect("id")),
        })
    }

    /// Builds and appends a block at `now` containing `txs`, sealed for the
    /// chain's consensus mode by the scheduled or first node.
    pub fn seal(&self, prev: &LedgerBlock, now: Tick, txs: Vec<Transaction>) -> LedgerBlock {
        let cfg = &self.rules.consensus;
        let proposer = cfg.scheduled_proposer(&self.rules.proposer_order, now).clone();
        let block = LedgerBlock::unsealed(
            prev.index + 1,
            prev.block_hash,
            now,
            proposer.clone(),
            txs,
            self.rules.alg,
        );
        let key = &self.keys[proposer.as_str()];
        let proof = match cfg.mode {
            ConsensusMode::Poa => Proof::Poa {
                signature: key.sign(&block.block_hash.0),
            },
            ConsensusMode::Pow => Proof::Pow {
                nonce: mine_pow(self.rules.alg, &block.block_hash, cfg.pow_difficulty_bits),
            },
            ConsensusMode::Vote => Proof::Votes {
                votes: self
                    .rules
                    .proposer_order
                    .iter()
                    .map(|n| Vote::new_signed(n.clone(), &self.keys[n.as_str()], block.block_hash, Decision::Yea, None))
                    .collect(),
            },
        };
        block.with_proof(proof)
    }
}
