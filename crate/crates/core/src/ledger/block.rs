use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::consensus::vote::Vote;
use crate::crypto::{Digest, HashAlg, Signature};
use crate::ledger::genesis::GenesisConfig;
use crate::ledger::tx::Transaction;
use crate::types::{NodeId, Tick};

/// Consensus evidence attached to a block. Never part of `block_hash`, since
/// every proof kind is itself computed over that hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Proof {
    Genesis,
    Pow {
        nonce: u64,
    },
    Poa {
        signature: Signature,
    },
    Votes {
        votes: Vec<Vote>,
    },
    /// A vote-mode proposal that has not collected its votes yet.
    Pending,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerBlock {
    pub index: u64,
    pub prev_hash: Digest,
    /// Ledger clock: the proposer's tick when the block was built.
    pub now: Tick,
    pub proposer: NodeId,
    pub tx_list: Vec<Transaction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genesis: Option<GenesisConfig>,
    pub proof: Proof,
    pub block_hash: Digest,
}

const UNHASHED: &[&str] = &["block_hash", "proof"];

pub const GENESIS_PROPOSER: &str = "genesis";

impl LedgerBlock {
    /// Builds a block with its hash filled in and a [`Proof::Pending`] proof.
    pub fn unsealed(
        index: u64,
        prev_hash: Digest,
        now: Tick,
        proposer: NodeId,
        tx_list: Vec<Transaction>,
        alg: HashAlg,
    ) -> Self {
        let mut b = LedgerBlock {
            index,
            prev_hash,
            now,
            proposer,
            tx_list,
            genesis: None,
            proof: Proof::Pending,
            block_hash: Digest::ZERO,
        };
        b.block_hash = b.computed_hash(alg);
        b
    }

    pub fn genesis(config: GenesisConfig) -> Self {
        let alg = config.hash_alg;
        let mut b = LedgerBlock {
            index: 0,
            prev_hash: Digest::ZERO,
            now: 0,
            proposer: NodeId::new(GENESIS_PROPOSER).expect("valid id"),
            tx_list: Vec::new(),
            genesis: Some(config),
            proof: Proof::Genesis,
            block_hash: Digest::ZERO,
        };
        b.block_hash = b.computed_hash(alg);
        b
    }

    pub fn with_proof(mut self, proof: Proof) -> Self {
        self.proof = proof;
        self
    }

    pub fn hashed_bytes(&self) -> Vec<u8> {
        canonical::to_bytes_without(self, UNHASHED)
    }

    pub fn computed_hash(&self, alg: HashAlg) -> Digest {
        alg.digest(&self.hashed_bytes())
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical::to_bytes(self)
    }

    pub fn canonical_line(&self) -> String {
        String::from_utf8(self.canonical_bytes()).expect("canonical output is UTF-8")
    }
}
