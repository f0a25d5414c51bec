use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::consensus::config::ConsensusConfig;
use crate::crypto::{Digest, KeyPair, Signature};
use crate::ledger::tx::TxFault;
use crate::types::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Yea,
    Nay,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vote {
    pub voter: NodeId,
    pub block_hash: Digest,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<TxFault>,
    pub signature: Signature,
}

impl Vote {
    pub fn new_signed(
        voter: NodeId,
        key: &KeyPair,
        block_hash: Digest,
        decision: Decision,
        reason: Option<TxFault>,
    ) -> Self {
        let mut v = Vote {
            voter,
            block_hash,
            decision,
            reason,
            signature: Signature::default(),
        };
        v.signature = key.sign(&v.signing_bytes());
        v
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        canonical::to_bytes_without(self, &["signature"])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteOutcome {
    Committed,
    Pending,
    Rejected,
}

/// Tallies one block's votes. Duplicate votes from one voter count once (first wins).
pub fn evaluate_votes(votes: &[Vote], config: &ConsensusConfig, node_count: u64) -> VoteOutcome {
    let mut by_voter: BTreeMap<&NodeId, Decision> = BTreeMap::new();
    for v in votes {
        by_voter.entry(&v.voter).or_insert(v.decision);
    }
    let yeas = by_voter.values().filter(|d| **d == Decision::Yea).count() as u64;
    let nays = by_voter.len() as u64 - yeas;
    let required = config.threshold.required(node_count);
    if yeas >= required {
        VoteOutcome::Committed
    } else if node_count.saturating_sub(nays) < required {
        VoteOutcome::Rejected
    } else {
        VoteOutcome::Pending
    }
}
