use thiserror::Error;

use crate::consensus::config::ConsensusMode;
use crate::consensus::proof::mine_pow;
use crate::contract::Gatekeeper;
use crate::crypto::{Digest, KeyPair};
use crate::ledger::{apply_tx, ChainRules, LedgerBlock, LedgerState, Proof, Transaction, TxFault};
use crate::types::{NodeId, Tick};

/// Upper bound on transactions per block; the remainder waits for the next one.
pub const MAX_BLOCK_TXS: usize = 512;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProposeError {
    #[error("{0} is not the eligible proposer at this tick")]
    NotProposer(NodeId),
}

#[derive(Debug, Clone)]
pub struct Proposal {
    /// Hashed block with a pending proof.
    pub block: LedgerBlock,
    /// State after folding the included transactions.
    pub state: LedgerState,
    /// Transactions left out because the fold rejected them, with the reason.
    pub excluded: Vec<(Digest, TxFault)>,
}

pub fn is_eligible(rules: &ChainRules, node: &NodeId, now: Tick) -> bool {
    let cfg = &rules.consensus;
    if !rules.registry.is_whitelisted(node) {
        return false;
    }
    match cfg.mode {
        ConsensusMode::Pow => true,
        ConsensusMode::Poa | ConsensusMode::Vote => {
            cfg.is_slot(now) && cfg.scheduled_proposer(&rules.proposer_order, now) == node
        }
    }
}

/// Builds the next block on `prev`. Pending transactions are folded left to
/// right; one that fails against the fold so far is excluded, not fatal.
pub fn propose_block(
    rules: &ChainRules,
    gate: &Gatekeeper<'_>,
    proposer: &NodeId,
    pending: &[&Transaction],
    prev: &LedgerBlock,
    state: &LedgerState,
    now: Tick,
) -> Result<Proposal, ProposeError> {
    if !is_eligible(rules, proposer, now) {
        return Err(ProposeError::NotProposer(proposer.clone()));
    }
    let mut next = state.clone();
    let mut included = Vec::new();
    let mut excluded = Vec::new();
    for tx in pending {
        if included.len() >= MAX_BLOCK_TXS {
            break;
        }
        match apply_tx(gate, &mut next, tx, now) {
            Ok(()) => included.push((*tx).clone()),
            Err(f) => excluded.push((tx.txid, f)),
        }
    }
    next.tick_of_head = now;
    let block = LedgerBlock::unsealed(
        prev.index + 1,
        prev.block_hash,
        now,
        proposer.clone(),
        included,
        rules.alg,
    );
    Ok(Proposal {
        block,
        state: next,
        excluded,
    })
}

/// Attaches a PoA signature or PoW nonce. Vote-mode blocks are sealed by
/// their collected votes instead.
pub fn seal(rules: &ChainRules, block: LedgerBlock, key: &KeyPair) -> LedgerBlock {
    let proof = match rules.consensus.mode {
        ConsensusMode::Poa => Proof::Poa {
            signature: key.sign(&block.block_hash.0),
        },
        ConsensusMode::Pow => Proof::Pow {
            nonce: mine_pow(rules.alg, &block.block_hash, rules.consensus.pow_difficulty_bits),
        },
        ConsensusMode::Vote => Proof::Pending,
    };
    block.with_proof(proof)
}
