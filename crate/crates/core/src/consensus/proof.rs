use thiserror::Error;

use crate::consensus::config::ConsensusMode;
use crate::consensus::vote::{evaluate_votes, Decision, VoteOutcome};
use crate::crypto::{Digest, HashAlg};
use crate::ledger::block::{LedgerBlock, Proof};
use crate::ledger::genesis::ChainRules;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProofError {
    #[error("proof kind does not match consensus mode")]
    WrongKind,
    #[error("proposer {0} is not eligible for this block")]
    NotProposer(String),
    #[error("proof-of-work nonce is not the first valid nonce")]
    BadWork,
    #[error("proposer signature does not verify")]
    BadSignature,
    #[error("vote set does not commit the block")]
    InsufficientVotes,
    #[error("malformed vote: {0}")]
    BadVote(String),
}

/// `hash(block_hash || nonce as 8 big-endian bytes)`.
pub fn pow_hash(alg: HashAlg, block_hash: &Digest, nonce: u64) -> Digest {
    alg.digest_parts(&[&block_hash.0, &nonce.to_be_bytes()])
}

pub fn pow_ok(alg: HashAlg, block_hash: &Digest, nonce: u64, difficulty_bits: u32) -> bool {
    pow_hash(alg, block_hash, nonce).leading_zero_bits() >= difficulty_bits
}

/// Smallest nonce meeting the difficulty. Searching upward from zero makes
/// the proof unique, so a tampered nonce is always detectable.
pub fn mine_pow(alg: HashAlg, block_hash: &Digest, difficulty_bits: u32) -> u64 {
    (0u64..)
        .find(|n| pow_ok(alg, block_hash, *n, difficulty_bits))
        .expect("nonce space is effectively unbounded")
}

pub fn verify_pow(alg: HashAlg, block_hash: &Digest, nonce: u64, difficulty_bits: u32) -> bool {
    pow_ok(alg, block_hash, nonce, difficulty_bits) && (0..nonce).all(|n| !pow_ok(alg, block_hash, n, difficulty_bits))
}

/// Checks the consensus proof of a non-genesis block.
pub fn verify_proof(rules: &ChainRules, block: &LedgerBlock) -> Result<(), ProofError> {
    let cfg = &rules.consensus;
    let proposer_ok = || -> Result<(), ProofError> {
        if !rules.registry.is_whitelisted(&block.proposer) {
            return Err(ProofError::NotProposer(block.proposer.to_string()));
        }
        Ok(())
    };
    let scheduled_ok = || -> Result<(), ProofError> {
        proposer_ok()?;
        if !cfg.is_slot(block.now) || cfg.scheduled_proposer(&rules.proposer_order, block.now) != &block.proposer {
            return Err(ProofError::NotProposer(block.proposer.to_string()));
        }
        Ok(())
    };
    match (cfg.mode, &block.proof) {
        (ConsensusMode::Pow, Proof::Pow { nonce }) => {
            proposer_ok()?;
            if !verify_pow(rules.alg, &block.block_hash, *nonce, cfg.pow_difficulty_bits) {
                return Err(ProofError::BadWork);
            }
            Ok(())
        }
        (ConsensusMode::Poa, Proof::Poa { signature }) => {
            scheduled_ok()?;
            let wallet = &rules
                .registry
                .node(&block.proposer)
                .expect("whitelisted node is registered")
                .wallet;
            if !rules.keyring.verify(wallet, &block.block_hash.0, signature) {
                return Err(ProofError::BadSignature);
            }
            Ok(())
        }
        (ConsensusMode::Vote, Proof::Votes { votes }) => {
            scheduled_ok()?;
            let mut voters = std::collections::BTreeSet::new();
            for v in votes {
                if !voters.insert(&v.voter) {
                    return Err(ProofError::BadVote(format!("duplicate voter {}", v.voter)));
                }
                if v.block_hash != block.block_hash {
                    return Err(ProofError::BadVote(format!("{} voted for another block", v.voter)));
                }
                let node = rules
                    .registry
                    .node(&v.voter)
                    .filter(|n| n.whitelisted)
                    .ok_or_else(|| ProofError::BadVote(format!("{} is not a validator", v.voter)))?;
                if !rules.keyring.verify(&node.wallet, &v.signing_bytes(), &v.signature) {
                    return Err(ProofError::BadVote(format!("bad signature from {}", v.voter)));
                }
            }
            // The proof carries only the yeas that committed the block.
            if votes.iter().any(|v| v.decision != Decision::Yea)
                || evaluate_votes(votes, cfg, rules.node_count()) != VoteOutcome::Committed
            {
                return Err(ProofError::InsufficientVotes);
            }
            Ok(())
        }
        _ => Err(ProofError::WrongKind),
    }
}
