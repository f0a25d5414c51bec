use std::sync::Arc;

use thiserror::Error;

use crate::consensus::proof::{verify_proof, ProofError};
use crate::contract::Gatekeeper;
use crate::crypto::Digest;
use crate::ledger::block::LedgerBlock;
use crate::ledger::genesis::{ChainRules, GenesisError, SigCache};
use crate::ledger::state::LedgerState;
use crate::ledger::tx::{Transaction, TxFault};
use crate::topology::Topology;
use crate::types::Tick;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AppendError {
    #[error("block index {got}, expected {expected}")]
    BadIndex { expected: u64, got: u64 },
    #[error("prev_hash does not match the head")]
    BrokenLink,
    #[error("block hash does not match its contents")]
    BadHash,
    #[error("bad proof: {0}")]
    BadProof(#[from] ProofError),
    #[error("transaction {0} fails integrity checks: {1}")]
    BadTx(usize, TxFault),
    #[error("block clock runs backwards")]
    BadClock,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error(transparent)]
    Genesis(#[from] GenesisError),
    #[error("block {block} transaction {tx} rejected on replay: {fault}")]
    Rejected { block: u64, tx: usize, fault: TxFault },
    #[error("chain does not verify; first failing block {0}")]
    Corrupt(usize),
}

/// Structural checks of `block` as the successor of `prev`: index, link,
/// clock, hash, transaction integrity and consensus proof.
pub fn check_successor(
    rules: &ChainRules,
    prev: &LedgerBlock,
    block: &LedgerBlock,
    cache: Option<&SigCache>,
) -> Result<(), AppendError> {
    check_structure(rules, prev, block, cache)?;
    verify_proof(rules, block)?;
    Ok(())
}

/// [`check_successor`] without the consensus proof, for blocks still collecting votes.
pub fn check_structure(
    rules: &ChainRules,
    prev: &LedgerBlock,
    block: &LedgerBlock,
    cache: Option<&SigCache>,
) -> Result<(), AppendError> {
    if block.index != prev.index + 1 {
        return Err(AppendError::BadIndex {
            expected: prev.index + 1,
            got: block.index,
        });
    }
    if block.prev_hash != prev.block_hash {
        return Err(AppendError::BrokenLink);
    }
    if block.now < prev.now {
        return Err(AppendError::BadClock);
    }
    if block.genesis.is_some() || block.computed_hash(rules.alg) != block.block_hash {
        return Err(AppendError::BadHash);
    }
    for (i, tx) in block.tx_list.iter().enumerate() {
        rules
            .check_tx_integrity(tx, cache)
            .map_err(|f| AppendError::BadTx(i, f))?;
    }
    Ok(())
}

/// Nonce check plus gatekeeper validation, then application in place.
pub fn apply_tx(gate: &Gatekeeper<'_>, state: &mut LedgerState, tx: &Transaction, now: Tick) -> Result<(), TxFault> {
    if state.last_nonce(&tx.sender).is_some_and(|n| tx.nonce <= n) {
        return Err(TxFault::StaleNonce);
    }
    gate.validate(state, tx, now)?;
    gate.apply_in_place(state, tx, now);
    state.nonces.insert(tx.sender.clone(), tx.nonce);
    Ok(())
}

/// Folds every transaction of `block` into `state`; fails on the first rejection.
pub fn apply_block(
    gate: &Gatekeeper<'_>,
    state: &LedgerState,
    block: &LedgerBlock,
) -> Result<LedgerState, (usize, TxFault)> {
    let mut next = state.clone();
    for (i, tx) in block.tx_list.iter().enumerate() {
        apply_tx(gate, &mut next, tx, block.now).map_err(|f| (i, f))?;
    }
    next.tick_of_head = block.now;
    Ok(next)
}

/// One linear branch of blocks. Cloning is cheap and appends never touch
/// the blocks already present.
#[derive(Debug, Clone, Default)]
pub struct Chain {
    blocks: Vec<Arc<LedgerBlock>>,
}

impl Chain {
    pub fn from_genesis(genesis: LedgerBlock) -> Self {
        Chain {
            blocks: vec![Arc::new(genesis)],
        }
    }

    /// Wraps blocks without any validation; see [`verify_chain`].
    pub fn from_blocks(blocks: Vec<LedgerBlock>) -> Self {
        Chain {
            blocks: blocks.into_iter().map(Arc::new).collect(),
        }
    }

    pub fn from_shared(blocks: Vec<Arc<LedgerBlock>>) -> Self {
        Chain { blocks }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Arc<LedgerBlock>] {
        &self.blocks
    }

    pub fn get(&self, index: usize) -> Option<&LedgerBlock> {
        self.blocks.get(index).map(|b| b.as_ref())
    }

    pub fn head(&self) -> Option<&LedgerBlock> {
        self.blocks.last().map(|b| b.as_ref())
    }

    pub fn head_hash(&self) -> Digest {
        self.head().map(|b| b.block_hash).unwrap_or(Digest::ZERO)
    }

    /// Returns a new chain with `block` appended after full structural checks.
    pub fn append_block(&self, block: LedgerBlock, rules: &ChainRules) -> Result<Chain, AppendError> {
        let prev = self.head().ok_or(AppendError::BrokenLink)?;
        check_successor(rules, prev, &block, None)?;
        let mut blocks = self.blocks.clone();
        blocks.push(Arc::new(block));
        Ok(Chain { blocks })
    }

    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for b in &self.blocks {
            out.push_str(&b.canonical_line());
            out.push('\n');
        }
        out
    }
}

/// Scans from genesis; returns the index of the first block whose link, hash,
/// transaction signatures or proof do not verify.
pub fn verify_chain(chain: &Chain) -> Result<(), usize> {
    let Some(genesis) = chain.get(0) else {
        return Err(0);
    };
    let rules = ChainRules::from_genesis(genesis).map_err(|_| 0usize)?;
    for i in 1..chain.len() {
        let prev = chain.get(i - 1).expect("in range");
        let block = chain.get(i).expect("in range");
        if block.index != i as u64 || check_successor(&rules, prev, block, None).is_err() {
            return Err(i);
        }
    }
    Ok(())
}

/// Replays the chain through the contract to the state at its head.
pub fn derive_state(chain: &Chain, topo: &Topology) -> Result<LedgerState, ReplayError> {
    verify_chain(chain).map_err(ReplayError::Corrupt)?;
    let genesis = chain.get(0).expect("verified chain has genesis");
    let rules = ChainRules::from_genesis(genesis)?;
    rules.check_topology(topo)?;
    let gate = Gatekeeper::new(topo, &rules.registry, &rules.contract);
    let mut state = LedgerState::from_genesis(&rules.genesis, topo);
    for block in chain.blocks().iter().skip(1) {
        state = apply_block(&gate, &state, block).map_err(|(tx, fault)| ReplayError::Rejected {
            block: block.index,
            tx,
            fault,
        })?;
    }
    Ok(state)
}
