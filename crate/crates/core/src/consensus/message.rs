use std::sync::Arc;

use crate::consensus::vote::Vote;
use crate::crypto::Digest;
use crate::ledger::{LedgerBlock, Transaction};
use crate::netsim::MessageKind;

/// Node-to-node wire messages. Payloads are shared, never mutated in flight.
#[derive(Debug, Clone)]
pub enum Message {
    TxGossip {
        txs: Vec<Arc<Transaction>>,
    },
    /// A vote-mode block awaiting votes.
    BlockProposal {
        block: Arc<LedgerBlock>,
    },
    Vote {
        vote: Vote,
    },
    BlockCommit {
        block: Arc<LedgerBlock>,
    },
    /// `locator` lists hashes along the requester's head branch, newest first,
    /// thinning out exponentially; the first entry is the requester's head.
    ChainRequest {
        locator: Vec<Digest>,
        head_height: u64,
    },
    ChainResponse {
        blocks: Vec<Arc<LedgerBlock>>,
    },
}

impl MessageKind for Message {
    fn kind(&self) -> &'static str {
        match self {
            Message::TxGossip { .. } => "TxGossip",
            Message::BlockProposal { .. } => "BlockProposal",
            Message::Vote { .. } => "Vote",
            Message::BlockCommit { .. } => "BlockCommit",
            Message::ChainRequest { .. } => "ChainRequest",
            Message::ChainResponse { .. } => "ChainResponse",
        }
    }
}

pub const MESSAGE_KINDS: [&str; 6] = [
    "TxGossip",
    "BlockProposal",
    "Vote",
    "BlockCommit",
    "ChainRequest",
    "ChainResponse",
];
