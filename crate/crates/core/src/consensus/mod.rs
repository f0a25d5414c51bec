//! Block production and replication: proposer eligibility, proof-of-work,
//! vote thresholds, per-node block trees, fork detection and resolution.

pub mod config;
pub mod message;
pub mod node;
pub mod pool;
pub mod proof;
pub mod propose;
pub mod tree;
pub mod vote;

pub use config::{ConsensusConfig, ConsensusMode, Fraction, Threshold};
pub use message::Message;
pub use node::{ForkInfo, Node, NodeEvent, NodeParams, Outbox, Target, TxStatus};
pub use proof::{mine_pow, verify_pow, verify_proof, ProofError};
pub use propose::{propose_block, seal, Proposal, ProposeError};
pub use tree::{better, BlockTree};
pub use vote::{evaluate_votes, Decision, Vote, VoteOutcome};
