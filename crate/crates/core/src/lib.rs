//! Core of a simulated railway control system in which trains book, pay for
//! and release track elements through a replicated append-only ledger.

pub mod agents;
pub mod canonical;
pub mod consensus;
pub mod contract;
pub mod crypto;
#[doc(hidden)]
pub mod fixtures;
pub mod ledger;
pub mod netsim;
pub mod routing;
pub mod sim;
pub mod topology;
pub mod types;

pub use contract::{Gatekeeper, RejectReason, Reservation};
pub use crypto::{Digest, HashAlg, KeyPair, SigScheme};
pub use ledger::{Chain, LedgerBlock, LedgerState, Transaction, TxBody};
pub use topology::Topology;
pub use types::{ElementId, NodeId, Tick, TimeWindow, TrainId, WalletAddress};
