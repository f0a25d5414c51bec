//! Append-only hash-chained log, genesis rules, derived state and chain files.

pub mod block;
pub mod chain;
pub mod genesis;
pub mod persist;
pub mod state;
pub mod tx;

pub use block::{LedgerBlock, Proof};
pub use chain::{
    apply_block, apply_tx, check_structure, check_successor, derive_state, verify_chain, AppendError, Chain,
    ReplayError,
};
pub use genesis::{Account, ChainRules, GenesisConfig, GenesisError, NodeRecord, Registry, SigCache, TrainRecord};
pub use state::{LedgerState, ReservationTable};
pub use tx::{Transaction, TxBody, TxFault};
