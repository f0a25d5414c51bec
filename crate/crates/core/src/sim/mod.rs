//! Scenario runner: builds a network of replicas from a scenario file and
//! drives nodes, trains and trackside twins tick by tick.

pub mod events;
pub mod metrics;
pub mod oracles;
pub mod physical;
pub mod random;
pub mod scenario;
pub mod twins;
pub mod world;

pub use events::{EventLog, LogRecord};
pub use metrics::RunMetrics;
pub use scenario::{Scenario, ScenarioError};
pub use world::{ApiError, Candidate, Journey, JourneyRequest, RunOutcome, World};
