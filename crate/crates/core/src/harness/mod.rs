//! Offline tooling: scripted scenarios, log replay, purification corpus and
//! savings reports.

pub mod corpus;
pub mod replay;
pub mod report;
pub mod scenario;
pub mod simulate;

pub use replay::{replay, replay_file, Divergence, ReplayReport};
pub use report::SavingsTable;
pub use scenario::{case_study_report, Scenario, StepTemplate};
pub use simulate::{simulate, SimBackend, SimulationError, SimulationReport};
