//! Simulation of the deployed three-node link.

pub mod coincidence;
pub mod detection;
pub mod drift;
pub mod engine;
pub mod topology;

pub use coincidence::{triple_coincidence, BobClick, BobRecord, CharlieRecord, CoincidenceOutcome, CoincidenceRecord};
pub use detection::{sample_detection, window_acceptance, Click, SlotGeometry};
pub use drift::{DriftKind, DriftParams, DriftProcess};
pub use engine::{
    run_events, run_windows, Actuation, Cell, Controller, DriftConfig, EventLog, Hardware, PulseSlotRecord, RunOptions,
    RunOutput, Scenario, WindowObservation, WindowSummary,
};
pub use topology::{Node, NodeTopology};
