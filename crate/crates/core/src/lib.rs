//! Mobility mining over BTS location events.
//!
//! The crate reconstructs per-slot travel graphs from phone login/logout
//! events, runs a deterministic multi-agent pipeline over them, and labels
//! each inhabitant's travel as static, walking, public transport or private
//! car. A synthetic city simulator with ground truth is included for
//! evaluation.
//!
//! Pipeline, in order:
//!
//! - [`cdr`]: CDR text parsing, login/logout observations, transitions.
//! - [`topology`]: cells, adjacency, transit lines, speed bands.
//! - [`sim`]: seeded synthetic observation logs with ground truth.
//! - [`travel_graph`]: leveled multi-edge graphs built by coordination tasks.
//! - [`engine`]: personal, BTS, coordination and transit-manager agents.
//! - [`behavior`]: mode decisions, history store and mining.

pub mod behavior;
pub mod cdr;
pub mod cli;
pub mod config;
pub mod engine;
pub mod ids;
pub mod sim;
pub mod topology;
pub mod travel_graph;

pub use ids::{AgentId, CellId, LineId, Slot, Timestamp};
