//! Scheduling, estimation and control for wireless networked control systems.
//!
//! A set of linear plants is closed over shared lossy wireless links. Smart
//! sensors run steady-state Kalman filters and push estimates uplink; a remote
//! controller runs deadbeat predictive control and pushes command sequences
//! downlink. A scheduler decides, slot by slot, which links use which
//! frequencies. The crate provides:
//!
//! - [`model`]: plant matrices, deadbeat gains and steady-state filters
//! - [`network`]: channel model and action-space enumeration
//! - [`aoi`]: age-of-information state machine
//! - [`cost`]: closed-form per-step costs and a Monte Carlo oracle
//! - [`stability`]: stabilizability test over frequency assignments
//! - [`simulator`]: the full physical closed loop
//! - [`policies`]: benchmark schedulers
//! - [`mdp_vi`]: truncated MDP and value iteration
//! - [`dqn`]: deep Q-learning over the reduced action space

pub mod aoi;
pub mod cost;
pub mod dqn;
pub mod linalg;
pub mod mdp_vi;
pub mod model;
pub mod network;
pub mod policies;
pub mod simulator;
pub mod stability;

pub use aoi::{AoIState, LinkMode, WncsState};
pub use cost::CostEvaluator;
pub use model::{CostWeights, PlantModel};
pub use network::{Action, NetworkModel, ReducedAction, TransmissionOutcome};
pub use simulator::WncsSystem;
