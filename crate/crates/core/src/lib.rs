//! Discrete-event simulator of a roadside V2I transaction service running on
//! a C-V2X mode-4 sidelink, with configurable acknowledgement batching.
//!
//! The crate models a bidirectional freeway with an RSU in the middle. The RSU
//! advertises a service (SAM), vehicles request usage (SUM) when they cross a
//! trigger line at the RSU, and the RSU answers with acknowledgements (ACK)
//! that address up to `batchsize` requesters each. Everything runs on a 1 ms
//! subframe clock over an abstracted PHY/MAC: log-distance path loss with
//! frozen per-link shadowing, SINR-based capture, half-duplex radios, blind
//! HARQ retransmission, sensing-based resource selection, and CBR-driven BSM
//! rate control.
//!
//! A run is fully determined by `(ScenarioConfig, seed)`; independent RNG
//! substreams keep mobility identical across batchsize sweeps so paired
//! comparisons are variance-reduced.

#![forbid(unsafe_code)]

pub mod config;
pub mod engine;
pub mod mac;
pub mod metrics;
pub mod mobility;
pub mod phy;
pub mod protocol;
pub mod rate_control;
pub mod rng;
pub mod sweep;
pub mod types;

pub use config::{default_scenario, parse_scenario, validate, ScenarioConfig};
pub use engine::{Runner, RunOptions};
pub use metrics::MetricsBundle;
pub use sweep::{sweep, SweepSpec};
pub use types::{NodeId, PacketId, TimeMs};
