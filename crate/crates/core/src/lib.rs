//! Deterministic discrete-event simulator for mobile ad-hoc networks.
//!
//! A run wires together random waypoint mobility, a log-normal shadowing
//! radio, an 802.11 DCF MAC and one of two routing agents (DSR for unicast,
//! BCAST for neighbor-knowledge broadcast), drives CBR group traffic through
//! it and reports packet delivery ratio, latency, normalized routing and MAC
//! load, and throughput. [`harness`] runs parameter sweeps over many seeds.

pub mod bcast;
pub mod config;
pub mod dsr;
pub mod engine;
pub mod error;
pub mod harness;
pub mod mac;
pub mod metrics;
pub mod mobility;
pub mod packet;
pub mod phy;
pub mod routing;
pub mod sim;
pub mod traffic;

#[cfg(test)]
mod testnet;

pub use config::{Protocol, ScenarioConfig};
pub use error::{ConfigError, SimError};
pub use harness::{run_sweep, SweepResult, SweepSpec};
pub use metrics::{MetricRow, MetricsLedger};
pub use sim::{run_scenario, RunReport, Simulator};
