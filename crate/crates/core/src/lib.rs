//! Deterministic discrete-event simulator for LOADng, the LOADng collection
//! tree extension and non-storing RPL over a lossy unit-disk radio with an
//! always-on CSMA MAC, driven by smart-metering traffic.
//!
//! A run is a pure function of its [`ScenarioConfig`] and seed.

pub mod ctp;
pub mod engine;
pub mod kernel;
pub mod loadng;
pub mod mac;
pub mod messages;
pub mod metrics;
pub mod packet;
pub mod radio;
pub mod rpl;
pub mod runner;
pub mod scenario;
pub mod sim;

pub use ctp::{CtpEngine, CtpParams};
pub use engine::{Action, Ctx, Note, RoutingEngine};
pub use kernel::{EventQueue, RandomStream, SimDuration, SimError, SimTime};
pub use loadng::{LoadngEngine, LoadngParams, RoutingSet, RoutingTuple};
pub use mac::MacParams;
pub use messages::{Address, MsgKind, RouteMsg, SeqNum};
pub use metrics::{aggregate, FateCounts, MetricsReport, Summary};
pub use radio::{Position, RadioParams};
pub use rpl::{RplEngine, RplParams};
pub use runner::{run_scenario, run_sweep, write_csv, RunError};
pub use scenario::{Backend, ConfigError, ScenarioConfig, SweepSpec, TrafficProfile};
pub use sim::Simulation;
