//! Simulator for multi-hop mobile-edge-computing (MEC) networks.
//!
//! The crate models a time-slotted network of user equipments (UEs) and edge
//! servers hosting function-chain services. Packets are queued per commodity
//! (destination, service, stage), moved by per-slot control decisions, and
//! accounted for cost and delay. Three controllers are provided:
//!
//! - `mecnc`: a distributed drift-plus-penalty policy making joint task
//!   offloading, scheduling, and resource allocation decisions each slot;
//! - `oracle`: a stationary randomized policy sampled from a linear program
//!   that characterizes the capacity region of small discretized instances;
//! - `local`: all processing pinned to the UEs, wireless disabled.
//!
//! The [`harness`] module drives full runs and parameter sweeps; [`oracle`]
//! computes ground-truth throughput and cost optima for small instances.

pub mod config;
pub mod controller;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod queues;
pub mod simplex;
pub mod stochastic;

pub use config::InstanceConfig;
pub use model::{Commodity, Instance, ModelError};
