//! Packet-level discrete-event simulation of data center networks.
//!
//! The pieces, bottom up: [`sim`] is the event engine, [`topology`] builds
//! router graphs, [`routing`] computes shortest-path tables and per-flow
//! routes, [`netmodel`] moves packets through output queues, [`transport`]
//! runs NDP per flow, [`workload`] generates flows, [`telemetry`] collects
//! completion statistics and [`memory`] accounts for memory. [`simulation`]
//! wires them into one event handler and [`experiment`] runs a complete
//! configuration.

pub mod experiment;
pub mod memory;
pub mod netmodel;
pub mod routing;
pub mod sim;
pub mod simulation;
pub mod telemetry;
pub mod topology;
pub mod transport;
pub mod workload;

pub use experiment::{Experiment, ExperimentError, Prepared, Summary};
pub use routing::{materialize_route, PathPolicy, Route, RoutingError, RoutingTables};
pub use sim::{EventHandle, EventQueue, Handler, Scheduler, SimError, SimTime};
pub use simulation::{Event, RunStats, SimConfig, Simulation, StopReason};
pub use telemetry::{FctReport, Telemetry};
pub use topology::{FamilySpec, LinkParams, Topology, TopologyError, TopologySpec};
pub use transport::{FlowOutcome, NdpConfig};
pub use workload::{FlowSpec, Pattern, SizeDistribution, WorkloadSpec};
