//! Deterministic discrete-event simulator for fog/edge/IoT deployments.
//!
//! A run combines a [`topology::Topology`] (a tree of devices with sensors and
//! actuators at the leaves), an [`application::Application`] (a DAG of modules
//! joined by typed edges), and a [`placement::PlacementMap`] produced by a
//! placement policy. [`runtime::Simulation`] then drives tuples through the
//! placed system and [`metrics::MetricsReport`] summarizes loop latency,
//! network usage and energy.

pub mod application;
pub mod constants;
pub mod kernel;
pub mod metrics;
pub mod placement;
pub mod runtime;
pub mod scenarios;
pub mod topology;

pub use application::{build_application, parse_application_json, Application, ApplicationSpec};
pub use kernel::{Kernel, SimTime};
pub use metrics::MetricsReport;
pub use placement::{place_cloud_only, place_edge_ward, PlacementConstraints, PlacementMap, PlacementPolicy};
pub use runtime::{SimConfig, Simulation};
pub use scenarios::{run_scenario, Headset, ScenarioKind, ScenarioSpec};
pub use topology::{parse_topology_json, serialize_topology_json, PhysicalTopology, Topology};
