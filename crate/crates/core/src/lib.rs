//! Topology- and fault-aware process placement on 3D tori, with a
//! Monte-Carlo batch simulator for comparing placement policies under
//! node failures.

pub mod comm_graph;
pub mod error;
pub mod fault;
pub mod placement;
pub mod simulator;
pub mod torus;

pub use comm_graph::{CommGraph, Communicator, EdgeWeight, Synthetic, TraceEvent, TrafficMatrix};
pub use error::{Error, Result};
pub use fault::{FaultScenario, HeartbeatLog, OutageEstimate, OutagePolicy};
pub use placement::{mapping_quality, place, Mapping, MappingQuality, PlacementOptions, PlacementPolicy};
pub use simulator::{simulate_batch, BatchConfig, BatchReport, JobSpec, Platform};
pub use torus::{NodeId, TopologyGraph, TorusDims, TorusTopology};
