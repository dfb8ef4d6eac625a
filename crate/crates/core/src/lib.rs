//! Randomized gossip averaging on sensor-network topologies.
//!
//! The crate is organised bottom-up:
//!
//! * [`topology`] builds the random geometric, grid and complete graphs.
//! * [`spectral`] holds averaging matrices, the expected matrix `E[W]` of a
//!   gossip design and the averaging-time bounds derived from its spectrum.
//! * [`protocols`] contains the per-tick update rules (pairwise, broadcast,
//!   geographic and path-averaging gossip) and greedy geographic routing.
//! * [`quantized`] has the quantizers and codecs used for finite-rate
//!   consensus together with a synchronous quantized consensus runner.
//! * [`engine`] drives asynchronous gossip, records traces and estimates
//!   empirical ε-averaging times.
//! * [`estimation`] and [`applications`] build distributed estimation,
//!   source localization and field compression on top of the engine.

pub mod applications;
pub mod engine;
mod error;
pub mod estimation;
pub mod protocols;
pub mod quantized;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod topology;

pub use engine::{
    AveragingTime, Gossip, GossipState, GossipTrace, InitialCondition, StopRule, TracePoint,
};
pub use error::{Error, Result};
pub use protocols::{Protocol, Route};
pub use quantized::{Quantization, UniformQuantizer};
pub use spectral::{AveragingMatrix, AveragingTimeBound, GossipDesign};
pub use topology::{Graph, GraphKind, NodePosition};
