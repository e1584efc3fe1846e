//! Hyperbolic random geometric graphs: sampling, graph construction, tree-subgraph counts and
//! the asymptotic theory for those counts.

// negated float comparisons are deliberate: they reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod census;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod graph;
pub mod params;
pub mod quadrature;
pub mod rng;
pub mod sampling;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};
pub use geometry::HyperbolicPoint;
pub use params::{ModelParams, RadiusRule};
pub use rng::RngStream;
pub use sampling::PointCloud;
