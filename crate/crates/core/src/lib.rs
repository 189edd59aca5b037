//! Fisher information and Cramér-Rao bounds for flow size distribution
//! estimation from sampled packet traffic.
//!
//! The sampling methods (packet sampling with and without SYN discarding and
//! sequence number inference, flow sampling, sample and hold, dual sampling)
//! are described by their sampling matrices in [`sampmat`]. [`fisher`]
//! evaluates the information matrix and its constrained inverse,
//! [`normalize`] puts methods on an equal sampling budget and [`compare`]
//! ranks them. [`simulate`] and [`estimate`] provide a Monte Carlo path and
//! the closed-form estimators; [`rsrcopt`] picks the dual sampling operating
//! point for a router.

pub mod compare;
pub mod error;
pub mod estimate;
pub mod fisher;
pub mod flowdist;
pub mod normalize;
pub mod rsrcopt;
pub mod sampmat;
pub mod simulate;

pub use error::{Error, Result};
pub use flowdist::{FlowPopulation, FlowSizeDistribution};
pub use normalize::{NormKind, NormalizationSpec};
pub use sampmat::{Method, MethodSpec, SamplingMatrix};
