//! A laboratory for online bipartite matching with reusable resources.
//!
//! An instance pairs a bipartite graph between `N` resources and `T`
//! arriving requests with a reward and an integer usage-duration
//! distribution per resource. Matching a resource earns its reward and
//! makes it unavailable for a random number of steps, after which it
//! returns and can be matched again.
//!
//! The crate computes, exactly and at desk scale:
//!
//! * the value of any deterministic policy and of the clairvoyant
//!   optimum (an adaptive benchmark that knows the arrival sequence but
//!   not the duration realizations), via finite-horizon dynamic
//!   programming ([`dp`]);
//! * coupled sample paths of a policy and the benchmark under shared
//!   randomness, with lost-match accounting ([`coupling`]);
//! * exact event probabilities by exhaustive enumeration of the
//!   randomness on tiny instances ([`oracle`]);
//! * batch certification of the greedy competitive-ratio bounds
//!   `1/(2-p)` and `(1+p)/2`, their approximate-greedy variants, and
//!   the proof-level lost-match inequalities ([`experiments`]).
//!
//! All numeric kernels are generic over the scalar type through
//! [`scalar::Real`]; the `*64` aliases at the crate root pin `f64`,
//! which is the precision every documented tolerance assumes.

pub mod coupling;
pub mod dp;
pub mod error;
pub mod experiments;
pub mod instance;
pub mod oracle;
pub mod policy;
pub mod scalar;
pub mod tol;
mod util;

pub use error::{Error, Result};
pub use scalar::Real;

/// `f64` instance, the default working precision.
pub type Instance64 = instance::Instance<f64>;
/// `f64` usage-duration distribution.
pub type UsageDistribution64 = instance::UsageDistribution<f64>;
/// `f64` clairvoyant value table.
pub type ValueTable64 = dp::ValueTable<f64>;
/// `f64` coupled trace.
pub type CoupledTrace64 = coupling::CoupledTrace<f64>;
/// `f64` Monte Carlo estimate report.
pub type EstimateReport64 = coupling::EstimateReport<f64>;
/// `f64` exact event table.
pub type ExactEventTable64 = oracle::ExactEventTable<f64>;
/// `f64` bound report.
pub type BoundReport64 = experiments::BoundReport<f64>;

/// `f32` instance, for callers that trade precision for footprint.
pub type Instance32 = instance::Instance<f32>;
