//! Crate-wide error type.

use thiserror::Error;

use crate::instance::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The instance (or raw instance data) violates a model invariant.
    #[error("invalid instance:\n{0}")]
    InvalidInstance(ValidationReport),

    /// A parameter is outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The instance exceeds a state-space or enumeration guard.
    #[error("state-space guard: {detail} ({size} states/atoms)")]
    StateSpaceGuard { detail: String, size: u128 },

    /// An operation got a distribution family it does not support.
    #[error("unsupported distribution for this operation: {0}")]
    SchemeMismatch(String),

    /// The operation requires a deterministic policy.
    #[error("policy `{0}` is not deterministic")]
    NonDeterministicPolicy(String),

    /// A table-lookup policy was asked about a state that the solver
    /// never discovered. This means the simulation and the DP disagree
    /// about reachability, which is a bug.
    #[error("no table entry for state {state:#x} at step {step}: DP/simulation mismatch")]
    UnreachableState { step: usize, state: u64 },

    /// A policy returned an action outside the feasible set. Policies
    /// are trusted to respect the contract; a breach is a bug.
    #[error("policy `{policy}` broke its contract: {detail}")]
    PolicyContract { policy: String, detail: String },

    /// A pathwise coupling invariant failed during a run. Either the
    /// implementation is broken or the run is a counterexample to the
    /// invariant; the dump carries the full offending trace.
    #[error("coupling invariant violated: {0}")]
    CouplingInvariant(Box<InvariantViolation>),
}

/// Details of a failed pathwise trace invariant, with the trace
/// serialized as line-delimited JSON for dumping.
#[derive(Debug)]
pub struct InvariantViolation {
    /// Which invariant failed (e.g. "tau-injectivity").
    pub invariant: String,
    /// Human-readable description of the offending event.
    pub detail: String,
    /// Resource index (0-based) involved.
    pub resource: usize,
    /// Step (1-based) at which the violation was detected.
    pub step: usize,
    /// The full trace, one JSON record per step.
    pub trace_jsonl: String,
}

impl std::fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (resource {}, step {}): {}",
            self.invariant,
            self.resource + 1,
            self.step,
            self.detail
        )
    }
}
