//! Exit-code contract and error plumbing.
//!
//! 0 success; 1 validation or configuration problem; 2 unreadable or
//! malformed input; 3 state-space guard refusal; 4 internal-invariant
//! failure (a pathwise claim violation, a DP/simulation mismatch, or a
//! bound counterexample) — exit 4 output includes the offending trace
//! when one exists.

use rematch_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_GUARD: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
    /// Offending trace as line-delimited JSON, dumped on exit 4.
    pub trace_dump: Option<String>,
}

impl CliError {
    pub fn new(code: i32, message: String) -> Self {
        Self {
            code,
            message,
            trace_dump: None,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidInstance(_)
            | Error::InvalidParameter(_)
            | Error::SchemeMismatch(_)
            | Error::NonDeterministicPolicy(_) => EXIT_VALIDATION,
            Error::StateSpaceGuard { .. } => EXIT_GUARD,
            Error::UnreachableState { .. } | Error::PolicyContract { .. } => EXIT_INVARIANT,
            Error::CouplingInvariant(_) => EXIT_INVARIANT,
        };
        let trace_dump = match &e {
            Error::CouplingInvariant(v) => Some(v.trace_jsonl.clone()),
            _ => None,
        };
        Self {
            code,
            message: e.to_string(),
            trace_dump,
        }
    }
}
