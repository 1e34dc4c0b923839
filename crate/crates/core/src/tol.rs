//! Numeric tolerances shared across modules, pinned in one place.

/// Probability-mass normalization slack for finite-support pmfs.
pub const PMF_SUM: f64 = 1e-12;

/// Agreement tolerance for quantities that are exact modulo f64
/// rounding: oracle vs. DP totals, forward vs. backward DP passes,
/// closed forms vs. DP values, lost-match inequalities on enumerated
/// instances.
pub const EXACT: f64 = 1e-12;

/// Slack applied when certifying a competitive-ratio bound: a report
/// passes iff `ratio >= bound - BOUND_MARGIN`.
pub const BOUND_MARGIN: f64 = 1e-9;

/// Sigma multiplier for Monte Carlo vs. exact comparisons.
pub const MC_SIGMA: f64 = 3.0;
