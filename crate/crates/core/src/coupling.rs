//! Coupled sample paths of a primary policy and a benchmark policy on
//! shared randomness, with lost-match accounting.
//!
//! Two coupling mechanisms are provided:
//!
//! * **Stack coupling** (any distributions): whenever the primary
//!   matches a resource it draws a fresh duration, uses it, and pushes
//!   it onto the resource's stack; whenever the benchmark matches a
//!   resource it pops that stack (LIFO) and uses the popped value,
//!   drawing fresh only when the stack is empty. When both policies
//!   match the same resource in the same step, one shared draw serves
//!   both and nothing is pushed.
//! * **Shared-Bernoulli coupling** (geometric only): every (resource,
//!   step) has one return indicator `P_{i,t} ~ Bern(p_i)`; a busy
//!   resource returns at the start of step `t` iff `P_{i,t} = 1`, in
//!   both systems.
//!
//! Within a step the order is fixed: returns, then decisions, then
//! duration assignment, then recording. Every random draw is addressed
//! by `(stream, purpose, resource, step, slot)` through a counter-based
//! generator, so a trace is a pure function of `(instance, policies,
//! scheme, seed)` and the realizations do not depend on which system
//! queries them first.
//!
//! Each finished trace is checked against two pathwise laws before it
//! is returned: distinct lost matches on one resource must be charged
//! to distinct earlier primary matches (tau-injectivity), and under the
//! Bernoulli coupling a step where both policies matched the resource
//! can never be the charge of a later lost match. A violation is
//! reported as an error carrying the full trace; it means either a bug
//! or a counterexample, and both deserve noise.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, InvariantViolation, Result};
use crate::instance::{Instance, ResourceStatus, SystemState, UsageDistribution};
use crate::policy::{Action, Policy};
use crate::scalar::Real;
use crate::util::mean_and_std_error;

/// Which sample-path coupling drives the shared randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingScheme {
    Stack,
    Bernoulli,
}

impl std::fmt::Display for CouplingScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CouplingScheme::Stack => write!(f, "stack"),
            CouplingScheme::Bernoulli => write!(f, "bernoulli"),
        }
    }
}

// ---------------------------------------------------------------------------
// Addressed randomness.
// ---------------------------------------------------------------------------

/// Draw purposes; part of every draw's address.
pub mod draw_tag {
    /// Return indicators `P_{i,t}`.
    pub const RETURN: u64 = 0x52455455;
    /// Usage-duration draws.
    pub const DURATION: u64 = 0x44555241;
}

/// Counter-based uniform generator: every draw is a pure function of
/// `(seed, stream, tag, resource, step, slot)`. No sequential state, so
/// realizations are identical no matter who queries them or in what
/// order.
#[derive(Clone, Copy, Debug)]
pub struct RandomSource {
    seed: u64,
    stream: u64,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Independent stream `stream` under the same seed; Monte Carlo run
    /// `k` uses stream `k`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)` at the given address.
    pub fn uniform(&self, tag: u64, resource: u64, step: u64, slot: u64) -> f64 {
        let mut acc = self.seed;
        for word in [self.stream, tag, resource, step, slot] {
            acc = mix64(acc.wrapping_add(0x9e3779b97f4a7c15).wrapping_add(word));
        }
        // 53 high-quality bits into [0, 1).
        (acc >> 11) as f64 * (1.0 / 9007199254740992.0)
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Randomness a coupled run consumes. The simulator is backed by
/// [`RandomSource`]; the exact oracle substitutes exhaustive drivers.
pub(crate) trait CouplingDraws<F: Real> {
    /// Shared return indicator `P_{i,t}` (Bernoulli scheme).
    /// Must be idempotent: both systems may query the same address.
    fn return_indicator(&mut self, resource: usize, step: usize, p: F) -> bool;

    /// Duration draw at `(resource, step, slot)` (stack scheme). Slot 0
    /// is the shared/primary draw, slot 1 the benchmark's fresh draw;
    /// each address is consumed at most once per run.
    fn duration(
        &mut self,
        dist: &UsageDistribution<F>,
        resource: usize,
        step: usize,
        slot: u64,
        cap: u32,
    ) -> u32;
}

pub(crate) struct SourceDraws(pub RandomSource);

impl<F: Real> CouplingDraws<F> for SourceDraws {
    fn return_indicator(&mut self, resource: usize, step: usize, p: F) -> bool {
        let u = self
            .0
            .uniform(draw_tag::RETURN, resource as u64, step as u64, 0);
        F::from_f64_lossy(u) < p
    }

    fn duration(
        &mut self,
        dist: &UsageDistribution<F>,
        resource: usize,
        step: usize,
        slot: u64,
        cap: u32,
    ) -> u32 {
        let u = self
            .0
            .uniform(draw_tag::DURATION, resource as u64, step as u64, slot);
        dist.sample(u, cap)
    }
}

// ---------------------------------------------------------------------------
// Trace records.
// ---------------------------------------------------------------------------

/// A lost match: the benchmark matched `resource` while every resource
/// of equal or higher index was unavailable under the primary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LostMatch<F> {
    /// Resource the benchmark matched.
    pub resource: usize,
    /// Last step at which the primary matched it (0 = never; cannot
    /// happen for a genuine lost match).
    pub tau: usize,
    pub reward: F,
}

/// One step of a coupled run. Availability and return sets are bitmasks
/// over resources (bit `i` = resource `i`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord<F> {
    /// 1-based step.
    pub t: usize,
    /// `I_t`: available under the primary after returns.
    pub primary_available: u32,
    /// `I*_t`: available under the benchmark after returns.
    pub benchmark_available: u32,
    /// Resources that returned to the primary at the start of this step.
    pub primary_returns: u32,
    pub benchmark_returns: u32,
    pub primary_action: Action,
    pub benchmark_action: Action,
    /// Present iff the benchmark's match was a lost match.
    pub lost: Option<LostMatch<F>>,
    /// `Some(i)` iff both policies matched resource `i` this step.
    pub coincidence: Option<usize>,
}

impl<F: Real> StepRecord<F> {
    /// Blocking event `O_{it}`: every resource `j >= i` unavailable
    /// under the primary at this step.
    pub fn o_event(&self, i: usize, n: usize) -> bool {
        let high = !((1u32 << i) - 1) & ((1u32 << n) - 1);
        self.primary_available & high == 0
    }
}

fn mask_to_indices(mask: u32) -> Vec<usize> {
    (0..32).filter(|i| mask & (1 << i) != 0).collect()
}

/// Totals accumulated over one coupled run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct TraceTotals<F> {
    pub primary_reward: F,
    pub benchmark_reward: F,
    /// Total reward of lost matches.
    pub lost: F,
    /// `sum_t r*(I_t)` under the primary.
    pub primary_rstar_sum: F,
    /// Reward collected on steps where both policies matched the same
    /// resource.
    pub coincidence_reward: F,
}

/// Full record of one coupled run; a pure function of
/// `(instance, policies, scheme, seed, stream)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledTrace<F> {
    pub scheme: CouplingScheme,
    pub seed: u64,
    pub stream: u64,
    pub n: usize,
    pub steps: Vec<StepRecord<F>>,
    pub totals: TraceTotals<F>,
}

#[derive(Serialize)]
struct StepJson<'a, F> {
    t: usize,
    primary_available: Vec<usize>,
    benchmark_available: Vec<usize>,
    primary_returns: Vec<usize>,
    benchmark_returns: Vec<usize>,
    primary_action: &'a Action,
    benchmark_action: &'a Action,
    lost: &'a Option<LostMatch<F>>,
    coincidence: &'a Option<usize>,
}

impl<F: Real + Serialize> CoupledTrace<F> {
    /// One JSON record per step, newline-delimited.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            let record = StepJson {
                t: s.t,
                primary_available: mask_to_indices(s.primary_available),
                benchmark_available: mask_to_indices(s.benchmark_available),
                primary_returns: mask_to_indices(s.primary_returns),
                benchmark_returns: mask_to_indices(s.benchmark_returns),
                primary_action: &s.primary_action,
                benchmark_action: &s.benchmark_action,
                lost: &s.lost,
                coincidence: &s.coincidence,
            };
            out.push_str(&serde_json::to_string(&record).expect("step record serializes"));
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// The coupled step machine.
// ---------------------------------------------------------------------------

struct SystemRuntime {
    available: Vec<bool>,
    /// Step at whose start the resource returns (stack scheme).
    return_at: Vec<usize>,
    /// Last step the system matched the resource (0 = never).
    matched_at: Vec<usize>,
}

impl SystemRuntime {
    fn new(n: usize) -> Self {
        Self {
            available: vec![true; n],
            return_at: vec![0; n],
            matched_at: vec![0; n],
        }
    }

    fn mask(&self) -> u32 {
        self.available
            .iter()
            .enumerate()
            .fold(0, |m, (i, &a)| if a { m | (1 << i) } else { m })
    }

    fn state_at(&self, t: usize) -> SystemState {
        let mut state = SystemState::all_available(self.available.len());
        for i in 0..self.available.len() {
            if !self.available[i] {
                state.set_status(
                    i,
                    ResourceStatus::Busy {
                        age: (t - self.matched_at[i]) as u32,
                    },
                );
            }
        }
        state
    }
}

fn decide_checked<F: Real>(
    policy: &dyn Policy<F>,
    t: usize,
    incident: &[usize],
    state: &SystemState,
    instance: &Instance<F>,
) -> Result<Action> {
    let action = policy.decide(t, incident, state, instance)?;
    if let Action::Match { resource } = action {
        if !state.is_available(resource) || !incident.contains(&resource) {
            return Err(Error::PolicyContract {
                policy: policy.name().to_string(),
                detail: format!(
                    "matched resource {} at step {t} outside the feasible set",
                    resource + 1
                ),
            });
        }
    }
    Ok(action)
}

pub(crate) fn run_coupled<F: Real + Serialize>(
    instance: &Instance<F>,
    primary: &dyn Policy<F>,
    benchmark: &dyn Policy<F>,
    scheme: CouplingScheme,
    draws: &mut dyn CouplingDraws<F>,
    seed: u64,
    stream: u64,
) -> Result<CoupledTrace<F>> {
    let n = instance.n();
    let horizon = instance.horizon();
    let cap = horizon as u32 + 1;

    let mut prim = SystemRuntime::new(n);
    let mut bench = SystemRuntime::new(n);
    let mut stacks: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut steps: Vec<StepRecord<F>> = Vec::with_capacity(horizon);
    let mut totals = TraceTotals::<F> {
        primary_reward: F::zero(),
        benchmark_reward: F::zero(),
        lost: F::zero(),
        primary_rstar_sum: F::zero(),
        coincidence_reward: F::zero(),
    };

    for t in 1..=horizon {
        // 1. Returns, shared randomness per scheme.
        let mut primary_returns = 0u32;
        let mut benchmark_returns = 0u32;
        match scheme {
            CouplingScheme::Bernoulli => {
                for i in 0..n {
                    let p = instance.resource(i).dist.pr_one();
                    if !prim.available[i] && draws.return_indicator(i, t, p) {
                        prim.available[i] = true;
                        primary_returns |= 1 << i;
                    }
                    if !bench.available[i] && draws.return_indicator(i, t, p) {
                        bench.available[i] = true;
                        benchmark_returns |= 1 << i;
                    }
                }
            }
            CouplingScheme::Stack => {
                for i in 0..n {
                    if !prim.available[i] && prim.return_at[i] == t {
                        prim.available[i] = true;
                        primary_returns |= 1 << i;
                    }
                    if !bench.available[i] && bench.return_at[i] == t {
                        bench.available[i] = true;
                        benchmark_returns |= 1 << i;
                    }
                }
            }
        }

        // 2. Decisions on each system's own state.
        let incident = instance.arrivals_at(t);
        let prim_state = prim.state_at(t);
        let bench_state = bench.state_at(t);
        let primary_action = decide_checked(primary, t, incident, &prim_state, instance)?;
        let benchmark_action = decide_checked(benchmark, t, incident, &bench_state, instance)?;

        let primary_available = prim.mask();
        let benchmark_available = bench.mask();

        // 3. Duration assignment / busy marking.
        match scheme {
            CouplingScheme::Bernoulli => {
                if let Action::Match { resource } = primary_action {
                    prim.available[resource] = false;
                    prim.matched_at[resource] = t;
                }
                if let Action::Match { resource } = benchmark_action {
                    bench.available[resource] = false;
                    bench.matched_at[resource] = t;
                }
            }
            CouplingScheme::Stack => {
                match (primary_action, benchmark_action) {
                    (Action::Match { resource: i }, Action::Match { resource: j }) if i == j => {
                        // Same resource: one shared draw, no push.
                        let d = draws.duration(&instance.resource(i).dist, i, t, 0, cap);
                        prim.available[i] = false;
                        prim.matched_at[i] = t;
                        prim.return_at[i] = t + d as usize;
                        bench.available[i] = false;
                        bench.matched_at[i] = t;
                        bench.return_at[i] = t + d as usize;
                    }
                    (pa, ba) => {
                        if let Action::Match { resource: i } = pa {
                            let d = draws.duration(&instance.resource(i).dist, i, t, 0, cap);
                            stacks[i].push(d);
                            prim.available[i] = false;
                            prim.matched_at[i] = t;
                            prim.return_at[i] = t + d as usize;
                        }
                        if let Action::Match { resource: j } = ba {
                            let d = match stacks[j].pop() {
                                Some(d) => d,
                                None => draws.duration(&instance.resource(j).dist, j, t, 1, cap),
                            };
                            bench.available[j] = false;
                            bench.matched_at[j] = t;
                            bench.return_at[j] = t + d as usize;
                        }
                    }
                }
            }
        }

        // 4. Accounting. Lost-match attribution uses the primary's
        // match history *before* this step.
        totals.primary_rstar_sum +=
            instance.rstar((0..n).filter(|i| primary_available & (1 << i) != 0));
        if let Action::Match { resource } = primary_action {
            totals.primary_reward += instance.reward(resource);
        }
        if let Action::Match { resource } = benchmark_action {
            totals.benchmark_reward += instance.reward(resource);
        }
        let coincidence = match (primary_action, benchmark_action) {
            (Action::Match { resource: i }, Action::Match { resource: j }) if i == j => {
                totals.coincidence_reward += instance.reward(i);
                Some(i)
            }
            _ => None,
        };
        let mut lost = None;
        if let Action::Match { resource } = benchmark_action {
            let high = !((1u32 << resource) - 1) & ((1u32 << n) - 1);
            if primary_available & high == 0 {
                // A lost match needs `resource` unavailable under the
                // primary, so the primary cannot have matched it this
                // step and matched_at still holds the pre-step value.
                let tau = prim.matched_at[resource];
                totals.lost += instance.reward(resource);
                lost = Some(LostMatch {
                    resource,
                    tau,
                    reward: instance.reward(resource),
                });
            }
        }

        steps.push(StepRecord {
            t,
            primary_available,
            benchmark_available,
            primary_returns,
            benchmark_returns,
            primary_action,
            benchmark_action,
            lost,
            coincidence,
        });
    }

    let trace = CoupledTrace {
        scheme,
        seed,
        stream,
        n,
        steps,
        totals,
    };
    check_pathwise_claims(&trace)?;
    Ok(trace)
}

// ---------------------------------------------------------------------------
// Pathwise invariants.
// ---------------------------------------------------------------------------

/// Checks tau-injectivity and the coincidence-exclusion law on a
/// finished trace.
///
/// * Stack scheme: over lost matches (`A*_t = i` with the blocking
///   event) per resource, the charged steps must be strictly
///   increasing.
/// * Bernoulli scheme: the same must hold over the larger event family
///   `A*_t = i, i` unavailable under the primary; additionally the
///   charged step can be neither a coincidence step nor one whose
///   duration resolved to a single step.
pub fn check_pathwise_claims<F: Real + Serialize>(trace: &CoupledTrace<F>) -> Result<()> {
    let violation = |invariant: &str, detail: String, resource: usize, step: usize| {
        Err(Error::CouplingInvariant(Box::new(InvariantViolation {
            invariant: invariant.to_string(),
            detail,
            resource,
            step,
            trace_jsonl: trace.to_jsonl(),
        })))
    };

    // Last charged step per resource, per event family.
    let mut last_lost_tau = vec![None::<usize>; trace.n];
    let mut last_weak_tau = vec![None::<usize>; trace.n];

    for record in &trace.steps {
        let t = record.t;
        let bench_match = match record.benchmark_action {
            Action::Match { resource } => Some(resource),
            Action::NoMatch => None,
        };

        if let Some(lost) = &record.lost {
            debug_assert_eq!(bench_match, Some(lost.resource));
            if lost.tau == 0 {
                return violation(
                    "tau-attribution",
                    format!("lost match at step {t} on a never-matched resource"),
                    lost.resource,
                    t,
                );
            }
            if last_lost_tau[lost.resource] == Some(lost.tau) {
                return violation(
                    "tau-injectivity",
                    format!(
                        "two lost matches on resource {} charged to step {}",
                        lost.resource + 1,
                        lost.tau
                    ),
                    lost.resource,
                    t,
                );
            }
            last_lost_tau[lost.resource] = Some(lost.tau);
        }

        if trace.scheme == CouplingScheme::Bernoulli {
            if let Some(i) = bench_match {
                let unavailable = record.primary_available & (1 << i) == 0;
                if unavailable {
                    // tau for the weaker event family: the primary must
                    // have matched i before (it started available).
                    let tau = tau_before(trace, i, t);
                    if tau == 0 {
                        return violation(
                            "tau-attribution",
                            format!(
                                "resource {} unavailable at step {t} but never matched",
                                i + 1
                            ),
                            i,
                            t,
                        );
                    }
                    if last_weak_tau[i] == Some(tau) {
                        return violation(
                            "tau-injectivity",
                            format!(
                                "two benchmark matches of unavailable resource {} charged to step {}",
                                i + 1,
                                tau
                            ),
                            i,
                            t,
                        );
                    }
                    last_weak_tau[i] = Some(tau);

                    // Coincidence exclusion: the charged step cannot be
                    // one where both policies matched i, and the charged
                    // match must have outlasted one step.
                    let charged = &trace.steps[tau - 1];
                    if charged.benchmark_action == (Action::Match { resource: i }) {
                        return violation(
                            "coincidence-exclusion",
                            format!(
                                "lost-type match at step {t} charged to coincidence step {tau}"
                            ),
                            i,
                            t,
                        );
                    }
                    if tau < trace.steps.len() {
                        let next = &trace.steps[tau]; // step tau + 1
                        if next.primary_returns & (1 << i) != 0 {
                            return violation(
                                "coincidence-exclusion",
                                format!(
                                    "charged match at step {tau} returned immediately yet blocked step {t}"
                                ),
                                i,
                                t,
                            );
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Last step strictly before `t` at which the primary matched `i`
/// (0 = never).
fn tau_before<F: Real>(trace: &CoupledTrace<F>, i: usize, t: usize) -> usize {
    trace.steps[..t - 1]
        .iter()
        .rev()
        .find(|s| s.primary_action == Action::Match { resource: i })
        .map(|s| s.t)
        .unwrap_or(0)
}

// ---------------------------------------------------------------------------
// Public entry points.
// ---------------------------------------------------------------------------

fn check_run_preconditions<F: Real>(
    instance: &Instance<F>,
    primary: &dyn Policy<F>,
    benchmark: &dyn Policy<F>,
    scheme: CouplingScheme,
) -> Result<()> {
    if scheme == CouplingScheme::Bernoulli && !instance.is_geometric_only() {
        return Err(Error::SchemeMismatch(
            "the shared-Bernoulli coupling needs geometric usage durations".to_string(),
        ));
    }
    if instance.n() > 31 {
        return Err(Error::StateSpaceGuard {
            detail: "coupled traces store availability as 32-bit masks".to_string(),
            size: instance.n() as u128,
        });
    }
    for policy in [primary, benchmark] {
        if !policy.is_deterministic() {
            return Err(Error::NonDeterministicPolicy(policy.name().to_string()));
        }
    }
    Ok(())
}

/// Runs one coupled trace on stream 0 of `seed`.
pub fn coupled_run<F: Real + Serialize>(
    instance: &Instance<F>,
    primary: &dyn Policy<F>,
    benchmark: &dyn Policy<F>,
    scheme: CouplingScheme,
    seed: u64,
) -> Result<CoupledTrace<F>> {
    coupled_run_with_stream(instance, primary, benchmark, scheme, seed, 0)
}

/// Runs one coupled trace on an explicit stream.
pub fn coupled_run_with_stream<F: Real + Serialize>(
    instance: &Instance<F>,
    primary: &dyn Policy<F>,
    benchmark: &dyn Policy<F>,
    scheme: CouplingScheme,
    seed: u64,
    stream: u64,
) -> Result<CoupledTrace<F>> {
    check_run_preconditions(instance, primary, benchmark, scheme)?;
    let mut draws = SourceDraws(RandomSource::with_stream(seed, stream));
    run_coupled(
        instance, primary, benchmark, scheme, &mut draws, seed, stream,
    )
}

/// Sample mean with standard error and a 95% normal-approximation
/// confidence half-width.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Estimate<F> {
    pub mean: F,
    pub std_error: F,
    pub ci95_half_width: F,
}

impl<F: Real> Estimate<F> {
    fn from_samples(xs: &[F]) -> Self {
        let (mean, std_error) = mean_and_std_error(xs);
        Estimate {
            mean,
            std_error,
            ci95_half_width: F::from_f64_lossy(1.96) * std_error,
        }
    }
}

/// Monte Carlo estimates over independent coupled runs.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EstimateReport<F> {
    pub n_runs: usize,
    pub seed: u64,
    pub scheme: CouplingScheme,
    pub primary_reward: Estimate<F>,
    pub benchmark_reward: Estimate<F>,
    pub lost: Estimate<F>,
    pub primary_rstar_sum: Estimate<F>,
    pub coincidence_reward: Estimate<F>,
}

/// Runs `n_runs` independent coupled traces (run `k` on stream `k`) and
/// aggregates the totals. Deterministic in `seed`; runs execute in
/// parallel but the aggregation order is fixed.
pub fn monte_carlo<F: Real + Serialize>(
    instance: &Instance<F>,
    primary: &dyn Policy<F>,
    benchmark: &dyn Policy<F>,
    scheme: CouplingScheme,
    n_runs: usize,
    seed: u64,
) -> Result<EstimateReport<F>> {
    if n_runs < 2 {
        return Err(Error::InvalidParameter(format!(
            "monte_carlo needs at least 2 runs, got {n_runs}"
        )));
    }
    check_run_preconditions(instance, primary, benchmark, scheme)?;

    let totals: Result<Vec<TraceTotals<F>>> = (0..n_runs as u64)
        .into_par_iter()
        .map(|stream| {
            let mut draws = SourceDraws(RandomSource::with_stream(seed, stream));
            run_coupled(
                instance, primary, benchmark, scheme, &mut draws, seed, stream,
            )
            .map(|trace| trace.totals)
        })
        .collect();
    let totals = totals?;

    let column = |f: &dyn Fn(&TraceTotals<F>) -> F| -> Vec<F> { totals.iter().map(f).collect() };
    Ok(EstimateReport {
        n_runs,
        seed,
        scheme,
        primary_reward: Estimate::from_samples(&column(&|t| t.primary_reward)),
        benchmark_reward: Estimate::from_samples(&column(&|t| t.benchmark_reward)),
        lost: Estimate::from_samples(&column(&|t| t.lost)),
        primary_rstar_sum: Estimate::from_samples(&column(&|t| t.primary_rstar_sum)),
        coincidence_reward: Estimate::from_samples(&column(&|t| t.coincidence_reward)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{opt_policy, solve_opt};
    use crate::instance::{random_instance, tight_example, DistributionFamily, GeneratorParams};
    use crate::policy::Greedy;
    use crate::Instance64;
    use std::sync::Arc;

    fn tight_opt_vs_greedy(
        p: f64,
        delta: f64,
    ) -> (Instance64, Greedy, crate::dp::OptTablePolicy<f64>) {
        let instance: Instance<f64> = tight_example(p, delta).unwrap();
        let table = Arc::new(solve_opt(&instance).unwrap());
        (instance, Greedy, opt_policy(table))
    }

    #[test]
    fn addressed_draws_are_pure() {
        let src = RandomSource::with_stream(42, 3);
        let a = src.uniform(draw_tag::RETURN, 1, 2, 0);
        let b = src.uniform(draw_tag::RETURN, 1, 2, 0);
        assert_eq!(a, b);
        let c = src.uniform(draw_tag::RETURN, 1, 3, 0);
        assert_ne!(a, c);
        let d = RandomSource::with_stream(42, 4).uniform(draw_tag::RETURN, 1, 2, 0);
        assert_ne!(a, d);
    }

    #[test]
    fn tight_example_bernoulli_subpaths_match_the_hand_execution() {
        let (instance, greedy, opt) = tight_opt_vs_greedy(0.5, 0.1);
        let mut saw_lost = false;
        let mut saw_coincidence = false;
        for seed in 0..64u64 {
            let trace =
                coupled_run(&instance, &greedy, &opt, CouplingScheme::Bernoulli, seed).unwrap();
            // Step 1 is deterministic: greedy takes the high resource,
            // the benchmark keeps it for step 2.
            assert_eq!(trace.steps[0].primary_action, Action::Match { resource: 1 });
            assert_eq!(
                trace.steps[0].benchmark_action,
                Action::Match { resource: 0 }
            );
            assert_eq!(trace.steps[0].lost, None);
            assert_eq!(trace.steps[0].coincidence, None);

            let s2 = &trace.steps[1];
            assert_eq!(s2.benchmark_action, Action::Match { resource: 1 });
            match s2.lost {
                Some(lost) => {
                    // P_{2,2} = 0: greedy's copy stayed busy.
                    saw_lost = true;
                    assert_eq!(s2.primary_action, Action::NoMatch);
                    assert_eq!(lost.resource, 1);
                    assert_eq!(lost.tau, 1);
                    assert!((trace.totals.lost - 1.1).abs() < 1e-12);
                    assert!((trace.totals.primary_reward - 1.1).abs() < 1e-12);
                }
                None => {
                    // P_{2,2} = 1: both match the high resource.
                    saw_coincidence = true;
                    assert_eq!(s2.coincidence, Some(1));
                    assert_eq!(trace.totals.lost, 0.0);
                    assert!((trace.totals.primary_reward - 2.2).abs() < 1e-12);
                }
            }
            assert!((trace.totals.benchmark_reward - 2.1).abs() < 1e-12);
        }
        assert!(
            saw_lost && saw_coincidence,
            "both subpaths should appear in 64 seeds"
        );
    }

    #[test]
    fn non_reusable_stack_run_loses_the_high_resource() {
        let (instance, greedy, opt) = tight_opt_vs_greedy(0.0, 0.1);
        let trace = coupled_run(&instance, &greedy, &opt, CouplingScheme::Stack, 7).unwrap();
        // Single sample path: nothing ever returns.
        assert_eq!(trace.steps[0].primary_action, Action::Match { resource: 1 });
        assert_eq!(trace.steps[1].primary_action, Action::NoMatch);
        let lost = trace.steps[1]
            .lost
            .expect("the second step is a lost match");
        assert_eq!(lost.resource, 1);
        assert_eq!(lost.tau, 1);
        assert!((trace.totals.lost - 1.1).abs() < 1e-12);
        assert!((trace.totals.benchmark_reward - 2.1).abs() < 1e-12);
    }

    #[test]
    fn bernoulli_rejects_finite_support_instances() {
        let (instance, greedy, opt) = tight_opt_vs_greedy(0.0, 0.1);
        let err = coupled_run(&instance, &greedy, &opt, CouplingScheme::Bernoulli, 0);
        assert!(matches!(err, Err(Error::SchemeMismatch(_))));
    }

    #[test]
    fn self_coupling_never_loses() {
        let params = GeneratorParams {
            n: 3,
            horizon: 5,
            family: DistributionFamily::Geometric {
                p_range: (0.2, 0.9),
            },
            density: 0.7,
            reward_range: (0.0, 4.0),
        };
        for seed in 0..30u64 {
            let instance: Instance64 = random_instance(&params, seed).unwrap();
            for scheme in [CouplingScheme::Bernoulli, CouplingScheme::Stack] {
                let trace = coupled_run(&instance, &Greedy, &Greedy, scheme, seed ^ 0xabc).unwrap();
                assert_eq!(trace.totals.lost, 0.0, "seed {seed} {scheme}");
                for s in &trace.steps {
                    assert_eq!(s.primary_action, s.benchmark_action);
                    assert_eq!(s.primary_available, s.benchmark_available);
                    if let Action::Match { resource } = s.primary_action {
                        assert_eq!(s.coincidence, Some(resource));
                    }
                }
                assert_eq!(trace.totals.primary_reward, trace.totals.benchmark_reward);
            }
        }
    }

    #[test]
    fn traces_are_pure_functions_of_seed_and_stream() {
        let (instance, greedy, opt) = tight_opt_vs_greedy(0.3, 0.2);
        let a = coupled_run(&instance, &greedy, &opt, CouplingScheme::Bernoulli, 11).unwrap();
        let b = coupled_run(&instance, &greedy, &opt, CouplingScheme::Bernoulli, 11).unwrap();
        assert_eq!(a, b);
        let c = coupled_run_with_stream(&instance, &greedy, &opt, CouplingScheme::Bernoulli, 11, 5)
            .unwrap();
        assert_eq!(c.stream, 5);
        assert_eq!(a.to_jsonl().lines().count(), instance.horizon());
    }

    #[test]
    fn monte_carlo_matches_exact_values_on_the_tight_example() {
        let (instance, greedy, opt) = tight_opt_vs_greedy(0.5, 0.1);
        let report = monte_carlo(
            &instance,
            &greedy,
            &opt,
            CouplingScheme::Bernoulli,
            50_000,
            424242,
        )
        .unwrap();
        // Exact values: greedy 1.65, benchmark 2.1, lost 0.55.
        let sigma = 3.0;
        assert!(
            (report.primary_reward.mean - 1.65).abs() <= sigma * report.primary_reward.std_error
        );
        assert!(
            (report.benchmark_reward.mean - 2.1).abs()
                <= sigma * report.benchmark_reward.std_error.max(1e-15)
        );
        assert!((report.lost.mean - 0.55).abs() <= sigma * report.lost.std_error);
        assert!(
            (report.primary_rstar_sum.mean - 2.15).abs()
                <= sigma * report.primary_rstar_sum.std_error
        );
    }

    #[test]
    fn monte_carlo_of_immediate_returns_has_no_loss_and_no_variance() {
        let instance: Instance<f64> = tight_example(1.0, 0.1).unwrap();
        let table = Arc::new(solve_opt(&instance).unwrap());
        let opt = opt_policy(table);
        let report =
            monte_carlo(&instance, &Greedy, &opt, CouplingScheme::Bernoulli, 100, 9).unwrap();
        assert_eq!(report.lost.mean, 0.0);
        assert_eq!(report.lost.std_error, 0.0);
        assert_eq!(report.primary_reward.std_error, 0.0);
    }

    #[test]
    fn monte_carlo_needs_two_runs_and_run_zero_is_coupled_run() {
        let (instance, greedy, opt) = tight_opt_vs_greedy(0.5, 0.1);
        assert!(matches!(
            monte_carlo(&instance, &greedy, &opt, CouplingScheme::Bernoulli, 1, 0),
            Err(Error::InvalidParameter(_))
        ));
        let report =
            monte_carlo(&instance, &greedy, &opt, CouplingScheme::Bernoulli, 2, 77).unwrap();
        assert_eq!(report.n_runs, 2);
        let run0 = coupled_run(&instance, &greedy, &opt, CouplingScheme::Bernoulli, 77).unwrap();
        let run1 =
            coupled_run_with_stream(&instance, &greedy, &opt, CouplingScheme::Bernoulli, 77, 1)
                .unwrap();
        let expected_mean = (run0.totals.primary_reward + run1.totals.primary_reward) / 2.0;
        assert_eq!(report.primary_reward.mean, expected_mean);
    }

    #[test]
    fn trace_measured_alpha_estimates_the_exact_factor() {
        let (instance, greedy, opt) = tight_opt_vs_greedy(0.5, 0.1);
        let traces: Vec<CoupledTrace<f64>> = (0..5_000u64)
            .map(|stream| {
                coupled_run_with_stream(
                    &instance,
                    &greedy,
                    &opt,
                    CouplingScheme::Bernoulli,
                    99,
                    stream,
                )
                .unwrap()
            })
            .collect();
        let alpha = crate::policy::measured_alpha(&traces);
        let exact = crate::dp::evaluate_policy_detailed(&instance, &greedy)
            .unwrap()
            .measured_alpha();
        assert!(
            (alpha - exact).abs() < 0.02,
            "alpha {alpha} vs exact {exact}"
        );
        assert_eq!(crate::policy::measured_alpha::<f64>(&[]), 1.0);
    }

    #[test]
    fn pathwise_claims_hold_across_a_seeded_corpus() {
        let params = GeneratorParams {
            n: 3,
            horizon: 5,
            family: DistributionFamily::Geometric {
                p_range: (0.15, 0.95),
            },
            density: 0.6,
            reward_range: (0.1, 3.0),
        };
        for inst_seed in 0..10u64 {
            let instance: Instance64 = random_instance(&params, inst_seed).unwrap();
            let table = Arc::new(solve_opt(&instance).unwrap());
            let opt = opt_policy(table);
            for run_seed in 0..50u64 {
                for scheme in [CouplingScheme::Bernoulli, CouplingScheme::Stack] {
                    coupled_run(&instance, &Greedy, &opt, scheme, run_seed)
                        .unwrap_or_else(|e| panic!("{scheme} seed {inst_seed}/{run_seed}: {e}"));
                }
            }
        }
    }
}
