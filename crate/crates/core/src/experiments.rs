//! Batch certification of competitive-ratio bounds, the tight-example
//! sweep, and randomized search for low-ratio instances.
//!
//! Three named bounds are certified, all parameterized by
//! `p = min_i Pr(D_i = 1)`:
//!
//! * `theorem1`: greedy earns at least `1/(2-p)` of the clairvoyant
//!   optimum on any instance;
//! * `theorem2`: at least `(1+p)/2` when every duration is geometric;
//! * `theorem3`: a policy whose exact approximation factor is
//!   `alpha = E[sum r_{A_t}] / E[sum r*(I_t)]` earns at least
//!   `1/(1-p + 1/alpha)`, improving to
//!   `1/((1-p)/(1+p) + 1/alpha)` in the geometric case.
//!
//! Bound checks use the exact DP values; a report passes iff the ratio
//! clears the bound minus [`tol::BOUND_MARGIN`]. A failing report is a
//! counterexample candidate and should be treated as a first-class
//! finding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dp::{evaluate_policy_detailed, opt_policy, solve_opt};
use crate::error::{Error, Result};
use crate::instance::{tight_example, Instance, Resource, UsageDistribution};
use crate::oracle::{enumerate_bernoulli, Eq1Witness};
use crate::policy::{AlphaThreshold, Greedy, Policy};
use crate::scalar::Real;
use crate::tol;

/// Which policy a bound run evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice<F> {
    Greedy,
    AlphaThreshold { alpha: F },
}

impl<F: Real> PolicyChoice<F> {
    pub fn build(&self) -> Result<Box<dyn Policy<F>>> {
        Ok(match self {
            PolicyChoice::Greedy => Box::new(Greedy),
            PolicyChoice::AlphaThreshold { alpha } => Box::new(AlphaThreshold::new(*alpha)?),
        })
    }
}

/// Which competitive-ratio bound to certify.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Theorem1,
    Theorem2,
    Theorem3,
}

impl std::fmt::Display for BoundKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundKind::Theorem1 => write!(f, "theorem1"),
            BoundKind::Theorem2 => write!(f, "theorem2"),
            BoundKind::Theorem3 => write!(f, "theorem3"),
        }
    }
}

/// `1/(2-p)`.
pub fn theorem1_bound<F: Real>(p: F) -> F {
    F::one() / (F::from_f64_lossy(2.0) - p)
}

/// `(1+p)/2`.
pub fn theorem2_bound<F: Real>(p: F) -> F {
    (F::one() + p) / F::from_f64_lossy(2.0)
}

/// `1/(1-p + 1/alpha)`, or its geometric sharpening
/// `1/((1-p)/(1+p) + 1/alpha)`; zero when `alpha` is zero.
pub fn theorem3_bound<F: Real>(p: F, alpha: F, geometric: bool) -> F {
    if alpha <= F::zero() {
        return F::zero();
    }
    let loss_factor = if geometric {
        (F::one() - p) / (F::one() + p)
    } else {
        F::one() - p
    };
    F::one() / (loss_factor + alpha.recip())
}

/// One instance's bound certification.
#[derive(Clone, Debug, Serialize)]
pub struct BoundReport<F> {
    pub instance_hash: u64,
    pub n: usize,
    pub horizon: usize,
    pub p_min: F,
    pub policy: String,
    /// Exact expected reward of the evaluated policy.
    pub policy_value: F,
    /// Exact clairvoyant optimum.
    pub opt_value: F,
    /// `policy_value / opt_value`; defined as 1 when the optimum is 0
    /// (no policy can earn anything).
    pub ratio: F,
    pub bound_kind: BoundKind,
    pub bound: F,
    /// `ratio - bound`.
    pub margin: F,
    pub pass: bool,
    /// Exact approximation factor; filled for the `theorem3` check.
    pub measured_alpha: Option<F>,
}

/// Certifies one instance against one bound.
pub fn verify_bound<F: Real>(
    instance: &Instance<F>,
    policy_choice: &PolicyChoice<F>,
    bound_kind: BoundKind,
) -> Result<BoundReport<F>> {
    if bound_kind == BoundKind::Theorem2 && !instance.is_geometric_only() {
        return Err(Error::SchemeMismatch(
            "the (1+p)/2 bound applies to geometric instances only".to_string(),
        ));
    }
    let policy = policy_choice.build()?;
    let table = solve_opt(instance)?;
    let detail = evaluate_policy_detailed(instance, policy.as_ref())?;

    let p = instance.p_min();
    let opt_value = table.opt_value();
    let ratio = if opt_value > F::zero() {
        detail.reward / opt_value
    } else {
        F::one()
    };
    let (bound, measured_alpha) = match bound_kind {
        BoundKind::Theorem1 => (theorem1_bound(p), None),
        BoundKind::Theorem2 => (theorem2_bound(p), None),
        BoundKind::Theorem3 => {
            let alpha = detail.measured_alpha();
            (
                theorem3_bound(p, alpha, instance.is_geometric_only()),
                Some(alpha),
            )
        }
    };
    let margin = ratio - bound;
    Ok(BoundReport {
        instance_hash: instance.stable_hash(),
        n: instance.n(),
        horizon: instance.horizon(),
        p_min: p,
        policy: policy.name().to_string(),
        policy_value: detail.reward,
        opt_value,
        ratio,
        bound_kind,
        bound,
        margin,
        pass: margin >= -F::from_f64_lossy(tol::BOUND_MARGIN),
        measured_alpha,
    })
}

/// Certifies a corpus; per-instance failures (e.g. guard violations)
/// surface in place without aborting the batch.
pub fn verify_bounds<F: Real>(
    corpus: &[Instance<F>],
    policy_choice: &PolicyChoice<F>,
    bound_kind: BoundKind,
) -> Vec<Result<BoundReport<F>>> {
    corpus
        .par_iter()
        .map(|instance| verify_bound(instance, policy_choice, bound_kind))
        .collect()
}

/// One cell of the tight-example sweep.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SweepRow<F> {
    pub p: F,
    pub delta: F,
    pub opt_value: F,
    pub greedy_value: F,
    /// Exact DP ratio.
    pub ratio: F,
    /// `min((1+p)(1+delta)/(2+delta), 1)`. The raw quotient is the
    /// ratio only while the clairvoyant prefers saving the high
    /// resource; once `p(1+delta) > 1` it matches the high resource
    /// twice itself and the ratio is exactly 1.
    pub closed_form: F,
    /// `ratio - closed_form`; zero modulo rounding.
    pub difference: F,
    /// `ratio - (1+p)/2`: how far the cell sits above the geometric
    /// bound; tends to 0 as `delta` shrinks.
    pub gap_to_bound: F,
}

/// Sweeps the tight two-step instance over `(p, delta)` grids, pairing
/// the exact DP ratio with its closed form. Grids must lie in
/// `(0, 1] x (0, inf)`.
pub fn sweep_tight_example<F: Real>(p_grid: &[F], delta_grid: &[F]) -> Result<Vec<SweepRow<F>>> {
    for &p in p_grid {
        if !(p > F::zero() && p <= F::one()) {
            return Err(Error::InvalidParameter(format!(
                "sweep: p = {p} outside (0, 1]"
            )));
        }
    }
    for &delta in delta_grid {
        if delta <= F::zero() || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sweep: delta = {delta} must be positive"
            )));
        }
    }

    let two = F::from_f64_lossy(2.0);
    let mut rows = Vec::with_capacity(p_grid.len() * delta_grid.len());
    for &p in p_grid {
        for &delta in delta_grid {
            let instance = tight_example(p, delta)?;
            let table = solve_opt(&instance)?;
            let greedy_value = evaluate_policy_detailed(&instance, &Greedy)?.reward;
            let ratio = greedy_value / table.opt_value();
            let closed_form = ((F::one() + p) * (F::one() + delta) / (two + delta)).min(F::one());
            rows.push(SweepRow {
                p,
                delta,
                opt_value: table.opt_value(),
                greedy_value,
                ratio,
                closed_form,
                difference: ratio - closed_form,
                gap_to_bound: ratio - theorem2_bound(p),
            });
        }
    }
    Ok(rows)
}

/// Parameters of the randomized low-ratio search.
#[derive(Clone, Debug, Serialize)]
pub struct SearchParams {
    pub n: usize,
    pub horizon: usize,
    /// Fixed reusability parameter: every instance in the search keeps
    /// `min_i Pr(D_i = 1)` at exactly this value. Zero encodes
    /// non-reusable resources (a single duration beyond the horizon).
    pub p_min: f64,
    pub density: f64,
    pub reward_range: (f64, f64),
    /// Random instances seeded into the walk.
    pub population: usize,
    /// How many of the lowest-ratio instances to report.
    pub keep: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            n: 3,
            horizon: 4,
            p_min: 0.5,
            density: 0.7,
            reward_range: (0.5, 2.0),
            population: 8,
            keep: 5,
        }
    }
}

/// A low-ratio instance found by the search, with its certification.
#[derive(Clone, Debug, Serialize)]
pub struct SearchResult<F> {
    #[serde(skip)]
    pub instance: Instance<F>,
    pub report: BoundReport<F>,
}

/// Outcome of a search run.
#[derive(Clone, Debug, Serialize)]
pub struct SearchOutcome<F> {
    /// The `keep` lowest ratios seen, ascending.
    pub worst: Vec<SearchResult<F>>,
    /// Instances evaluated (population + accepted-or-rejected moves).
    pub evaluations: usize,
}

fn search_check(params: &SearchParams) -> Result<()> {
    let fail = |msg: String| Err(Error::InvalidParameter(msg));
    if params.n == 0 || params.n > crate::instance::MAX_GENERATOR_N {
        return fail(format!("search: n = {} out of range", params.n));
    }
    if params.horizon == 0 || params.horizon > crate::instance::MAX_GENERATOR_T {
        return fail(format!("search: horizon = {} out of range", params.horizon));
    }
    if !(0.0..=1.0).contains(&params.p_min) {
        return fail(format!("search: p_min = {} outside [0, 1]", params.p_min));
    }
    if !(0.0..=1.0).contains(&params.density) {
        return fail(format!(
            "search: density = {} outside [0, 1]",
            params.density
        ));
    }
    let (lo, hi) = params.reward_range;
    if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
        return fail(format!("search: bad reward range [{lo}, {hi}]"));
    }
    if params.population == 0 || params.keep == 0 {
        return fail("search: population and keep must be positive".to_string());
    }
    Ok(())
}

fn search_seed_instance<F: Real>(
    params: &SearchParams,
    rng: &mut ChaCha8Rng,
) -> Result<Instance<F>> {
    let (lo, hi) = params.reward_range;
    let n = params.n;
    let mut resources: Vec<Resource<F>> = (0..n)
        .map(|_| {
            let reward = if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            };
            let dist = if params.p_min == 0.0 {
                UsageDistribution::point(params.horizon as u32 + 1)
            } else {
                let p = rng.random_range(params.p_min..=1.0);
                UsageDistribution::Geometric {
                    p: F::from_f64_lossy(p),
                }
            };
            Resource {
                reward: F::from_f64_lossy(reward),
                dist,
            }
        })
        .collect();
    if params.p_min > 0.0 {
        // Keep the reusability parameter exactly at p_min.
        let anchor = rng.random_range(0..n);
        resources[anchor].dist = UsageDistribution::Geometric {
            p: F::from_f64_lossy(params.p_min),
        };
    }
    let arrivals = (0..params.horizon)
        .map(|_| (0..n).filter(|_| rng.random_bool(params.density)).collect())
        .collect();
    Instance::new(params.horizon, resources, arrivals)
}

/// Single-move neighbor: toggle one edge, nudge one reward by up to
/// ±10%, or nudge one geometric `p` (clipped so `p_min` stays fixed).
fn search_neighbor<F: Real>(
    params: &SearchParams,
    current: &Instance<F>,
    rng: &mut ChaCha8Rng,
) -> Result<Instance<F>> {
    let n = current.n();
    let horizon = current.horizon();
    let mut resources = current.resources().to_vec();
    let mut arrivals: Vec<Vec<usize>> = current.arrivals().to_vec();

    let geometric = params.p_min > 0.0;
    let move_kind = if geometric {
        rng.random_range(0..3u32)
    } else {
        rng.random_range(0..2u32)
    };
    match move_kind {
        0 => {
            let t = rng.random_range(0..horizon);
            let i = rng.random_range(0..n);
            match arrivals[t].iter().position(|&j| j == i) {
                Some(pos) => {
                    arrivals[t].remove(pos);
                }
                None => arrivals[t].push(i),
            }
        }
        1 => {
            let i = rng.random_range(0..n);
            let factor = 1.0 + 0.1 * (2.0 * rng.random::<f64>() - 1.0);
            let next = (resources[i].reward.to_f64_lossy() * factor).max(0.0);
            resources[i].reward = F::from_f64_lossy(next);
        }
        _ => {
            let i = rng.random_range(0..n);
            if let UsageDistribution::Geometric { p } = &mut resources[i].dist {
                let factor = 1.0 + 0.1 * (2.0 * rng.random::<f64>() - 1.0);
                let next = (p.to_f64_lossy() * factor).clamp(params.p_min, 1.0);
                *p = F::from_f64_lossy(next);
            }
            // Re-anchor: the minimum must stay exactly p_min.
            let still_anchored = resources.iter().any(|r| {
                matches!(&r.dist, UsageDistribution::Geometric { p }
                    if p.to_f64_lossy() == params.p_min)
            });
            if !still_anchored {
                let at_min = resources
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| {
                        a.dist
                            .pr_one()
                            .partial_cmp(&b.dist.pr_one())
                            .unwrap_or(std::cmp::Ordering::Equal)
                    })
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                resources[at_min].dist = UsageDistribution::Geometric {
                    p: F::from_f64_lossy(params.p_min),
                };
            }
        }
    }
    Instance::new(horizon, resources, arrivals)
}

/// Randomized hill-climbing over instances at fixed `p_min`, minimizing
/// the exact greedy/OPT ratio. Deterministic in `seed`; `budget` counts
/// neighbor evaluations on top of the seed population (0 evaluates the
/// population only). Geometric searches certify against `theorem2`,
/// non-reusable searches against `theorem1`; a result below the bound
/// is a counterexample and should fail the caller loudly.
pub fn ratio_search<F: Real>(
    params: &SearchParams,
    seed: u64,
    budget: usize,
) -> Result<SearchOutcome<F>> {
    search_check(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound_kind = if params.p_min > 0.0 {
        BoundKind::Theorem2
    } else {
        BoundKind::Theorem1
    };
    let evaluate = |instance: Instance<F>| -> Result<SearchResult<F>> {
        let report = verify_bound(&instance, &PolicyChoice::Greedy, bound_kind)?;
        Ok(SearchResult { instance, report })
    };

    let mut worst: Vec<SearchResult<F>> = Vec::new();
    let record = |result: &SearchResult<F>, worst: &mut Vec<SearchResult<F>>| {
        if worst
            .iter()
            .any(|r| r.report.instance_hash == result.report.instance_hash)
        {
            return;
        }
        worst.push(result.clone());
        worst.sort_by(|a, b| {
            a.report
                .ratio
                .partial_cmp(&b.report.ratio)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        worst.truncate(params.keep);
    };

    // Seed population, plus the known low-ratio two-step instance when
    // it fits the requested shape.
    let mut population: Vec<SearchResult<F>> = Vec::new();
    let mut evaluations = 0usize;
    if params.n >= 2 && params.horizon >= 2 {
        let delta = F::from_f64_lossy(0.01);
        let known = tight_example(F::from_f64_lossy(params.p_min), delta)?;
        let result = evaluate(known)?;
        evaluations += 1;
        record(&result, &mut worst);
        population.push(result);
    }
    for _ in 0..params.population {
        let result = evaluate(search_seed_instance(params, &mut rng)?)?;
        evaluations += 1;
        record(&result, &mut worst);
        population.push(result);
    }

    let mut current = population
        .into_iter()
        .min_by(|a, b| {
            a.report
                .ratio
                .partial_cmp(&b.report.ratio)
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .expect("population is nonempty");

    for _ in 0..budget {
        let neighbor = search_neighbor(params, &current.instance, &mut rng)?;
        let result = evaluate(neighbor)?;
        evaluations += 1;
        record(&result, &mut worst);
        if result.report.ratio < current.report.ratio {
            current = result;
        }
    }

    Ok(SearchOutcome { worst, evaluations })
}

/// One instance's first-term probe of the benchmark-reward
/// decomposition: is `E[sum r_i 1(A*_t = i, not O_it)]` bounded by the
/// greedy reward? The step is justified by a per-step dominance
/// argument that ignores incidence, so this is a monitor rather than an
/// assertion; `witness` points at a pathwise failure of the per-step
/// argument when one exists even though the expectation bound may hold.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Eq1Row<F> {
    pub instance_hash: u64,
    pub first_term: F,
    pub greedy_value: F,
    pub lost: F,
    pub benchmark_value: F,
    /// `first_term <= greedy_value` within [`tol::EXACT`].
    pub holds: bool,
    pub witness: Option<Eq1Witness>,
}

/// Probes the first-term bound by exact enumeration on a corpus of
/// oracle-sized geometric instances (greedy vs. the solved benchmark).
pub fn eq1_monitor<F: Real + Serialize>(corpus: &[Instance<F>]) -> Result<Vec<Eq1Row<F>>> {
    corpus
        .iter()
        .map(|instance| {
            let table = std::sync::Arc::new(solve_opt(instance)?);
            let benchmark = opt_policy(table);
            let events = enumerate_bernoulli(instance, &Greedy, &benchmark)?;
            Ok(Eq1Row {
                instance_hash: instance.stable_hash(),
                first_term: events.eq1_first_term,
                greedy_value: events.primary_reward,
                lost: events.lost,
                benchmark_value: events.benchmark_reward,
                holds: events.eq1_first_term
                    <= events.primary_reward + F::from_f64_lossy(tol::EXACT),
                witness: events.eq1_witness,
            })
        })
        .collect()
}
