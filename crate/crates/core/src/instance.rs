//! Instances, usage-duration distributions, canonicalization, and
//! instance generators.
//!
//! An instance couples a horizon of `T` arriving requests with `N`
//! resources. Resource `i` carries a nonnegative reward and a
//! distribution over integer usage durations `D >= 1`: once matched,
//! the resource is unavailable for `D` steps and returns at the start
//! of step `t + D`. Instances are kept in canonical form, rewards
//! ascending, so the greedy rule "match the highest-reward available
//! incident resource" is exactly "match the largest available incident
//! index".
//!
//! Indices are 0-based everywhere in this crate; reports render them
//! 1-based.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tol;
use crate::util::Fnv1a;

/// Distribution of the integer usage duration `D >= 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum UsageDistribution<F> {
    /// `Pr(D = d) = p (1-p)^(d-1)`; memoryless, `p` in `(0, 1]`.
    Geometric { p: F },
    /// Explicit pmf over strictly increasing durations; probabilities
    /// sum to 1 within [`tol::PMF_SUM`]. Non-reusable resources are
    /// modeled as a single duration beyond the horizon.
    FiniteSupport { pmf: Vec<(u32, F)> },
}

impl<F: Real> UsageDistribution<F> {
    /// Single-point distribution `D = d` with probability 1.
    pub fn point(d: u32) -> Self {
        Self::FiniteSupport {
            pmf: vec![(d, F::one())],
        }
    }

    pub fn is_geometric(&self) -> bool {
        matches!(self, Self::Geometric { .. })
    }

    /// `Pr(D = 1)`: the chance the resource is back one step after a
    /// match. Zero when duration 1 carries no mass.
    pub fn pr_one(&self) -> F {
        match self {
            Self::Geometric { p } => *p,
            Self::FiniteSupport { pmf } => pmf
                .iter()
                .find(|(d, _)| *d == 1)
                .map(|(_, q)| *q)
                .unwrap_or_else(F::zero),
        }
    }

    /// `Pr(D > e)`.
    pub fn survival(&self, e: u32) -> F {
        match self {
            Self::Geometric { p } => (F::one() - *p).powi(e as i32),
            Self::FiniteSupport { pmf } => {
                pmf.iter().filter(|(d, _)| *d > e).map(|(_, q)| *q).sum()
            }
        }
    }

    /// Hazard at age `e`: `Pr(D = e+1 | D > e)`, the chance a resource
    /// that has been busy for `e` steps returns at the start of the
    /// next one. Ages with zero survival are unreachable; the hazard
    /// there is reported as 1 so such a resource would drain back to
    /// available rather than persist.
    pub fn hazard_after(&self, e: u32) -> F {
        match self {
            Self::Geometric { p } => *p,
            Self::FiniteSupport { pmf } => {
                let surv = self.survival(e);
                if surv <= F::zero() {
                    return F::one();
                }
                let mass = pmf
                    .iter()
                    .find(|(d, _)| *d == e + 1)
                    .map(|(_, q)| *q)
                    .unwrap_or_else(F::zero);
                mass / surv
            }
        }
    }

    /// Number of canonical per-resource statuses: `available` plus the
    /// reachable busy ages. Geometric durations are memoryless, so a
    /// single busy status suffices; finite-support durations need ages
    /// `1 .. max_duration - 1`.
    pub fn status_count(&self) -> u64 {
        match self {
            Self::Geometric { .. } => 2,
            Self::FiniteSupport { pmf } => {
                let dmax = pmf.last().map(|(d, _)| *d).unwrap_or(1) as u64;
                dmax.max(1)
            }
        }
    }

    /// Inverse-CDF sample for uniform `u` in `[0, 1)`. Geometric draws
    /// are truncated at `cap` (any value at or beyond "never within the
    /// horizon" is equivalent); finite-support draws are exact.
    pub fn sample(&self, u: f64, cap: u32) -> u32 {
        match self {
            Self::Geometric { p } => {
                let p = p.to_f64_lossy();
                if p >= 1.0 {
                    return 1;
                }
                let d = 1.0 + ((1.0 - u).ln() / (1.0 - p).ln()).floor();
                if !d.is_finite() || d >= cap as f64 {
                    cap
                } else {
                    (d as u32).max(1)
                }
            }
            Self::FiniteSupport { pmf } => {
                let u = F::from_f64_lossy(u);
                let mut cum = F::zero();
                for (d, q) in pmf {
                    cum += *q;
                    if u < cum {
                        return *d;
                    }
                }
                pmf.last().map(|(d, _)| *d).unwrap_or(1)
            }
        }
    }
}

/// An offline vertex: reward plus usage-duration distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resource<F> {
    pub reward: F,
    pub dist: UsageDistribution<F>,
}

/// Availability of one resource at the start of a step, after returns
/// have been processed. `age` counts steps since the match: a resource
/// matched at step `t'` has age `t - t'` at step `t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResourceStatus {
    Available,
    Busy { age: u32 },
}

/// Per-resource availability at one step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SystemState {
    statuses: Vec<ResourceStatus>,
}

impl SystemState {
    pub fn all_available(n: usize) -> Self {
        Self {
            statuses: vec![ResourceStatus::Available; n],
        }
    }

    pub fn len(&self) -> usize {
        self.statuses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statuses.is_empty()
    }

    pub fn status(&self, i: usize) -> ResourceStatus {
        self.statuses[i]
    }

    pub fn set_status(&mut self, i: usize, s: ResourceStatus) {
        self.statuses[i] = s;
    }

    pub fn is_available(&self, i: usize) -> bool {
        matches!(self.statuses[i], ResourceStatus::Available)
    }

    pub fn available_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.statuses
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, ResourceStatus::Available))
            .map(|(i, _)| i)
    }

    /// Mixed-radix canonical key. Digit `i` is 0 when available and the
    /// busy age otherwise, with geometric ages collapsed to 1
    /// (memorylessness); for geometric-only instances this is exactly
    /// the busy bitmask.
    pub fn canonical_key<F: Real>(&self, instance: &Instance<F>) -> u64 {
        debug_assert_eq!(self.statuses.len(), instance.n());
        let mut key = 0u64;
        let mut radix = 1u64;
        for (i, status) in self.statuses.iter().enumerate() {
            let dist = &instance.resource(i).dist;
            let count = dist.status_count();
            let digit = match status {
                ResourceStatus::Available => 0,
                ResourceStatus::Busy { age } => {
                    if dist.is_geometric() {
                        1
                    } else {
                        debug_assert!(
                            (*age as u64) < count,
                            "busy age {age} outlives the support of resource {i}"
                        );
                        *age as u64
                    }
                }
            };
            key += digit * radix;
            radix = radix.saturating_mul(count);
        }
        key
    }
}

/// A violation found while validating raw instance data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    NoResources,
    ZeroHorizon,
    ArrivalCountMismatch {
        expected: usize,
        got: usize,
    },
    NegativeReward {
        resource: usize,
    },
    NonFiniteReward {
        resource: usize,
    },
    GeometricOutOfRange {
        resource: usize,
        p: f64,
    },
    EmptyPmf {
        resource: usize,
    },
    PmfDurationZero {
        resource: usize,
    },
    PmfNotStrictlyIncreasing {
        resource: usize,
    },
    PmfProbOutOfRange {
        resource: usize,
        prob: f64,
    },
    PmfNotNormalized {
        resource: usize,
        sum: f64,
    },
    ArrivalIndexOutOfRange {
        step: usize,
        index: usize,
        n: usize,
    },
    /// Rewards were not ascending; canonicalization applies this
    /// permutation (canonical position -> original index). Loaders fix
    /// this silently, so it fails strict validation only.
    UnsortedRewards {
        permutation: Vec<usize>,
    },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::NoResources => write!(f, "instance has no resources"),
            Self::ZeroHorizon => write!(f, "horizon must be at least 1"),
            Self::ArrivalCountMismatch { expected, got } => {
                write!(f, "expected {expected} arrival sets, got {got}")
            }
            Self::NegativeReward { resource } => {
                write!(f, "resource {}: reward is negative", resource + 1)
            }
            Self::NonFiniteReward { resource } => {
                write!(f, "resource {}: reward is not finite", resource + 1)
            }
            Self::GeometricOutOfRange { resource, p } => write!(
                f,
                "resource {}: geometric p = {p} outside (0, 1] (encode p = 0 as a single duration beyond the horizon)",
                resource + 1
            ),
            Self::EmptyPmf { resource } => {
                write!(f, "resource {}: pmf is empty", resource + 1)
            }
            Self::PmfDurationZero { resource } => {
                write!(f, "resource {}: durations must be at least 1", resource + 1)
            }
            Self::PmfNotStrictlyIncreasing { resource } => write!(
                f,
                "resource {}: pmf durations must be strictly increasing",
                resource + 1
            ),
            Self::PmfProbOutOfRange { resource, prob } => write!(
                f,
                "resource {}: pmf probability {prob} outside [0, 1]",
                resource + 1
            ),
            Self::PmfNotNormalized { resource, sum } => {
                write!(f, "resource {}: pmf sums to {sum}", resource + 1)
            }
            Self::ArrivalIndexOutOfRange { step, index, n } => write!(
                f,
                "arrival set {}: index {} out of range (N = {n}, 0-based)",
                step + 1,
                index
            ),
            Self::UnsortedRewards { permutation } => write!(
                f,
                "rewards not ascending; canonical order applies permutation {permutation:?}"
            ),
        }
    }
}

/// Outcome of validating raw instance data. Carries every violation
/// found rather than stopping at the first.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    /// No violations at all, not even a fixable reward order.
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    /// No violations beyond what canonicalization repairs.
    pub fn is_canonicalizable(&self) -> bool {
        self.violations
            .iter()
            .all(|v| matches!(v, Violation::UnsortedRewards { .. }))
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// A canonical problem instance: resources sorted by ascending reward,
/// arrival sets sorted, deduplicated, and remapped to canonical
/// indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance<F> {
    horizon: usize,
    resources: Vec<Resource<F>>,
    arrivals: Vec<Vec<usize>>,
    permutation: Vec<usize>,
}

impl<F: Real> Instance<F> {
    /// Validates raw data, canonicalizes it, and builds the instance.
    /// Unsorted rewards are repaired (the permutation is recorded);
    /// anything else fails with the full violation list.
    pub fn new(
        horizon: usize,
        resources: Vec<Resource<F>>,
        arrivals: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let report = validate_parts(horizon, &resources, &arrivals);
        if !report.is_canonicalizable() {
            return Err(Error::InvalidInstance(report));
        }

        let n = resources.len();
        let mut order: Vec<usize> = (0..n).collect();
        // Stable sort: ties keep their original relative order.
        order.sort_by(|&a, &b| {
            resources[a]
                .reward
                .partial_cmp(&resources[b].reward)
                .expect("rewards validated finite")
        });
        let mut position = vec![0usize; n];
        for (canonical, &original) in order.iter().enumerate() {
            position[original] = canonical;
        }

        let mut sorted_resources = Vec::with_capacity(n);
        for &original in &order {
            sorted_resources.push(resources[original].clone());
        }
        let arrivals = arrivals
            .into_iter()
            .map(|set| {
                let mut set: Vec<usize> = set.into_iter().map(|i| position[i]).collect();
                set.sort_unstable();
                set.dedup();
                set
            })
            .collect();

        Ok(Self {
            horizon,
            resources: sorted_resources,
            arrivals,
            permutation: order,
        })
    }

    pub fn n(&self) -> usize {
        self.resources.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn resource(&self, i: usize) -> &Resource<F> {
        &self.resources[i]
    }

    pub fn resources(&self) -> &[Resource<F>] {
        &self.resources
    }

    pub fn reward(&self, i: usize) -> F {
        self.resources[i].reward
    }

    /// Resources incident to request `t` (steps are 1-based).
    pub fn arrivals_at(&self, t: usize) -> &[usize] {
        &self.arrivals[t - 1]
    }

    pub fn arrivals(&self) -> &[Vec<usize>] {
        &self.arrivals
    }

    /// Canonical position -> original index, recorded at construction.
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn is_geometric_only(&self) -> bool {
        self.resources.iter().all(|r| r.dist.is_geometric())
    }

    /// `min_i Pr(D_i = 1)`: the reusability parameter every bound is
    /// stated in.
    pub fn p_min(&self) -> F {
        self.resources
            .iter()
            .map(|r| r.dist.pr_one())
            .fold(F::one(), F::min)
    }

    /// Highest reward among `available`; zero when the set is empty.
    pub fn rstar<I: IntoIterator<Item = usize>>(&self, available: I) -> F {
        available
            .into_iter()
            .map(|i| self.reward(i))
            .fold(F::zero(), F::max)
    }

    /// Validates the (already canonical) instance; clean by
    /// construction, re-checked for callers that mutate raw copies.
    pub fn validate(&self) -> ValidationReport {
        validate_parts(self.horizon, &self.resources, &self.arrivals)
    }

    /// Structural hash, stable across platforms and runs. Two instances
    /// hash equal iff their canonical content is bitwise identical.
    pub fn stable_hash(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write(b"instance-v1");
        h.write_u64(self.horizon as u64);
        h.write_u64(self.resources.len() as u64);
        for r in &self.resources {
            h.write_f64(r.reward.to_f64_lossy());
            match &r.dist {
                UsageDistribution::Geometric { p } => {
                    h.write_u64(1);
                    h.write_f64(p.to_f64_lossy());
                }
                UsageDistribution::FiniteSupport { pmf } => {
                    h.write_u64(2);
                    h.write_u64(pmf.len() as u64);
                    for (d, q) in pmf {
                        h.write_u64(*d as u64);
                        h.write_f64(q.to_f64_lossy());
                    }
                }
            }
        }
        for set in &self.arrivals {
            h.write_u64(set.len() as u64);
            for &i in set {
                h.write_u64(i as u64);
            }
        }
        h.finish()
    }
}

/// Validates raw instance data without constructing anything.
pub fn validate_parts<F: Real>(
    horizon: usize,
    resources: &[Resource<F>],
    arrivals: &[Vec<usize>],
) -> ValidationReport {
    let mut violations = Vec::new();
    if resources.is_empty() {
        violations.push(Violation::NoResources);
    }
    if horizon == 0 {
        violations.push(Violation::ZeroHorizon);
    }
    if arrivals.len() != horizon {
        violations.push(Violation::ArrivalCountMismatch {
            expected: horizon,
            got: arrivals.len(),
        });
    }

    for (i, r) in resources.iter().enumerate() {
        if !r.reward.is_finite() {
            violations.push(Violation::NonFiniteReward { resource: i });
        } else if r.reward < F::zero() {
            violations.push(Violation::NegativeReward { resource: i });
        }
        match &r.dist {
            UsageDistribution::Geometric { p } => {
                let p = p.to_f64_lossy();
                if !(p > 0.0 && p <= 1.0) {
                    violations.push(Violation::GeometricOutOfRange { resource: i, p });
                }
            }
            UsageDistribution::FiniteSupport { pmf } => {
                if pmf.is_empty() {
                    violations.push(Violation::EmptyPmf { resource: i });
                    continue;
                }
                if pmf.iter().any(|(d, _)| *d == 0) {
                    violations.push(Violation::PmfDurationZero { resource: i });
                }
                if pmf.windows(2).any(|w| w[0].0 >= w[1].0) {
                    violations.push(Violation::PmfNotStrictlyIncreasing { resource: i });
                }
                let mut sum = 0.0f64;
                for (_, q) in pmf {
                    let q = q.to_f64_lossy();
                    if !(0.0..=1.0).contains(&q) {
                        violations.push(Violation::PmfProbOutOfRange {
                            resource: i,
                            prob: q,
                        });
                    }
                    sum += q;
                }
                if (sum - 1.0).abs() > tol::PMF_SUM {
                    violations.push(Violation::PmfNotNormalized { resource: i, sum });
                }
            }
        }
    }

    for (s, set) in arrivals.iter().enumerate() {
        for &i in set {
            if i >= resources.len() {
                violations.push(Violation::ArrivalIndexOutOfRange {
                    step: s,
                    index: i,
                    n: resources.len(),
                });
            }
        }
    }

    let sorted = resources.windows(2).all(|w| w[0].reward <= w[1].reward);
    if !resources.is_empty() && !sorted {
        let mut order: Vec<usize> = (0..resources.len()).collect();
        order.sort_by(|&a, &b| {
            resources[a]
                .reward
                .partial_cmp(&resources[b].reward)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        violations.push(Violation::UnsortedRewards { permutation: order });
    }

    ValidationReport { violations }
}

/// The two-resource, two-step instance on which the geometric `(1+p)/2`
/// guarantee is tight: rewards `1` and `1+delta`, both requests
/// incident to the high resource, only the first to the low one.
/// `p = 0` is encoded as a single usage duration beyond the horizon.
pub fn tight_example<F: Real>(p: F, delta: F) -> Result<Instance<F>> {
    if !(p >= F::zero() && p <= F::one()) {
        return Err(Error::InvalidParameter(format!(
            "tight_example: p = {p} outside [0, 1]"
        )));
    }
    if delta <= F::zero() || !delta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "tight_example: delta = {delta} must be positive"
        )));
    }
    let horizon = 2;
    let dist = if p == F::zero() {
        UsageDistribution::point(horizon as u32 + 1)
    } else {
        UsageDistribution::Geometric { p }
    };
    Instance::new(
        horizon,
        vec![
            Resource {
                reward: F::one(),
                dist: dist.clone(),
            },
            Resource {
                reward: F::one() + delta,
                dist,
            },
        ],
        vec![vec![0, 1], vec![1]],
    )
}

/// Distribution family drawn by [`random_instance`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DistributionFamily {
    Geometric {
        p_range: (f64, f64),
    },
    FiniteSupport {
        max_duration: u32,
    },
    Mixed {
        p_range: (f64, f64),
        max_duration: u32,
    },
}

/// Parameters for the seeded instance generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub n: usize,
    pub horizon: usize,
    pub family: DistributionFamily,
    /// Probability that a given (request, resource) edge exists.
    pub density: f64,
    pub reward_range: (f64, f64),
}

pub const MAX_GENERATOR_N: usize = 14;
pub const MAX_GENERATOR_T: usize = 20;
const MAX_GENERATOR_DURATION: u32 = 32;

impl GeneratorParams {
    fn check(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n == 0 || self.n > MAX_GENERATOR_N {
            return fail(format!(
                "generator: n = {} outside 1..={MAX_GENERATOR_N}",
                self.n
            ));
        }
        if self.horizon == 0 || self.horizon > MAX_GENERATOR_T {
            return fail(format!(
                "generator: horizon = {} outside 1..={MAX_GENERATOR_T}",
                self.horizon
            ));
        }
        if !(0.0..=1.0).contains(&self.density) {
            return fail(format!(
                "generator: density = {} outside [0, 1]",
                self.density
            ));
        }
        let (lo, hi) = self.reward_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return fail(format!("generator: bad reward range [{lo}, {hi}]"));
        }
        let check_p = |(plo, phi): (f64, f64)| {
            if !(plo > 0.0 && plo <= phi && phi <= 1.0) {
                fail(format!("generator: bad p range ({plo}, {phi})"))
            } else {
                Ok(())
            }
        };
        let check_d = |dmax: u32| {
            if dmax == 0 || dmax > MAX_GENERATOR_DURATION {
                fail(format!(
                    "generator: max_duration = {dmax} outside 1..={MAX_GENERATOR_DURATION}"
                ))
            } else {
                Ok(())
            }
        };
        match &self.family {
            DistributionFamily::Geometric { p_range } => check_p(*p_range),
            DistributionFamily::FiniteSupport { max_duration } => check_d(*max_duration),
            DistributionFamily::Mixed {
                p_range,
                max_duration,
            } => check_p(*p_range).and(check_d(*max_duration)),
        }
    }
}

/// Seeded random instance: a pure function of `(params, seed)`.
pub fn random_instance<F: Real>(params: &GeneratorParams, seed: u64) -> Result<Instance<F>> {
    params.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (lo, hi) = params.reward_range;
    let rewards: Vec<f64> = (0..params.n)
        .map(|_| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            }
        })
        .collect();

    let draw_geometric = |rng: &mut ChaCha8Rng, (plo, phi): (f64, f64)| {
        let p = if plo == phi {
            plo
        } else {
            rng.random_range(plo..=phi)
        };
        UsageDistribution::Geometric {
            p: F::from_f64_lossy(p),
        }
    };
    let draw_finite = |rng: &mut ChaCha8Rng, dmax: u32| {
        let k = rng.random_range(1..=dmax as usize);
        let mut durations: Vec<u32> = (1..=dmax).collect();
        durations.shuffle(rng);
        durations.truncate(k);
        durations.sort_unstable();
        let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let pmf = durations
            .into_iter()
            .zip(weights)
            .map(|(d, w)| (d, F::from_f64_lossy(w / total)))
            .collect();
        UsageDistribution::FiniteSupport { pmf }
    };

    let mut resources = Vec::with_capacity(params.n);
    for &reward in &rewards {
        let dist = match &params.family {
            DistributionFamily::Geometric { p_range } => draw_geometric(&mut rng, *p_range),
            DistributionFamily::FiniteSupport { max_duration } => {
                draw_finite(&mut rng, *max_duration)
            }
            DistributionFamily::Mixed {
                p_range,
                max_duration,
            } => {
                if rng.random_bool(0.5) {
                    draw_geometric(&mut rng, *p_range)
                } else {
                    draw_finite(&mut rng, *max_duration)
                }
            }
        };
        resources.push(Resource {
            reward: F::from_f64_lossy(reward),
            dist,
        });
    }

    let arrivals = (0..params.horizon)
        .map(|_| {
            (0..params.n)
                .filter(|_| rng.random_bool(params.density))
                .collect()
        })
        .collect();

    Instance::new(params.horizon, resources, arrivals)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(p: f64) -> UsageDistribution<f64> {
        UsageDistribution::Geometric { p }
    }

    #[test]
    fn validate_accepts_the_tight_instance_shape() {
        let resources = vec![
            Resource {
                reward: 1.0,
                dist: geom(0.5),
            },
            Resource {
                reward: 1.1,
                dist: geom(0.5),
            },
        ];
        let arrivals = vec![vec![0, 1], vec![1]];
        assert!(validate_parts(2, &resources, &arrivals).is_ok());
    }

    #[test]
    fn validate_flags_unnormalized_pmf() {
        let resources = vec![Resource {
            reward: 1.0,
            dist: UsageDistribution::FiniteSupport {
                pmf: vec![(1, 0.5), (2, 0.4)],
            },
        }];
        let report = validate_parts(1, &resources, &[vec![0]]);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::PmfNotNormalized { resource: 0, sum } if (sum - 0.9).abs() < 1e-12)));
    }

    #[test]
    fn validate_flags_out_of_range_arrival() {
        let resources = vec![
            Resource {
                reward: 1.0,
                dist: geom(0.5),
            },
            Resource {
                reward: 2.0,
                dist: geom(0.5),
            },
        ];
        let report = validate_parts(1, &resources, &[vec![2]]);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::ArrivalIndexOutOfRange { index: 2, n: 2, .. })));
    }

    #[test]
    fn canonicalization_sorts_rewards_and_remaps_arrivals() {
        let instance = Instance::new(
            2,
            vec![
                Resource {
                    reward: 2.0,
                    dist: geom(0.3),
                },
                Resource {
                    reward: 1.0,
                    dist: geom(0.7),
                },
            ],
            vec![vec![0], vec![1, 0]],
        )
        .unwrap();
        assert_eq!(instance.reward(0), 1.0);
        assert_eq!(instance.reward(1), 2.0);
        // Original resource 0 (reward 2.0) is canonical index 1.
        assert_eq!(instance.arrivals_at(1), &[1]);
        assert_eq!(instance.arrivals_at(2), &[0, 1]);
        assert_eq!(instance.permutation(), &[1, 0]);
    }

    #[test]
    fn canonicalization_is_idempotent() {
        let first = Instance::new(
            2,
            vec![
                Resource {
                    reward: 5.0,
                    dist: geom(0.2),
                },
                Resource {
                    reward: 1.0,
                    dist: geom(0.9),
                },
                Resource {
                    reward: 3.0,
                    dist: UsageDistribution::FiniteSupport {
                        pmf: vec![(2, 1.0)],
                    },
                },
            ],
            vec![vec![0, 2], vec![1]],
        )
        .unwrap();
        let second = Instance::new(
            first.horizon(),
            first.resources().to_vec(),
            first.arrivals().to_vec(),
        )
        .unwrap();
        assert_eq!(first.resources(), second.resources());
        assert_eq!(first.arrivals(), second.arrivals());
        assert_eq!(second.permutation(), &[0, 1, 2]);
        assert_eq!(first.stable_hash(), second.stable_hash());
    }

    #[test]
    fn p_min_examples() {
        let instance = Instance::new(
            1,
            vec![
                Resource {
                    reward: 1.0,
                    dist: geom(0.3),
                },
                Resource {
                    reward: 2.0,
                    dist: UsageDistribution::FiniteSupport {
                        pmf: vec![(1, 0.5), (2, 0.5)],
                    },
                },
            ],
            vec![vec![0, 1]],
        )
        .unwrap();
        assert_eq!(instance.p_min(), 0.3);

        let immediate = Instance::new(
            1,
            vec![Resource {
                reward: 1.0,
                dist: geom(1.0),
            }],
            vec![vec![0]],
        )
        .unwrap();
        assert_eq!(immediate.p_min(), 1.0);

        let no_mass_at_one = Instance::new(
            1,
            vec![Resource {
                reward: 1.0,
                dist: UsageDistribution::FiniteSupport {
                    pmf: vec![(2, 1.0)],
                },
            }],
            vec![vec![0]],
        )
        .unwrap();
        assert_eq!(no_mass_at_one.p_min(), 0.0);
    }

    #[test]
    fn tight_example_matches_its_definition() {
        let instance = tight_example(0.5, 0.1).unwrap();
        assert_eq!(instance.horizon(), 2);
        assert_eq!(instance.reward(0), 1.0);
        assert_eq!(instance.reward(1), 1.1);
        assert_eq!(instance.arrivals_at(1), &[0, 1]);
        assert_eq!(instance.arrivals_at(2), &[1]);
        assert!(instance.is_geometric_only());

        let non_reusable = tight_example(0.0, 0.1).unwrap();
        assert!(!non_reusable.is_geometric_only());
        assert_eq!(non_reusable.resource(0).dist, UsageDistribution::point(3));
        assert_eq!(non_reusable.p_min(), 0.0);

        let immediate = tight_example(1.0, 0.5).unwrap();
        assert_eq!(immediate.p_min(), 1.0);

        assert!(tight_example(0.5, 0.0).is_err());
        assert!(tight_example(0.5, -1.0).is_err());
        assert!(tight_example(1.5, 0.1).is_err());
    }

    #[test]
    fn hazard_and_survival_for_finite_support() {
        let dist: UsageDistribution<f64> = UsageDistribution::FiniteSupport {
            pmf: vec![(1, 0.25), (3, 0.75)],
        };
        assert_eq!(dist.pr_one(), 0.25);
        assert_eq!(dist.survival(0), 1.0);
        assert_eq!(dist.survival(1), 0.75);
        assert_eq!(dist.survival(2), 0.75);
        assert_eq!(dist.survival(3), 0.0);
        assert_eq!(dist.hazard_after(0), 0.25);
        assert_eq!(dist.hazard_after(1), 0.0); // no mass at 2
        assert_eq!(dist.hazard_after(2), 1.0); // must return at 3
        assert_eq!(dist.status_count(), 3);
    }

    #[test]
    fn geometric_sampling_inverts_the_cdf() {
        let dist: UsageDistribution<f64> = UsageDistribution::Geometric { p: 0.5 };
        assert_eq!(dist.sample(0.0, 100), 1);
        assert_eq!(dist.sample(0.49, 100), 1);
        assert_eq!(dist.sample(0.51, 100), 2);
        assert_eq!(dist.sample(0.76, 100), 3);
        assert_eq!(dist.sample(0.999999999999999, 3), 3); // capped

        let point: UsageDistribution<f64> = UsageDistribution::point(4);
        assert_eq!(point.sample(0.9999, 100), 4);
    }

    #[test]
    fn random_instance_is_deterministic_in_seed() {
        let params = GeneratorParams {
            n: 3,
            horizon: 4,
            family: DistributionFamily::Geometric {
                p_range: (0.2, 0.8),
            },
            density: 0.7,
            reward_range: (0.0, 10.0),
        };
        let a: Instance<f64> = random_instance(&params, 7).unwrap();
        let b: Instance<f64> = random_instance(&params, 7).unwrap();
        let c: Instance<f64> = random_instance(&params, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.stable_hash(), b.stable_hash());
        assert_ne!(a.stable_hash(), c.stable_hash());
        assert!(a.validate().is_ok());
    }

    #[test]
    fn random_instance_accepts_boundary_sizes() {
        let minimal = GeneratorParams {
            n: 1,
            horizon: 1,
            family: DistributionFamily::Geometric {
                p_range: (0.5, 0.5),
            },
            density: 1.0,
            reward_range: (1.0, 1.0),
        };
        assert!(random_instance::<f64>(&minimal, 0).is_ok());

        let maximal = GeneratorParams {
            n: MAX_GENERATOR_N,
            horizon: MAX_GENERATOR_T,
            family: DistributionFamily::Mixed {
                p_range: (0.1, 1.0),
                max_duration: 3,
            },
            density: 0.5,
            reward_range: (0.0, 1.0),
        };
        assert!(random_instance::<f64>(&maximal, 3).is_ok());

        let too_big = GeneratorParams {
            n: MAX_GENERATOR_N + 1,
            ..minimal
        };
        assert!(random_instance::<f64>(&too_big, 0).is_err());
    }

    #[test]
    fn canonical_key_collapses_geometric_ages() {
        let instance = tight_example(0.5, 0.1).unwrap();
        let mut state = SystemState::all_available(2);
        assert_eq!(state.canonical_key(&instance), 0);
        state.set_status(1, ResourceStatus::Busy { age: 1 });
        let key1 = state.canonical_key(&instance);
        state.set_status(1, ResourceStatus::Busy { age: 7 });
        assert_eq!(state.canonical_key(&instance), key1);
        assert_eq!(key1, 2); // busy bitmask 0b10
    }
}
