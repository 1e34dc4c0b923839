//! Brute-force exact event probabilities on tiny instances.
//!
//! Two independent enumeration engines cover the two couplings:
//!
//! * [`enumerate_bernoulli`] iterates every return-indicator matrix
//!   `{P_{i,t}} in {0,1}^(N x T)` (geometric instances, at most 2^20
//!   atoms) and replays both systems on each;
//! * [`enumerate_stack`] recurses over the duration draws of the stack
//!   coupling (finite-support instances, branch count guarded at 1e6),
//!   replaying with exactly the simulator's stack semantics.
//!
//! Every atom's replay runs through the same pathwise-invariant checks
//! as a simulated trace, so a claim violation anywhere in the
//! probability space surfaces as an error. Accumulation is compensated
//! and chunk-ordered, hence deterministic under parallel evaluation.

use rayon::prelude::*;
use serde::Serialize;

use crate::coupling::{run_coupled, CoupledTrace, CouplingDraws, CouplingScheme};
use crate::error::{Error, Result};
use crate::instance::{Instance, UsageDistribution};
use crate::policy::{Action, Policy};
use crate::scalar::Real;
use crate::tol;
use crate::util::KahanSum;

/// Largest `N * T` for the Bernoulli matrix enumeration (2^20 atoms).
pub const MAX_BERNOULLI_CELLS: usize = 20;
/// Largest number of recursion branches for the stack enumeration.
pub const MAX_STACK_BRANCHES: u64 = 1_000_000;

/// A pathwise witness that the benchmark matched a resource without the
/// blocking event while the primary's reward that step was smaller.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Eq1Witness {
    /// Atom index (matrix bits for the Bernoulli engine, leaf ordinal
    /// for the stack engine).
    pub atom: u64,
    pub step: usize,
    pub resource: usize,
}

/// Exact expectations and per-(resource, step) event probabilities,
/// from exhaustive enumeration of the coupled randomness.
#[derive(Clone, Debug, Serialize)]
pub struct ExactEventTable<F> {
    pub scheme: CouplingScheme,
    pub n: usize,
    pub horizon: usize,
    pub atom_count: u64,
    /// Sum of atom probabilities; 1 within [`tol::EXACT`].
    pub total_probability: F,
    pub primary_reward: F,
    pub benchmark_reward: F,
    /// Expected total reward of lost matches.
    pub lost: F,
    /// `E[sum_t r*(I_t)]` under the primary.
    pub primary_rstar_sum: F,
    /// `sum_{i,t} r_i Pr(A*_t = A_t = i)`.
    pub coincidence_reward: F,
    /// `Pr(A*_t = i, O_{it})`, indexed `[i][t-1]`.
    pub pr_lost: Vec<Vec<F>>,
    /// `Pr(A*_t = A_t = i)`.
    pub pr_coincidence: Vec<Vec<F>>,
    /// `Pr(A*_t = i)`.
    pub pr_benchmark_match: Vec<Vec<F>>,
    /// `Pr(F_{it})`: resource unavailable at the end of step `t` under
    /// the primary (busy through the step or matched during it).
    pub pr_blocked_after: Vec<Vec<F>>,
    /// `Pr(F*_{it})`: the benchmark analog.
    pub pr_benchmark_blocked_after: Vec<Vec<F>>,
    /// `Pr(F_{it} and not F*_{it})`: the history precondition of a
    /// next-step lost match.
    pub pr_blocked_gap: Vec<Vec<F>>,
    /// First term of the benchmark-reward decomposition,
    /// `E[sum_{t,i} r_i 1(A*_t = i, not O_{it})]`.
    pub eq1_first_term: F,
    /// First pathwise failure of "the primary out-earns a non-blocked
    /// benchmark match", if any exists.
    pub eq1_witness: Option<Eq1Witness>,
}

// ---------------------------------------------------------------------------
// Accumulation shared by both engines.
// ---------------------------------------------------------------------------

struct Accumulator<F> {
    total_probability: KahanSum<F>,
    primary_reward: KahanSum<F>,
    benchmark_reward: KahanSum<F>,
    lost: KahanSum<F>,
    primary_rstar_sum: KahanSum<F>,
    coincidence_reward: KahanSum<F>,
    pr_lost: Vec<Vec<KahanSum<F>>>,
    pr_coincidence: Vec<Vec<KahanSum<F>>>,
    pr_benchmark_match: Vec<Vec<KahanSum<F>>>,
    pr_blocked_after: Vec<Vec<KahanSum<F>>>,
    pr_benchmark_blocked_after: Vec<Vec<KahanSum<F>>>,
    pr_blocked_gap: Vec<Vec<KahanSum<F>>>,
    eq1_first_term: KahanSum<F>,
    eq1_witness: Option<Eq1Witness>,
    atom_count: u64,
}

impl<F: Real> Accumulator<F> {
    fn new(n: usize, horizon: usize) -> Self {
        let matrix = || vec![vec![KahanSum::new(); horizon]; n];
        Self {
            total_probability: KahanSum::new(),
            primary_reward: KahanSum::new(),
            benchmark_reward: KahanSum::new(),
            lost: KahanSum::new(),
            primary_rstar_sum: KahanSum::new(),
            coincidence_reward: KahanSum::new(),
            pr_lost: matrix(),
            pr_coincidence: matrix(),
            pr_benchmark_match: matrix(),
            pr_blocked_after: matrix(),
            pr_benchmark_blocked_after: matrix(),
            pr_blocked_gap: matrix(),
            eq1_first_term: KahanSum::new(),
            eq1_witness: None,
            atom_count: 0,
        }
    }

    fn absorb(&mut self, instance: &Instance<F>, trace: &CoupledTrace<F>, weight: F, atom: u64) {
        self.atom_count += 1;
        self.total_probability.add(weight);
        if weight == F::zero() {
            return;
        }
        self.primary_reward
            .add(weight * trace.totals.primary_reward);
        self.benchmark_reward
            .add(weight * trace.totals.benchmark_reward);
        self.lost.add(weight * trace.totals.lost);
        self.primary_rstar_sum
            .add(weight * trace.totals.primary_rstar_sum);
        self.coincidence_reward
            .add(weight * trace.totals.coincidence_reward);

        let n = trace.n;
        for record in &trace.steps {
            let col = record.t - 1;
            if let Action::Match { resource } = record.benchmark_action {
                self.pr_benchmark_match[resource][col].add(weight);
                if record.lost.is_some() {
                    self.pr_lost[resource][col].add(weight);
                } else {
                    // Not a blocking event: the decomposition's first term.
                    self.eq1_first_term.add(weight * instance.reward(resource));
                    let primary_step_reward = match record.primary_action {
                        Action::Match { resource } => instance.reward(resource),
                        Action::NoMatch => F::zero(),
                    };
                    if primary_step_reward < instance.reward(resource) && self.eq1_witness.is_none()
                    {
                        self.eq1_witness = Some(Eq1Witness {
                            atom,
                            step: record.t,
                            resource,
                        });
                    }
                }
            }
            if let Some(i) = record.coincidence {
                self.pr_coincidence[i][col].add(weight);
            }
            for i in 0..n {
                let bit = 1u32 << i;
                let blocked = record.primary_available & bit == 0
                    || record.primary_action == (Action::Match { resource: i });
                let benchmark_blocked = record.benchmark_available & bit == 0
                    || record.benchmark_action == (Action::Match { resource: i });
                if blocked {
                    self.pr_blocked_after[i][col].add(weight);
                }
                if benchmark_blocked {
                    self.pr_benchmark_blocked_after[i][col].add(weight);
                }
                if blocked && !benchmark_blocked {
                    self.pr_blocked_gap[i][col].add(weight);
                }
            }
        }
    }

    fn merge(&mut self, other: Accumulator<F>) {
        self.atom_count += other.atom_count;
        self.total_probability.add(other.total_probability.value());
        self.primary_reward.add(other.primary_reward.value());
        self.benchmark_reward.add(other.benchmark_reward.value());
        self.lost.add(other.lost.value());
        self.primary_rstar_sum.add(other.primary_rstar_sum.value());
        self.coincidence_reward
            .add(other.coincidence_reward.value());
        self.eq1_first_term.add(other.eq1_first_term.value());
        let merge_matrix = |a: &mut Vec<Vec<KahanSum<F>>>, b: &Vec<Vec<KahanSum<F>>>| {
            for (row_a, row_b) in a.iter_mut().zip(b) {
                for (cell_a, cell_b) in row_a.iter_mut().zip(row_b) {
                    cell_a.add(cell_b.value());
                }
            }
        };
        merge_matrix(&mut self.pr_lost, &other.pr_lost);
        merge_matrix(&mut self.pr_coincidence, &other.pr_coincidence);
        merge_matrix(&mut self.pr_benchmark_match, &other.pr_benchmark_match);
        merge_matrix(&mut self.pr_blocked_after, &other.pr_blocked_after);
        merge_matrix(
            &mut self.pr_benchmark_blocked_after,
            &other.pr_benchmark_blocked_after,
        );
        merge_matrix(&mut self.pr_blocked_gap, &other.pr_blocked_gap);
        self.eq1_witness = match (self.eq1_witness, other.eq1_witness) {
            (Some(a), Some(b)) => Some(if a.atom <= b.atom { a } else { b }),
            (a, b) => a.or(b),
        };
    }

    fn finish(self, scheme: CouplingScheme, n: usize, horizon: usize) -> ExactEventTable<F> {
        let value_matrix = |m: Vec<Vec<KahanSum<F>>>| -> Vec<Vec<F>> {
            m.into_iter()
                .map(|row| row.into_iter().map(|c| c.value()).collect())
                .collect()
        };
        ExactEventTable {
            scheme,
            n,
            horizon,
            atom_count: self.atom_count,
            total_probability: self.total_probability.value(),
            primary_reward: self.primary_reward.value(),
            benchmark_reward: self.benchmark_reward.value(),
            lost: self.lost.value(),
            primary_rstar_sum: self.primary_rstar_sum.value(),
            coincidence_reward: self.coincidence_reward.value(),
            pr_lost: value_matrix(self.pr_lost),
            pr_coincidence: value_matrix(self.pr_coincidence),
            pr_benchmark_match: value_matrix(self.pr_benchmark_match),
            pr_blocked_after: value_matrix(self.pr_blocked_after),
            pr_benchmark_blocked_after: value_matrix(self.pr_benchmark_blocked_after),
            pr_blocked_gap: value_matrix(self.pr_blocked_gap),
            eq1_first_term: self.eq1_first_term.value(),
            eq1_witness: self.eq1_witness,
        }
    }
}

// ---------------------------------------------------------------------------
// Bernoulli engine: iterate every return-indicator matrix.
// ---------------------------------------------------------------------------

/// Return indicators fixed by an atom's bit matrix; durations are never
/// drawn under the Bernoulli scheme.
struct MatrixDraws {
    bits: u64,
    horizon: usize,
}

impl<F: Real> CouplingDraws<F> for MatrixDraws {
    fn return_indicator(&mut self, resource: usize, step: usize, _p: F) -> bool {
        let cell = resource * self.horizon + (step - 1);
        self.bits & (1 << cell) != 0
    }

    fn duration(
        &mut self,
        _dist: &UsageDistribution<F>,
        _resource: usize,
        _step: usize,
        _slot: u64,
        _cap: u32,
    ) -> u32 {
        unreachable!("duration draws do not occur under the Bernoulli coupling")
    }
}

/// Exact event table for the shared-Bernoulli coupling by iterating all
/// `2^(N*T)` indicator matrices. Geometric-only instances with
/// `N * T <= 20`.
pub fn enumerate_bernoulli<F: Real + Serialize>(
    instance: &Instance<F>,
    primary: &dyn Policy<F>,
    benchmark: &dyn Policy<F>,
) -> Result<ExactEventTable<F>> {
    if !instance.is_geometric_only() {
        return Err(Error::SchemeMismatch(
            "Bernoulli enumeration needs geometric usage durations".to_string(),
        ));
    }
    let n = instance.n();
    let horizon = instance.horizon();
    let cells = n * horizon;
    if cells > MAX_BERNOULLI_CELLS {
        return Err(Error::StateSpaceGuard {
            detail: format!("Bernoulli enumeration needs N*T <= {MAX_BERNOULLI_CELLS}"),
            size: (1u128) << cells,
        });
    }
    for policy in [primary, benchmark] {
        if !policy.is_deterministic() {
            return Err(Error::NonDeterministicPolicy(policy.name().to_string()));
        }
    }

    let ps: Vec<F> = (0..n).map(|i| instance.resource(i).dist.pr_one()).collect();
    let atom_weight = |bits: u64| -> F {
        let mut w = F::one();
        for (i, &p) in ps.iter().enumerate() {
            for t in 0..horizon {
                let cell = i * horizon + t;
                if bits & (1 << cell) != 0 {
                    w *= p;
                } else {
                    w *= F::one() - p;
                }
            }
        }
        w
    };

    let atoms: u64 = 1 << cells;
    // Fixed chunk boundaries keep the compensated sums deterministic
    // under any thread schedule.
    let chunk_size: u64 = (atoms / 256).max(16);
    let chunk_count = atoms.div_ceil(chunk_size);

    let chunks: Result<Vec<Accumulator<F>>> = (0..chunk_count)
        .into_par_iter()
        .map(|chunk| {
            let mut acc = Accumulator::new(n, horizon);
            let lo = chunk * chunk_size;
            let hi = (lo + chunk_size).min(atoms);
            for bits in lo..hi {
                let weight = atom_weight(bits);
                let mut draws = MatrixDraws { bits, horizon };
                let trace = run_coupled(
                    instance,
                    primary,
                    benchmark,
                    CouplingScheme::Bernoulli,
                    &mut draws,
                    0,
                    bits,
                )?;
                acc.absorb(instance, &trace, weight, bits);
            }
            Ok(acc)
        })
        .collect();

    let mut total = Accumulator::new(n, horizon);
    for acc in chunks? {
        total.merge(acc);
    }
    let table = total.finish(CouplingScheme::Bernoulli, n, horizon);
    debug_assert!(
        (table.total_probability.to_f64_lossy() - 1.0).abs() < tol::EXACT,
        "atom probabilities must sum to 1"
    );
    Ok(table)
}

// ---------------------------------------------------------------------------
// Stack engine: depth-first recursion over duration draws.
// ---------------------------------------------------------------------------

/// Replays one branch: draw events consume a prefix of fixed choices,
/// then take option 0; the replay records every event's branching
/// factor and the branch probability.
struct TapeDraws<'a, F> {
    prefix: &'a [usize],
    cursor: usize,
    options_seen: Vec<usize>,
    weight: F,
}

impl<F: Real> CouplingDraws<F> for TapeDraws<'_, F> {
    fn return_indicator(&mut self, _resource: usize, _step: usize, _p: F) -> bool {
        unreachable!("return indicators do not occur under the stack coupling")
    }

    fn duration(
        &mut self,
        dist: &UsageDistribution<F>,
        _resource: usize,
        _step: usize,
        _slot: u64,
        _cap: u32,
    ) -> u32 {
        let pmf = match dist {
            UsageDistribution::FiniteSupport { pmf } => pmf,
            UsageDistribution::Geometric { .. } => {
                unreachable!("stack enumeration rejects geometric durations up front")
            }
        };
        let choice = self.prefix.get(self.cursor).copied().unwrap_or(0);
        self.cursor += 1;
        self.options_seen.push(pmf.len());
        let (duration, prob) = pmf[choice];
        self.weight *= prob;
        duration
    }
}

/// Exact event table for the stack coupling by branching on every
/// duration draw. Finite-support instances only (geometric durations
/// have unbounded support; use [`enumerate_bernoulli`]).
pub fn enumerate_stack<F: Real + Serialize>(
    instance: &Instance<F>,
    primary: &dyn Policy<F>,
    benchmark: &dyn Policy<F>,
) -> Result<ExactEventTable<F>> {
    if instance.resources().iter().any(|r| r.dist.is_geometric()) {
        return Err(Error::SchemeMismatch(
            "stack enumeration needs finite-support durations everywhere".to_string(),
        ));
    }
    for policy in [primary, benchmark] {
        if !policy.is_deterministic() {
            return Err(Error::NonDeterministicPolicy(policy.name().to_string()));
        }
    }

    let n = instance.n();
    let horizon = instance.horizon();
    let mut acc = Accumulator::new(n, horizon);
    let mut prefix: Vec<usize> = Vec::new();
    let mut leaf: u64 = 0;
    loop {
        if leaf >= MAX_STACK_BRANCHES {
            return Err(Error::StateSpaceGuard {
                detail: format!("stack enumeration exceeds {MAX_STACK_BRANCHES} branches"),
                size: leaf as u128,
            });
        }
        let mut draws = TapeDraws {
            prefix: &prefix,
            cursor: 0,
            options_seen: Vec::new(),
            weight: F::one(),
        };
        let trace = run_coupled(
            instance,
            primary,
            benchmark,
            CouplingScheme::Stack,
            &mut draws,
            0,
            leaf,
        )?;
        let weight = draws.weight;
        let mut choices: Vec<usize> = prefix.clone();
        choices.resize(draws.options_seen.len(), 0);
        acc.absorb(instance, &trace, weight, leaf);
        leaf += 1;

        // Odometer: advance the deepest draw that still has options.
        let options = draws.options_seen;
        let mut depth = choices.len();
        loop {
            if depth == 0 {
                let table = acc.finish(CouplingScheme::Stack, n, horizon);
                debug_assert!(
                    (table.total_probability.to_f64_lossy() - 1.0).abs() < tol::EXACT,
                    "branch probabilities must sum to 1"
                );
                return Ok(table);
            }
            if choices[depth - 1] + 1 < options[depth - 1] {
                choices[depth - 1] += 1;
                choices.truncate(depth);
                prefix = choices;
                break;
            }
            depth -= 1;
        }
    }
}

// ---------------------------------------------------------------------------
// The geometric lost-match lemma.
// ---------------------------------------------------------------------------

/// One `(resource, step)` margin of the lemma
/// `Pr(A*_t = A_t = i) >= p/(1-p) * Pr(A*_t = i, O_{it})`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Lemma1Entry<F> {
    /// 0-based resource index.
    pub resource: usize,
    /// 1-based step.
    pub step: usize,
    pub pr_coincidence: F,
    pub pr_lost: F,
    /// `lhs - p/(1-p) * rhs`; at `p = 1` the requirement degenerates to
    /// `Pr(A*_t = i, O_{it}) = 0` and the margin is `-pr_lost`.
    pub margin: F,
    pub pass: bool,
}

/// Per-(resource, step) verification of the lemma on an exact table.
#[derive(Clone, Debug, Serialize)]
pub struct Lemma1Report<F> {
    pub p_min: F,
    pub pass: bool,
    pub entries: Vec<Lemma1Entry<F>>,
}

/// Checks the geometric lost-match lemma on every `(i, t)` of a
/// Bernoulli-coupling event table, with tolerance [`tol::EXACT`].
pub fn lemma1_check<F: Real>(
    table: &ExactEventTable<F>,
    instance: &Instance<F>,
) -> Result<Lemma1Report<F>> {
    if table.scheme != CouplingScheme::Bernoulli {
        return Err(Error::SchemeMismatch(
            "the lost-match lemma is specific to the shared-Bernoulli coupling".to_string(),
        ));
    }
    let p = instance.p_min();
    let tolerance = F::from_f64_lossy(tol::EXACT);
    let degenerate = p >= F::one();
    let factor = if degenerate {
        F::zero() // unused
    } else {
        p / (F::one() - p)
    };

    let mut entries = Vec::with_capacity(table.n * table.horizon);
    let mut pass = true;
    for i in 0..table.n {
        for t in 1..=table.horizon {
            let lhs = table.pr_coincidence[i][t - 1];
            let rhs = table.pr_lost[i][t - 1];
            let margin = if degenerate { -rhs } else { lhs - factor * rhs };
            let entry_pass = margin >= -tolerance;
            pass &= entry_pass;
            entries.push(Lemma1Entry {
                resource: i,
                step: t,
                pr_coincidence: lhs,
                pr_lost: rhs,
                margin,
                pass: entry_pass,
            });
        }
    }
    Ok(Lemma1Report {
        p_min: p,
        pass,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{evaluate_policy, opt_policy, solve_opt};
    use crate::instance::{tight_example, Instance, Resource, UsageDistribution};
    use crate::policy::Greedy;
    use std::sync::Arc;

    const TOL: f64 = 1e-12;

    fn tight_with_opt(p: f64, delta: f64) -> (Instance<f64>, crate::dp::OptTablePolicy<f64>) {
        let instance: Instance<f64> = tight_example(p, delta).unwrap();
        let table = Arc::new(solve_opt(&instance).unwrap());
        let policy = opt_policy(table);
        (instance, policy)
    }

    /// Finite-support encoding of the tight instance: duration 1 with
    /// probability `p`, otherwise beyond the horizon. Within two steps
    /// it has the same law as the geometric encoding.
    fn tight_finite(p: f64, delta: f64) -> Instance<f64> {
        let dist = UsageDistribution::FiniteSupport {
            pmf: vec![(1, p), (3, 1.0 - p)],
        };
        Instance::new(
            2,
            vec![
                Resource {
                    reward: 1.0,
                    dist: dist.clone(),
                },
                Resource {
                    reward: 1.0 + delta,
                    dist,
                },
            ],
            vec![vec![0, 1], vec![1]],
        )
        .unwrap()
    }

    #[test]
    fn tight_example_event_probabilities() {
        let (instance, opt) = tight_with_opt(0.5, 0.1);
        let table = enumerate_bernoulli(&instance, &Greedy, &opt).unwrap();

        assert_eq!(table.atom_count, 16); // {0,1}^(2x2)
        assert!((table.total_probability - 1.0).abs() < TOL);
        // Hand enumeration: the only randomness that matters is
        // P_{2,2}. Lost match and coincidence at (i=2, t=2) each with
        // probability 1/2.
        assert!((table.pr_lost[1][1] - 0.5).abs() < TOL);
        assert!((table.pr_coincidence[1][1] - 0.5).abs() < TOL);
        assert!((table.lost - 0.55).abs() < TOL);
        assert!((table.primary_reward - 1.65).abs() < TOL);
        assert!((table.benchmark_reward - 2.1).abs() < TOL);
        assert!((table.primary_rstar_sum - 2.15).abs() < TOL);
    }

    #[test]
    fn oracle_totals_match_the_dynamic_program() {
        let (instance, opt) = tight_with_opt(0.5, 0.1);
        let table = enumerate_bernoulli(&instance, &Greedy, &opt).unwrap();
        let solved = solve_opt(&instance).unwrap();
        let greedy_value = evaluate_policy(&instance, &Greedy).unwrap();
        assert!((table.benchmark_reward - solved.opt_value()).abs() < TOL);
        assert!((table.primary_reward - greedy_value).abs() < TOL);
    }

    #[test]
    fn lemma_margin_is_zero_on_the_tight_example() {
        for p in [0.3, 0.5] {
            let (instance, opt) = tight_with_opt(p, 0.1);
            let table = enumerate_bernoulli(&instance, &Greedy, &opt).unwrap();
            let report = lemma1_check(&table, &instance).unwrap();
            assert!(report.pass);
            let entry = report
                .entries
                .iter()
                .find(|e| e.resource == 1 && e.step == 2)
                .unwrap();
            // Pr(coincidence) = p, Pr(lost) = 1-p: the lemma is tight.
            assert!((entry.pr_coincidence - p).abs() < TOL);
            assert!((entry.pr_lost - (1.0 - p)).abs() < TOL);
            assert!(entry.margin.abs() < TOL);
        }
    }

    #[test]
    fn lemma_degenerates_gracefully_at_p_one() {
        let (instance, opt) = tight_with_opt(1.0, 0.1);
        let table = enumerate_bernoulli(&instance, &Greedy, &opt).unwrap();
        let report = lemma1_check(&table, &instance).unwrap();
        assert!(report.pass);
        for entry in &report.entries {
            assert!(entry.pr_lost.abs() < TOL);
        }
        assert!(table.lost.abs() < TOL);
    }

    #[test]
    fn stack_enumeration_agrees_with_bernoulli_on_the_tight_instance() {
        let (geometric, opt_g) = tight_with_opt(0.5, 0.1);
        let bernoulli = enumerate_bernoulli(&geometric, &Greedy, &opt_g).unwrap();

        let finite = tight_finite(0.5, 0.1);
        let table = Arc::new(solve_opt(&finite).unwrap());
        let opt_f = opt_policy(table);
        let stack = enumerate_stack(&finite, &Greedy, &opt_f).unwrap();

        assert!((stack.total_probability - 1.0).abs() < TOL);
        assert!((stack.lost - bernoulli.lost).abs() < TOL);
        assert!((stack.primary_reward - bernoulli.primary_reward).abs() < TOL);
        assert!((stack.benchmark_reward - bernoulli.benchmark_reward).abs() < TOL);
        assert!((stack.pr_lost[1][1] - bernoulli.pr_lost[1][1]).abs() < TOL);
        assert!((stack.pr_coincidence[1][1] - bernoulli.pr_coincidence[1][1]).abs() < TOL);
    }

    #[test]
    fn deterministic_unit_durations_have_a_single_branch_and_no_loss() {
        let instance = Instance::new(
            3,
            vec![
                Resource {
                    reward: 1.0,
                    dist: UsageDistribution::point(1),
                },
                Resource {
                    reward: 2.0,
                    dist: UsageDistribution::point(1),
                },
            ],
            vec![vec![0, 1], vec![0], vec![0, 1]],
        )
        .unwrap();
        let table = Arc::new(solve_opt(&instance).unwrap());
        let opt = opt_policy(table);
        let stack: ExactEventTable<f64> = enumerate_stack(&instance, &Greedy, &opt).unwrap();
        assert_eq!(stack.atom_count, 1);
        assert!((stack.total_probability - 1.0).abs() < TOL);
        assert_eq!(stack.lost, 0.0);
    }

    #[test]
    fn non_reusable_tight_instance_loses_the_high_reward_once() {
        let instance: Instance<f64> = tight_example(0.0, 0.1).unwrap();
        let table = Arc::new(solve_opt(&instance).unwrap());
        let opt = opt_policy(table);
        let stack: ExactEventTable<f64> = enumerate_stack(&instance, &Greedy, &opt).unwrap();
        assert_eq!(stack.atom_count, 1);
        assert!((stack.lost - 1.1).abs() < TOL);
        assert!((stack.primary_reward - 1.1).abs() < TOL);
        assert!((stack.benchmark_reward - 2.1).abs() < TOL);
        // The first-term bound is tight here: 2.1 - 1.1 = 1.0 <= 1.1.
        assert!((stack.eq1_first_term - 1.0).abs() < TOL);
    }

    #[test]
    fn guards_reject_oversized_and_mismatched_inputs() {
        let (geometric, opt) = tight_with_opt(0.5, 0.1);
        assert!(matches!(
            enumerate_stack(&geometric, &Greedy, &opt),
            Err(Error::SchemeMismatch(_))
        ));

        let finite = tight_finite(0.5, 0.1);
        let table = Arc::new(solve_opt(&finite).unwrap());
        let opt_f = opt_policy(table);
        assert!(matches!(
            enumerate_bernoulli(&finite, &Greedy, &opt_f),
            Err(Error::SchemeMismatch(_))
        ));

        let resources: Vec<Resource<f64>> = (0..3)
            .map(|i| Resource {
                reward: i as f64,
                dist: UsageDistribution::Geometric { p: 0.5 },
            })
            .collect();
        let arrivals = vec![vec![0usize, 1, 2]; 7];
        let big = Instance::new(7, resources, arrivals).unwrap();
        let table = Arc::new(solve_opt(&big).unwrap());
        let opt_b = opt_policy(table);
        assert!(matches!(
            enumerate_bernoulli(&big, &Greedy, &opt_b),
            Err(Error::StateSpaceGuard { .. })
        ));
    }

    #[test]
    fn eq1_decomposition_is_an_identity_on_the_tight_example() {
        let (instance, opt) = tight_with_opt(0.5, 0.1);
        let table = enumerate_bernoulli(&instance, &Greedy, &opt).unwrap();
        // Benchmark reward splits exactly into the first term and LOST.
        assert!((table.eq1_first_term + table.lost - table.benchmark_reward).abs() < TOL);
        assert!((table.eq1_first_term - 1.55).abs() < TOL);
        // And the first term is bounded by the primary's reward here.
        assert!(table.eq1_first_term <= table.primary_reward + TOL);
    }
}
