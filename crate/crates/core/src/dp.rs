//! Exact finite-horizon dynamic programming: the clairvoyant optimum
//! and exact evaluation of deterministic policies.
//!
//! The benchmark is the optimal adaptive policy of the induced MDP: it
//! knows every arrival set in advance but observes usage durations only
//! as they resolve. States are canonical availability vectors
//! ([`SystemState::canonical_key`]); the Bellman recursion runs
//! backward from the horizon with `V_{T+1} = 0`, and policy evaluation
//! propagates state masses forward under the same independent-returns
//! transition:
//!
//! * a geometric resource that is busy returns next step with
//!   probability `p_i` (memoryless, so one busy status per resource
//!   and states collapse to a bitmask over at most 14 resources);
//! * a finite-support resource busy at age `e` returns with hazard
//!   `Pr(D = e+1 | D > e)`, so states carry busy ages and the engine
//!   discovers the forward-reachable slice lazily (guarded at 1e7
//!   potential states).
//!
//! Ties in the Bellman argmax break toward the larger resource index,
//! with no-match last, so table policies are deterministic.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::instance::{Instance, ResourceStatus, SystemState};
use crate::policy::{Action, Policy};
use crate::scalar::Real;

/// Largest resource count solved densely for geometric-only instances.
pub const MAX_GEOMETRIC_N: usize = 14;
/// Largest age-augmented state-space size solved for instances with
/// finite-support durations.
pub const MAX_AGE_STATES: u128 = 10_000_000;

/// Number of canonical states the solver would have to consider:
/// `2^N` for geometric-only instances, otherwise the product of
/// per-resource status counts.
pub fn state_space_size<F: Real>(instance: &Instance<F>) -> u128 {
    if instance.is_geometric_only() {
        if instance.n() >= 127 {
            u128::MAX
        } else {
            1u128 << instance.n()
        }
    } else {
        instance
            .resources()
            .iter()
            .map(|r| r.dist.status_count() as u128)
            .fold(1u128, u128::saturating_mul)
    }
}

/// Enforces the documented state-space guards.
pub fn check_state_space_guard<F: Real>(instance: &Instance<F>) -> Result<()> {
    let size = state_space_size(instance);
    if instance.is_geometric_only() {
        if instance.n() > MAX_GEOMETRIC_N {
            return Err(Error::StateSpaceGuard {
                detail: format!(
                    "geometric-only instances need N <= {MAX_GEOMETRIC_N}, got N = {}",
                    instance.n()
                ),
                size,
            });
        }
    } else if size > MAX_AGE_STATES {
        return Err(Error::StateSpaceGuard {
            detail: format!("age-augmented state space exceeds {MAX_AGE_STATES}"),
            size,
        });
    }
    Ok(())
}

/// Solver knobs; `force` skips the state-space guard.
#[derive(Clone, Copy, Debug, Default)]
pub struct SolveOptions {
    pub force: bool,
}

#[derive(Clone, Copy, Debug)]
struct Entry<F> {
    value: F,
    best: Action,
}

#[derive(Clone, Debug)]
enum Layer<F> {
    Dense(Vec<Entry<F>>),
    Sparse(BTreeMap<u64, Entry<F>>),
}

impl<F: Real> Layer<F> {
    fn get(&self, key: u64) -> Option<Entry<F>> {
        match self {
            Layer::Dense(v) => v.get(key as usize).copied(),
            Layer::Sparse(m) => m.get(&key).copied(),
        }
    }
}

/// Value function and optimal action for every reachable canonical
/// state at every step. `V_{T+1} = 0` is implicit.
#[derive(Clone, Debug)]
pub struct ValueTable<F> {
    layers: Vec<Layer<F>>, // layers[t-1] holds step t, t = 1..=T
    opt_value: F,
    instance_hash: u64,
}

impl<F: Real> ValueTable<F> {
    /// The clairvoyant optimum: `V_1` at the all-available state.
    pub fn opt_value(&self) -> F {
        self.opt_value
    }

    /// Hash of the instance this table was solved for.
    pub fn instance_hash(&self) -> u64 {
        self.instance_hash
    }

    pub fn value_at_key(&self, t: usize, key: u64) -> Option<F> {
        self.layers
            .get(t - 1)
            .and_then(|l| l.get(key))
            .map(|e| e.value)
    }

    pub fn best_action_at_key(&self, t: usize, key: u64) -> Option<Action> {
        self.layers
            .get(t - 1)
            .and_then(|l| l.get(key))
            .map(|e| e.best)
    }

    pub fn value(&self, t: usize, state: &SystemState, instance: &Instance<F>) -> Option<F> {
        self.value_at_key(t, state.canonical_key(instance))
    }

    pub fn best_action(
        &self,
        t: usize,
        state: &SystemState,
        instance: &Instance<F>,
    ) -> Option<Action> {
        self.best_action_at_key(t, state.canonical_key(instance))
    }

    /// Keys of the states materialized at step `t`, ascending.
    pub fn keys_at(&self, t: usize) -> Vec<u64> {
        match &self.layers[t - 1] {
            Layer::Dense(v) => (0..v.len() as u64).collect(),
            Layer::Sparse(m) => m.keys().copied().collect(),
        }
    }
}

/// Decodes a canonical key back into statuses (inverse of
/// [`SystemState::canonical_key`]; geometric busy ages come back as 1).
pub fn decode_key<F: Real>(mut key: u64, instance: &Instance<F>) -> SystemState {
    let mut state = SystemState::all_available(instance.n());
    for i in 0..instance.n() {
        let count = instance.resource(i).dist.status_count();
        let digit = key % count;
        key /= count;
        if digit > 0 {
            state.set_status(i, ResourceStatus::Busy { age: digit as u32 });
        }
    }
    state
}

/// Feasible actions at `(t, state)`: no-match plus every available
/// incident resource, ascending.
fn feasible_actions<F: Real>(instance: &Instance<F>, t: usize, state: &SystemState) -> Vec<Action> {
    let mut actions = vec![Action::NoMatch];
    for &i in instance.arrivals_at(t) {
        if state.is_available(i) {
            actions.push(Action::Match { resource: i });
        }
    }
    actions
}

/// Computes the clairvoyant value table. Geometric-only instances run
/// on the dense bitmask engine; anything else on the sparse
/// reachable-state engine.
pub fn solve_opt<F: Real>(instance: &Instance<F>) -> Result<ValueTable<F>> {
    solve_opt_with(instance, &SolveOptions::default())
}

pub fn solve_opt_with<F: Real>(
    instance: &Instance<F>,
    options: &SolveOptions,
) -> Result<ValueTable<F>> {
    if !options.force {
        check_state_space_guard(instance)?;
    }
    let layers = if instance.is_geometric_only() {
        solve_dense(instance)
    } else {
        solve_sparse(instance)
    };
    let opt_value = layers[0].get(0).map(|e| e.value).unwrap_or_else(F::zero);
    Ok(ValueTable {
        layers,
        opt_value,
        instance_hash: instance.stable_hash(),
    })
}

// ---------------------------------------------------------------------------
// Dense engine: geometric-only, states are busy bitmasks.
// ---------------------------------------------------------------------------

/// In place, folds the independent-return expectation of resource `i`
/// into `w`: after the call, `w[m] = E[w[m']]` where `m'` clears bit
/// `i` with probability `p_i` whenever it is busy in `m`. Entries with
/// bit `i` clear are fixed points, so ascending in-place iteration is
/// sound.
fn fold_return_expectation<F: Real>(w: &mut [F], i: usize, p: F) {
    let bit = 1usize << i;
    let q = F::one() - p;
    for m in 0..w.len() {
        if m & bit != 0 {
            w[m] = p * w[m ^ bit] + q * w[m];
        }
    }
}

fn solve_dense<F: Real>(instance: &Instance<F>) -> Vec<Layer<F>> {
    let n = instance.n();
    let size = 1usize << n;
    let ps: Vec<F> = (0..n).map(|i| instance.resource(i).dist.pr_one()).collect();

    let mut layers: Vec<Layer<F>> = Vec::with_capacity(instance.horizon());
    let mut next_values = vec![F::zero(); size]; // V_{t+1}
    for t in (1..=instance.horizon()).rev() {
        // w[m] = E[V_{t+1}(state after returns)] for post-action busy mask m.
        let mut w = next_values.clone();
        for (i, &p) in ps.iter().enumerate() {
            fold_return_expectation(&mut w, i, p);
        }

        let mut layer = Vec::with_capacity(size);
        for mask in 0..size {
            let mut best = Entry {
                value: w[mask],
                best: Action::NoMatch,
            };
            for &i in instance.arrivals_at(t) {
                if mask & (1 << i) != 0 {
                    continue; // busy
                }
                let value = instance.reward(i) + w[mask | (1 << i)];
                if value >= best.value {
                    best = Entry {
                        value,
                        best: Action::Match { resource: i },
                    };
                }
            }
            layer.push(best);
        }
        next_values = layer.iter().map(|e| e.value).collect();
        layers.push(Layer::Dense(layer));
    }
    layers.reverse();
    layers
}

// ---------------------------------------------------------------------------
// Sparse engine: mixed distributions, age-augmented states, lazy
// forward reachability before the backward pass.
// ---------------------------------------------------------------------------

/// Visits the successor distribution of `(state, action)` as
/// `(key, probability)` pairs, composing per-resource hazards one
/// dimension at a time. Zero-probability branches are skipped, so only
/// forward-reachable ages materialize.
fn for_each_successor<F: Real>(
    instance: &Instance<F>,
    state: &SystemState,
    action: Action,
    f: &mut impl FnMut(u64, F),
) {
    let n = instance.n();
    // (stay_key_digit, hazard): busy resources about to resolve, with
    // the key contribution they make if they stay busy one more step.
    let mut busy: Vec<(u64, F)> = Vec::with_capacity(n);
    let mut radix = 1u64;
    for i in 0..n {
        let dist = &instance.resource(i).dist;
        let count = dist.status_count();
        let matched = action == Action::Match { resource: i };
        let age = match (state.status(i), matched) {
            (ResourceStatus::Available, false) => None,
            (ResourceStatus::Available, true) => Some(0), // just matched
            (ResourceStatus::Busy { age }, _) => {
                debug_assert!(!matched, "matched a busy resource");
                Some(age)
            }
        };
        if let Some(age) = age {
            let hazard = dist.hazard_after(age);
            let stay_digit = if dist.is_geometric() {
                1
            } else {
                age as u64 + 1
            };
            debug_assert!(
                hazard >= F::one() || stay_digit < count,
                "stay branch would exceed the support of resource {i}"
            );
            busy.push((stay_digit * radix, hazard));
        }
        radix = radix.saturating_mul(count);
    }

    fn recurse<F: Real>(
        busy: &[(u64, F)],
        idx: usize,
        key: u64,
        prob: F,
        f: &mut impl FnMut(u64, F),
    ) {
        if idx == busy.len() {
            f(key, prob);
            return;
        }
        let (stay_key, hazard) = busy[idx];
        if hazard > F::zero() {
            recurse(busy, idx + 1, key, prob * hazard, f);
        }
        let stay = F::one() - hazard;
        if stay > F::zero() {
            recurse(busy, idx + 1, key + stay_key, prob * stay, f);
        }
    }
    recurse(&busy, 0, 0, F::one(), f);
}

fn solve_sparse<F: Real>(instance: &Instance<F>) -> Vec<Layer<F>> {
    let horizon = instance.horizon();

    // Forward reachability: which canonical keys can occur at each step.
    let mut reachable: Vec<Vec<u64>> = Vec::with_capacity(horizon + 1);
    let mut frontier: BTreeMap<u64, ()> = BTreeMap::new();
    frontier.insert(0, ());
    for t in 1..=horizon {
        reachable.push(frontier.keys().copied().collect());
        let mut next: BTreeMap<u64, ()> = BTreeMap::new();
        for &key in &reachable[t - 1] {
            let state = decode_key(key, instance);
            for action in feasible_actions(instance, t, &state) {
                for_each_successor(instance, &state, action, &mut |succ, _| {
                    next.insert(succ, ());
                });
            }
        }
        frontier = next;
    }

    // Backward pass over the reachable slice.
    let mut layers: Vec<Layer<F>> = vec![Layer::Sparse(BTreeMap::new()); horizon];
    let mut next_values: BTreeMap<u64, F> = BTreeMap::new(); // V_{t+1}
    for t in (1..=horizon).rev() {
        let mut layer = BTreeMap::new();
        for &key in &reachable[t - 1] {
            let state = decode_key(key, instance);
            let mut best: Option<Entry<F>> = None;
            for action in feasible_actions(instance, t, &state) {
                let immediate = match action {
                    Action::NoMatch => F::zero(),
                    Action::Match { resource } => instance.reward(resource),
                };
                let mut continuation = F::zero();
                for_each_successor(instance, &state, action, &mut |succ, prob| {
                    let v = next_values.get(&succ).copied().unwrap_or_else(F::zero);
                    continuation += prob * v;
                });
                let value = immediate + continuation;
                let better = match &best {
                    None => true,
                    Some(b) => value >= b.value,
                };
                if better {
                    best = Some(Entry {
                        value,
                        best: action,
                    });
                }
            }
            let entry = best.expect("no-match is always feasible");
            layer.insert(key, entry);
        }
        next_values = layer.iter().map(|(&k, e)| (k, e.value)).collect();
        layers[t - 1] = Layer::Sparse(layer);
    }
    layers
}

// ---------------------------------------------------------------------------
// Forward pass: exact evaluation of deterministic policies.
// ---------------------------------------------------------------------------

/// Exact expected totals of a deterministic policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyValue<F> {
    /// Expected total collected reward.
    pub reward: F,
    /// Expected total of the per-step best available reward,
    /// `E[sum_t r*(I_t)]` (over all available resources, incident or
    /// not).
    pub rstar_sum: F,
}

impl<F: Real> PolicyValue<F> {
    /// Exact approximation factor `E[sum r_{A_t}] / E[sum r*(I_t)]`;
    /// 1 when the denominator vanishes.
    pub fn measured_alpha(&self) -> F {
        if self.rstar_sum <= F::zero() {
            F::one()
        } else {
            self.reward / self.rstar_sum
        }
    }
}

/// Exact expected reward of `policy` on `instance`.
pub fn evaluate_policy<F: Real>(instance: &Instance<F>, policy: &dyn Policy<F>) -> Result<F> {
    evaluate_policy_detailed(instance, policy).map(|v| v.reward)
}

/// Exact expected reward plus the `r*(I_t)` accumulator, via a forward
/// state-distribution sweep under the same transition as the solver.
pub fn evaluate_policy_detailed<F: Real>(
    instance: &Instance<F>,
    policy: &dyn Policy<F>,
) -> Result<PolicyValue<F>> {
    evaluate_policy_with(instance, policy, &SolveOptions::default())
}

pub fn evaluate_policy_with<F: Real>(
    instance: &Instance<F>,
    policy: &dyn Policy<F>,
    options: &SolveOptions,
) -> Result<PolicyValue<F>> {
    if !policy.is_deterministic() {
        return Err(Error::NonDeterministicPolicy(policy.name().to_string()));
    }
    if !options.force {
        check_state_space_guard(instance)?;
    }

    let mut mass: BTreeMap<u64, F> = BTreeMap::new();
    mass.insert(0, F::one());
    let mut reward = F::zero();
    let mut rstar_sum = F::zero();

    for t in 1..=instance.horizon() {
        let mut next: BTreeMap<u64, F> = BTreeMap::new();
        for (&key, &mu) in &mass {
            let state = decode_key(key, instance);
            rstar_sum += mu * instance.rstar(state.available_indices());
            let action = policy.decide(t, instance.arrivals_at(t), &state, instance)?;
            if let Action::Match { resource } = action {
                let feasible =
                    state.is_available(resource) && instance.arrivals_at(t).contains(&resource);
                if !feasible {
                    return Err(Error::PolicyContract {
                        policy: policy.name().to_string(),
                        detail: format!(
                            "matched resource {} at step {t} outside the feasible set",
                            resource + 1
                        ),
                    });
                }
                reward += mu * instance.reward(resource);
            }
            for_each_successor(instance, &state, action, &mut |succ, prob| {
                *next.entry(succ).or_insert_with(F::zero) += mu * prob;
            });
        }
        mass = next;
    }
    Ok(PolicyValue { reward, rstar_sum })
}

// ---------------------------------------------------------------------------
// The solved table as a runnable policy.
// ---------------------------------------------------------------------------

/// Table-lookup policy: plays the Bellman argmax recorded in a
/// [`ValueTable`]. Asking it about a state the solver never reached is
/// a loud error.
#[derive(Clone)]
pub struct OptTablePolicy<F> {
    table: Arc<ValueTable<F>>,
    name: String,
}

impl<F: Real> OptTablePolicy<F> {
    pub fn table(&self) -> &ValueTable<F> {
        &self.table
    }
}

/// Wraps a solved table into a policy handle.
pub fn opt_policy<F: Real>(table: Arc<ValueTable<F>>) -> OptTablePolicy<F> {
    OptTablePolicy {
        name: format!("opt-dp({:016x})", table.instance_hash()),
        table,
    }
}

impl<F: Real> Policy<F> for OptTablePolicy<F> {
    fn decide(
        &self,
        t: usize,
        _incident: &[usize],
        state: &SystemState,
        instance: &Instance<F>,
    ) -> Result<Action> {
        let key = state.canonical_key(instance);
        self.table
            .best_action_at_key(t, key)
            .ok_or(Error::UnreachableState {
                step: t,
                state: key,
            })
    }

    fn name(&self) -> &str {
        &self.name
    }
}
