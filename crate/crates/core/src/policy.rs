//! The policy contract and the concrete matching rules.
//!
//! A policy sees the step, the incident resource set, and its own
//! availability state, and picks one available incident resource or
//! declines. Greedy picks the largest available incident index (the
//! highest reward under canonical order, ties toward the larger
//! index); the threshold family picks the cheapest resource whose
//! reward clears a fraction of greedy's choice.

use serde::{Deserialize, Serialize};

use crate::coupling::CoupledTrace;
use crate::error::{Error, Result};
use crate::instance::{Instance, SystemState};
use crate::scalar::Real;
use crate::util::pairwise_sum;

/// Match a resource or decline (the no-match action).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    NoMatch,
    Match { resource: usize },
}

impl Action {
    pub fn resource(self) -> Option<usize> {
        match self {
            Action::Match { resource } => Some(resource),
            Action::NoMatch => None,
        }
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::NoMatch => write!(f, "-"),
            Action::Match { resource } => write!(f, "{}", resource + 1),
        }
    }
}

/// A decision procedure. Deterministic policies must be pure functions
/// of their arguments; the simulators and the exact solvers reject
/// anything that reports otherwise.
pub trait Policy<F: Real>: Send + Sync {
    fn decide(
        &self,
        t: usize,
        incident: &[usize],
        state: &SystemState,
        instance: &Instance<F>,
    ) -> Result<Action>;

    fn name(&self) -> &str;

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Largest index in `incident ∩ available`, or no-match when that set
/// is empty. Under canonical order this is the highest-reward
/// available incident resource, reward ties broken toward the larger
/// index.
pub fn greedy_choice<F: Real>(
    incident: &[usize],
    state: &SystemState,
    _instance: &Instance<F>,
) -> Action {
    incident
        .iter()
        .rev()
        .find(|&&i| state.is_available(i))
        .map(|&i| Action::Match { resource: i })
        .unwrap_or(Action::NoMatch)
}

/// The greedy policy.
#[derive(Clone, Copy, Debug, Default)]
pub struct Greedy;

impl<F: Real> Policy<F> for Greedy {
    fn decide(
        &self,
        _t: usize,
        incident: &[usize],
        state: &SystemState,
        instance: &Instance<F>,
    ) -> Result<Action> {
        Ok(greedy_choice(incident, state, instance))
    }

    fn name(&self) -> &str {
        "greedy"
    }
}

/// Matches the lowest-index available incident resource whose reward is
/// at least `alpha` times the reward greedy would collect; declines
/// exactly when greedy declines. `alpha = 1` reproduces greedy. Taking
/// the lowest qualifying index makes this the worst rule that still
/// honors the threshold, which is what the robustness bounds should be
/// stressed with.
#[derive(Clone, Debug)]
pub struct AlphaThreshold<F> {
    alpha: F,
    name: String,
}

impl<F: Real> AlphaThreshold<F> {
    pub fn new(alpha: F) -> Result<Self> {
        if !(alpha >= F::zero() && alpha <= F::one()) {
            return Err(Error::InvalidParameter(format!(
                "alpha = {alpha} outside [0, 1]"
            )));
        }
        Ok(Self {
            alpha,
            name: format!("alpha-threshold({alpha})"),
        })
    }

    pub fn alpha(&self) -> F {
        self.alpha
    }
}

impl<F: Real> Policy<F> for AlphaThreshold<F> {
    fn decide(
        &self,
        _t: usize,
        incident: &[usize],
        state: &SystemState,
        instance: &Instance<F>,
    ) -> Result<Action> {
        let greedy = match greedy_choice(incident, state, instance) {
            Action::NoMatch => return Ok(Action::NoMatch),
            Action::Match { resource } => resource,
        };
        let threshold = self.alpha * instance.reward(greedy);
        let pick = incident
            .iter()
            .find(|&&i| state.is_available(i) && instance.reward(i) >= threshold)
            .copied()
            .unwrap_or(greedy);
        Ok(Action::Match { resource: pick })
    }

    fn name(&self) -> &str {
        &self.name
    }
}

/// The always-decline policy; earns nothing by construction.
#[derive(Clone, Copy, Debug, Default)]
pub struct NeverMatch;

impl<F: Real> Policy<F> for NeverMatch {
    fn decide(
        &self,
        _t: usize,
        _incident: &[usize],
        _state: &SystemState,
        _instance: &Instance<F>,
    ) -> Result<Action> {
        Ok(Action::NoMatch)
    }

    fn name(&self) -> &str {
        "never-match"
    }
}

/// Empirical approximation factor of the primary policy over a set of
/// coupled runs: the ratio of the mean collected reward to the mean of
/// the per-step best available reward, `E[sum r_{A_t}] / E[sum
/// r*(I_t)]`. Returns 1 when the denominator vanishes.
pub fn measured_alpha<F: Real>(traces: &[CoupledTrace<F>]) -> F {
    let rewards: Vec<F> = traces.iter().map(|tr| tr.totals.primary_reward).collect();
    let rstars: Vec<F> = traces
        .iter()
        .map(|tr| tr.totals.primary_rstar_sum)
        .collect();
    let denom = pairwise_sum(&rstars);
    if denom <= F::zero() {
        return F::one();
    }
    pairwise_sum(&rewards) / denom
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{tight_example, Resource, ResourceStatus, UsageDistribution};

    fn instance_with_rewards(rewards: &[f64]) -> Instance<f64> {
        let resources = rewards
            .iter()
            .map(|&reward| Resource {
                reward,
                dist: UsageDistribution::Geometric { p: 0.5 },
            })
            .collect();
        let all: Vec<usize> = (0..rewards.len()).collect();
        Instance::new(1, resources, vec![all]).unwrap()
    }

    #[test]
    fn greedy_picks_highest_reward_available() {
        let instance = tight_example(0.5, 0.1).unwrap();
        let state = SystemState::all_available(2);
        let action = greedy_choice(&[0, 1], &state, &instance);
        assert_eq!(action, Action::Match { resource: 1 });
    }

    #[test]
    fn greedy_declines_when_nothing_is_available() {
        let instance = tight_example(0.5, 0.1).unwrap();
        let mut state = SystemState::all_available(2);
        state.set_status(1, ResourceStatus::Busy { age: 1 });
        let action = greedy_choice(&[1], &state, &instance);
        assert_eq!(action, Action::NoMatch);
    }

    #[test]
    fn greedy_breaks_reward_ties_toward_larger_index() {
        let instance = instance_with_rewards(&[1.0, 1.0, 2.0]);
        let mut state = SystemState::all_available(3);
        state.set_status(2, ResourceStatus::Busy { age: 1 });
        let action = greedy_choice(&[0, 1], &state, &instance);
        assert_eq!(action, Action::Match { resource: 1 });
    }

    #[test]
    fn alpha_one_reproduces_greedy() {
        let instance = instance_with_rewards(&[1.0, 1.5, 2.0]);
        let policy = AlphaThreshold::new(1.0).unwrap();
        let state = SystemState::all_available(3);
        for incident in [vec![0], vec![0, 1], vec![0, 1, 2], vec![]] {
            let got = policy.decide(1, &incident, &state, &instance).unwrap();
            let want = greedy_choice(&incident, &state, &instance);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn alpha_half_takes_the_cheapest_qualifying_resource() {
        let instance = instance_with_rewards(&[1.0, 1.5, 2.0]);
        let policy = AlphaThreshold::new(0.5).unwrap();
        let state = SystemState::all_available(3);
        let action = policy.decide(1, &[0, 1, 2], &state, &instance).unwrap();
        // reward 1.0 >= 0.5 * 2.0, the lowest qualifying index.
        assert_eq!(action, Action::Match { resource: 0 });
    }

    #[test]
    fn alpha_threshold_is_relative_to_greedy_among_available() {
        let instance = instance_with_rewards(&[1.0, 2.0]);
        let policy = AlphaThreshold::new(0.9).unwrap();
        let mut state = SystemState::all_available(2);
        state.set_status(1, ResourceStatus::Busy { age: 1 });
        // Greedy's choice among available ∩ incident is resource 0.
        let action = policy.decide(1, &[0, 1], &state, &instance).unwrap();
        assert_eq!(action, Action::Match { resource: 0 });
    }

    #[test]
    fn alpha_rejects_out_of_range() {
        assert!(AlphaThreshold::<f64>::new(-0.1).is_err());
        assert!(AlphaThreshold::<f64>::new(1.1).is_err());
        assert!(AlphaThreshold::<f64>::new(f64::NAN).is_err());
    }

    #[test]
    fn alpha_choice_always_clears_the_threshold() {
        // Pathwise invariant: chosen reward >= alpha * greedy's reward.
        let instance = instance_with_rewards(&[0.5, 1.0, 1.7, 3.0]);
        for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let policy = AlphaThreshold::new(alpha).unwrap();
            for mask in 0u32..16 {
                let mut state = SystemState::all_available(4);
                for i in 0..4 {
                    if mask & (1 << i) != 0 {
                        state.set_status(i, ResourceStatus::Busy { age: 1 });
                    }
                }
                for incident in [vec![0, 1], vec![1, 3], vec![0, 1, 2, 3], vec![2]] {
                    let greedy = greedy_choice(&incident, &state, &instance);
                    let chosen = policy.decide(1, &incident, &state, &instance).unwrap();
                    match (greedy, chosen) {
                        (Action::NoMatch, Action::NoMatch) => {}
                        (Action::Match { resource: g }, Action::Match { resource: c }) => {
                            assert!(instance.reward(c) >= alpha * instance.reward(g));
                        }
                        other => panic!("greedy and threshold disagree on matching: {other:?}"),
                    }
                }
            }
        }
    }
}
