//! Per-area reward: the negative of the rebalancing, failure, and
//! idle-surplus costs, optionally shifted by a fairness term that weights
//! failures by how peripheral the area's category is.

use crate::city::{Action, CategoryProfile, Period, ScenarioConfig};
use crate::sim::expected_demand;

/// Signed contributions to one area's epoch reward. The first three are
/// always nonpositive; the fairness term is negative for peripheral
/// categories (positive `chi`) and positive for central ones.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RewardTerms {
    /// `-alpha * phi` when the action moves vehicles, zero otherwise.
    pub rebalance: f64,
    /// Minus the count of failed departure attempts in the window.
    pub failure: f64,
    /// `-xi * l`, where `l` is the idle-surplus loss of the post-action
    /// occupancy.
    pub clutter: f64,
    /// `-beta * chi * failures`; zero in the profit-only reward.
    pub fairness: f64,
}

impl RewardTerms {
    pub fn total(&self) -> f64 {
        self.rebalance + self.failure + self.clutter + self.fairness
    }
}

/// Idle-surplus loss: the distance of the occupancy from its demand target
/// beyond a tolerance band of width `zeta`. Symmetric in the first two
/// arguments and convex in each.
pub fn clutter_loss(vehicles: f64, mu: f64, zeta: f64) -> f64 {
    ((vehicles - mu).abs() - zeta).max(0.0)
}

/// Profit-only reward of one area for the window that just closed:
/// rebalancing cost of the action taken at the window's start, failures
/// accumulated over the window, and the idle-surplus loss of the occupancy
/// the action had set up. `period` names the window the failures belong to.
pub fn local_reward(
    action: Action,
    failures: u64,
    vehicles_after: u32,
    profile: &CategoryProfile,
    scenario: &ScenarioConfig,
    period: Period,
) -> RewardTerms {
    let rebalance = if action.is_rebalance() { -scenario.alpha * profile.phi } else { 0.0 };
    let mu = expected_demand(profile, period);
    let loss = clutter_loss(vehicles_after as f64, mu, profile.zeta(period));
    RewardTerms {
        rebalance,
        failure: -(failures as f64),
        clutter: -scenario.xi * loss,
        fairness: 0.0,
    }
}

/// Fairness-aware reward: the profit-only terms plus `-beta * chi *
/// failures`, which deepens the failure penalty at the periphery and
/// discounts it toward the center.
pub fn fair_local_reward(
    action: Action,
    failures: u64,
    vehicles_after: u32,
    profile: &CategoryProfile,
    scenario: &ScenarioConfig,
    period: Period,
) -> RewardTerms {
    let mut terms = local_reward(action, failures, vehicles_after, profile, scenario, period);
    terms.fairness = -scenario.beta * profile.chi * failures as f64;
    terms
}

/// System reward of one epoch: the sum of the per-area totals.
pub fn global_reward(terms: &[RewardTerms]) -> f64 {
    terms.iter().map(RewardTerms::total).sum()
}
