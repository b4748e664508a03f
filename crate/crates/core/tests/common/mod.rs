//! Independently coded reference implementations ("oracles") the
//! acceptance suite holds the library against, plus the toy scenarios
//! small enough for exact dynamic programming.
//!
//! Everything here deliberately avoids the library's own numeric routes:
//! the difference pmf comes from direct Poisson convolution rather than
//! Bessel functions, expected failures from a tail sum, and optimal
//! policies from value iteration rather than learning.

use rebal_core::city::{build_scenario, ActionSet, DemandRates, Period, ScenarioConfig};
use rebal_core::stochastic::{censored_transition, SkellamParams};

/// Poisson pmf table `P(K = 0..=kmax)` by upward recurrence.
fn poisson_table(rate: f64, kmax: usize) -> Vec<f64> {
    let mut table = vec![0.0; kmax + 1];
    table[0] = (-rate).exp();
    for k in 1..=kmax {
        table[k] = table[k - 1] * rate / k as f64;
    }
    table
}

/// `P(A - D = n)` for independent Poisson `A`, `D` by direct convolution.
pub fn skellam_by_convolution(n: i64, rate_a: f64, rate_d: f64) -> f64 {
    // Mass beyond 5x the rate plus slack is far below any tolerance here.
    let span = 80 + (5.0 * (rate_a + rate_d)) as usize + n.unsigned_abs() as usize;
    let pa = poisson_table(rate_a, span);
    let pd = poisson_table(rate_d, span);
    let mut sum = 0.0;
    for d in 0..=span {
        let a = d as i64 + n;
        if (0..=span as i64).contains(&a) {
            sum += pa[a as usize] * pd[d];
        }
    }
    sum
}

/// `E[max(0, D - v)]` for `D ~ Poisson(rate)`: the expected failures of a
/// window with no arrivals that starts at occupancy `v`.
pub fn expected_overflow(rate: f64, v: u32) -> f64 {
    let mut pmf = (-rate).exp();
    let mut acc = 0.0;
    for d in 0..100_000u64 {
        if d > v as u64 {
            acc += (d - v as u64) as f64 * pmf;
        }
        if d as f64 > rate + v as f64 && pmf < 1e-18 {
            break;
        }
        pmf *= rate / (d + 1) as f64;
    }
    acc
}

/// All distinct `(arrivals, departures)` window-rate pairs appearing in
/// the built-in scenarios.
pub fn builtin_rate_pairs() -> Vec<(f64, f64)> {
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for m in 2..=5 {
        let scenario = build_scenario(m).expect("built-in");
        for profile in &scenario.categories {
            for period in Period::BOTH {
                let r = profile.rates(period);
                if !pairs.contains(&(r.arrivals, r.departures)) {
                    pairs.push((r.arrivals, r.departures));
                }
            }
        }
    }
    pairs
}

/// Exhaustive pairwise dominance enumeration; the reference for the
/// skyline Pareto filter. Lower is better on both coordinates; equal
/// points do not dominate each other.
pub fn dominance_front(points: &[(f64, f64)]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            !points.iter().enumerate().any(|(j, p)| {
                j != i
                    && p.0 <= points[i].0
                    && p.1 <= points[i].1
                    && (p.0 < points[i].0 || p.1 < points[i].1)
            })
        })
        .collect()
}

/// Training horizon of the oracle-equivalence toys. Bootstrapped tabular
/// learning with a constant step needs on the order of
/// `1 / (step * (1 - gamma))` visits per state-action cell before the
/// residual noise drops below the thinnest decision margins (~0.3 here),
/// which puts the horizon in the hundreds of thousands of days; the toys
/// are small enough that this still runs in seconds.
pub const TOY_TRAIN_DAYS: u64 = 1_000_000;

fn toy_base() -> ScenarioConfig {
    let mut scenario = build_scenario(2).expect("built-in");
    for profile in &mut scenario.categories {
        profile.node_count = 1;
    }
    scenario.sigma = 10;
    scenario.actions = ActionSet::custom(&[-5, 0, 5]).expect("valid grid");
    scenario.alpha = 2.0;
    scenario.xi = 0.3;
    scenario.learning_rate = 0.003;
    scenario.train_days = TOY_TRAIN_DAYS;
    // Exploration anneals to 0.5 and never fully dies (2 updates per day
    // per category): the high-stock states are only reachable through
    // exploratory surpluses, and off-policy updates converge to the same
    // fixed point regardless of how much randomness the behaviour keeps.
    scenario.epsilon_decay = 0.5 / ((TOY_TRAIN_DAYS * 2) as f64);
    scenario
}

/// Single-agent toy: one active area with departures only (so the event
/// dynamics match the censored transition law exactly) and one inert
/// zero-rate area occupying the mandatory second category.
pub fn toy_single_scenario() -> ScenarioConfig {
    let mut scenario = toy_base();
    scenario.alpha = 3.0;
    scenario.xi = 0.4;
    scenario.categories[0].morning = DemandRates { arrivals: 0.0, departures: 2.0 };
    scenario.categories[0].evening = DemandRates { arrivals: 0.0, departures: 2.0 };
    scenario.categories[1].morning = DemandRates { arrivals: 0.0, departures: 0.0 };
    scenario.categories[1].evening = DemandRates { arrivals: 0.0, departures: 0.0 };
    scenario.validate().expect("toy scenario is valid");
    scenario
}

/// Two-agent toy with both categories active and a nonzero fairness
/// weight, so the factorization claim is exercised with coupled-looking
/// (but separable) rewards.
pub fn toy_joint_scenario() -> ScenarioConfig {
    let mut scenario = toy_base();
    scenario.beta = 0.7;
    scenario.alpha = 2.5;
    scenario.xi = 0.2;
    scenario.categories[0].morning = DemandRates { arrivals: 0.0, departures: 2.0 };
    scenario.categories[0].evening = DemandRates { arrivals: 0.0, departures: 2.0 };
    scenario.categories[1].morning = DemandRates { arrivals: 0.0, departures: 2.0 };
    scenario.categories[1].evening = DemandRates { arrivals: 0.0, departures: 2.0 };
    scenario.validate().expect("toy scenario is valid");
    scenario
}

/// Expected one-step reward and exact transition row of one toy area.
///
/// A decision taken in period `p` plays out over the following window,
/// whose period is `p.other()`; the reward uses that window's failures,
/// demand target and tolerance, all computable in closed form because the
/// toys have no arrivals.
struct AreaModel {
    /// `transition[p][v][w]`: probability that the window after a decision
    /// in period `p` moves the post-action occupancy `v` to `w`.
    transition: [Vec<Vec<f64>>; 2],
    /// `reward[p][v][a]`: expected reward of action index `a` at occupancy
    /// `v` in period `p`.
    reward: [Vec<Vec<f64>>; 2],
    actions: Vec<i32>,
    sigma: usize,
}

impl AreaModel {
    fn build(scenario: &ScenarioConfig, category: usize) -> AreaModel {
        let profile = &scenario.categories[category - 1];
        let sigma = scenario.sigma as usize;
        let actions: Vec<i32> = scenario.actions.iter().map(|a| a.delta()).collect();
        let mut transition = [Vec::new(), Vec::new()];
        let mut reward = [Vec::new(), Vec::new()];
        for period in Period::BOTH {
            let window = period.other();
            let rates = profile.rates(window);
            assert_eq!(rates.arrivals, 0.0, "toy areas must be departure-only");
            let params = SkellamParams::new(rates.arrivals, rates.departures, 1.0)
                .expect("valid rates");
            let fail_weight = 1.0 + scenario.beta * profile.chi;
            let mu = rates.departures;
            let zeta = 0.5 * rates.arrivals;
            let mut rows = Vec::with_capacity(sigma + 1);
            for v in 0..=sigma {
                let mut row = vec![0.0; sigma + 1];
                for (w, cell) in row.iter_mut().enumerate() {
                    *cell = censored_transition(v as u32, w as u32, &params)
                        .expect("transition mass");
                }
                rows.push(row);
            }
            let mut rew = Vec::with_capacity(sigma + 1);
            for v in 0..=sigma {
                let mut per_action = Vec::with_capacity(actions.len());
                for &delta in &actions {
                    let moved = (v as i64 + delta as i64).clamp(0, sigma as i64) as u32;
                    let act_cost =
                        if delta != 0 { scenario.alpha * profile.phi } else { 0.0 };
                    let fail = fail_weight * expected_overflow(rates.departures, moved);
                    let clutter =
                        scenario.xi * ((moved as f64 - mu).abs() - zeta).max(0.0);
                    per_action.push(-act_cost - fail - clutter);
                }
                rew.push(per_action);
            }
            transition[period.index()] = rows;
            reward[period.index()] = rew;
        }
        AreaModel { transition, reward, actions, sigma }
    }

    fn landing(&self, v: usize, action_idx: usize) -> usize {
        (v as i64 + self.actions[action_idx] as i64).clamp(0, self.sigma as i64) as usize
    }
}

/// Greedy decisions of the exactly solved single-area toy.
pub struct SolvedSingle {
    /// `greedy[p][v]`: optimal action index.
    pub greedy: [Vec<usize>; 2],
    /// Smallest advantage of the best action over the runner-up across
    /// all states; a sanity margin for comparing against learned tables.
    pub min_gap: f64,
    /// `q[p][v][a]`: converged action values.
    pub q: [Vec<Vec<f64>>; 2],
}

/// Value-iterates the single-area toy MDP of `category` to convergence.
pub fn solve_single(scenario: &ScenarioConfig, category: usize) -> SolvedSingle {
    let model = AreaModel::build(scenario, category);
    let sigma = model.sigma;
    let n_actions = model.actions.len();
    let gamma = scenario.gamma;
    let mut q = [vec![vec![0.0f64; n_actions]; sigma + 1],
                 vec![vec![0.0f64; n_actions]; sigma + 1]];
    loop {
        let mut delta = 0.0f64;
        for period in Period::BOTH {
            let p = period.index();
            let next = period.other().index();
            for v in 0..=sigma {
                for a in 0..n_actions {
                    let landing = model.landing(v, a);
                    let mut future = 0.0;
                    for (w, &prob) in model.transition[p][landing].iter().enumerate() {
                        if prob > 0.0 {
                            let best = q[next][w]
                                .iter()
                                .cloned()
                                .fold(f64::NEG_INFINITY, f64::max);
                            future += prob * best;
                        }
                    }
                    let updated = model.reward[p][v][a] + gamma * future;
                    delta = delta.max((updated - q[p][v][a]).abs());
                    q[p][v][a] = updated;
                }
            }
        }
        if delta < 1e-12 {
            break;
        }
    }
    let mut greedy = [vec![0; sigma + 1], vec![0; sigma + 1]];
    let mut min_gap = f64::INFINITY;
    for p in 0..2 {
        for v in 0..=sigma {
            let (best, gap) = argmax_with_gap(&q[p][v]);
            greedy[p][v] = best;
            min_gap = min_gap.min(gap);
        }
    }
    SolvedSingle { greedy, min_gap, q }
}

/// Greedy decisions of the exactly solved two-area joint toy.
pub struct SolvedJoint {
    /// `greedy[p][v1][v2]`: optimal (area-1, area-2) action indices.
    pub greedy: [Vec<Vec<(usize, usize)>>; 2],
    pub min_gap: f64,
}

/// Value-iterates the joint two-area MDP: states are (period, v1, v2),
/// actions are pairs, the window transitions are independent per area and
/// the reward is the sum of the per-area terms.
pub fn solve_joint(scenario: &ScenarioConfig) -> SolvedJoint {
    let m1 = AreaModel::build(scenario, 1);
    let m2 = AreaModel::build(scenario, 2);
    let sigma = m1.sigma;
    let n_actions = m1.actions.len();
    let n_joint = n_actions * n_actions;
    let gamma = scenario.gamma;
    let states = (sigma + 1) * (sigma + 1);
    let mut q = [vec![vec![0.0f64; n_joint]; states], vec![vec![0.0f64; n_joint]; states]];
    let state_of = |v1: usize, v2: usize| v1 * (sigma + 1) + v2;
    loop {
        let mut delta = 0.0f64;
        for period in Period::BOTH {
            let p = period.index();
            let next = period.other().index();
            // max over joint actions per next state, shared by all updates.
            let best_next: Vec<f64> = (0..states)
                .map(|s| q[next][s].iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                .collect();
            for v1 in 0..=sigma {
                for v2 in 0..=sigma {
                    let s = state_of(v1, v2);
                    for a1 in 0..n_actions {
                        let l1 = m1.landing(v1, a1);
                        for a2 in 0..n_actions {
                            let l2 = m2.landing(v2, a2);
                            let mut future = 0.0;
                            for (w1, &p1) in m1.transition[p][l1].iter().enumerate() {
                                if p1 == 0.0 {
                                    continue;
                                }
                                let mut inner = 0.0;
                                for (w2, &p2) in m2.transition[p][l2].iter().enumerate() {
                                    if p2 > 0.0 {
                                        inner += p2 * best_next[state_of(w1, w2)];
                                    }
                                }
                                future += p1 * inner;
                            }
                            let reward = m1.reward[p][v1][a1] + m2.reward[p][v2][a2];
                            let a = a1 * n_actions + a2;
                            let updated = reward + gamma * future;
                            delta = delta.max((updated - q[p][s][a]).abs());
                            q[p][s][a] = updated;
                        }
                    }
                }
            }
        }
        if delta < 1e-12 {
            break;
        }
    }
    let mut greedy =
        [vec![vec![(0, 0); sigma + 1]; sigma + 1], vec![vec![(0, 0); sigma + 1]; sigma + 1]];
    let mut min_gap = f64::INFINITY;
    for p in 0..2 {
        for v1 in 0..=sigma {
            for v2 in 0..=sigma {
                let (best, gap) = argmax_with_gap(&q[p][state_of(v1, v2)]);
                greedy[p][v1][v2] = (best / n_actions, best % n_actions);
                min_gap = min_gap.min(gap);
            }
        }
    }
    SolvedJoint { greedy, min_gap }
}

/// Index of the maximum and its advantage over the runner-up.
pub fn argmax_with_gap(values: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    let runner_up = values
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    (best, values[best] - runner_up)
}
