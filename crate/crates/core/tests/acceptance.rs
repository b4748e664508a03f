//! Release gate: one test per acceptance criterion, each printing a
//! single `acceptance N (<name>): PASS|FAIL` line (visible with
//! `--nocapture`, or in the captured output of a failing test).
//!
//! The tests share a mutex so the timing-sensitive ones are not skewed by
//! parallel neighbours, and the two criteria that need the desk-scale
//! fairness sweep share one cached run of it.

mod common;

use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use rebal_core::city::{build_scenario, Period, ScenarioConfig};
use rebal_core::learn::{evaluate_with_trace, train, PolicySet};
use rebal_core::metrics::pareto_front;
use rebal_core::reward::{fair_local_reward, global_reward, local_reward};
use rebal_core::sim::{step_hour, AreaState};
use rebal_core::stochastic::{censored_transition, skellam_pmf, RandomSource, SkellamParams};
use rebal_core::sweep::{desk_scenario, train_and_evaluate};

static GATE: Mutex<()> = Mutex::new(());

/// Runs one criterion body under the shared lock and prints its verdict.
fn check(number: u32, name: &str, body: impl FnOnce()) {
    let _guard = GATE.lock().unwrap_or_else(|poisoned| poisoned.into_inner());
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(body));
    let status = if outcome.is_ok() { "PASS" } else { "FAIL" };
    println!(
        "acceptance {number} ({name}): {status} [{:.1}s]",
        start.elapsed().as_secs_f64()
    );
    if let Err(payload) = outcome {
        resume_unwind(payload);
    }
}

// ---------------------------------------------------------------------------
// 1. Difference-distribution correctness against a convolution oracle.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_1_distribution_correctness() {
    check(1, "distribution correctness", || {
        // Every (arrivals, departures) window-rate pair that appears in any
        // built-in city; the four cities share rows, leaving 10 distinct.
        let pairs = common::builtin_rate_pairs();
        assert_eq!(pairs.len(), 10, "built-in cities carry 10 distinct rate pairs");
        for &(ra, rd) in &pairs {
            let params = SkellamParams::new(ra, rd, 1.0).expect("valid rates");
            for n in -50..=50i64 {
                let exact = skellam_pmf(n, &params).expect("valid parameters");
                let oracle = common::skellam_by_convolution(n, ra, rd);
                assert!(
                    (exact - oracle).abs() <= 1e-10,
                    "pmf mismatch at rates ({ra}, {rd}), n = {n}: {exact} vs {oracle}"
                );
            }
            // Censored rows over occupancies from empty to the fleet cap:
            // all probability must land somewhere.
            let cap = (20.0 * (ra + rd)) as u32 + 250;
            for m in [0u32, 1, 7, 20, 50, 100] {
                let sum: f64 = (0..=m + cap)
                    .map(|n| censored_transition(m, n, &params).expect("valid cell"))
                    .sum();
                assert!(
                    (sum - 1.0).abs() <= 1e-9,
                    "censored row m = {m} at rates ({ra}, {rd}) sums to {sum}"
                );
            }
        }
    });
}

// ---------------------------------------------------------------------------
// 2. Trained policies equal exact dynamic programming on the toy MDPs.
// ---------------------------------------------------------------------------

/// Greedy action index per state of one trained category table.
fn trained_greedy(
    policies: &PolicySet,
    scenario: &ScenarioConfig,
    category: usize,
) -> [Vec<usize>; 2] {
    let q = policies.table(category).expect("category table");
    let sigma = scenario.sigma as usize;
    let mut greedy = [vec![0; sigma + 1], vec![0; sigma + 1]];
    for period in Period::BOTH {
        for v in 0..=sigma {
            let vals: Vec<f64> =
                (0..scenario.actions.len()).map(|a| q.value(period, v as u32, a)).collect();
            let (best, _) = common::argmax_with_gap(&vals);
            greedy[period.index()][v] = best;
        }
    }
    greedy
}

#[test]
fn acceptance_2_learning_matches_value_iteration() {
    check(2, "Q-learning oracle equivalence", || {
        // Single active area.
        let scenario = common::toy_single_scenario();
        let solved = common::solve_single(&scenario, 1);
        assert!(solved.min_gap > 0.1, "toy must have well-separated optima");
        let policies = train(&scenario, 0).expect("training");
        let greedy = trained_greedy(&policies, &scenario, 1);
        for period in Period::BOTH {
            let p = period.index();
            for v in 0..=scenario.sigma as usize {
                assert_eq!(
                    greedy[p][v], solved.greedy[p][v],
                    "single toy at period {p}, occupancy {v}: learned action \
                     {} but value iteration picks {} (oracle row {:?})",
                    greedy[p][v], solved.greedy[p][v], solved.q[p][v]
                );
            }
        }

        // Two active areas, nonzero fairness weight: per-area training must
        // reproduce the jointly optimal decision pair at every joint state.
        let scenario = common::toy_joint_scenario();
        let joint = common::solve_joint(&scenario);
        assert!(joint.min_gap > 0.05, "joint toy must have well-separated optima");
        let policies = train(&scenario, 0).expect("training");
        let g1 = trained_greedy(&policies, &scenario, 1);
        let g2 = trained_greedy(&policies, &scenario, 2);
        let sigma = scenario.sigma as usize;
        for period in Period::BOTH {
            let p = period.index();
            for v1 in 0..=sigma {
                for v2 in 0..=sigma {
                    let got = (g1[p][v1], g2[p][v2]);
                    let want = joint.greedy[p][v1][v2];
                    assert_eq!(
                        got, want,
                        "joint toy at period {p}, occupancies ({v1}, {v2}): \
                         learned pair {got:?} but joint value iteration picks {want:?}"
                    );
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// 3. The reward module's global sum equals a direct transcription of the
//    additive per-area cost forms.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_3_reward_separability() {
    check(3, "reward separability", || {
        let mut rng = RandomSource::new(0x5eed_0003);
        for m in 2..=5 {
            let mut scenario = build_scenario(m).expect("built-in");
            for _ in 0..10_000 {
                scenario.beta = rng.uniform();
                let period = Period::BOTH[rng.below(2) as usize];
                // One draw per area, category-major like the city layout.
                let mut draws = Vec::new();
                for cat in 1..=m {
                    let nodes = scenario.category(cat).expect("category").node_count;
                    for _ in 0..nodes {
                        let action = scenario
                            .actions
                            .get(rng.below(scenario.actions.len() as u32) as usize)
                            .expect("index in range");
                        let failures = rng.below(41) as u64;
                        let vehicles = rng.below(scenario.sigma + 1);
                        draws.push((cat, action, failures, vehicles));
                    }
                }

                let profit_terms: Vec<_> = draws
                    .iter()
                    .map(|&(cat, action, failures, vehicles)| {
                        let profile = scenario.category(cat).expect("category");
                        local_reward(action, failures, vehicles, profile, &scenario, period)
                    })
                    .collect();
                let fair_terms: Vec<_> = draws
                    .iter()
                    .map(|&(cat, action, failures, vehicles)| {
                        let profile = scenario.category(cat).expect("category");
                        fair_local_reward(action, failures, vehicles, profile, &scenario, period)
                    })
                    .collect();

                // Independent transcription: operation cost, failures, and
                // banded idle-surplus distance, straight from the rate table.
                let mut profit_ref = 0.0;
                let mut fair_ref = 0.0;
                for &(cat, action, failures, vehicles) in &draws {
                    let profile = scenario.category(cat).expect("category");
                    let rates = profile.rates(period);
                    let op = if action.delta() != 0 { 1.0 } else { 0.0 };
                    let surplus =
                        ((vehicles as f64 - rates.departures).abs() - 0.5 * rates.arrivals).max(0.0);
                    let base = -scenario.alpha * profile.phi * op
                        - failures as f64
                        - scenario.xi * surplus;
                    profit_ref += base;
                    fair_ref += base - scenario.beta * profile.chi * failures as f64;
                }

                let profit = global_reward(&profit_terms);
                let fair = global_reward(&fair_terms);
                assert!(
                    (profit - profit_ref).abs() <= 1e-12,
                    "profit global reward {profit} differs from reference {profit_ref}"
                );
                assert!(
                    (fair - fair_ref).abs() <= 1e-12,
                    "fairness global reward {fair} differs from reference {fair_ref}"
                );
            }
        }
    });
}

// ---------------------------------------------------------------------------
// 4 & 5. Desk-scale fairness sweep: headline deltas and trend shape.
// ---------------------------------------------------------------------------

struct SweepPoint {
    beta: f64,
    gini: f64,
    rebalance: f64,
    fleet: f64,
    global: f64,
}

static DESK_SWEEP: OnceLock<Vec<SweepPoint>> = OnceLock::new();

/// Seed-mean evaluation metrics per fairness weight at the desk preset
/// (shared by the headline and the trend criteria).
fn desk_sweep() -> &'static [SweepPoint] {
    DESK_SWEEP.get_or_init(|| {
        let base = build_scenario(5).expect("built-in");
        let desk = desk_scenario(&base);
        const SEEDS: u64 = 10;
        [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
            .iter()
            .map(|&beta| {
                let mut scenario = desk.clone();
                scenario.beta = beta;
                let mut sums = (0.0, 0.0, 0.0, 0.0);
                for seed in 0..SEEDS {
                    let report = train_and_evaluate(&scenario, seed).expect("desk run");
                    sums.0 += report.gini;
                    sums.1 += report.rebalance_cost;
                    sums.2 += report.fleet_cost;
                    sums.3 += report.global_cost;
                }
                let n = SEEDS as f64;
                SweepPoint {
                    beta,
                    gini: sums.0 / n,
                    rebalance: sums.1 / n,
                    fleet: sums.2 / n,
                    global: sums.3 / n,
                }
            })
            .collect()
    })
}

#[test]
fn acceptance_4_fairness_headline_desk_scale() {
    check(4, "fairness headline, desk scale", || {
        let sweep = desk_sweep();
        let base = sweep.first().expect("has points");
        let full = sweep.last().expect("has points");
        assert_eq!(base.beta, 0.0);
        assert_eq!(full.beta, 1.0);
        let gini_drop = 1.0 - full.gini / base.gini;
        let cost_rise = full.global / base.global - 1.0;
        assert!(
            gini_drop >= 0.50,
            "mean Gini fell {:.1}% (from {:.4} to {:.4}); the gate needs at least 50%",
            100.0 * gini_drop,
            base.gini,
            full.gini
        );
        assert!(
            (0.10..=0.60).contains(&cost_rise),
            "mean global cost moved {:+.1}% (from {:.2} to {:.2}); the gate needs +10%..+60%",
            100.0 * cost_rise,
            base.global,
            full.global
        );
    });
}

#[test]
fn acceptance_5_trend_reproduction() {
    check(5, "cost/fairness trends across beta", || {
        let sweep = desk_sweep();
        let series: Vec<(&str, Vec<f64>, bool)> = vec![
            ("Gini", sweep.iter().map(|p| p.gini).collect(), false),
            ("rebalance cost", sweep.iter().map(|p| p.rebalance).collect(), true),
            ("fleet cost", sweep.iter().map(|p| p.fleet).collect(), true),
        ];
        for (name, values, increasing) in series {
            let violations = values
                .windows(2)
                .filter(|w| if increasing { w[1] < w[0] } else { w[1] > w[0] })
                .count();
            assert!(
                violations <= 1,
                "{name} should be monotonically {} in the fairness weight with at \
                 most one adjacent violation; got {violations} over {values:?}",
                if increasing { "non-decreasing" } else { "non-increasing" }
            );
        }
    });
}

// ---------------------------------------------------------------------------
// 6. Pareto filter against exhaustive pairwise dominance.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_6_pareto_correctness() {
    check(6, "Pareto front correctness", || {
        let mut rng = RandomSource::new(0x5eed_0006);
        for round in 0..1000 {
            let n = 2 + rng.below(99) as usize;
            // Snap to a coarse grid so duplicates and axis ties are common.
            let points: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.below(60) as f64 / 10.0, rng.below(60) as f64 / 10.0))
                .collect();
            let mut fast = pareto_front(&points).expect("finite points");
            let mut exhaustive = common::dominance_front(&points);
            fast.sort_unstable();
            exhaustive.sort_unstable();
            assert_eq!(
                fast, exhaustive,
                "front mismatch on round {round} with {n} points: {points:?}"
            );
        }
    });
}

// ---------------------------------------------------------------------------
// 7. Simulation invariants and bit-reproducibility.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_7_simulation_invariants() {
    check(7, "simulation invariants", || {
        // Conservation and bounds over a million random hourly steps
        // spanning every built-in category profile.
        let scenarios: Vec<ScenarioConfig> =
            (2..=5).map(|m| build_scenario(m).expect("built-in")).collect();
        let mut rng = RandomSource::new(0x5eed_0007);
        let mut steps = 0u64;
        'outer: loop {
            for scenario in &scenarios {
                for profile in &scenario.categories {
                    let mut state = AreaState::new(
                        0,
                        profile.index,
                        rng.below(scenario.sigma + 1),
                    );
                    for _ in 0..8 {
                        let period = Period::BOTH[rng.below(2) as usize];
                        let before = state.window_demand;
                        let outcome = step_hour(&mut state, profile, period, scenario.sigma, &mut rng);
                        assert!(
                            state.vehicles <= scenario.sigma,
                            "occupancy {} exceeded the cap {}",
                            state.vehicles,
                            scenario.sigma
                        );
                        let attempts = state.window_demand - before;
                        assert_eq!(
                            outcome.served_departures + outcome.failures,
                            attempts,
                            "served + failed departures must equal attempts"
                        );
                        steps += 1;
                        if steps >= 1_000_000 {
                            break 'outer;
                        }
                    }
                }
            }
        }

        // A fixed seed reproduces a hundred-day evaluation trace down to
        // the byte, policies included.
        let mut scenario = build_scenario(2).expect("built-in");
        scenario.train_days = 300;
        assert_eq!(scenario.eval_days, 100);
        let policies = train(&scenario, 7).expect("training");
        let mut first = Vec::new();
        let mut second = Vec::new();
        evaluate_with_trace(&policies, &scenario, 7, &mut first).expect("evaluation");
        evaluate_with_trace(&policies, &scenario, 7, &mut second).expect("evaluation");
        assert!(!first.is_empty(), "trace must not be empty");
        assert_eq!(first, second, "same-seed traces differ");
    });
}

// ---------------------------------------------------------------------------
// 8. The half-day censored-difference law matches the event simulation.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_8_transition_approximation() {
    check(8, "half-day transition approximation", || {
        let scenario = build_scenario(5).expect("built-in");
        let profile = scenario.category(3).expect("category 3");
        let start = 20u32;
        let reps = 100_000u32;
        let cap = 120usize;
        let mut rng = RandomSource::new(0x5eed_0008);
        let mut counts = vec![0u64; cap + 1];
        for _ in 0..reps {
            let mut state = AreaState::new(0, profile.index, start);
            for _ in 0..12 {
                step_hour(&mut state, profile, Period::Morning, scenario.sigma, &mut rng);
            }
            let v = state.vehicles as usize;
            assert!(v <= cap, "outcome {v} beyond the tally cap");
            counts[v] += 1;
        }

        let rates = profile.rates(Period::Morning);
        let params = SkellamParams::new(rates.arrivals, rates.departures, 1.0).expect("valid");
        let mut tv = 0.0;
        let mut modelled = 0.0f64;
        for (n, &count) in counts.iter().enumerate() {
            let exact = censored_transition(start, n as u32, &params).expect("valid cell");
            modelled += exact;
            tv += (count as f64 / reps as f64 - exact).abs();
        }
        // Whatever exact mass lies beyond the tally cap was never observed
        // empirically, so it contributes outright.
        tv = 0.5 * (tv + (1.0 - modelled).max(0.0));
        assert!(
            tv <= 0.05,
            "total-variation distance {tv:.4} between the event simulation and \
             the censored half-day law exceeds 0.05"
        );
    });
}

// ---------------------------------------------------------------------------
// Full-scale companion to criterion 4 (slow; run explicitly with
// `cargo test --test acceptance -- --ignored`).
// ---------------------------------------------------------------------------

#[test]
#[ignore = "full-scale sweep: ~10 minutes of training"]
fn acceptance_4_fairness_headline_full_scale() {
    check(4, "fairness headline, full scale", || {
        let base = build_scenario(5).expect("built-in");
        const SEEDS: u64 = 10;
        let mut means = Vec::new();
        for beta in [0.0, 1.0] {
            let mut scenario = base.clone();
            scenario.beta = beta;
            let mut gini = 0.0;
            let mut global = 0.0;
            for seed in 0..SEEDS {
                let start = Instant::now();
                let report = train_and_evaluate(&scenario, seed).expect("full-scale run");
                assert!(
                    start.elapsed().as_secs() < 1800,
                    "one full-scale run must finish within 30 minutes"
                );
                gini += report.gini;
                global += report.global_cost;
            }
            means.push((gini / SEEDS as f64, global / SEEDS as f64));
        }
        let gini_drop = 1.0 - means[1].0 / means[0].0;
        let cost_rise = means[1].1 / means[0].1 - 1.0;
        assert!(
            (gini_drop - 0.863).abs() <= 0.15,
            "full-scale Gini delta {:.1}% is outside -86.3% +/- 15pp",
            -100.0 * gini_drop
        );
        assert!(
            (cost_rise - 0.30).abs() <= 0.15,
            "full-scale cost delta {:+.1}% is outside +30.0% +/- 15pp",
            100.0 * cost_rise
        );
    });
}
