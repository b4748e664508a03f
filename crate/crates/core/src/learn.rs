//! Tabular Q-learning over the factorized rebalancing problem: one agent
//! per demand category, each trained on the experience of every area in
//! that category, with a linearly annealed epsilon-greedy policy.
//!
//! The agent state is the pair (period indicator, vehicle count) observed
//! at a rebalancing epoch. An action chosen at an epoch plays out over the
//! following half-day window and is rewarded when that window closes, so
//! each area carries one pending transition between consecutive epochs.

use crate::city::{Action, CityError, Period, ScenarioConfig};
use crate::metrics::{EvalReport, EvalTrace, MetricsError};
use crate::reward::fair_local_reward;
use crate::sim::{apply_action, expected_demand, init_states, run_window, SimClock, TraceRow};
use crate::stochastic::RandomSource;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

const POLICY_MAGIC: [u8; 4] = *b"RBQP";
const POLICY_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error(transparent)]
    Scenario(#[from] CityError),
    #[error("policy/scenario mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corrupt policy data: {0}")]
    Corrupt(String),
}

/// Action-value table of one category agent over states (period, vehicle
/// count) and the scenario's action set, plus its exploration schedule.
///
/// Exploration decays linearly in the number of updates this table has
/// received: `epsilon = max(0, 1 - decay * updates)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    category: usize,
    sigma: u32,
    n_actions: usize,
    epsilon_decay: f64,
    update_count: u64,
    values: Vec<f64>,
}

impl QTable {
    pub fn new(category: usize, sigma: u32, n_actions: usize, epsilon_decay: f64) -> Self {
        Self {
            category,
            sigma,
            n_actions,
            epsilon_decay,
            update_count: 0,
            values: vec![0.0; 2 * (sigma as usize + 1) * n_actions],
        }
    }

    /// Rebuilds a table from persisted parts.
    pub fn from_raw(
        category: usize,
        sigma: u32,
        n_actions: usize,
        epsilon_decay: f64,
        update_count: u64,
        values: Vec<f64>,
    ) -> Result<Self, LearnError> {
        let expected = 2 * (sigma as usize + 1) * n_actions;
        if values.len() != expected {
            return Err(LearnError::Corrupt(format!(
                "table for category {category} holds {} values, expected {expected}",
                values.len()
            )));
        }
        Ok(Self { category, sigma, n_actions, epsilon_decay, update_count, values })
    }

    fn idx(&self, period: Period, vehicles: u32, action: usize) -> usize {
        debug_assert!(vehicles <= self.sigma);
        debug_assert!(action < self.n_actions);
        (period.index() * (self.sigma as usize + 1) + vehicles as usize) * self.n_actions + action
    }

    pub fn value(&self, period: Period, vehicles: u32, action: usize) -> f64 {
        self.values[self.idx(period, vehicles, action)]
    }

    /// Largest action value available in a state.
    pub fn max_value(&self, period: Period, vehicles: u32) -> f64 {
        let base = self.idx(period, vehicles, 0);
        self.values[base..base + self.n_actions]
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    /// Current exploration probability.
    pub fn epsilon(&self) -> f64 {
        (1.0 - self.epsilon_decay * self.update_count as f64).max(0.0)
    }

    pub fn category(&self) -> usize {
        self.category
    }

    pub fn sigma(&self) -> u32 {
        self.sigma
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn epsilon_decay(&self) -> f64 {
        self.epsilon_decay
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// One trained agent per category, tagged with the run that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySet {
    class_count: usize,
    sigma: u32,
    n_actions: usize,
    beta: f64,
    seed: u64,
    tables: Vec<QTable>,
}

impl PolicySet {
    /// Empty (all-zero) tables shaped for the scenario.
    pub fn new(scenario: &ScenarioConfig, seed: u64) -> Self {
        let tables = (1..=scenario.class_count)
            .map(|c| {
                QTable::new(c, scenario.sigma, scenario.actions.len(), scenario.epsilon_decay)
            })
            .collect();
        Self {
            class_count: scenario.class_count,
            sigma: scenario.sigma,
            n_actions: scenario.actions.len(),
            beta: scenario.beta,
            seed,
            tables,
        }
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn sigma(&self) -> u32 {
        self.sigma
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Fairness weight the policies were trained under.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Seed of the training run.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tables(&self) -> &[QTable] {
        &self.tables
    }

    /// Agent of a category (1-based index).
    pub fn table(&self, category: usize) -> Result<&QTable, LearnError> {
        self.tables
            .get(category.wrapping_sub(1))
            .ok_or_else(|| LearnError::Mismatch(format!("no table for category {category}")))
    }

    fn check_compatible(&self, scenario: &ScenarioConfig) -> Result<(), LearnError> {
        if self.class_count != scenario.class_count {
            return Err(LearnError::Mismatch(format!(
                "policies cover {} categories, scenario has {}",
                self.class_count, scenario.class_count
            )));
        }
        if self.sigma != scenario.sigma {
            return Err(LearnError::Mismatch(format!(
                "policies use capacity {}, scenario uses {}",
                self.sigma, scenario.sigma
            )));
        }
        if self.n_actions != scenario.actions.len() {
            return Err(LearnError::Mismatch(format!(
                "policies cover {} actions, scenario has {}",
                self.n_actions,
                scenario.actions.len()
            )));
        }
        if self.beta != scenario.beta {
            return Err(LearnError::Mismatch(format!(
                "policies were trained at beta {}, scenario carries beta {}",
                self.beta, scenario.beta
            )));
        }
        Ok(())
    }
}

/// Index of the greedy action in a state; ties between exact-equal
/// maximizers break uniformly, consuming one draw only when a tie exists.
fn greedy_index(q: &QTable, period: Period, vehicles: u32, rng: &mut RandomSource) -> usize {
    let base = q.idx(period, vehicles, 0);
    let row = &q.values[base..base + q.n_actions];
    let best = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let ties = row.iter().filter(|&&v| v == best).count();
    if ties == 1 {
        row.iter().position(|&v| v == best).unwrap()
    } else {
        let pick = rng.below(ties as u32) as usize;
        row.iter()
            .enumerate()
            .filter(|(_, &v)| v == best)
            .nth(pick)
            .unwrap()
            .0
    }
}

/// Epsilon-greedy action index. When exploration is live (`epsilon > 0`)
/// one uniform decides the branch; exploring draws an action uniformly,
/// otherwise the greedy rule applies.
pub fn select_action_index(
    q: &QTable,
    period: Period,
    vehicles: u32,
    n_actions: usize,
    rng: &mut RandomSource,
) -> usize {
    debug_assert_eq!(n_actions, q.n_actions);
    let eps = q.epsilon();
    if eps > 0.0 && rng.uniform() < eps {
        return rng.below(n_actions as u32) as usize;
    }
    greedy_index(q, period, vehicles, rng)
}

/// Epsilon-greedy action drawn against the scenario's action set.
pub fn select_action(
    q: &QTable,
    period: Period,
    vehicles: u32,
    scenario: &ScenarioConfig,
    rng: &mut RandomSource,
) -> Action {
    let idx = select_action_index(q, period, vehicles, scenario.actions.len(), rng);
    scenario.actions.get(idx).expect("index within the action set")
}

/// One temporal-difference step toward `r + gamma * max_a' Q(s', a')`,
/// with the step size and discount taken from the scenario. Counts one
/// update for the exploration schedule.
pub fn q_update(
    q: &mut QTable,
    state: (Period, u32),
    action: usize,
    reward: f64,
    next_state: (Period, u32),
    scenario: &ScenarioConfig,
) {
    let target = reward + scenario.gamma * q.max_value(next_state.0, next_state.1);
    let idx = q.idx(state.0, state.1, action);
    q.values[idx] += scenario.learning_rate * (target - q.values[idx]);
    q.update_count += 1;
}

/// Point of a learning curve: mean per-epoch system reward over one
/// window of training days.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    /// Last day (1-based) covered by the window.
    pub day: u64,
    pub mean_reward: f64,
}

struct Pending {
    state: (Period, u32),
    action: usize,
    vehicles_after: u32,
}

/// Trains one policy set on the scenario from a fresh city, consuming a
/// single random stream seeded with `seed`.
///
/// Per day the simulator runs the morning window, rebalances at hour 11,
/// runs the evening window, and rebalances at hour 23. At each epoch every
/// area (in index order) first closes its pending transition, feeding the
/// just-finished window's failures into the fairness-aware reward, then
/// selects and applies the next action. Transitions still pending when the
/// horizon ends are dropped.
pub fn train(scenario: &ScenarioConfig, seed: u64) -> Result<PolicySet, LearnError> {
    train_impl(scenario, seed, None).map(|(p, _)| p)
}

/// [`train`] plus a learning curve sampled every `window_days`; the last
/// point covers the trailing partial window if the horizon is not a
/// multiple.
pub fn train_with_curve(
    scenario: &ScenarioConfig,
    seed: u64,
    window_days: u64,
) -> Result<(PolicySet, Vec<CurvePoint>), LearnError> {
    let window = window_days.max(1);
    let (p, curve) = train_impl(scenario, seed, Some(window))?;
    Ok((p, curve))
}

fn train_impl(
    scenario: &ScenarioConfig,
    seed: u64,
    curve_window: Option<u64>,
) -> Result<(PolicySet, Vec<CurvePoint>), LearnError> {
    scenario.validate()?;
    let mut policies = PolicySet::new(scenario, seed);
    let mut rng = RandomSource::new(seed);
    let mut states = init_states(scenario);
    let mut pending: Vec<Option<Pending>> = (0..states.len()).map(|_| None).collect();
    let mut curve = Vec::new();
    let mut window_reward_sum = 0.0;
    let mut window_epochs = 0u64;
    // Reward magnitudes observed so far, for the discounted-return bound
    // checked in debug builds.
    let mut max_abs_reward = 0.0f64;
    let mut clock = SimClock::new();

    for day in 0..scenario.train_days {
        for period in Period::BOTH {
            debug_assert_eq!(clock.period(), period);
            debug_assert_eq!(clock.day, day);
            run_window(&mut states, scenario, period, &mut rng);
            for _ in 0..11 {
                clock.advance_hour();
            }
            debug_assert!(clock.is_epoch_hour());

            for (i, state) in states.iter_mut().enumerate() {
                let cat = state.category;
                let profile = &scenario.categories[cat - 1];
                let q = &mut policies.tables[cat - 1];
                let observed = (period, state.vehicles);
                if let Some(p) = pending[i].take() {
                    let r = fair_local_reward(
                        scenario.actions.get(p.action).expect("stored action index"),
                        state.window_failures,
                        p.vehicles_after,
                        profile,
                        scenario,
                        period,
                    )
                    .total();
                    max_abs_reward = max_abs_reward.max(r.abs());
                    q_update(q, p.state, p.action, r, observed, scenario);
                    debug_assert!(
                        q.value(p.state.0, p.state.1, p.action).abs()
                            <= max_abs_reward / (1.0 - scenario.gamma) + 1e-9,
                        "action value escaped the discounted-return bound"
                    );
                    window_reward_sum += r;
                    window_epochs = window_epochs.max(1);
                }
                let a = select_action_index(q, period, state.vehicles, scenario.actions.len(), &mut rng);
                apply_action(state, scenario.actions.get(a).expect("index in set"), scenario)
                    .expect("actions drawn from the scenario set");
                pending[i] = Some(Pending {
                    state: observed,
                    action: a,
                    vehicles_after: state.vehicles,
                });
            }
            window_epochs += 1;
            clock.advance_hour();
        }

        if let Some(window) = curve_window {
            let last_day = day + 1 == scenario.train_days;
            if (day + 1) % window == 0 || last_day {
                // Day-0 morning closes no transition, so the first window
                // averages over one epoch fewer.
                let closures = if curve.is_empty() { window_epochs - 1 } else { window_epochs };
                let mean = if closures == 0 { 0.0 } else { window_reward_sum / closures as f64 };
                curve.push(CurvePoint { day: day + 1, mean_reward: mean });
                window_reward_sum = 0.0;
                window_epochs = 0;
            }
        }
    }
    Ok((policies, curve))
}

/// Evaluates trained policies greedily over a fresh city and aggregates
/// the service metrics.
///
/// The city restarts from the same initial placement as training, driven
/// by a new stream seeded with `seed`. Every epoch records the fleet size
/// seen before rebalancing, the demand-normalized failures of the window
/// that just closed, and the rebalancing cost of the actions taken;
/// per-category failure tallies accumulate over the whole horizon of
/// `2 * eval_days` epochs.
pub fn evaluate(
    policies: &PolicySet,
    scenario: &ScenarioConfig,
    seed: u64,
) -> Result<EvalReport, LearnError> {
    eval_impl(policies, scenario, seed, None)
}

/// [`evaluate`] while writing one trace row per epoch and area to `out`.
pub fn evaluate_with_trace<W: Write>(
    policies: &PolicySet,
    scenario: &ScenarioConfig,
    seed: u64,
    out: &mut W,
) -> Result<EvalReport, LearnError> {
    eval_impl(policies, scenario, seed, Some(out))
}

fn eval_impl(
    policies: &PolicySet,
    scenario: &ScenarioConfig,
    seed: u64,
    mut trace_out: Option<&mut dyn Write>,
) -> Result<EvalReport, LearnError> {
    scenario.validate()?;
    policies.check_compatible(scenario)?;
    let mut rng = RandomSource::new(seed);
    let mut states = init_states(scenario);
    let m = scenario.class_count;
    let epochs = 2 * scenario.eval_days as usize;
    let mut trace = EvalTrace {
        class_count: m,
        per_epoch_rebalance_cost: Vec::with_capacity(epochs),
        per_epoch_failure_rate: Vec::with_capacity(epochs),
        per_epoch_vehicles: Vec::with_capacity(epochs),
        category_failures: vec![0; m],
        category_attempts: vec![0; m],
    };
    if let Some(out) = trace_out.as_deref_mut() {
        writeln!(out, "{}", TraceRow::csv_header())?;
    }

    for day in 0..scenario.eval_days {
        for period in Period::BOTH {
            run_window(&mut states, scenario, period, &mut rng);
            let hour = if period == Period::Morning { SimClock::EPOCH_HOURS[0] } else { SimClock::EPOCH_HOURS[1] };

            let fleet: u64 = states.iter().map(|s| s.vehicles as u64).sum();
            let mut fail_rate = 0.0;
            let mut rebalance_cost = 0.0;
            for state in states.iter_mut() {
                let cat = state.category;
                let profile = &scenario.categories[cat - 1];
                let mu = expected_demand(profile, period);
                if mu > 0.0 {
                    fail_rate += state.window_failures as f64 / mu;
                }
                trace.category_failures[cat - 1] += state.window_failures;
                trace.category_attempts[cat - 1] += state.window_demand;

                let q = &policies.tables[cat - 1];
                let a = greedy_index(q, period, state.vehicles, &mut rng);
                let action = scenario.actions.get(a).expect("index in set");
                let before = state.vehicles;
                let failures = state.window_failures;
                let demand = state.window_demand;
                apply_action(state, action, scenario)
                    .expect("actions drawn from the scenario set");
                if action.is_rebalance() {
                    rebalance_cost += scenario.alpha * profile.phi;
                }
                if let Some(out) = trace_out.as_deref_mut() {
                    let row = TraceRow {
                        day,
                        hour,
                        area_id: state.area_id,
                        category: cat,
                        vehicles_before: before,
                        action: action.delta(),
                        vehicles_after: state.vehicles,
                        failures,
                        demand,
                    };
                    writeln!(out, "{}", row.to_csv())?;
                }
            }
            trace.per_epoch_vehicles.push(fleet);
            trace.per_epoch_failure_rate.push(fail_rate);
            trace.per_epoch_rebalance_cost.push(rebalance_cost);
        }
    }
    Ok(EvalReport::from_trace(&trace, scenario, seed)?)
}

/// Writes a policy set in the versioned binary format: a fixed header
/// identifying the run (class count, capacity, action count, fairness
/// weight, seed, exploration decay) followed by each table's update count
/// and row-major values as little-endian bits. The round trip through
/// [`load_policies`] is lossless.
pub fn save_policies<W: Write>(out: &mut W, policies: &PolicySet) -> Result<(), LearnError> {
    out.write_all(&POLICY_MAGIC)?;
    out.write_all(&POLICY_VERSION.to_le_bytes())?;
    out.write_all(&(policies.class_count as u16).to_le_bytes())?;
    out.write_all(&policies.sigma.to_le_bytes())?;
    out.write_all(&(policies.n_actions as u16).to_le_bytes())?;
    out.write_all(&policies.beta.to_bits().to_le_bytes())?;
    out.write_all(&policies.seed.to_le_bytes())?;
    let decay = policies.tables.first().map_or(0.0, |t| t.epsilon_decay);
    out.write_all(&decay.to_bits().to_le_bytes())?;
    for table in &policies.tables {
        out.write_all(&table.update_count.to_le_bytes())?;
        for v in &table.values {
            out.write_all(&v.to_bits().to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a policy set written by [`save_policies`].
pub fn load_policies<R: Read>(input: &mut R) -> Result<PolicySet, LearnError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if magic != POLICY_MAGIC {
        return Err(LearnError::Corrupt("bad magic bytes".into()));
    }
    let version = read_u16(input)?;
    if version != POLICY_VERSION {
        return Err(LearnError::Corrupt(format!("unsupported format version {version}")));
    }
    let class_count = read_u16(input)? as usize;
    let sigma = read_u32(input)?;
    let n_actions = read_u16(input)? as usize;
    let beta = f64::from_bits(read_u64(input)?);
    let seed = read_u64(input)?;
    let decay = f64::from_bits(read_u64(input)?);
    if class_count == 0 || n_actions == 0 {
        return Err(LearnError::Corrupt("empty table dimensions".into()));
    }
    let mut tables = Vec::with_capacity(class_count);
    let len = 2 * (sigma as usize + 1) * n_actions;
    for cat in 1..=class_count {
        let update_count = read_u64(input)?;
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(f64::from_bits(read_u64(input)?));
        }
        tables.push(QTable::from_raw(cat, sigma, n_actions, decay, update_count, values)?);
    }
    Ok(PolicySet { class_count, sigma, n_actions, beta, seed, tables })
}

/// Saves a policy set to a file.
pub fn save_policies_file(path: &Path, policies: &PolicySet) -> Result<(), LearnError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    save_policies(&mut out, policies)?;
    Ok(())
}

/// Loads a policy set from a file.
pub fn load_policies_file(path: &Path) -> Result<PolicySet, LearnError> {
    let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
    load_policies(&mut input)
}

fn read_u16<R: Read>(input: &mut R) -> Result<u16, LearnError> {
    let mut b = [0u8; 2];
    input.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32, LearnError> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64, LearnError> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
