//! Event-level simulator for one city: hourly Poisson arrivals and
//! departures per area, censored at zero occupancy and capped at the
//! per-area capacity.
//!
//! Randomness discipline: a run owns a single [`RandomSource`] and consumes
//! it in a fixed order. Per hour and per area (in slice order) the draws
//! are: arrival count, departure count, then, only when both counts are
//! positive, one uniform event time per arrival followed by one per
//! departure. Hours in which either side is empty need no interleaving, so
//! no times are drawn and the aggregate update is applied directly; the
//! resulting occupancy and tallies are identical in distribution and the
//! stream stays reproducible bit for bit.

use crate::city::{Action, CategoryProfile, DemandRates, Period, ScenarioConfig};
use crate::stochastic::RandomSource;
use thiserror::Error;

/// Hours per half-day demand window.
pub const HOURS_PER_WINDOW: u8 = 12;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("action {0:+} is not in the scenario's action set")]
    ActionNotAllowed(i32),
}

/// Occupancy and within-window tallies of one area.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AreaState {
    pub area_id: usize,
    /// 1-based demand category of the area.
    pub category: usize,
    /// Vehicles currently parked; never exceeds the scenario capacity.
    pub vehicles: u32,
    /// Departure attempts in the current window that found the area empty.
    pub window_failures: u64,
    /// All departure attempts in the current window.
    pub window_demand: u64,
}

impl AreaState {
    pub fn new(area_id: usize, category: usize, vehicles: u32) -> Self {
        Self { area_id, category, vehicles, window_failures: 0, window_demand: 0 }
    }

    /// Clears the window tallies at a rebalancing epoch.
    pub fn reset_window(&mut self) {
        self.window_failures = 0;
        self.window_demand = 0;
    }
}

/// Wall-clock position within the simulated horizon. Hours 0 through 11
/// form the morning window, 12 through 23 the evening window; rebalancing
/// epochs close each window at hours 11 and 23.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimClock {
    pub day: u64,
    pub hour: u8,
}

impl SimClock {
    pub const EPOCH_HOURS: [u8; 2] = [11, 23];

    pub fn new() -> Self {
        Self { day: 0, hour: 0 }
    }

    pub fn period(&self) -> Period {
        if self.hour < HOURS_PER_WINDOW {
            Period::Morning
        } else {
            Period::Evening
        }
    }

    pub fn is_epoch_hour(&self) -> bool {
        Self::EPOCH_HOURS.contains(&self.hour)
    }

    pub fn advance_hour(&mut self) {
        self.hour += 1;
        if self.hour == 24 {
            self.hour = 0;
            self.day += 1;
        }
    }
}

impl Default for SimClock {
    fn default() -> Self {
        Self::new()
    }
}

/// Event tallies of one area over some span of simulated time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WindowOutcome {
    /// Return attempts, whether or not the area had room.
    pub arrivals: u64,
    /// Departure attempts that found a vehicle.
    pub served_departures: u64,
    /// Departure attempts that found the area empty.
    pub failures: u64,
}

impl WindowOutcome {
    pub fn absorb(&mut self, other: WindowOutcome) {
        self.arrivals += other.arrivals;
        self.served_departures += other.served_departures;
        self.failures += other.failures;
    }

    /// All departure attempts, served or not.
    pub fn demand(&self) -> u64 {
        self.served_departures + self.failures
    }
}

/// Per-hour demand rates with the exponential the inversion sampler needs,
/// precomputed once per window.
struct HourlyRates {
    arrivals: f64,
    departures: f64,
    exp_arrivals: f64,
    exp_departures: f64,
}

impl HourlyRates {
    fn from_window(rates: DemandRates) -> Self {
        let arrivals = rates.arrivals / HOURS_PER_WINDOW as f64;
        let departures = rates.departures / HOURS_PER_WINDOW as f64;
        Self {
            arrivals,
            departures,
            exp_arrivals: (-arrivals).exp(),
            exp_departures: (-departures).exp(),
        }
    }
}

/// Expected departure attempts per area over one window of the given
/// period; the occupancy target the clutter penalty is anchored to.
pub fn expected_demand(profile: &CategoryProfile, period: Period) -> f64 {
    profile.rates(period).departures
}

/// Initial fleet: each area starts at its expected morning demand, rounded,
/// capped at the capacity.
pub fn init_states(scenario: &ScenarioConfig) -> Vec<AreaState> {
    let mut states = Vec::with_capacity(scenario.total_nodes());
    let mut area_id = 0;
    for profile in &scenario.categories {
        let vehicles = (expected_demand(profile, Period::Morning).round() as u32).min(scenario.sigma);
        for _ in 0..profile.node_count {
            states.push(AreaState::new(area_id, profile.index, vehicles));
            area_id += 1;
        }
    }
    states
}

fn step_hour_impl(
    state: &mut AreaState,
    rates: &HourlyRates,
    sigma: u32,
    rng: &mut RandomSource,
    events: &mut Vec<(f64, bool)>,
) -> WindowOutcome {
    let na = rng.poisson_cached(rates.arrivals, rates.exp_arrivals);
    let nd = rng.poisson_cached(rates.departures, rates.exp_departures);
    let mut out = WindowOutcome { arrivals: na, ..WindowOutcome::default() };
    if nd == 0 {
        state.vehicles = (state.vehicles.saturating_add(na.min(u32::MAX as u64) as u32)).min(sigma);
        return out;
    }
    if na == 0 {
        let served = (state.vehicles as u64).min(nd);
        state.vehicles -= served as u32;
        out.served_departures = served;
        out.failures = nd - served;
        state.window_demand += nd;
        state.window_failures += out.failures;
        return out;
    }
    // Both sides present: interleave individual events uniformly in time.
    events.clear();
    events.reserve((na + nd) as usize);
    for _ in 0..na {
        events.push((rng.uniform(), true));
    }
    for _ in 0..nd {
        events.push((rng.uniform(), false));
    }
    // Arrivals win exact-time ties; such ties have probability zero but the
    // order must still be total for determinism.
    events.sort_unstable_by(|a, b| {
        a.0.partial_cmp(&b.0).unwrap().then(b.1.cmp(&a.1))
    });
    for &(_, is_arrival) in events.iter() {
        if is_arrival {
            if state.vehicles < sigma {
                state.vehicles += 1;
            }
        } else {
            state.window_demand += 1;
            if state.vehicles > 0 {
                state.vehicles -= 1;
                out.served_departures += 1;
            } else {
                out.failures += 1;
                state.window_failures += 1;
            }
        }
    }
    out
}

/// Simulates one hour of demand in one area and updates its occupancy and
/// window tallies.
pub fn step_hour(
    state: &mut AreaState,
    profile: &CategoryProfile,
    period: Period,
    sigma: u32,
    rng: &mut RandomSource,
) -> WindowOutcome {
    let rates = HourlyRates::from_window(profile.rates(period));
    let mut events = Vec::new();
    step_hour_impl(state, &rates, sigma, rng, &mut events)
}

/// Simulates one half-day window for every area, visiting areas in slice
/// order each hour, and returns the per-area outcomes.
pub fn run_window(
    states: &mut [AreaState],
    scenario: &ScenarioConfig,
    period: Period,
    rng: &mut RandomSource,
) -> Vec<WindowOutcome> {
    let rates: Vec<HourlyRates> = scenario
        .categories
        .iter()
        .map(|c| HourlyRates::from_window(c.rates(period)))
        .collect();
    let mut outcomes = vec![WindowOutcome::default(); states.len()];
    let mut events = Vec::new();
    for _ in 0..HOURS_PER_WINDOW {
        for (state, acc) in states.iter_mut().zip(outcomes.iter_mut()) {
            let hr = &rates[state.category - 1];
            acc.absorb(step_hour_impl(state, hr, scenario.sigma, rng, &mut events));
        }
    }
    outcomes
}

/// Applies a rebalancing move: occupancy shifts by the action delta,
/// clamped to `[0, sigma]`, and the window tallies restart at zero for the
/// window the action opens. Callers consume the closing window's tallies
/// before applying the next action.
///
/// # Errors
///
/// [`SimError::ActionNotAllowed`] when the action is outside the scenario's
/// action set.
pub fn apply_action(
    state: &mut AreaState,
    action: Action,
    scenario: &ScenarioConfig,
) -> Result<(), SimError> {
    if !scenario.actions.contains(action) {
        return Err(SimError::ActionNotAllowed(action.delta()));
    }
    let moved = state.vehicles as i64 + action.delta() as i64;
    state.vehicles = moved.clamp(0, scenario.sigma as i64) as u32;
    state.reset_window();
    Ok(())
}

/// One line of the per-epoch simulation trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub day: u64,
    pub hour: u8,
    pub area_id: usize,
    pub category: usize,
    pub vehicles_before: u32,
    pub action: i32,
    pub vehicles_after: u32,
    pub failures: u64,
    pub demand: u64,
}

impl TraceRow {
    pub fn csv_header() -> &'static str {
        "day,hour,area_id,category,vehicles_before,action,vehicles_after,failures,demand"
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.day,
            self.hour,
            self.area_id,
            self.category,
            self.vehicles_before,
            self.action,
            self.vehicles_after,
            self.failures,
            self.demand
        )
    }
}
