//! Scenario vocabulary: demand categories, per-period rates, the action
//! grid, and the built-in synthetic cities.
//!
//! A city is a set of homogeneous areas grouped into `M` demand categories,
//! indexed 1 (most peripheral, lowest demand) through `M` (city center,
//! highest demand). Each category carries per-period arrival and departure
//! rates plus two shaping coefficients: `phi` scales the rebalancing cost
//! and `chi` sets where the category sits on the fairness axis.

use std::collections::HashSet;
use std::path::Path;
use thiserror::Error;

/// Smallest supported number of demand categories.
pub const MIN_CLASSES: usize = 2;
/// Largest class count for the built-in scenarios.
pub const MAX_BUILTIN_CLASSES: usize = 5;
/// Largest class count accepted from a scenario file.
pub const MAX_CLASSES: usize = 32;

pub const DEFAULT_ALPHA: f64 = 20.0;
pub const DEFAULT_XI: f64 = 0.3;
pub const DEFAULT_GAMMA: f64 = 0.9;
pub const DEFAULT_SIGMA: u32 = 100;
pub const DEFAULT_LEARNING_RATE: f64 = 0.01;
pub const DEFAULT_EPSILON_DECAY: f64 = 8.25e-7;
pub const DEFAULT_TRAIN_DAYS: u64 = 100_000;
pub const DEFAULT_EVAL_DAYS: u64 = 100;
pub const DEFAULT_COST_WEIGHTS: [f64; 3] = [1.0, 10.0, 0.01];

#[derive(Debug, Error)]
pub enum CityError {
    #[error("unsupported class count {0}: built-in scenarios cover 2 through 5")]
    UnsupportedClassCount(usize),
    #[error("category index {index} out of range 1..={max}")]
    CategoryOutOfRange { index: usize, max: usize },
    #[error("invalid action delta {0}: must be a multiple of 5 with magnitude at most 30")]
    InvalidAction(i32),
    #[error("invalid action set: {0}")]
    InvalidActionSet(String),
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Half-day demand window. Mornings drain peripheral areas toward the
/// center; evenings reverse the flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Period {
    Morning,
    Evening,
}

impl Period {
    pub const BOTH: [Period; 2] = [Period::Morning, Period::Evening];

    /// Storage index: morning 0, evening 1.
    pub fn index(self) -> usize {
        match self {
            Period::Morning => 0,
            Period::Evening => 1,
        }
    }

    pub fn other(self) -> Period {
        match self {
            Period::Morning => Period::Evening,
            Period::Evening => Period::Morning,
        }
    }
}

impl std::fmt::Display for Period {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Period::Morning => "morning",
            Period::Evening => "evening",
        })
    }
}

/// Expected event counts per area over one half-day window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemandRates {
    pub arrivals: f64,
    pub departures: f64,
}

/// One demand category: how many areas share it and how demand behaves
/// there in each period.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryProfile {
    /// 1-based category index; 1 is the most peripheral.
    pub index: usize,
    /// Number of areas belonging to this category.
    pub node_count: usize,
    pub morning: DemandRates,
    pub evening: DemandRates,
    /// Rebalancing-cost scale, in (0, 1], decreasing toward the center.
    pub phi: f64,
    /// Fairness weight, in [-1, 1], +1 at the periphery and -1 at the center.
    pub chi: f64,
}

impl CategoryProfile {
    pub fn rates(&self, period: Period) -> DemandRates {
        match period {
            Period::Morning => self.morning,
            Period::Evening => self.evening,
        }
    }

    /// Slack of the idle-vehicle band: half the expected arrivals of the
    /// window, so busier areas tolerate proportionally larger surpluses.
    pub fn zeta(&self, period: Period) -> f64 {
        0.5 * self.rates(period).arrivals
    }
}

/// A rebalancing move: vehicles added (positive) or removed (negative)
/// from one area at an epoch. Deltas live on a grid of 5 up to magnitude 30.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Action(i32);

impl Action {
    pub const ZERO: Action = Action(0);

    pub fn new(delta: i32) -> Result<Self, CityError> {
        if delta % 5 != 0 || delta.abs() > 30 {
            return Err(CityError::InvalidAction(delta));
        }
        Ok(Action(delta))
    }

    pub fn delta(self) -> i32 {
        self.0
    }

    /// True when the move is an actual intervention rather than "do nothing".
    pub fn is_rebalance(self) -> bool {
        self.0 != 0
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ordered set of admissible actions shared by every area of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSet {
    actions: Vec<Action>,
}

impl ActionSet {
    /// The full 13-action grid -30, -25, ..., +25, +30.
    pub fn standard() -> Self {
        let actions = (-6..=6).map(|k| Action(5 * k)).collect();
        ActionSet { actions }
    }

    /// A restricted grid, for reduced models; deltas must be valid actions,
    /// strictly increasing after sorting, and nonempty.
    pub fn custom(deltas: &[i32]) -> Result<Self, CityError> {
        if deltas.is_empty() {
            return Err(CityError::InvalidActionSet("empty action set".into()));
        }
        let mut actions = deltas.iter().map(|&d| Action::new(d)).collect::<Result<Vec<_>, _>>()?;
        actions.sort_by_key(|a| a.0);
        if actions.windows(2).any(|w| w[0] == w[1]) {
            return Err(CityError::InvalidActionSet("duplicate action delta".into()));
        }
        Ok(ActionSet { actions })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<Action> {
        self.actions.get(index).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = Action> + '_ {
        self.actions.iter().copied()
    }

    pub fn index_of(&self, action: Action) -> Option<usize> {
        self.actions.iter().position(|&a| a == action)
    }

    pub fn contains(&self, action: Action) -> bool {
        self.index_of(action).is_some()
    }
}

impl Default for ActionSet {
    fn default() -> Self {
        ActionSet::standard()
    }
}

/// Complete description of one experiment: the city, the reward and
/// learning constants, and the horizon lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Number of demand categories, `M`.
    pub class_count: usize,
    /// Profiles sorted by category index 1..=M.
    pub categories: Vec<CategoryProfile>,
    /// Base rebalancing cost per intervention.
    pub alpha: f64,
    /// Weight of the idle-surplus penalty.
    pub xi: f64,
    /// Fairness weight applied on top of the service-failure penalty.
    pub beta: f64,
    /// Discount factor of the learning agents.
    pub gamma: f64,
    /// Per-area vehicle capacity.
    pub sigma: u32,
    pub learning_rate: f64,
    /// Slope of the linear exploration decay, per Q-update.
    pub epsilon_decay: f64,
    pub train_days: u64,
    pub eval_days: u64,
    /// Weights of the three cost components in the global service cost.
    pub cost_weights: [f64; 3],
    pub actions: ActionSet,
}

struct BuiltIn {
    nodes: &'static [usize],
    morning: &'static [(f64, f64)],
    evening: &'static [(f64, f64)],
    phi: &'static [f64],
    chi: &'static [f64],
}

/// Synthetic cities with 2 through 5 categories. Rates are (arrivals,
/// departures) per area per half-day window.
const BUILT_INS: [BuiltIn; 4] = [
    BuiltIn {
        nodes: &[60, 10],
        morning: &[(0.3, 2.0), (13.8, 7.0)],
        evening: &[(1.5, 0.3), (10.0, 13.8)],
        phi: &[1.0, 0.1],
        chi: &[1.0, -1.0],
    },
    BuiltIn {
        nodes: &[60, 30, 10],
        morning: &[(0.3, 2.0), (3.3, 1.5), (13.8, 7.0)],
        evening: &[(1.5, 0.3), (1.5, 3.3), (10.0, 13.8)],
        phi: &[1.0, 0.4, 0.1],
        chi: &[1.0, 0.0, -1.0],
    },
    BuiltIn {
        nodes: &[60, 40, 20, 10],
        morning: &[(0.3, 2.0), (0.45, 3.0), (9.2, 5.1), (13.8, 7.0)],
        evening: &[(1.5, 0.3), (2.25, 0.45), (6.6, 9.2), (10.0, 13.8)],
        phi: &[1.0, 0.8, 0.3, 0.1],
        chi: &[1.0, 0.5, -0.5, -1.0],
    },
    BuiltIn {
        nodes: &[60, 40, 30, 20, 10],
        morning: &[(0.3, 2.0), (0.45, 3.0), (3.3, 1.5), (9.2, 5.1), (13.8, 7.0)],
        evening: &[(1.5, 0.3), (2.25, 0.45), (1.5, 3.3), (6.6, 9.2), (10.0, 13.8)],
        phi: &[1.0, 0.8, 0.4, 0.3, 0.1],
        chi: &[1.0, 0.5, 0.4, -0.5, -1.0],
    },
];

/// Builds one of the built-in scenarios, with fairness weight zero and the
/// default constants.
pub fn build_scenario(class_count: usize) -> Result<ScenarioConfig, CityError> {
    if !(MIN_CLASSES..=MAX_BUILTIN_CLASSES).contains(&class_count) {
        return Err(CityError::UnsupportedClassCount(class_count));
    }
    let b = &BUILT_INS[class_count - 2];
    let categories = (0..class_count)
        .map(|i| CategoryProfile {
            index: i + 1,
            node_count: b.nodes[i],
            morning: DemandRates { arrivals: b.morning[i].0, departures: b.morning[i].1 },
            evening: DemandRates { arrivals: b.evening[i].0, departures: b.evening[i].1 },
            phi: b.phi[i],
            chi: b.chi[i],
        })
        .collect();
    let config = ScenarioConfig {
        class_count,
        categories,
        alpha: DEFAULT_ALPHA,
        xi: DEFAULT_XI,
        beta: 0.0,
        gamma: DEFAULT_GAMMA,
        sigma: DEFAULT_SIGMA,
        learning_rate: DEFAULT_LEARNING_RATE,
        epsilon_decay: DEFAULT_EPSILON_DECAY,
        train_days: DEFAULT_TRAIN_DAYS,
        eval_days: DEFAULT_EVAL_DAYS,
        cost_weights: DEFAULT_COST_WEIGHTS,
        actions: ActionSet::standard(),
    };
    config.validate()?;
    Ok(config)
}

impl ScenarioConfig {
    /// Rebalancing-cost scale of a category (1-based index).
    pub fn phi(&self, category: usize) -> Result<f64, CityError> {
        self.category(category).map(|c| c.phi)
    }

    /// Fairness weight of a category (1-based index).
    pub fn chi(&self, category: usize) -> Result<f64, CityError> {
        self.category(category).map(|c| c.chi)
    }

    pub fn category(&self, category: usize) -> Result<&CategoryProfile, CityError> {
        if category == 0 || category > self.class_count {
            return Err(CityError::CategoryOutOfRange {
                index: category,
                max: self.class_count,
            });
        }
        Ok(&self.categories[category - 1])
    }

    /// Total number of areas across all categories.
    pub fn total_nodes(&self) -> usize {
        self.categories.iter().map(|c| c.node_count).sum()
    }

    pub fn validate(&self) -> Result<(), CityError> {
        let m = self.class_count;
        if !(MIN_CLASSES..=MAX_CLASSES).contains(&m) {
            return Err(CityError::Invalid(format!(
                "class count {m} outside {MIN_CLASSES}..={MAX_CLASSES}"
            )));
        }
        if self.categories.len() != m {
            return Err(CityError::Invalid(format!(
                "expected {m} category profiles, found {}",
                self.categories.len()
            )));
        }
        for (i, c) in self.categories.iter().enumerate() {
            if c.index != i + 1 {
                return Err(CityError::Invalid(format!(
                    "category at position {i} carries index {}",
                    c.index
                )));
            }
            if c.node_count == 0 {
                return Err(CityError::Invalid(format!("category {} has no areas", c.index)));
            }
            for r in [c.morning, c.evening] {
                if !(r.arrivals.is_finite() && r.departures.is_finite())
                    || r.arrivals < 0.0
                    || r.departures < 0.0
                {
                    return Err(CityError::Invalid(format!(
                        "category {} has invalid rates",
                        c.index
                    )));
                }
            }
            if !(c.phi > 0.0 && c.phi <= 1.0) {
                return Err(CityError::Invalid(format!(
                    "category {} phi {} outside (0, 1]",
                    c.index, c.phi
                )));
            }
            if !(-1.0..=1.0).contains(&c.chi) {
                return Err(CityError::Invalid(format!(
                    "category {} chi {} outside [-1, 1]",
                    c.index, c.chi
                )));
            }
        }
        if self.categories[0].phi != 1.0 {
            return Err(CityError::Invalid("phi of category 1 must be 1".into()));
        }
        if self.categories.windows(2).any(|w| w[1].phi >= w[0].phi) {
            return Err(CityError::Invalid("phi must be strictly decreasing".into()));
        }
        if self.categories[0].chi != 1.0 || self.categories[m - 1].chi != -1.0 {
            return Err(CityError::Invalid(
                "chi must run from +1 at category 1 to -1 at the center".into(),
            ));
        }
        if self.categories.windows(2).any(|w| w[1].chi >= w[0].chi) {
            return Err(CityError::Invalid("chi must be strictly decreasing".into()));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(CityError::Invalid(format!("alpha {} must be positive", self.alpha)));
        }
        if !(self.xi.is_finite() && self.xi > 0.0) {
            return Err(CityError::Invalid(format!("xi {} must be positive", self.xi)));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(CityError::Invalid(format!("beta {} must be nonnegative", self.beta)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(CityError::Invalid(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if self.sigma == 0 {
            return Err(CityError::Invalid("sigma must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(CityError::Invalid(format!(
                "learning rate {} outside (0, 1]",
                self.learning_rate
            )));
        }
        if !(self.epsilon_decay.is_finite() && self.epsilon_decay > 0.0) {
            return Err(CityError::Invalid(format!(
                "epsilon decay {} must be positive",
                self.epsilon_decay
            )));
        }
        if self.eval_days == 0 {
            return Err(CityError::Invalid("eval_days must be at least 1".into()));
        }
        if self.cost_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(CityError::Invalid("cost weights must be positive".into()));
        }
        if self.actions.is_empty() {
            return Err(CityError::Invalid("action set is empty".into()));
        }
        Ok(())
    }
}

/// Parses a flat `key = value` scenario file.
///
/// The file must name the class count `M`; when `M` matches a built-in
/// scenario the remaining keys override it, otherwise every per-category
/// key is required. Recognized keys: `M`, `nodes.<m>`, `rates.morning.<m>`
/// and `rates.evening.<m>` (two comma-separated reals, arrivals then
/// departures), `phi.<m>`, `chi.<m>`, `alpha`, `xi`, `beta`, `gamma`,
/// `sigma`, `lr`, `eps_decay`, `train_days`, `eval_days`, and `omega1`
/// through `omega3`. Lines starting with `#` and blank lines are skipped;
/// unknown and repeated keys are errors.
pub fn parse_scenario_str(text: &str) -> Result<ScenarioConfig, CityError> {
    let mut entries: Vec<(usize, &str, &str)> = Vec::new();
    let mut seen: HashSet<&str> = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(CityError::Parse {
                line,
                message: format!("expected `key = value`, got `{trimmed}`"),
            });
        };
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(CityError::Parse { line, message: "empty key".into() });
        }
        if !seen.insert(key) {
            return Err(CityError::DuplicateKey { line, key: key.to_string() });
        }
        entries.push((line, key, value));
    }

    let m_entry = entries
        .iter()
        .find(|(_, k, _)| *k == "M")
        .ok_or_else(|| CityError::MissingKey("M".into()))?;
    let class_count = parse_value::<usize>(m_entry.0, "M", m_entry.2)?;
    if !(MIN_CLASSES..=MAX_CLASSES).contains(&class_count) {
        return Err(CityError::Invalid(format!(
            "class count {class_count} outside {MIN_CLASSES}..={MAX_CLASSES}"
        )));
    }

    let builtin_base = class_count <= MAX_BUILTIN_CLASSES;
    let mut config = if builtin_base {
        build_scenario(class_count)?
    } else {
        blank_scenario(class_count)
    };
    // Tracks which per-category fields were set, for custom class counts
    // where nothing may be left to defaults.
    let mut field_set = vec![[builtin_base; 5]; class_count];

    for &(line, key, value) in &entries {
        apply_key(&mut config, &mut field_set, line, key, value)?;
    }

    if !builtin_base {
        const FIELD: [&str; 5] = ["nodes", "rates.morning", "rates.evening", "phi", "chi"];
        for (i, flags) in field_set.iter().enumerate() {
            for (f, &set) in flags.iter().enumerate() {
                if !set {
                    return Err(CityError::MissingKey(format!("{}.{}", FIELD[f], i + 1)));
                }
            }
        }
    }
    config.validate()?;
    Ok(config)
}

/// Loads and parses a scenario file from disk.
pub fn load_scenario_file(path: &Path) -> Result<ScenarioConfig, CityError> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario_str(&text)
}

fn blank_scenario(class_count: usize) -> ScenarioConfig {
    let categories = (1..=class_count)
        .map(|index| CategoryProfile {
            index,
            node_count: 0,
            morning: DemandRates { arrivals: f64::NAN, departures: f64::NAN },
            evening: DemandRates { arrivals: f64::NAN, departures: f64::NAN },
            phi: f64::NAN,
            chi: f64::NAN,
        })
        .collect();
    ScenarioConfig {
        class_count,
        categories,
        alpha: DEFAULT_ALPHA,
        xi: DEFAULT_XI,
        beta: 0.0,
        gamma: DEFAULT_GAMMA,
        sigma: DEFAULT_SIGMA,
        learning_rate: DEFAULT_LEARNING_RATE,
        epsilon_decay: DEFAULT_EPSILON_DECAY,
        train_days: DEFAULT_TRAIN_DAYS,
        eval_days: DEFAULT_EVAL_DAYS,
        cost_weights: DEFAULT_COST_WEIGHTS,
        actions: ActionSet::standard(),
    }
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, CityError> {
    value.parse().map_err(|_| CityError::Parse {
        line,
        message: format!("cannot parse `{value}` for key `{key}`"),
    })
}

fn parse_rates(line: usize, key: &str, value: &str) -> Result<DemandRates, CityError> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(CityError::Parse {
            line,
            message: format!("key `{key}` expects `arrivals, departures`, got `{value}`"),
        });
    }
    Ok(DemandRates {
        arrivals: parse_value(line, key, parts[0])?,
        departures: parse_value(line, key, parts[1])?,
    })
}

fn category_slot(line: usize, key: &str, index_text: &str, max: usize) -> Result<usize, CityError> {
    let index: usize = parse_value(line, key, index_text)?;
    if index == 0 || index > max {
        return Err(CityError::CategoryOutOfRange { index, max });
    }
    Ok(index - 1)
}

fn apply_key(
    config: &mut ScenarioConfig,
    field_set: &mut [[bool; 5]],
    line: usize,
    key: &str,
    value: &str,
) -> Result<(), CityError> {
    let m = config.class_count;
    match key {
        "M" => {}
        "alpha" => config.alpha = parse_value(line, key, value)?,
        "xi" => config.xi = parse_value(line, key, value)?,
        "beta" => config.beta = parse_value(line, key, value)?,
        "gamma" => config.gamma = parse_value(line, key, value)?,
        "sigma" => config.sigma = parse_value(line, key, value)?,
        "lr" => config.learning_rate = parse_value(line, key, value)?,
        "eps_decay" => config.epsilon_decay = parse_value(line, key, value)?,
        "train_days" => config.train_days = parse_value(line, key, value)?,
        "eval_days" => config.eval_days = parse_value(line, key, value)?,
        "omega1" => config.cost_weights[0] = parse_value(line, key, value)?,
        "omega2" => config.cost_weights[1] = parse_value(line, key, value)?,
        "omega3" => config.cost_weights[2] = parse_value(line, key, value)?,
        _ => {
            let parts: Vec<&str> = key.split('.').collect();
            match parts.as_slice() {
                ["nodes", idx] => {
                    let slot = category_slot(line, key, idx, m)?;
                    config.categories[slot].node_count = parse_value(line, key, value)?;
                    field_set[slot][0] = true;
                }
                ["rates", "morning", idx] => {
                    let slot = category_slot(line, key, idx, m)?;
                    config.categories[slot].morning = parse_rates(line, key, value)?;
                    field_set[slot][1] = true;
                }
                ["rates", "evening", idx] => {
                    let slot = category_slot(line, key, idx, m)?;
                    config.categories[slot].evening = parse_rates(line, key, value)?;
                    field_set[slot][2] = true;
                }
                ["phi", idx] => {
                    let slot = category_slot(line, key, idx, m)?;
                    config.categories[slot].phi = parse_value(line, key, value)?;
                    field_set[slot][3] = true;
                }
                ["chi", idx] => {
                    let slot = category_slot(line, key, idx, m)?;
                    config.categories[slot].chi = parse_value(line, key, value)?;
                    field_set[slot][4] = true;
                }
                _ => return Err(CityError::UnknownKey { line, key: key.to_string() }),
            }
        }
    }
    Ok(())
}
