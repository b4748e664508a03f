//! Service-quality metrics derived from an evaluation run: per-category
//! failure probabilities, their Gini index, the three cost components, and
//! Pareto filtering of (cost, inequality) trade-offs.

use crate::city::ScenarioConfig;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("category {0} recorded no departure attempts")]
    NoAttempts(usize),
    #[error("category {category} recorded more failures ({failures}) than attempts ({attempts})")]
    InvalidTallies { category: usize, failures: u64, attempts: u64 },
    #[error("input lengths differ: {0}")]
    LengthMismatch(&'static str),
    #[error("non-finite value in input: {0}")]
    NonFinite(&'static str),
}

/// Raw tallies of an evaluation run, before any averaging. Epoch vectors
/// hold one entry per rebalancing epoch, category vectors one entry per
/// demand category.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTrace {
    pub class_count: usize,
    /// Rebalancing cost charged at each epoch, summed over areas.
    pub per_epoch_rebalance_cost: Vec<f64>,
    /// Demand-normalized failures of the window closing at each epoch.
    pub per_epoch_failure_rate: Vec<f64>,
    /// Fleet size observed at each epoch, before the action.
    pub per_epoch_vehicles: Vec<u64>,
    /// Failed departure attempts per category over the whole run.
    pub category_failures: Vec<u64>,
    /// All departure attempts per category over the whole run.
    pub category_attempts: Vec<u64>,
}

/// Gini index of a set of nonnegative values: the mean absolute difference
/// between pairs, normalized by twice the mean. Zero when all values agree
/// or when the mean itself is zero; at most `1 - 1/M` for `M` values.
pub fn gini(values: &[f64]) -> f64 {
    let m = values.len();
    if m == 0 {
        return 0.0;
    }
    debug_assert!(values.iter().all(|v| v.is_finite() && *v >= 0.0));
    let mean: f64 = values.iter().sum::<f64>() / m as f64;
    if mean == 0.0 {
        return 0.0;
    }
    let mut diff_sum = 0.0;
    for (i, a) in values.iter().enumerate() {
        for b in &values[i + 1..] {
            diff_sum += (a - b).abs();
        }
    }
    // Off-diagonal pairs each appear twice in the defining double sum.
    2.0 * diff_sum / (2.0 * (m * m) as f64 * mean)
}

/// Per-category failure probability: failures over attempts.
///
/// # Errors
///
/// Rejects empty or mismatched inputs, categories without any attempts,
/// and tallies where failures exceed attempts.
pub fn failure_probabilities(
    failures: &[u64],
    attempts: &[u64],
) -> Result<Vec<f64>, MetricsError> {
    if failures.is_empty() {
        return Err(MetricsError::EmptyInput("failure tallies"));
    }
    if failures.len() != attempts.len() {
        return Err(MetricsError::LengthMismatch("failures vs attempts"));
    }
    failures
        .iter()
        .zip(attempts.iter())
        .enumerate()
        .map(|(i, (&f, &a))| {
            if a == 0 {
                Err(MetricsError::NoAttempts(i + 1))
            } else if f > a {
                Err(MetricsError::InvalidTallies { category: i + 1, failures: f, attempts: a })
            } else {
                Ok(f as f64 / a as f64)
            }
        })
        .collect()
}

/// The three cost components as per-epoch means: rebalancing cost,
/// demand-normalized failures, and fleet size.
pub fn costs(trace: &EvalTrace) -> Result<[f64; 3], MetricsError> {
    let n = trace.per_epoch_rebalance_cost.len();
    if n == 0 {
        return Err(MetricsError::EmptyInput("epoch series"));
    }
    if trace.per_epoch_failure_rate.len() != n || trace.per_epoch_vehicles.len() != n {
        return Err(MetricsError::LengthMismatch("epoch series"));
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / n as f64;
    Ok([
        mean(&trace.per_epoch_rebalance_cost),
        mean(&trace.per_epoch_failure_rate),
        trace.per_epoch_vehicles.iter().sum::<u64>() as f64 / n as f64,
    ])
}

/// Weighted sum of the three cost components.
pub fn global_cost(components: [f64; 3], weights: [f64; 3]) -> f64 {
    components.iter().zip(weights.iter()).map(|(c, w)| c * w).sum()
}

/// Indices of the Pareto-efficient points when minimizing both coordinates.
/// A point is efficient when no other point is at least as good in both
/// coordinates and strictly better in one; exact duplicates on the front
/// are all reported. Indices come back in ascending order.
pub fn pareto_front(points: &[(f64, f64)]) -> Result<Vec<usize>, MetricsError> {
    if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(MetricsError::NonFinite("pareto point"));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .partial_cmp(&points[b])
            .expect("finite coordinates always compare")
    });
    let mut efficient = vec![false; points.len()];
    let mut best_y = f64::INFINITY;
    let mut i = 0;
    while i < order.len() {
        let x = points[order[i]].0;
        let mut j = i;
        while j < order.len() && points[order[j]].0 == x {
            j += 1;
        }
        // Within an equal-x group the first entries carry the minimal y;
        // they are efficient iff nothing with strictly smaller x matched
        // or beat that y.
        let y_min = points[order[i]].1;
        if y_min < best_y {
            for &idx in &order[i..j] {
                if points[idx].1 == y_min {
                    efficient[idx] = true;
                }
            }
            best_y = y_min;
        }
        i = j;
    }
    Ok(efficient
        .iter()
        .enumerate()
        .filter_map(|(i, &e)| e.then_some(i))
        .collect())
}

/// Aggregated outcome of evaluating one trained policy set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub beta: f64,
    pub seed: u64,
    pub class_count: usize,
    pub gini: f64,
    /// Per-epoch mean rebalancing cost (C1).
    pub rebalance_cost: f64,
    /// Per-epoch mean demand-normalized failures (C2).
    pub failure_cost: f64,
    /// Per-epoch mean fleet size (C3).
    pub fleet_cost: f64,
    pub global_cost: f64,
    /// Per-category failure probabilities, length `class_count`.
    pub failure_probabilities: Vec<f64>,
}

impl EvalReport {
    /// Builds the report from raw run tallies using the scenario's fairness
    /// weight and cost weights.
    pub fn from_trace(
        trace: &EvalTrace,
        scenario: &ScenarioConfig,
        seed: u64,
    ) -> Result<Self, MetricsError> {
        let x = failure_probabilities(&trace.category_failures, &trace.category_attempts)?;
        let c = costs(trace)?;
        Ok(EvalReport {
            beta: scenario.beta,
            seed,
            class_count: trace.class_count,
            gini: gini(&x),
            rebalance_cost: c[0],
            failure_cost: c[1],
            fleet_cost: c[2],
            global_cost: global_cost(c, scenario.cost_weights),
            failure_probabilities: x,
        })
    }

    /// CSV header with failure-probability columns up to `max_classes`.
    pub fn csv_header(max_classes: usize) -> String {
        let mut h = String::from("beta,seed,M,gini,C1,C2,C3,global_cost");
        for m in 1..=max_classes {
            h.push_str(&format!(",x_{m}"));
        }
        h
    }

    /// One CSV row; probability columns beyond `class_count` stay empty so
    /// mixed class counts share a file. Numbers print in shortest
    /// round-trip form, so parsing the row recovers them bit for bit.
    pub fn to_csv(&self, max_classes: usize) -> String {
        let mut row = format!(
            "{},{},{},{},{},{},{},{}",
            self.beta,
            self.seed,
            self.class_count,
            self.gini,
            self.rebalance_cost,
            self.failure_cost,
            self.fleet_cost,
            self.global_cost
        );
        for m in 0..max_classes {
            row.push(',');
            if let Some(x) = self.failure_probabilities.get(m) {
                row.push_str(&format!("{x}"));
            }
        }
        row
    }

    /// Parses a row written by [`EvalReport::to_csv`]; `None` when the line
    /// is malformed, letting callers skip partial lines from interrupted
    /// runs.
    pub fn from_csv(line: &str) -> Option<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 8 {
            return None;
        }
        let beta: f64 = fields[0].parse().ok()?;
        let seed: u64 = fields[1].parse().ok()?;
        let class_count: usize = fields[2].parse().ok()?;
        let gini: f64 = fields[3].parse().ok()?;
        let c1: f64 = fields[4].parse().ok()?;
        let c2: f64 = fields[5].parse().ok()?;
        let c3: f64 = fields[6].parse().ok()?;
        let global: f64 = fields[7].parse().ok()?;
        let mut x = Vec::with_capacity(class_count);
        for field in &fields[8..] {
            if field.is_empty() {
                break;
            }
            x.push(field.parse().ok()?);
        }
        if x.len() != class_count {
            return None;
        }
        Some(EvalReport {
            beta,
            seed,
            class_count,
            gini,
            rebalance_cost: c1,
            failure_cost: c2,
            fleet_cost: c3,
            global_cost: global,
            failure_probabilities: x,
        })
    }
}
