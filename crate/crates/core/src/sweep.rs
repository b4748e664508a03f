//! Experiment driver: trains and evaluates policies over a grid of
//! (scenario, fairness weight, seed) triples, merges the results with any
//! previous partial output, and writes the sweep artifacts.
//!
//! Outputs in the sweep directory:
//!
//! * `results.csv`: one row per completed triple, sorted by class count,
//!   fairness weight, and seed. The file is rewritten atomically after
//!   every sweep, so an interrupted and resumed sweep converges to the
//!   same bytes as an uninterrupted one.
//! * `pareto_M<k>.csv`: per class count, the seed-averaged (cost, Gini)
//!   point of every fairness weight with a flag marking the Pareto-efficient
//!   ones.
//! * `summary.json`: per class count, the seed-averaged metrics per
//!   fairness weight, their changes against the unweighted baseline, and
//!   the weight with the best inequality-reduction-per-cost ratio.
//!
//! Triples are independent, so with the `parallel` feature they execute on
//! a work-stealing pool; otherwise sequentially in deterministic order.
//! Either way the artifacts are identical.

use crate::city::{CityError, ScenarioConfig};
use crate::learn::{evaluate, evaluate_with_trace, train, train_with_curve, CurvePoint, LearnError};
use crate::metrics::{pareto_front, EvalReport, MetricsError};
use serde::Serialize;
use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Training horizon of the desk preset.
pub const DESK_TRAIN_DAYS: u64 = 20_000;

/// Exploration-decay speedup of the desk preset; chosen so annealing
/// still completes within the shortened horizon.
pub const DESK_DECAY_FACTOR: f64 = 5.0;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Scenario(#[from] CityError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SweepError {
    /// True when the error stems from how the sweep was specified rather
    /// than from executing it.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            SweepError::InvalidSpec(_)
                | SweepError::Scenario(_)
                | SweepError::Learn(LearnError::Scenario(_))
        )
    }
}

/// Work order for one sweep.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    /// Base scenario per class count; the fairness weight and horizon
    /// scale are applied per run.
    pub scenarios: Vec<ScenarioConfig>,
    pub betas: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Multiplier on the training horizon. The exploration decay is left
    /// untouched, so deep scaling truncates annealing; prefer the desk
    /// preset when the explore/exploit profile must be preserved.
    pub scale: f64,
    pub out_dir: PathBuf,
    /// Worker threads for the parallel build; 0 picks the pool default.
    /// Ignored by the sequential build.
    pub workers: usize,
    /// Write a per-epoch simulation trace for every run.
    pub trace: bool,
    /// Write a learning curve per run, averaged over windows of this many
    /// days.
    pub curve_window: Option<u64>,
}

impl SweepSpec {
    pub fn new(
        scenarios: Vec<ScenarioConfig>,
        betas: Vec<f64>,
        seeds: Vec<u64>,
        out_dir: PathBuf,
    ) -> Self {
        Self { scenarios, betas, seeds, scale: 1.0, out_dir, workers: 0, trace: false, curve_window: None }
    }

    fn validate(&self) -> Result<(), SweepError> {
        if self.scenarios.is_empty() {
            return Err(SweepError::InvalidSpec("empty sweep (no scenarios)".into()));
        }
        let mut counts = HashSet::new();
        for s in &self.scenarios {
            s.validate()?;
            if !counts.insert(s.class_count) {
                return Err(SweepError::InvalidSpec(format!(
                    "class count {} appears twice",
                    s.class_count
                )));
            }
        }
        if self.betas.is_empty() {
            return Err(SweepError::InvalidSpec("empty sweep (no beta values)".into()));
        }
        if self.betas.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(SweepError::InvalidSpec("betas must be finite and nonnegative".into()));
        }
        if self.seeds.is_empty() {
            return Err(SweepError::InvalidSpec("empty sweep (no seeds)".into()));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(SweepError::InvalidSpec(format!("scale {} must be positive", self.scale)));
        }
        if self.curve_window == Some(0) {
            return Err(SweepError::InvalidSpec("curve window must be at least 1 day".into()));
        }
        Ok(())
    }
}

/// Seed-averaged metrics of one fairness weight within one scenario.
#[derive(Debug, Clone, Serialize)]
pub struct BetaSummary {
    pub beta: f64,
    pub runs: usize,
    pub mean_gini: f64,
    pub mean_global_cost: f64,
    pub mean_rebalance_cost: f64,
    pub mean_failure_cost: f64,
    pub mean_fleet_cost: f64,
    /// Percent change against the beta = 0 baseline; absent without one.
    pub gini_change_pct: Option<f64>,
    pub cost_change_pct: Option<f64>,
    /// Whether the (cost, Gini) point survives Pareto filtering.
    pub efficient: bool,
}

/// Sweep outcome for one scenario.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioSummary {
    pub class_count: usize,
    pub betas: Vec<BetaSummary>,
    /// Weight with the largest Gini reduction per percent of added cost;
    /// weights that reduce cost outright rank above all others.
    pub best_tradeoff_beta: Option<f64>,
}

/// Everything `summary.json` holds.
#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub scenarios: Vec<ScenarioSummary>,
    pub total_runs: usize,
    pub new_runs: usize,
}

#[derive(Debug, Clone)]
struct RunSpec {
    scenario: ScenarioConfig,
    class_count: usize,
    beta_key: i64,
    seed: u64,
}

/// Fixed-point key identifying a fairness weight in filenames and resume
/// bookkeeping; distinguishes weights 0.001 apart.
pub fn beta_key(beta: f64) -> i64 {
    (beta * 1000.0).round() as i64
}

/// Applies the horizon scale to a base scenario: training days multiply by
/// `scale`; everything else, including the exploration decay, stays put.
pub fn scaled_scenario(base: &ScenarioConfig, scale: f64) -> ScenarioConfig {
    let mut s = base.clone();
    s.train_days = (base.train_days as f64 * scale).round() as u64;
    s
}

/// Desk preset: a short-horizon variant whose faster annealing finishes
/// exploring at the same fraction of training as the full run.
pub fn desk_scenario(base: &ScenarioConfig) -> ScenarioConfig {
    let mut s = base.clone();
    s.train_days = DESK_TRAIN_DAYS;
    s.epsilon_decay = base.epsilon_decay * DESK_DECAY_FACTOR;
    s
}

/// Trains policies on the scenario (whose fairness weight is already set)
/// and evaluates them, both from `seed`.
pub fn train_and_evaluate(scenario: &ScenarioConfig, seed: u64) -> Result<EvalReport, SweepError> {
    let policies = train(scenario, seed)?;
    Ok(evaluate(&policies, scenario, seed)?)
}

/// Trains with a learning curve and writes it as `day,mean_reward` CSV.
pub fn emit_learning_curve<W: Write>(
    scenario: &ScenarioConfig,
    seed: u64,
    window_days: u64,
    out: &mut W,
) -> Result<Vec<CurvePoint>, SweepError> {
    let (_, curve) = train_with_curve(scenario, seed, window_days)?;
    write_curve(&curve, out)?;
    Ok(curve)
}

fn write_curve<W: Write>(curve: &[CurvePoint], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "day,mean_reward")?;
    for p in curve {
        writeln!(out, "{},{}", p.day, p.mean_reward)?;
    }
    Ok(())
}

/// Runs every (scenario, beta, seed) triple not already present in the
/// output directory's `results.csv`, then rewrites all sweep artifacts.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepSummary, SweepError> {
    spec.validate()?;
    std::fs::create_dir_all(&spec.out_dir)?;
    let results_path = spec.out_dir.join("results.csv");
    let existing = read_existing(&results_path);
    let done: HashSet<(usize, i64, u64)> = existing
        .iter()
        .map(|r| (r.class_count, beta_key(r.beta), r.seed))
        .collect();

    let mut runs = Vec::new();
    let mut scheduled = HashSet::new();
    for base in &spec.scenarios {
        for &beta in &spec.betas {
            for &seed in &spec.seeds {
                let key = (base.class_count, beta_key(beta), seed);
                // Repeated grid entries collapse to one run per key.
                if done.contains(&key) || !scheduled.insert(key) {
                    continue;
                }
                let mut scenario = scaled_scenario(base, spec.scale);
                scenario.beta = beta;
                runs.push(RunSpec {
                    scenario,
                    class_count: key.0,
                    beta_key: key.1,
                    seed,
                });
            }
        }
    }

    let new_reports = execute(&runs, spec)?;
    let new_runs = new_reports.len();

    let mut reports = existing;
    reports.extend(new_reports);
    reports.sort_by_key(|r| (r.class_count, beta_key(r.beta), r.seed));

    write_results(&results_path, &reports)?;
    let summary = summarize(spec, &reports, new_runs)?;
    for scenario in &summary.scenarios {
        write_pareto(&spec.out_dir, scenario)?;
    }
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_atomic(&spec.out_dir.join("summary.json"), &json)?;
    Ok(summary)
}

fn run_one(run: &RunSpec, spec: &SweepSpec) -> Result<EvalReport, SweepError> {
    let stem = format!("M{}_b{}_s{}", run.class_count, run.beta_key, run.seed);
    let policies = if let Some(window) = spec.curve_window {
        let (policies, curve) = train_with_curve(&run.scenario, run.seed, window)?;
        let mut out = std::io::BufWriter::new(
            std::fs::File::create(spec.out_dir.join(format!("curve_{stem}.csv")))?,
        );
        write_curve(&curve, &mut out)?;
        policies
    } else {
        train(&run.scenario, run.seed)?
    };
    let report = if spec.trace {
        let mut out = std::io::BufWriter::new(
            std::fs::File::create(spec.out_dir.join(format!("trace_{stem}.csv")))?,
        );
        evaluate_with_trace(&policies, &run.scenario, run.seed, &mut out)?
    } else {
        evaluate(&policies, &run.scenario, run.seed)?
    };
    Ok(report)
}

#[cfg(feature = "parallel")]
fn execute(runs: &[RunSpec], spec: &SweepSpec) -> Result<Vec<EvalReport>, SweepError> {
    use rayon::prelude::*;
    let work = || runs.par_iter().map(|r| run_one(r, spec)).collect();
    if spec.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(spec.workers)
            .build()
            .map_err(|e| SweepError::InvalidSpec(format!("cannot build worker pool: {e}")))?;
        pool.install(work)
    } else {
        work()
    }
}

#[cfg(not(feature = "parallel"))]
fn execute(runs: &[RunSpec], spec: &SweepSpec) -> Result<Vec<EvalReport>, SweepError> {
    runs.iter().map(|r| run_one(r, spec)).collect()
}

/// Parses whatever rows survive in a partial results file; malformed lines
/// (for example a row cut short by an interrupt) are skipped.
fn read_existing(path: &Path) -> Vec<EvalReport> {
    let Ok(text) = std::fs::read_to_string(path) else {
        return Vec::new();
    };
    text.lines().skip(1).filter_map(EvalReport::from_csv).collect()
}

fn write_results(path: &Path, reports: &[EvalReport]) -> std::io::Result<()> {
    let max_classes = reports
        .iter()
        .map(|r| r.class_count)
        .max()
        .unwrap_or(crate::city::MAX_BUILTIN_CLASSES)
        .max(crate::city::MAX_BUILTIN_CLASSES);
    let mut text = EvalReport::csv_header(max_classes);
    text.push('\n');
    for r in reports {
        text.push_str(&r.to_csv(max_classes));
        text.push('\n');
    }
    write_atomic(path, &text)
}

fn summarize(
    spec: &SweepSpec,
    reports: &[EvalReport],
    new_runs: usize,
) -> Result<SweepSummary, SweepError> {
    let mut scenarios = Vec::new();
    let mut class_counts: Vec<usize> = reports.iter().map(|r| r.class_count).collect();
    class_counts.sort_unstable();
    class_counts.dedup();

    for class_count in class_counts {
        let of_class: Vec<&EvalReport> =
            reports.iter().filter(|r| r.class_count == class_count).collect();
        let mut keys: Vec<i64> = of_class.iter().map(|r| beta_key(r.beta)).collect();
        keys.sort_unstable();
        keys.dedup();

        let mut cells: Vec<BetaSummary> = keys
            .iter()
            .map(|&key| {
                let group: Vec<&&EvalReport> =
                    of_class.iter().filter(|r| beta_key(r.beta) == key).collect();
                let n = group.len() as f64;
                let mean = |f: &dyn Fn(&EvalReport) -> f64| {
                    group.iter().map(|r| f(r)).sum::<f64>() / n
                };
                BetaSummary {
                    beta: group[0].beta,
                    runs: group.len(),
                    mean_gini: mean(&|r| r.gini),
                    mean_global_cost: mean(&|r| r.global_cost),
                    mean_rebalance_cost: mean(&|r| r.rebalance_cost),
                    mean_failure_cost: mean(&|r| r.failure_cost),
                    mean_fleet_cost: mean(&|r| r.fleet_cost),
                    gini_change_pct: None,
                    cost_change_pct: None,
                    efficient: false,
                }
            })
            .collect();

        let baseline = cells.iter().find(|c| beta_key(c.beta) == 0).map(|c| (c.mean_gini, c.mean_global_cost));
        if let Some((g0, c0)) = baseline {
            for cell in &mut cells {
                cell.gini_change_pct = percent_change(g0, cell.mean_gini);
                cell.cost_change_pct = percent_change(c0, cell.mean_global_cost);
            }
        }

        let points: Vec<(f64, f64)> =
            cells.iter().map(|c| (c.mean_global_cost, c.mean_gini)).collect();
        for idx in pareto_front(&points)? {
            cells[idx].efficient = true;
        }

        // Best trade-off: largest Gini reduction per percent of added
        // cost; a weight that also lowers cost dominates any finite ratio.
        let mut best: Option<(f64, f64, f64)> = None;
        for cell in &cells {
            let (Some(dg), Some(dc)) = (cell.gini_change_pct, cell.cost_change_pct) else {
                continue;
            };
            if beta_key(cell.beta) == 0 || dg >= 0.0 {
                continue;
            }
            let ratio = if dc <= 0.0 { f64::INFINITY } else { -dg / dc };
            let candidate = (ratio, -dg, cell.beta);
            let better = match best {
                None => true,
                Some((r, g, _)) => ratio > r || (ratio == r && -dg > g),
            };
            if better {
                best = Some(candidate);
            }
        }

        scenarios.push(ScenarioSummary {
            class_count,
            betas: cells,
            best_tradeoff_beta: best.map(|(_, _, b)| b),
        });
    }
    let _ = spec;
    Ok(SweepSummary { scenarios, total_runs: reports.len(), new_runs })
}

fn percent_change(base: f64, value: f64) -> Option<f64> {
    if base == 0.0 {
        None
    } else {
        Some(100.0 * (value - base) / base)
    }
}

fn write_pareto(out_dir: &Path, scenario: &ScenarioSummary) -> std::io::Result<()> {
    let mut text = String::from("beta,mean_global_cost,mean_gini,efficient\n");
    for c in &scenario.betas {
        text.push_str(&format!(
            "{},{},{},{}\n",
            c.beta,
            c.mean_global_cost,
            c.mean_gini,
            c.efficient as u8
        ));
    }
    write_atomic(&out_dir.join(format!("pareto_M{}.csv", scenario.class_count)), &text)
}

fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}
