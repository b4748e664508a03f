//! `rebal`: trains and evaluates fairness-aware rebalancing policies over
//! a grid of fairness weights and seeds, writing CSV/JSON artifacts for
//! downstream plotting.

use clap::Parser;
use rebal_core::city::{build_scenario, load_scenario_file};
use rebal_core::sweep::{desk_scenario, run_sweep, SweepError, SweepSpec, SweepSummary};
use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(
    name = "rebal",
    version,
    about = "Fairness-aware fleet rebalancing: Q-learning sweep driver",
    after_help = "Artifacts land in --out: results.csv (one row per run), \
pareto_M<k>.csv (seed-averaged cost/Gini points with an efficiency flag) \
and summary.json (per-weight aggregates and the best trade-off weight). \
Reruns skip triples already present in results.csv, so an interrupted \
sweep resumes where it stopped."
)]
struct Args {
    /// Built-in city size to sweep (2-5); repeat for several.
    #[arg(long = "scenario", value_name = "M")]
    scenario: Vec<usize>,

    /// Custom scenario file (flat `key = value` lines) instead of built-ins.
    #[arg(long, value_name = "FILE", conflicts_with = "scenario")]
    config: Option<PathBuf>,

    /// Fairness weights: comma list "0,0.5,1" or range "start:end:step".
    #[arg(long, value_name = "SPEC", default_value = "0:1:0.1")]
    beta: String,

    /// Seeds: a count N (runs seeds 0..N-1) or an explicit comma list.
    #[arg(long, value_name = "SPEC", default_value = "10")]
    seeds: String,

    /// Override the training horizon in days.
    #[arg(long, value_name = "N")]
    train_days: Option<u64>,

    /// Override the evaluation horizon in days.
    #[arg(long, value_name = "N")]
    eval_days: Option<u64>,

    /// Short-horizon preset: 20000 training days with 5x exploration
    /// decay, preserving the explore/exploit profile.
    #[arg(long)]
    desk: bool,

    /// Worker threads for parallel runs; 0 means one per core.
    #[arg(long, value_name = "N", default_value_t = 0)]
    workers: usize,

    /// Output directory for all artifacts.
    #[arg(long, value_name = "DIR", default_value = "sweep-out")]
    out: PathBuf,

    /// Also write a per-epoch evaluation trace CSV per run.
    #[arg(long)]
    trace: bool,

    /// Also write per-run learning curves averaged over windows of this
    /// many days.
    #[arg(long, value_name = "DAYS")]
    curve: Option<u64>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&args) {
        Ok(summary) => {
            report(&summary, &args.out);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}

fn run(args: &Args) -> Result<SweepSummary, SweepError> {
    let mut bases = Vec::new();
    if let Some(path) = &args.config {
        bases.push(load_scenario_file(path)?);
    } else {
        let mut class_counts = args.scenario.clone();
        if class_counts.is_empty() {
            class_counts.push(5);
        }
        let mut seen = HashSet::new();
        class_counts.retain(|m| seen.insert(*m));
        for m in class_counts {
            bases.push(build_scenario(m)?);
        }
    }
    for base in &mut bases {
        if args.desk {
            *base = desk_scenario(base);
        }
        if let Some(days) = args.train_days {
            base.train_days = days;
        }
        if let Some(days) = args.eval_days {
            base.eval_days = days;
        }
    }

    let betas = parse_betas(&args.beta).map_err(SweepError::InvalidSpec)?;
    let seeds = parse_seeds(&args.seeds).map_err(SweepError::InvalidSpec)?;
    let mut spec = SweepSpec::new(bases, betas, seeds, args.out.clone());
    spec.workers = args.workers;
    spec.trace = args.trace;
    spec.curve_window = args.curve;
    run_sweep(&spec)
}

fn report(summary: &SweepSummary, out: &Path) {
    println!(
        "{} runs total ({} new); artifacts in {}",
        summary.total_runs,
        summary.new_runs,
        out.display()
    );
    for scenario in &summary.scenarios {
        let mut line = format!("M={}:", scenario.class_count);
        if let Some(beta) = scenario.best_tradeoff_beta {
            line.push_str(&format!(" best trade-off beta {beta};"));
        }
        let top = scenario
            .betas
            .iter()
            .filter(|c| c.gini_change_pct.is_some() && c.beta > 0.0)
            .next_back();
        if let Some(cell) = top {
            let (Some(dg), Some(dc)) = (cell.gini_change_pct, cell.cost_change_pct) else {
                unreachable!("filtered on presence");
            };
            line.push_str(&format!(
                " at beta {}: gini {dg:+.1}%, cost {dc:+.1}% vs beta 0",
                cell.beta
            ));
        }
        println!("{line}");
    }
}

fn parse_num(text: &str, what: &str) -> Result<f64, String> {
    let value: f64 = text
        .trim()
        .parse()
        .map_err(|_| format!("cannot parse {what} `{text}`"))?;
    if !value.is_finite() {
        return Err(format!("{what} `{text}` is not finite"));
    }
    Ok(value)
}

/// Snaps range-generated grid values to 9 decimals so steps like 0.1
/// produce the weights people expect rather than float-noise tails.
fn snap(value: f64) -> f64 {
    (value * 1e9).round() / 1e9
}

fn parse_betas(text: &str) -> Result<Vec<f64>, String> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        let [start, end, step] = parts[..] else {
            return Err(format!("beta range must be start:end:step, got `{text}`"));
        };
        let start = parse_num(start, "range start")?;
        let end = parse_num(end, "range end")?;
        let step = parse_num(step, "range step")?;
        if step <= 0.0 {
            return Err(format!("range step must be positive, got {step}"));
        }
        if end < start {
            return Err(format!("range end {end} is below start {start}"));
        }
        let count = ((end - start) / step + 1e-9).floor() as u64;
        Ok((0..=count).map(|i| snap(start + step * i as f64)).collect())
    } else {
        text.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| parse_num(t, "beta"))
            .collect()
    }
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, String> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let parse_one = |t: &str| -> Result<u64, String> {
        t.trim().parse().map_err(|_| format!("cannot parse seed `{t}`"))
    };
    if text.contains(',') {
        text.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(parse_one)
            .collect()
    } else {
        let count = parse_one(text)?;
        Ok((0..count).collect())
    }
}
