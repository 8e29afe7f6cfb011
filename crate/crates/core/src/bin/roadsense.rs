use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use roadsense::config::RunConfig;
use roadsense::engine::{run_with, RunOptions, SchemeId};
use roadsense::output::{resolve_out_dir, write_run, write_sweep};
use roadsense::scenario::{Fleet, Scenario};
use roadsense::sweep::{sweep, SweepAxis, SweepPlan};
use roadsense::tune::{tune, tune_x0, TuneConfig};

#[derive(Parser)]
#[command(name = "roadsense", version, about = "Damage-aware vehicular crowdsensing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its metrics.
    Run(RunArgs),
    /// Run several schemes over several seeds and tabulate medians.
    Sweep(SweepArgs),
    /// Search utility, controller, churn and kappa parameters for the best F1.
    Tune(TuneArgs),
    /// Scan the initial accessibility for the best match to the damage map.
    TuneX0(TuneX0Args),
    /// Check a scenario file and report what it expands to.
    ValidateScenario(ValidateArgs),
}

/// Options shared by every command that runs simulations.
#[derive(Args)]
struct Common {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario file (TOML); `reference` selects the built-in scenario.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    scheme: Option<SchemeId>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of response cycles to simulate.
    #[arg(long)]
    cycles: Option<u32>,
    #[arg(long)]
    completers: Option<usize>,
    #[arg(long)]
    aborters: Option<usize>,
    #[arg(long)]
    refusers: Option<usize>,
    /// Per-step quit probability of aborting drivers.
    #[arg(long)]
    abort_prob: Option<f64>,
    /// Override any parameter, e.g. `--set utility.k=4` or `--set churn_threshold=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (default: $ROADSENSE_OUT_DIR, then ./out).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Also write the per-decision trace.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated schemes; all schemes when omitted.
    #[arg(long, value_delimiter = ',')]
    schemes: Vec<SchemeId>,
    /// Seeds as a list (`1,2,5`) or an inclusive range (`1..10`).
    #[arg(long, default_value = "1..10")]
    seeds: String,
    /// Sweep total car counts, keeping the driver mix.
    #[arg(long, value_delimiter = ',', conflicts_with = "aborter_shares")]
    cars: Vec<usize>,
    /// Sweep the aborter share at a fixed car count.
    #[arg(long, value_delimiter = ',')]
    aborter_shares: Vec<f64>,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    common: Common,
    /// Tuning configuration file (TOML).
    #[arg(long)]
    tune_config: Option<PathBuf>,
    /// Seeds each candidate is scored on, as a list or range.
    #[arg(long)]
    seeds: Option<String>,
    /// Objective evaluations per stage.
    #[arg(long)]
    max_evals: Option<usize>,
}

#[derive(Args)]
struct TuneX0Args {
    #[command(flatten)]
    common: Common,
    /// Number of intervals the unit range is split into.
    #[arg(long, default_value_t = 20)]
    steps: u32,
}

#[derive(Args)]
struct ValidateArgs {
    scenario: PathBuf,
    /// Seed used to expand generated events.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if a > b {
            bail!("empty seed range {s}");
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|x| x.trim().parse().with_context(|| format!("bad seed `{x}`")))
        .collect()
}

/// Apply `key=value` to the params table; the value is read as TOML and
/// falls back to a string.
fn set_param(cfg: &mut RunConfig, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .with_context(|| format!("`{assignment}` is not KEY=VALUE"))?;
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let mut root = toml::Table::try_from(&cfg.params)?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut table = &mut root;
    for p in path {
        table = table
            .get_mut(*p)
            .and_then(toml::Value::as_table_mut)
            .with_context(|| format!("unknown parameter group `{p}` in `{key}`"))?;
    }
    if !table.contains_key(*last) && !matches!(*last, "scout_budget" | "exploration_cycles") {
        bail!("unknown parameter `{key}`");
    }
    table.insert(last.to_string(), value);
    cfg.params = root.try_into().with_context(|| format!("bad value for `{key}`"))?;
    Ok(())
}

fn load(common: &Common) -> Result<(Scenario, RunConfig)> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.scheme {
        cfg.scheme = s;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.cycles {
        cfg.cycles = Some(t);
    }
    for a in &common.set {
        set_param(&mut cfg, a)?;
    }
    cfg.params.validate()?;
    let scenario = match common.scenario.as_deref().map(PathBuf::from).or(cfg.scenario.clone()) {
        Some(p) if p == Path::new("reference") => Scenario::reference(),
        Some(p) => Scenario::load(&p)?,
        None => Scenario::reference(),
    };
    let fleet_flags = [common.completers, common.aborters, common.refusers];
    if fleet_flags.iter().any(Option::is_some) || common.abort_prob.is_some() {
        let base = cfg.fleet.clone().unwrap_or_else(|| scenario.fleet.clone());
        cfg.fleet = Some(Fleet {
            completers: common.completers.unwrap_or(base.completers),
            aborters: common.aborters.unwrap_or(base.aborters),
            refusers: common.refusers.unwrap_or(base.refusers),
            abort_prob: common.abort_prob.unwrap_or(base.abort_prob),
        });
    }
    Ok((scenario, cfg))
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let (scenario, cfg) = load(&args.common)?;
    let result = run_with(&scenario, &cfg, RunOptions { trace: args.trace })?;
    let dir = resolve_out_dir(args.common.out.as_deref(), "out");
    write_run(&dir, &result)?;
    let s = &result.summary;
    println!(
        "{} seed {}: accuracy {:.4} precision {:.4} recall {:.4} F1 {:.4} deadline hit rate {:.4}",
        s.scheme, s.seed, s.accuracy, s.precision, s.recall, s.f1, s.deadline_hit_rate
    );
    println!(
        "tasks {} verified {} missed {} unresolved {}; audit {} checks, {} violations",
        s.tasks_created,
        s.tasks_verified,
        s.tasks_missed,
        s.tasks_unresolved,
        result.audit.checks,
        result.audit.violations
    );
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let (scenario, base) = load(&args.common)?;
    let axis = if !args.cars.is_empty() {
        SweepAxis::Cars(args.cars)
    } else if !args.aborter_shares.is_empty() {
        SweepAxis::AborterShare(args.aborter_shares)
    } else {
        SweepAxis::None
    };
    let plan = SweepPlan {
        base,
        schemes: if args.schemes.is_empty() { SchemeId::ALL.to_vec() } else { args.schemes },
        seeds: parse_seeds(&args.seeds)?,
        axis,
    };
    let report = sweep(&scenario, &plan)?;
    let dir = resolve_out_dir(args.common.out.as_deref(), "out");
    write_sweep(&dir, &report)?;
    println!(
        "{:<16} {:<18} {:>4} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "point", "scheme", "runs", "accuracy", "precis.", "recall", "f1", "hit"
    );
    for m in &report.medians {
        println!(
            "{:<16} {:<18} {:>4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            m.point, m.scheme.name(), m.runs, m.accuracy, m.precision, m.recall, m.f1, m.deadline_hit_rate
        );
    }
    if report.failures() > 0 {
        eprintln!("{} runs failed; see failures.csv", report.failures());
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_tune(args: TuneArgs) -> Result<()> {
    let (scenario, base) = load(&args.common)?;
    let mut tc = match &args.tune_config {
        Some(p) => TuneConfig::load(p)?,
        None => TuneConfig::default(),
    };
    if let Some(s) = &args.seeds {
        tc.seeds = parse_seeds(s)?;
    }
    if let Some(m) = args.max_evals {
        tc.simplex.max_evals = m;
    }
    let report = tune(&scenario, &base, &tc)?;
    let dir = resolve_out_dir(args.common.out.as_deref(), "out");
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("tune.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    let tuned = RunConfig {
        params: report.params.clone(),
        ..base
    };
    std::fs::write(dir.join("tuned.toml"), tuned.to_toml())?;
    for (name, v) in report.names.iter().zip(&report.x) {
        println!("{name:<16} {v:.4}");
    }
    println!(
        "F1 {:.4} (defaults {:.4}) over {} cycles; converged: {}",
        report.f1, report.default_f1, report.horizon, report.converged
    );
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_tune_x0(args: TuneX0Args) -> Result<()> {
    let (scenario, base) = load(&args.common)?;
    let report = tune_x0(&scenario, &base, args.steps)?;
    let dir = resolve_out_dir(args.common.out.as_deref(), "out");
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("x0.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    for p in &report.scan {
        println!("{:.3} {:.4}", p.x0, p.access_error);
    }
    println!("best initial accessibility {:.3} (error {:.4})", report.best, report.access_error);
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<()> {
    let scenario = Scenario::load(&args.scenario)?;
    let cycle_len = RunConfig::default().params.cycle_length_min;
    let world = scenario.materialize(args.seed, cycle_len)?;
    let open = world.grid.open_cells().count();
    println!("{}: ok", args.scenario.display());
    println!(
        "  {} cycles, {}x{} grid with {} open cells, {} cars",
        scenario.cycles,
        scenario.grid.width,
        scenario.grid.height,
        open,
        scenario.fleet.total()
    );
    println!("  {} ground-truth events, {} reports", world.events.len(), world.reports.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Tune(a) => cmd_tune(a),
        Command::TuneX0(a) => cmd_tune_x0(a),
        Command::ValidateScenario(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // io errors already name their cause, so skip repeats in the chain
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let text = cause.to_string();
                if !msg.contains(&text) {
                    msg = format!("{msg}: {text}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
