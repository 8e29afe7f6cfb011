//! Median metrics of every scheme over several seeds.
//!
//! Usage: baseline_comparison [SCENARIO.toml|-] [SEEDS] [CONFIG.toml]

use std::path::Path;

use roadsense::config::RunConfig;
use roadsense::engine::SchemeId;
use roadsense::scenario::Scenario;
use roadsense::sweep::{sweep, SweepAxis, SweepPlan};

fn main() -> roadsense::Result<()> {
    let mut args = std::env::args().skip(1);
    let scenario = match args.next() {
        Some(p) if p != "-" => Scenario::load(Path::new(&p))?,
        _ => Scenario::reference(),
    };
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let base = match args.next() {
        Some(p) => RunConfig::load(Path::new(&p))?,
        None => RunConfig::default(),
    };
    let plan = SweepPlan {
        base,
        schemes: SchemeId::ALL.to_vec(),
        seeds: (1..=seeds).collect(),
        axis: SweepAxis::None,
    };
    let report = sweep(&scenario, &plan)?;
    println!("{:<18} {:>6} {:>6} {:>6} {:>6} {:>6}", "scheme", "acc", "prec", "recall", "f1", "hit");
    for m in &report.medians {
        println!(
            "{:<18} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3}",
            m.scheme.name(),
            m.accuracy,
            m.precision,
            m.recall,
            m.f1,
            m.deadline_hit_rate
        );
    }
    if report.failures() > 0 {
        println!("{} runs failed", report.failures());
    }
    Ok(())
}
