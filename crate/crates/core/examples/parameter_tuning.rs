//! Tune utility weights, controller gains, the churn threshold and the
//! default step size on a short run, then scan the initial accessibility.
//!
//! Usage: cargo run --release --example parameter_tuning [MAX_EVALS]

use roadsense::config::RunConfig;
use roadsense::scenario::Scenario;
use roadsense::tune::{tune, tune_x0, TuneConfig};

fn main() -> roadsense::Result<()> {
    let max_evals = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(12);
    let mut scenario = Scenario::reference();
    scenario.cycles = 12;
    let base = RunConfig::default();
    let mut tc = TuneConfig {
        stages: 2,
        ..TuneConfig::default()
    };
    tc.simplex.max_evals = max_evals;

    let report = tune(&scenario, &base, &tc)?;
    for (name, v) in report.names.iter().zip(&report.x) {
        println!("{name:<16} {v:.3}");
    }
    println!(
        "F1 {:.4} with tuned values, {:.4} with defaults ({} training cycles)",
        report.f1, report.default_f1, report.horizon
    );

    let x0 = tune_x0(&scenario, &base, 5)?;
    for p in &x0.scan {
        println!("initial accessibility {:.2}: error {:.4}", p.x0, p.access_error);
    }
    println!("best {:.2}", x0.best);
    Ok(())
}
