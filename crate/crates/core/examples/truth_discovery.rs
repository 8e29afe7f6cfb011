//! Estimate which reported events are real from conflicting social-media
//! reports, and compare weighted voting against a plain majority.
//!
//! Usage: cargo run --example truth_discovery [SEED]

use std::collections::HashMap;

use roadsense::config::Params;
use roadsense::scenario::Scenario;
use roadsense::social::{estimate_truth, gate_dispatch, ingest_cycle, WeightedVoting};

fn main() -> roadsense::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let scenario = Scenario::reference();
    let params = Params::default();
    let world = scenario.materialize(seed, params.cycle_length_min)?;
    let mut voting = WeightedVoting::new(params.prior_mass);

    println!("cycle  events  majority  weighted  dispatched");
    for cycle in 1..=6 {
        let truth: HashMap<_, _> = world
            .events
            .iter()
            .filter(|e| e.cycle == cycle)
            .map(|e| (e.cell, e.state))
            .collect();
        let (groups, _) = ingest_cycle(&world.reports, cycle, params.cycle_length_min, &world.grid);
        let majority = groups
            .iter()
            .filter(|g| (g.supporters.len() > g.opposers.len()) == truth[&g.cell])
            .count();
        let estimates = estimate_truth(&groups, &mut voting, params.confidence_scale);
        let weighted = estimates
            .iter()
            .filter(|e| (e.veracity > 0.5) == truth[&e.cell])
            .count();
        let (_, tasks) = gate_dispatch(estimates, params.confidence_threshold);
        let n = groups.len() as f64;
        println!(
            "{cycle:>5}  {:>6}  {:>8.3}  {:>8.3}  {:>10}",
            groups.len(),
            majority as f64 / n,
            weighted as f64 / n,
            tasks.len()
        );
    }
    Ok(())
}
