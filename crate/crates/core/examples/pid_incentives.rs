//! Drive a task's reward so the summed reputation of the cars picking it
//! settles at the set point, and show when the churn monitor fires.
//!
//! Usage: cargo run --example pid_incentives

use roadsense::incentives::{aggregate_reputation, ChurnMonitor, IncentiveParams, PidState};

fn main() {
    let params = IncentiveParams::default();
    let reputation = [0.9, 0.4, 0.7, 0.3, 0.8];
    let mut pid = PidState::default();
    // one low-reputation car starts on the task
    let mut e = aggregate_reputation(&[3], &reputation);
    println!("step  aggregate   error  reward");
    for step in 1..=15 {
        let out = pid.step(&params, e);
        println!("{step:>4}  {:>9.3}  {:>6.3}  {:>6.3}", out.aggregate, out.error, out.reward);
        // toy response: the crowd drifts halfway toward 0.8 reputation per reward unit
        e += 0.5 * (0.8 * out.reward - e);
    }

    let mut churn = ChurnMonitor::new(0.4);
    churn.start_cycle();
    println!();
    for drop in 1..=5 {
        let fired = churn.record_drop(10);
        println!("drop {drop} of 10 active tasks: reallocate = {fired}");
    }
}
