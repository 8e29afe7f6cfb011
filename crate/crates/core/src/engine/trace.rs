use serde::Serialize;

use crate::routing::Choice;
use crate::world::CellId;

/// One task as allocation saw it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocatedTask {
    pub task: usize,
    pub event: String,
    pub reward: f64,
    pub picks: Vec<usize>,
}

/// A car's pick in one allocation round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarPick {
    pub car: usize,
    pub task: Option<usize>,
    pub utility: f64,
    pub best_deviation: f64,
}

/// A line of the optional event trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Allocation {
        cycle: u32,
        time_min: f64,
        full: bool,
        certified: bool,
        tasks: Vec<AllocatedTask>,
        cars: Vec<CarPick>,
    },
    Route {
        cycle: u32,
        car: usize,
        source: CellId,
        destination: CellId,
        cells: Vec<CellId>,
        probabilities: Vec<f64>,
        choice: Choice,
        sigma: f64,
    },
    RoutePenalty {
        cycle: u32,
        car: usize,
        source: CellId,
        destination: CellId,
        penalty: u32,
    },
    Incentive {
        cycle: u32,
        task: usize,
        aggregate: f64,
        error: f64,
        adjustment: f64,
        reward: f64,
    },
    DamageObservation {
        cycle: u32,
        cell: CellId,
        damaged: bool,
        observer: usize,
    },
}

/// Write records as line-delimited JSON.
pub fn write_trace<W: std::io::Write>(mut w: W, records: &[TraceRecord]) -> crate::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w).map_err(|e| crate::Error::io("<trace>", e))?;
    }
    Ok(())
}

/// Counts of invariant checks made during a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Audit {
    pub checks: u64,
    pub violations: u64,
    /// The first few violations, described.
    pub examples: Vec<String>,
}

impl Audit {
    pub fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.violations += 1;
            if self.examples.len() < 20 {
                self.examples.push(what());
            }
        }
    }

    pub fn clean(&self) -> bool {
        self.violations == 0
    }
}
