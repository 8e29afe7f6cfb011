//! Grid of sensing cells, road graph, ground-truth damage and events.

mod damage;
mod grid;

use serde::{Deserialize, Serialize};

pub use damage::{seed_damage, step_damage, DamageProcess, DamageState};
pub use grid::{CellId, Grid, SensingCell};

/// A physical event whose true state the system tries to recover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthEvent {
    pub id: u32,
    pub cell: CellId,
    /// `true` when the event exists.
    pub state: bool,
    /// Response cycle in which the event is reported (1-based).
    pub cycle: u32,
    pub deadline_min: f64,
}

impl GroundTruthEvent {
    pub fn validate(&self, grid: &Grid) -> crate::Result<()> {
        grid.check_open(self.cell)?;
        if self.deadline_min <= 0.0 || !self.deadline_min.is_finite() {
            return Err(crate::Error::InvalidScenario(format!(
                "event {} has non-positive deadline",
                self.id
            )));
        }
        if self.cycle == 0 {
            return Err(crate::Error::InvalidScenario(format!(
                "event {} has cycle 0 (cycles are 1-based)",
                self.id
            )));
        }
        Ok(())
    }
}
