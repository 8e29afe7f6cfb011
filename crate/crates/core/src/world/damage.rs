use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::{CellId, Grid};
use crate::error::{Error, Result};

/// Synthetic road-damage process.
///
/// Cells named anywhere in `schedule` are fully scheduled: their damage bit
/// at cycle `t` is exactly membership in `schedule[t]`, and sampling never
/// touches them. All other cells follow the per-cycle appear/repair
/// probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DamageProcess {
    #[serde(default)]
    pub appear_prob: f64,
    #[serde(default)]
    pub repair_prob: f64,
    /// Per-cell overrides of `appear_prob`.
    #[serde(default)]
    pub appear_overrides: BTreeMap<CellId, f64>,
    /// Per-cell overrides of `repair_prob`.
    #[serde(default)]
    pub repair_overrides: BTreeMap<CellId, f64>,
    /// Whether a repaired cell may become damaged again.
    #[serde(default = "default_true")]
    pub allow_redamage: bool,
    /// Cells damaged before the first cycle.
    #[serde(default)]
    pub initial: Vec<CellId>,
    #[serde(default)]
    pub schedule: BTreeMap<u32, Vec<CellId>>,
}

fn default_true() -> bool {
    true
}

impl Default for DamageProcess {
    fn default() -> Self {
        DamageProcess {
            appear_prob: 0.0,
            repair_prob: 0.0,
            appear_overrides: BTreeMap::new(),
            repair_overrides: BTreeMap::new(),
            allow_redamage: true,
            initial: Vec::new(),
            schedule: BTreeMap::new(),
        }
    }
}

impl DamageProcess {
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !prob_ok(self.appear_prob) || !prob_ok(self.repair_prob) {
            return Err(Error::InvalidScenario(
                "damage probabilities must lie in [0, 1]".into(),
            ));
        }
        for (&c, &p) in self.appear_overrides.iter().chain(&self.repair_overrides) {
            grid.check(c)?;
            if !prob_ok(p) {
                return Err(Error::InvalidScenario(format!(
                    "damage probability {p} for cell {c} outside [0, 1]"
                )));
            }
        }
        for &c in self.initial.iter().chain(self.schedule.values().flatten()) {
            grid.check_open(c)?;
        }
        Ok(())
    }

    fn appear(&self, c: CellId) -> f64 {
        self.appear_overrides.get(&c).copied().unwrap_or(self.appear_prob)
    }

    fn repair(&self, c: CellId) -> f64 {
        self.repair_overrides.get(&c).copied().unwrap_or(self.repair_prob)
    }

    fn scheduled_cells(&self) -> BTreeSet<CellId> {
        self.schedule.values().flatten().copied().collect()
    }
}

/// Tracks per-cell repair history so `allow_redamage = false` can be honored.
#[derive(Debug, Clone, Default)]
pub struct DamageState {
    repaired: Vec<bool>,
}

impl DamageState {
    pub fn new(grid: &Grid) -> Self {
        DamageState {
            repaired: vec![false; grid.len()],
        }
    }
}

/// Apply the initial damage set.
pub fn seed_damage(grid: &mut Grid, process: &DamageProcess) {
    for &c in &process.initial {
        grid.set_damage(c, true);
    }
}

/// Advance ground-truth damage by one cycle. Deterministic for a given rng
/// state; cells are visited in index order.
pub fn step_damage<R: Rng>(
    grid: &mut Grid,
    process: &DamageProcess,
    state: &mut DamageState,
    cycle: u32,
    rng: &mut R,
) {
    if state.repaired.len() != grid.len() {
        state.repaired = vec![false; grid.len()];
    }
    let scheduled = process.scheduled_cells();
    let now: BTreeSet<CellId> = process
        .schedule
        .get(&cycle)
        .map(|v| v.iter().copied().collect())
        .unwrap_or_default();
    for c in 0..grid.len() {
        if grid.is_blocked(c) {
            continue;
        }
        // Draw for every open cell so the stream stays aligned regardless
        // of which branch is taken.
        let u: f64 = rng.gen();
        if scheduled.contains(&c) {
            grid.set_damage(c, now.contains(&c));
            continue;
        }
        if grid.is_damaged(c) {
            if u < process.repair(c) {
                grid.set_damage(c, false);
                state.repaired[c] = true;
            }
        } else if (process.allow_redamage || !state.repaired[c]) && u < process.appear(c) {
            grid.set_damage(c, true);
        }
    }
}
