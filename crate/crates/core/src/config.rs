//! Run configuration: every tunable with its default, plus the TOML file
//! format that overrides them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::allocation::UtilityParams;
use crate::engine::SchemeId;
use crate::error::{Error, Result};
use crate::incentives::IncentiveParams;
use crate::scenario::Fleet;

pub const SCHEMA_VERSION: u32 = 1;

/// Tunables shared by every scheme. Defaults are the published values
/// where one exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub utility: UtilityParams,
    pub incentives: IncentiveParams,
    /// Reputation step per success or failure.
    pub eta: f64,
    pub initial_reputation: f64,
    /// Drop fraction of active tasks that forces reallocation.
    pub churn_threshold: f64,
    pub kappa_default: f64,
    pub kappa_floor: f64,
    pub kappa_window: usize,
    pub initial_accessibility: f64,
    /// Percentage of willing cars sent scouting each cycle.
    pub scout_percent: f64,
    /// Moves per scout per cycle; `None` means one cycle of driving.
    pub scout_budget: Option<usize>,
    pub observation_radius: u32,
    pub route_k: usize,
    pub mdp_epsilon: f64,
    /// Cycles of route exploration; `None` means the first quarter.
    pub exploration_cycles: Option<u32>,
    /// Events at or above this confidence are concluded without cars.
    pub confidence_threshold: f64,
    /// Multiplier turning veracity distance into confidence (1 or 2).
    pub confidence_scale: f64,
    /// Neutral pseudo-mass added to every event's vote.
    pub prior_mass: f64,
    pub cycle_length_min: f64,
    pub travel_min_per_cell: f64,
    /// Cars on patrol in the fixed-route baseline.
    pub patrol_fleet: usize,
    /// Keep every task covered during best-response moves.
    pub keep_coverage: bool,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            utility: UtilityParams::default(),
            incentives: IncentiveParams::default(),
            eta: 0.1,
            initial_reputation: 0.5,
            churn_threshold: 0.62,
            kappa_default: 0.65,
            kappa_floor: 0.05,
            kappa_window: 5,
            initial_accessibility: 0.5,
            scout_percent: 10.0,
            scout_budget: None,
            observation_radius: 1,
            route_k: 8,
            mdp_epsilon: 0.1,
            exploration_cycles: None,
            confidence_threshold: 0.5,
            confidence_scale: 2.0,
            prior_mass: 1.0,
            cycle_length_min: 100.0,
            travel_min_per_cell: 2.0,
            patrol_fleet: 10,
            keep_coverage: true,
        }
    }
}

impl Params {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.utility.lambda.iter().any(|&l| !(l >= 0.0)) {
            return bad("lambda weights must be non-negative");
        }
        if self.utility.k == 0 {
            return bad("congestion exponent k must be at least 1");
        }
        if !(self.utility.epsilon > 0.0) {
            return bad("congestion floor must be positive");
        }
        let g = self.incentives.gains;
        if [g.kp, g.ki, g.kd].iter().any(|&x| !(x >= 0.0)) {
            return bad("PID gains must be non-negative");
        }
        if !(self.incentives.base_reward > 0.0) {
            return bad("base reward must be positive");
        }
        if !unit(self.initial_reputation) || !unit(self.initial_accessibility) {
            return bad("initial reputation and accessibility must lie in [0, 1]");
        }
        if !unit(self.kappa_floor) || !(self.kappa_floor > 0.0) || !unit(self.kappa_default) {
            return bad("kappa floor and default must lie in (0, 1]");
        }
        if !(0.0..=100.0).contains(&self.scout_percent) {
            return bad("scout percentage must lie in [0, 100]");
        }
        if !unit(self.confidence_threshold) || !unit(self.mdp_epsilon) {
            return bad("confidence threshold and epsilon must lie in [0, 1]");
        }
        if !(self.cycle_length_min > 0.0) || !(self.travel_min_per_cell > 0.0) {
            return bad("cycle length and travel time must be positive");
        }
        if self.route_k == 0 {
            return bad("route_k must be at least 1");
        }
        if !(self.churn_threshold >= 0.0) || !(self.eta >= 0.0) {
            return bad("churn threshold and eta must be non-negative");
        }
        Ok(())
    }

    /// Movement sub-steps in one cycle.
    pub fn steps_per_cycle(&self) -> usize {
        (self.cycle_length_min / self.travel_min_per_cell).floor().max(1.0) as usize
    }

    pub fn scout_moves(&self) -> usize {
        self.scout_budget.unwrap_or_else(|| self.steps_per_cycle())
    }

    pub fn exploration_for(&self, cycles: u32) -> u32 {
        self.exploration_cycles.unwrap_or(cycles / 4)
    }
}

/// Everything needed for one run besides the scenario contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    #[serde(default)]
    pub scheme: SchemeId,
    #[serde(default)]
    pub seed: u64,
    /// Overrides the scenario's cycle count.
    #[serde(default)]
    pub cycles: Option<u32>,
    /// Overrides the scenario's fleet.
    #[serde(default)]
    pub fleet: Option<Fleet>,
    #[serde(default)]
    pub params: Params,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            scenario: None,
            scheme: SchemeId::default(),
            seed: 0,
            cycles: None,
            fleet: None,
            params: Params::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "{origin}: unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        cfg.params.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        // a relative scenario path is read relative to the config file
        if let (Some(s), Some(dir)) = (&cfg.scenario, path.parent()) {
            if s.is_relative() {
                cfg.scenario = Some(dir.join(s));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
