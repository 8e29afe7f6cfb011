//! The closed simulation loop, driver models, comparison schemes and
//! run-level scoring.

pub mod baselines;
pub mod metrics;
mod sim;
pub mod trace;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::scenario::{Fleet, Scenario};

pub use metrics::{score_run, Confusion, CycleMetrics, DeadlineLog, Metrics, Ratio};
pub use trace::{write_trace, Audit, TraceRecord};

/// Which dispatch scheme drives a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeId {
    /// Scouts, congestion-game allocation, learned route choice, reward control.
    #[default]
    Dasc,
    /// As `Dasc`, but routes greedily follow the highest accessibility.
    DascNoMdp,
    /// Congestion-game allocation with damage-oblivious routing.
    SocialCar,
    /// Tasks handed out uniformly at random.
    Random,
    /// A patrol fleet sweeps a fixed tour of the whole map.
    FixedRoute,
    /// Closest car first.
    ShortestDistance,
    /// Tightest deadlines to the most reputable cars.
    ReputationBased,
    /// Tightest deadlines pay the most.
    IncentiveBased,
}

impl SchemeId {
    pub const ALL: [SchemeId; 8] = [
        SchemeId::Dasc,
        SchemeId::DascNoMdp,
        SchemeId::SocialCar,
        SchemeId::Random,
        SchemeId::FixedRoute,
        SchemeId::ShortestDistance,
        SchemeId::ReputationBased,
        SchemeId::IncentiveBased,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::Dasc => "dasc",
            SchemeId::DascNoMdp => "dasc-no-mdp",
            SchemeId::SocialCar => "social-car",
            SchemeId::Random => "random",
            SchemeId::FixedRoute => "fixed-route",
            SchemeId::ShortestDistance => "shortest-distance",
            SchemeId::ReputationBased => "reputation-based",
            SchemeId::IncentiveBased => "incentive-based",
        }
    }

    /// Sends scout cars and maintains accessibility for routing.
    pub fn uses_scouts(self) -> bool {
        matches!(self, SchemeId::Dasc | SchemeId::DascNoMdp)
    }

    /// Allocates through the congestion game with controlled rewards.
    pub fn uses_game(self) -> bool {
        matches!(self, SchemeId::Dasc | SchemeId::DascNoMdp | SchemeId::SocialCar)
    }

    /// Routes around damage the fleet knows about.
    pub fn damage_aware(self) -> bool {
        self != SchemeId::SocialCar
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim().to_ascii_lowercase().replace('_', "-");
        SchemeId::ALL
            .into_iter()
            .find(|id| id.name() == wanted)
            .ok_or_else(|| Error::UnknownScheme(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    /// Finishes every task it accepts.
    Completer,
    /// Accepts tasks but may quit on any movement step.
    Aborter,
    /// Never accepts a task.
    Refuser,
}

/// Behavior per car id: the three types interleaved round-robin until each
/// count is used up.
pub fn fleet_behaviors(fleet: &Fleet) -> Vec<Behavior> {
    let mut left = [fleet.completers, fleet.aborters, fleet.refusers];
    let kinds = [Behavior::Completer, Behavior::Aborter, Behavior::Refuser];
    let mut out = Vec::with_capacity(fleet.total());
    while left.iter().any(|&n| n > 0) {
        for i in 0..3 {
            if left[i] > 0 {
                left[i] -= 1;
                out.push(kinds[i]);
            }
        }
    }
    out
}

/// Terminal state of a task at the end of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Active,
    Verified,
    DeadlineMissed,
    Unresolved,
}

impl TaskStatus {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            TaskStatus::Verified | TaskStatus::DeadlineMissed | TaskStatus::Unresolved
        )
    }
}

/// A task's record at the end of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskReport {
    pub event: String,
    pub cell: usize,
    pub part: u32,
    pub parts: u32,
    pub release_min: f64,
    pub deadline_min: f64,
    pub status: TaskStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Keep the per-decision event trace.
    pub trace: bool,
}

/// Flat run summary, one row per run in sweep tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scheme: SchemeId,
    pub seed: u64,
    pub cycles: u32,
    pub cars: usize,
    pub events_scored: u32,
    /// Claim groups that matched no ground-truth event.
    pub events_unscored: u32,
    pub tp: u32,
    pub fp: u32,
    pub tn: u32,
    #[serde(rename = "fn")]
    pub fn_: u32,
    pub accuracy: f64,
    pub precision: f64,
    pub precision_defined: bool,
    pub recall: f64,
    pub recall_defined: bool,
    pub f1: f64,
    pub f1_defined: bool,
    pub deadline_hits: u32,
    pub deadline_misses: u32,
    pub drops: u32,
    pub deadline_hit_rate: f64,
    pub hit_rate_defined: bool,
    pub tasks_created: u32,
    pub tasks_verified: u32,
    pub tasks_missed: u32,
    pub tasks_unresolved: u32,
    pub reassignments: u32,
    pub allocations: u32,
    pub uncertified_allocations: u32,
    pub churn_triggers: u32,
    pub rejected_reports: u32,
    pub sigma: f64,
    pub sigma_cap_hits: u32,
    pub kappa: f64,
    /// Mean over cycles and open cells of |X - (1 - D)|.
    pub access_error: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub summary: Summary,
    pub metrics: Metrics,
    pub cycles: Vec<CycleMetrics>,
    pub tasks: Vec<TaskReport>,
    pub trace: Vec<TraceRecord>,
    pub diagnostics: Vec<String>,
    pub audit: Audit,
}

/// Run one simulation.
pub fn run(scenario: &Scenario, cfg: &RunConfig) -> Result<RunResult> {
    run_with(scenario, cfg, RunOptions::default())
}

/// Apply the config's overrides to a scenario.
pub fn effective_scenario(scenario: &Scenario, cfg: &RunConfig) -> Scenario {
    let mut sc = scenario.clone();
    if let Some(fleet) = &cfg.fleet {
        if fleet.total() != sc.fleet.total() {
            sc.start_cells = None;
        }
        sc.fleet = fleet.clone();
    }
    if let Some(t) = cfg.cycles {
        sc.cycles = t;
        sc.events.retain(|e| e.cycle <= t);
    }
    sc
}

pub fn run_with(scenario: &Scenario, cfg: &RunConfig, options: RunOptions) -> Result<RunResult> {
    cfg.params.validate()?;
    let sc = effective_scenario(scenario, cfg);
    let world = sc.materialize(cfg.seed, cfg.params.cycle_length_min)?;
    Ok(sim::Simulation::new(&sc, world, cfg, options).run())
}
