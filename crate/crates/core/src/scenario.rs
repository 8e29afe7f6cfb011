//! Scenario files: grid, fleet, damage process and events, either listed
//! explicitly or generated from a seed.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::SCHEMA_VERSION;
use crate::error::{Error, Result};
use crate::rng::{stream, stream_with, Stream};
use crate::social::{read_reports, SocialReport};
use crate::world::{CellId, DamageProcess, GroundTruthEvent, Grid};

/// Drivers by behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fleet {
    pub completers: usize,
    pub aborters: usize,
    pub refusers: usize,
    /// Chance an aborter quits its task on any one movement step.
    #[serde(default = "default_abort_prob")]
    pub abort_prob: f64,
}

fn default_abort_prob() -> f64 {
    0.08
}

impl Fleet {
    pub fn total(&self) -> usize {
        self.completers + self.aborters + self.refusers
    }

    /// `total` cars with the given aborter share; the rest split evenly
    /// between completers and refusers (completers get any odd car).
    pub fn with_aborter_share(total: usize, share: f64, abort_prob: f64) -> Fleet {
        let aborters = (total as f64 * share).round() as usize;
        let rest = total - aborters.min(total);
        Fleet {
            completers: rest - rest / 2,
            aborters: aborters.min(total),
            refusers: rest / 2,
            abort_prob,
        }
    }
}

impl Default for Fleet {
    fn default() -> Self {
        Fleet {
            completers: 30,
            aborters: 30,
            refusers: 30,
            abort_prob: default_abort_prob(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub blocked: Vec<CellId>,
    #[serde(default)]
    pub blocked_rects: Vec<Rect>,
    #[serde(default)]
    pub remove_edges: Vec<[CellId; 2]>,
    #[serde(default)]
    pub add_edges: Vec<[CellId; 2]>,
}

impl GridSpec {
    /// A fully open `width` x `height` grid.
    pub fn open(width: usize, height: usize) -> Self {
        GridSpec {
            width,
            height,
            blocked: vec![],
            blocked_rects: vec![],
            remove_edges: vec![],
            add_edges: vec![],
        }
    }

    pub fn build(&self) -> Result<Grid> {
        let mut blocked: BTreeSet<CellId> = self.blocked.iter().copied().collect();
        for r in &self.blocked_rects {
            if r.x + r.w > self.width || r.y + r.h > self.height {
                return Err(Error::InvalidGrid(format!(
                    "blocked rectangle at ({}, {}) size {}x{} leaves the grid",
                    r.x, r.y, r.w, r.h
                )));
            }
            for y in r.y..r.y + r.h {
                for x in r.x..r.x + r.w {
                    blocked.insert(y * self.width + x);
                }
            }
        }
        let blocked: Vec<CellId> = blocked.into_iter().collect();
        let mut grid = Grid::new(self.width, self.height, &blocked)?;
        let pairs = |v: &[[CellId; 2]]| v.iter().map(|e| (e[0], e[1])).collect::<Vec<_>>();
        grid.remove_edges(&pairs(&self.remove_edges))?;
        grid.add_edges(&pairs(&self.add_edges))?;
        grid.validate()?;
        Ok(grid)
    }
}

/// Parameters for seeded event and report generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticEvents {
    /// Inclusive range of events per cycle.
    pub per_cycle: [u32; 2],
    /// Share of events that are real.
    pub true_fraction: f64,
    /// Deadline range in minutes for ordinary events.
    pub deadline_min: [f64; 2],
    /// Share of events with long deadlines.
    pub long_fraction: f64,
    pub long_deadline_min: [f64; 2],
    pub sources: u32,
    /// Share of sources that usually tell the truth.
    pub reliable_fraction: f64,
    pub reliable_accuracy: [f64; 2],
    pub unreliable_accuracy: [f64; 2],
    /// Mean of the Poisson count of reports beyond the first.
    pub extra_reports: f64,
    /// Relative spread of reported deadlines around the true one.
    pub deadline_jitter: f64,
}

impl Default for SyntheticEvents {
    fn default() -> Self {
        SyntheticEvents {
            per_cycle: [12, 20],
            true_fraction: 0.6,
            deadline_min: [15.0, 90.0],
            long_fraction: 0.1,
            long_deadline_min: [120.0, 250.0],
            sources: 200,
            reliable_fraction: 0.7,
            reliable_accuracy: [0.85, 0.95],
            unreliable_accuracy: [0.3, 0.6],
            extra_reports: 2.0,
            deadline_jitter: 0.1,
        }
    }
}

impl SyntheticEvents {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidScenario(m.to_string()));
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.per_cycle[0] > self.per_cycle[1] {
            return bad("synthetic per_cycle range is reversed");
        }
        if !unit(self.true_fraction) || !unit(self.long_fraction) || !unit(self.reliable_fraction) {
            return bad("synthetic fractions must lie in [0, 1]");
        }
        for r in [self.deadline_min, self.long_deadline_min] {
            if !(r[0] > 0.0 && r[0] <= r[1]) {
                return bad("synthetic deadline ranges must be positive and ordered");
            }
        }
        for r in [self.reliable_accuracy, self.unreliable_accuracy] {
            if !(unit(r[0]) && unit(r[1]) && r[0] <= r[1]) {
                return bad("source accuracy ranges must lie in [0, 1] and be ordered");
            }
        }
        if self.sources == 0 {
            return bad("synthetic events need at least one source");
        }
        if !(self.extra_reports >= 0.0) || !(self.deadline_jitter >= 0.0) {
            return bad("extra_reports and deadline_jitter must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub cycles: u32,
    pub grid: GridSpec,
    #[serde(default)]
    pub fleet: Fleet,
    #[serde(default)]
    pub damage: DamageProcess,
    /// Explicit starting cells, one per car; random open cells otherwise.
    #[serde(default)]
    pub start_cells: Option<Vec<CellId>>,
    #[serde(default)]
    pub events: Vec<GroundTruthEvent>,
    #[serde(default)]
    pub reports: Vec<SocialReport>,
    /// Line-delimited JSON reports, relative to the scenario file.
    #[serde(default)]
    pub reports_file: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticEvents>,
}

/// A scenario made concrete for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub grid: Grid,
    pub events: Vec<GroundTruthEvent>,
    pub reports: Vec<SocialReport>,
    pub start_cells: Vec<CellId>,
}

impl Scenario {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        if s.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidScenario(format!(
                "{origin}: unsupported schema_version {} (expected {SCHEMA_VERSION})",
                s.schema_version
            )));
        }
        Ok(s)
    }

    /// Load a scenario and any report file it references.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut s = Self::from_toml(&text, &path.display().to_string())?;
        if let Some(rel) = s.reports_file.take() {
            let file = path.parent().map_or(rel.clone(), |d| d.join(&rel));
            let reader = std::fs::File::open(&file).map_err(|e| Error::io(&file, e))?;
            let mut extra = read_reports(std::io::BufReader::new(reader), &file.display().to_string())?;
            s.reports.append(&mut extra);
        }
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    /// Structural checks that do not depend on the seed.
    pub fn validate(&self) -> Result<()> {
        if self.cycles == 0 {
            return Err(Error::InvalidScenario("cycles must be at least 1".into()));
        }
        let grid = self.grid.build()?;
        if grid.open_cells().next().is_none() {
            return Err(Error::InvalidScenario("grid has no open cells".into()));
        }
        self.damage.validate(&grid)?;
        if !(0.0..=1.0).contains(&self.fleet.abort_prob) {
            return Err(Error::InvalidScenario("abort_prob must lie in [0, 1]".into()));
        }
        if let Some(cells) = &self.start_cells {
            if cells.len() != self.fleet.total() {
                return Err(Error::InvalidScenario(format!(
                    "{} start cells for {} cars",
                    cells.len(),
                    self.fleet.total()
                )));
            }
            for &c in cells {
                grid.check_open(c)?;
            }
        }
        let mut ids = BTreeSet::new();
        for e in &self.events {
            e.validate(&grid)?;
            if e.cycle > self.cycles {
                return Err(Error::InvalidScenario(format!(
                    "event {} is in cycle {} past the horizon {}",
                    e.id, e.cycle, self.cycles
                )));
            }
            if !ids.insert(e.id) {
                return Err(Error::InvalidScenario(format!("duplicate event id {}", e.id)));
            }
        }
        for r in &self.reports {
            grid.check(r.cell)?;
            if !(r.timestamp_min >= 0.0) {
                return Err(Error::InvalidScenario(format!(
                    "report from source {} has a negative timestamp",
                    r.source_id
                )));
            }
        }
        if let Some(s) = &self.synthetic {
            s.validate()?;
        }
        Ok(())
    }

    /// Build the grid, events and reports for a seed. Explicit events and
    /// reports are kept; synthetic ones are appended after them.
    pub fn materialize(&self, seed: u64, cycle_length_min: f64) -> Result<World> {
        self.validate()?;
        let grid = self.grid.build()?;
        let open: Vec<CellId> = grid.open_cells().collect();
        let start_cells = match &self.start_cells {
            Some(c) => c.clone(),
            None => {
                let mut rng = stream(seed, 0, Stream::Placement);
                (0..self.fleet.total())
                    .map(|_| open[rng.gen_range(0..open.len())])
                    .collect()
            }
        };
        let mut events = self.events.clone();
        let mut reports = self.reports.clone();
        if let Some(syn) = &self.synthetic {
            let next_id = events.iter().map(|e| e.id + 1).max().unwrap_or(0);
            let (e, r) = generate(syn, &open, self.cycles, cycle_length_min, seed, next_id);
            events.extend(e);
            reports.extend(r);
        }
        Ok(World {
            grid,
            events,
            reports,
            start_cells,
        })
    }

    /// The 36-cycle, 90-car synthetic reference scenario.
    pub fn reference() -> Scenario {
        Scenario {
            schema_version: SCHEMA_VERSION,
            name: "reference".into(),
            cycles: 36,
            grid: GridSpec {
                width: 20,
                height: 20,
                blocked: vec![],
                blocked_rects: vec![
                    Rect { x: 3, y: 3, w: 3, h: 2 },
                    Rect { x: 12, y: 4, w: 2, h: 4 },
                    Rect { x: 6, y: 12, w: 4, h: 2 },
                    Rect { x: 15, y: 14, w: 2, h: 3 },
                    Rect { x: 2, y: 16, w: 2, h: 2 },
                ],
                remove_edges: vec![],
                add_edges: vec![],
            },
            fleet: Fleet::default(),
            damage: DamageProcess {
                appear_prob: 0.02,
                repair_prob: 0.05,
                ..Default::default()
            },
            start_cells: None,
            events: vec![],
            reports: vec![],
            reports_file: None,
            synthetic: Some(SyntheticEvents {
                per_cycle: [30, 45],
                deadline_min: [10.0, 60.0],
                ..Default::default()
            }),
        }
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u32 {
    // Knuth's product method; means here are small
    let limit = (-mean).exp();
    let mut k = 0;
    let mut p: f64 = rng.gen();
    while p > limit {
        k += 1;
        p *= rng.gen::<f64>();
    }
    k
}

/// Seeded events and reports. Each cycle draws its own stream so changing
/// the horizon does not shift earlier cycles.
pub fn generate(
    syn: &SyntheticEvents,
    open: &[CellId],
    cycles: u32,
    cycle_length_min: f64,
    seed: u64,
    first_id: u32,
) -> (Vec<GroundTruthEvent>, Vec<SocialReport>) {
    let mut src_rng = stream(seed, 0, Stream::Scenario);
    let accuracy: Vec<f64> = (0..syn.sources)
        .map(|_| {
            let r = if src_rng.gen_bool(syn.reliable_fraction) {
                syn.reliable_accuracy
            } else {
                syn.unreliable_accuracy
            };
            if r[0] < r[1] {
                src_rng.gen_range(r[0]..=r[1])
            } else {
                r[0]
            }
        })
        .collect();
    let mut events = Vec::new();
    let mut reports = Vec::new();
    let mut id = first_id;
    for cycle in 1..=cycles {
        let mut rng = stream_with(seed, cycle, Stream::Scenario, 1);
        let n = rng.gen_range(syn.per_cycle[0]..=syn.per_cycle[1]) as usize;
        let n = n.min(open.len());
        let mut cells: Vec<CellId> = sample(&mut rng, open.len(), n).into_iter().map(|i| open[i]).collect();
        cells.sort_unstable();
        let start = (cycle - 1) as f64 * cycle_length_min;
        for cell in cells {
            let state = rng.gen_bool(syn.true_fraction);
            let range = if rng.gen_bool(syn.long_fraction) {
                syn.long_deadline_min
            } else {
                syn.deadline_min
            };
            let deadline = if range[0] < range[1] {
                rng.gen_range(range[0]..=range[1])
            } else {
                range[0]
            };
            events.push(GroundTruthEvent {
                id,
                cell,
                state,
                cycle,
                deadline_min: deadline,
            });
            id += 1;
            let count = 1 + poisson(syn.extra_reports, &mut rng);
            let mut used = BTreeSet::new();
            for _ in 0..count {
                let source = rng.gen_range(0..syn.sources);
                if !used.insert(source) {
                    continue;
                }
                let honest = rng.gen_bool(accuracy[source as usize]);
                let jitter = 1.0 + syn.deadline_jitter * (2.0 * rng.gen::<f64>() - 1.0);
                reports.push(SocialReport {
                    source_id: source,
                    cell,
                    state: if honest { state } else { !state },
                    timestamp_min: start + rng.gen::<f64>() * cycle_length_min * 0.999,
                    deadline_min: (deadline * jitter).max(1.0),
                });
            }
        }
    }
    (events, reports)
}
