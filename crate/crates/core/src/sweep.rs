//! Multi-seed, multi-scheme sweeps with per-scheme medians, optionally
//! over car counts or driver mixes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::engine::{run, SchemeId, Summary};
use crate::error::{Error, Result};
use crate::scenario::{Fleet, Scenario};

/// What varies between sweep points besides scheme and seed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "kebab-case")]
pub enum SweepAxis {
    /// A single point using the scenario's own fleet.
    #[default]
    None,
    /// Total car counts, keeping the scenario's driver mix.
    Cars(Vec<usize>),
    /// Aborter shares at the scenario's car count; the other cars split
    /// evenly between completers and refusers.
    AborterShare(Vec<f64>),
}

/// One point along the axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub label: String,
    pub fleet: Option<Fleet>,
}

/// `total` cars with the same proportions as `base`, by largest remainder.
pub fn scale_fleet(base: &Fleet, total: usize) -> Fleet {
    let counts = [base.completers, base.aborters, base.refusers];
    let sum = base.total().max(1);
    let exact: Vec<f64> = counts.iter().map(|&c| c as f64 * total as f64 / sum as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (exact[b] - out[b] as f64).total_cmp(&(exact[a] - out[a] as f64)).then(a.cmp(&b)));
    let mut left = total - out.iter().sum::<usize>();
    for i in order {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    Fleet {
        completers: out[0],
        aborters: out[1],
        refusers: out[2],
        abort_prob: base.abort_prob,
    }
}

impl SweepAxis {
    pub fn points(&self, base: &Fleet) -> Vec<SweepPoint> {
        match self {
            SweepAxis::None => vec![SweepPoint {
                label: "base".into(),
                fleet: None,
            }],
            SweepAxis::Cars(counts) => counts
                .iter()
                .map(|&n| SweepPoint {
                    label: format!("cars={n}"),
                    fleet: Some(scale_fleet(base, n)),
                })
                .collect(),
            SweepAxis::AborterShare(shares) => shares
                .iter()
                .map(|&s| SweepPoint {
                    label: format!("aborters={s:.3}"),
                    fleet: Some(Fleet::with_aborter_share(base.total(), s, base.abort_prob)),
                })
                .collect(),
        }
    }
}

/// Everything a sweep needs besides the scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub base: RunConfig,
    pub schemes: Vec<SchemeId>,
    pub seeds: Vec<u64>,
    pub axis: SweepAxis,
}

/// One run of a sweep. Failed runs carry the error instead of a summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: String,
    pub scheme: SchemeId,
    pub seed: u64,
    pub outcome: std::result::Result<Summary, String>,
}

/// Medians of the successful runs for one (point, scheme).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MedianRow {
    pub point: String,
    pub scheme: SchemeId,
    pub runs: usize,
    pub failed: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub deadline_hit_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub medians: Vec<MedianRow>,
}

impl SweepReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn median(&self, point: &str, scheme: SchemeId) -> Option<&MedianRow> {
        self.medians.iter().find(|m| m.point == point && m.scheme == scheme)
    }
}

/// Median of `xs`; the mean of the middle pair for even lengths, NaN when empty.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Run every (point, scheme, seed) combination. Runs execute in parallel;
/// rows come back in plan order regardless of scheduling.
pub fn sweep(scenario: &Scenario, plan: &SweepPlan) -> Result<SweepReport> {
    if plan.schemes.is_empty() || plan.seeds.is_empty() {
        return Err(Error::InvalidConfig("a sweep needs at least one scheme and one seed".into()));
    }
    let points = plan.axis.points(&scenario.fleet);
    let mut jobs = Vec::new();
    for p in &points {
        for &scheme in &plan.schemes {
            for &seed in &plan.seeds {
                jobs.push((p, scheme, seed));
            }
        }
    }
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(p, scheme, seed)| {
            let cfg = RunConfig {
                scheme,
                seed,
                fleet: p.fleet.clone().or_else(|| plan.base.fleet.clone()),
                ..plan.base.clone()
            };
            SweepRow {
                point: p.label.clone(),
                scheme,
                seed,
                outcome: run(scenario, &cfg).map(|r| r.summary).map_err(|e| e.to_string()),
            }
        })
        .collect();
    let mut medians = Vec::new();
    for p in &points {
        for &scheme in &plan.schemes {
            let group: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.point == p.label && r.scheme == scheme)
                .collect();
            let ok: Vec<&Summary> = group.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
            let med = |f: fn(&Summary) -> f64| median(&ok.iter().map(|s| f(s)).collect::<Vec<_>>());
            medians.push(MedianRow {
                point: p.label.clone(),
                scheme,
                runs: ok.len(),
                failed: group.len() - ok.len(),
                accuracy: med(|s| s.accuracy),
                precision: med(|s| s.precision),
                recall: med(|s| s.recall),
                f1: med(|s| s.f1),
                deadline_hit_rate: med(|s| s.deadline_hit_rate),
            });
        }
    }
    Ok(SweepReport { rows, medians })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{GridSpec, SyntheticEvents};

    #[test]
    fn median_cases() {
        assert_eq!(median(&[0.9, 0.2, 0.5]), 0.5);
        assert_eq!(median(&[1.0, 3.0]), 2.0);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn scaled_fleet_keeps_total_and_mix() {
        let base = Fleet::default();
        for n in [0, 1, 10, 20, 31, 90] {
            let f = scale_fleet(&base, n);
            assert_eq!(f.total(), n);
            let counts = [f.completers, f.aborters, f.refusers];
            assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
    }

    fn tiny() -> Scenario {
        let mut sc = Scenario::reference();
        sc.cycles = 2;
        sc.grid = GridSpec::open(5, 5);
        sc.fleet = Fleet {
            completers: 2,
            aborters: 2,
            refusers: 2,
            abort_prob: 0.1,
        };
        sc.synthetic = Some(SyntheticEvents {
            per_cycle: [2, 3],
            ..Default::default()
        });
        sc
    }

    #[test]
    fn two_schemes_three_seeds() {
        let plan = SweepPlan {
            base: RunConfig::default(),
            schemes: vec![SchemeId::Dasc, SchemeId::Random],
            seeds: vec![1, 2, 3],
            axis: SweepAxis::None,
        };
        let report = sweep(&tiny(), &plan).unwrap();
        assert_eq!(report.rows.len(), 6);
        assert_eq!(report.medians.len(), 2);
        assert_eq!(report.failures(), 0);
    }

    #[test]
    fn car_count_series() {
        let plan = SweepPlan {
            base: RunConfig::default(),
            schemes: vec![SchemeId::Random],
            seeds: vec![5],
            axis: SweepAxis::Cars(vec![10, 20, 30]),
        };
        let report = sweep(&tiny(), &plan).unwrap();
        let points: Vec<&str> = report.medians.iter().map(|m| m.point.as_str()).collect();
        assert_eq!(points, ["cars=10", "cars=20", "cars=30"]);
        for (row, n) in report.rows.iter().zip([10, 20, 30]) {
            assert_eq!(row.outcome.as_ref().unwrap().cars, n);
        }
    }

    #[test]
    fn failures_are_isolated() {
        let mut sc = tiny();
        // start cells that do not match the fleet make every run fail
        sc.start_cells = Some(vec![0]);
        let plan = SweepPlan {
            base: RunConfig::default(),
            schemes: vec![SchemeId::Random],
            seeds: vec![1, 2],
            axis: SweepAxis::None,
        };
        let report = sweep(&sc, &plan).unwrap();
        assert_eq!(report.failures(), 2);
        assert_eq!(report.medians[0].failed, 2);
        assert!(report.medians[0].f1.is_nan());
    }
}
