//! Social signal distillation: report ingestion, truth estimation, event
//! splitting and the dispatch gate.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{CellId, Grid};

/// Identifier of an event: report cycle plus index within that cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventId {
    pub cycle: u32,
    pub index: u32,
}

impl std::fmt::Display for EventId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{}", self.cycle, self.index)
    }
}

/// One structured social-media claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SocialReport {
    pub source_id: u32,
    pub cell: CellId,
    /// Claimed event state, `0` or `1` on the wire.
    #[serde(with = "bit")]
    pub state: bool,
    pub timestamp_min: f64,
    pub deadline_min: f64,
}

mod bit {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(D::Error::custom(format!("state must be 0 or 1, got {other}"))),
        }
    }
}

/// Read line-delimited JSON reports. Blank lines and `#` comments are skipped.
pub fn read_reports<R: BufRead>(reader: R, origin: &str) -> Result<Vec<SocialReport>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let report: SocialReport = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
            path: format!("{origin}:{}", i + 1),
            message: e.to_string(),
        })?;
        out.push(report);
    }
    Ok(out)
}

pub fn write_reports<W: std::io::Write>(mut w: W, reports: &[SocialReport]) -> Result<()> {
    for r in reports {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w).map_err(|e| Error::io("<reports>", e))?;
    }
    Ok(())
}

/// All claims about one cell within one response cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimGroup {
    pub id: EventId,
    pub cell: CellId,
    pub supporters: Vec<u32>,
    pub opposers: Vec<u32>,
    pub deadline_min: f64,
}

/// Why a report was dropped during ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub report: usize,
    pub reason: String,
}

/// Group one cycle's reports by cell. A source reporting more than once on
/// the same cell counts once, with its latest claim. The group deadline is
/// the lower median of the reports' deadline hints.
pub fn ingest_cycle(
    reports: &[SocialReport],
    cycle: u32,
    cycle_length_min: f64,
    grid: &Grid,
) -> (Vec<ClaimGroup>, Vec<Diagnostic>) {
    let window = (cycle.saturating_sub(1) as f64 * cycle_length_min)
        ..(cycle as f64 * cycle_length_min);
    let mut diagnostics = Vec::new();
    // cell -> source -> (timestamp, claim, deadline)
    let mut by_cell: BTreeMap<CellId, BTreeMap<u32, (f64, bool, f64)>> = BTreeMap::new();
    for (i, r) in reports.iter().enumerate() {
        let reject = if !grid.contains(r.cell) {
            Some(format!("cell {} outside the grid", r.cell))
        } else if grid.is_blocked(r.cell) {
            Some(format!("cell {} is in a blocked region", r.cell))
        } else if !(r.timestamp_min >= 0.0) {
            Some("negative timestamp".to_string())
        } else if !window.contains(&r.timestamp_min) {
            Some(format!("timestamp {} outside cycle {cycle}", r.timestamp_min))
        } else if !(r.deadline_min > 0.0) {
            Some("non-positive deadline".to_string())
        } else {
            None
        };
        if let Some(reason) = reject {
            diagnostics.push(Diagnostic { report: i, reason });
            continue;
        }
        let slot = by_cell.entry(r.cell).or_default();
        match slot.get(&r.source_id) {
            Some(&(ts, _, _)) if ts > r.timestamp_min => {}
            _ => {
                slot.insert(r.source_id, (r.timestamp_min, r.state, r.deadline_min));
            }
        }
    }
    let groups = by_cell
        .into_iter()
        .enumerate()
        .map(|(index, (cell, claims))| {
            let mut deadlines: Vec<f64> = claims.values().map(|c| c.2).collect();
            deadlines.sort_by(f64::total_cmp);
            let deadline_min = deadlines[(deadlines.len() - 1) / 2];
            let (supporters, opposers): (Vec<_>, Vec<_>) =
                claims.iter().partition(|(_, c)| c.1);
            ClaimGroup {
                id: EventId {
                    cycle,
                    index: index as u32,
                },
                cell,
                supporters: supporters.into_iter().map(|(s, _)| *s).collect(),
                opposers: opposers.into_iter().map(|(s, _)| *s).collect(),
                deadline_min,
            }
        })
        .collect();
    (groups, diagnostics)
}

/// Veracity and confidence for one event (or one piece of a split event).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEstimate {
    pub id: EventId,
    pub cell: CellId,
    /// Chance the event is real, in (0, 1].
    pub veracity: f64,
    /// Distance of the veracity from the neutral midpoint, in [0, 1].
    pub confidence: f64,
    pub deadline_min: f64,
    /// Offset of this piece's window from the original report time.
    pub release_offset_min: f64,
    pub part: u32,
    pub parts: u32,
    pub needs_dispatch: bool,
}

pub const VERACITY_FLOOR: f64 = 1e-9;

/// Confidence from veracity. `scale = 2` maps the half-range onto [0, 1];
/// `scale = 1` keeps the raw distance.
pub fn confidence(veracity: f64, scale: f64) -> f64 {
    (scale * (veracity - 0.5).abs()).clamp(0.0, 1.0)
}

/// A pluggable truth-discovery back end. It owns per-source reliability and
/// carries it across cycles.
pub trait TruthEstimator {
    /// Veracity per group, in group order. Updates source state.
    fn estimate(&mut self, groups: &[ClaimGroup]) -> Vec<f64>;

    /// Current reliability weight for a source, in (0, 1].
    fn reliability(&self, source: u32) -> f64;

    /// Iterations used by the last call to `estimate`.
    fn last_iterations(&self) -> usize {
        0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct SourceHistory {
    agreement: f64,
    claims: f64,
}

/// Iterative reliability-weighted voting.
///
/// Each round sets an event's veracity to the supporting share of
/// reliability mass (plus a neutral pseudo-mass `prior_mass` split evenly),
/// then re-estimates every source's reliability as its Laplace-smoothed
/// soft agreement with the current veracities, including history from
/// earlier cycles. Rounds stop when no weight moves by `tolerance` or after
/// `max_iterations`.
#[derive(Debug, Clone)]
pub struct WeightedVoting {
    pub prior_mass: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub min_weight: f64,
    weights: HashMap<u32, f64>,
    history: HashMap<u32, SourceHistory>,
    iterations: usize,
}

impl Default for WeightedVoting {
    fn default() -> Self {
        WeightedVoting::new(1.0)
    }
}

impl WeightedVoting {
    pub fn new(prior_mass: f64) -> Self {
        WeightedVoting {
            prior_mass,
            tolerance: 1e-6,
            max_iterations: 100,
            min_weight: 1e-3,
            weights: HashMap::new(),
            history: HashMap::new(),
            iterations: 0,
        }
    }

    fn weight(&self, source: u32) -> f64 {
        self.weights.get(&source).copied().unwrap_or(0.5)
    }

    fn veracity(&self, g: &ClaimGroup, w: &HashMap<u32, f64>) -> f64 {
        let support: f64 = g.supporters.iter().map(|s| w[s]).sum();
        let oppose: f64 = g.opposers.iter().map(|s| w[s]).sum();
        let total = support + oppose + self.prior_mass;
        if total <= 0.0 {
            return 0.5;
        }
        ((support + 0.5 * self.prior_mass) / total).max(VERACITY_FLOOR)
    }

    fn agreement(groups: &[ClaimGroup], veracity: &[f64]) -> BTreeMap<u32, SourceHistory> {
        let mut cur: BTreeMap<u32, SourceHistory> = BTreeMap::new();
        for (g, &v) in groups.iter().zip(veracity) {
            for s in &g.supporters {
                let h = cur.entry(*s).or_default();
                h.agreement += v;
                h.claims += 1.0;
            }
            for s in &g.opposers {
                let h = cur.entry(*s).or_default();
                h.agreement += 1.0 - v;
                h.claims += 1.0;
            }
        }
        cur
    }
}

impl TruthEstimator for WeightedVoting {
    fn estimate(&mut self, groups: &[ClaimGroup]) -> Vec<f64> {
        let mut w: HashMap<u32, f64> = HashMap::new();
        for g in groups {
            for &s in g.supporters.iter().chain(&g.opposers) {
                w.entry(s).or_insert_with(|| self.weight(s));
            }
        }
        let mut veracity: Vec<f64> = groups.iter().map(|g| self.veracity(g, &w)).collect();
        self.iterations = 0;
        let mut cur = BTreeMap::new();
        while self.iterations < self.max_iterations {
            self.iterations += 1;
            cur = Self::agreement(groups, &veracity);
            let mut max_delta = 0.0f64;
            for (s, h) in &cur {
                let past = self.history.get(s).copied().unwrap_or_default();
                let next = ((past.agreement + h.agreement + 1.0) / (past.claims + h.claims + 2.0))
                    .clamp(self.min_weight, 1.0);
                let old = w.insert(*s, next).unwrap_or(next);
                max_delta = max_delta.max((next - old).abs());
            }
            veracity = groups.iter().map(|g| self.veracity(g, &w)).collect();
            if max_delta < self.tolerance {
                break;
            }
        }
        for (s, h) in cur {
            let e = self.history.entry(s).or_default();
            e.agreement += h.agreement;
            e.claims += h.claims;
        }
        self.weights.extend(w);
        veracity
    }

    fn reliability(&self, source: u32) -> f64 {
        self.weight(source)
    }

    fn last_iterations(&self) -> usize {
        self.iterations
    }
}

/// Run the estimator over one cycle's groups and attach confidence.
/// Every estimate starts with `needs_dispatch = false`; the gate decides.
pub fn estimate_truth(
    groups: &[ClaimGroup],
    estimator: &mut dyn TruthEstimator,
    confidence_scale: f64,
) -> Vec<EventEstimate> {
    let veracity = estimator.estimate(groups);
    groups
        .iter()
        .zip(veracity)
        .map(|(g, v)| {
            let v = if v.is_finite() { v.clamp(VERACITY_FLOOR, 1.0) } else { 0.5 };
            EventEstimate {
                id: g.id,
                cell: g.cell,
                veracity: v,
                confidence: confidence(v, confidence_scale),
                deadline_min: g.deadline_min,
                release_offset_min: 0.0,
                part: 0,
                parts: 1,
                needs_dispatch: false,
            }
        })
        .collect()
}

/// Split an event whose deadline exceeds the cycle into back-to-back pieces
/// of equal length. Pieces inherit veracity, confidence and identity.
pub fn split_event(event: &EventEstimate, cycle_length_min: f64) -> Vec<EventEstimate> {
    if event.deadline_min <= cycle_length_min {
        return vec![event.clone()];
    }
    let parts = (event.deadline_min / cycle_length_min).ceil() as u32;
    let piece = event.deadline_min / parts as f64;
    (0..parts)
        .map(|i| EventEstimate {
            deadline_min: piece,
            release_offset_min: event.release_offset_min + piece * i as f64,
            part: i,
            parts,
            ..event.clone()
        })
        .collect()
}

/// An event resolved without dispatching cars.
#[derive(Debug, Clone, PartialEq)]
pub struct Conclusion {
    pub estimate: EventEstimate,
    pub value: bool,
}

/// Confident estimates are concluded directly (`veracity > 0.5`); the rest
/// become vehicle tasks.
pub fn gate_dispatch(
    estimates: Vec<EventEstimate>,
    threshold: f64,
) -> (Vec<Conclusion>, Vec<EventEstimate>) {
    let mut concluded = Vec::new();
    let mut tasks = Vec::new();
    for mut e in estimates {
        if e.confidence >= threshold {
            e.needs_dispatch = false;
            let value = e.veracity > 0.5;
            concluded.push(Conclusion { estimate: e, value });
        } else {
            e.needs_dispatch = true;
            tasks.push(e);
        }
    }
    (concluded, tasks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn report(source_id: u32, cell: CellId, state: bool) -> SocialReport {
        SocialReport {
            source_id,
            cell,
            state,
            timestamp_min: 10.0,
            deadline_min: 60.0,
        }
    }

    fn grid() -> Grid {
        Grid::new(4, 4, &[15]).unwrap()
    }

    fn estimate(veracity: f64, deadline: f64) -> EventEstimate {
        EventEstimate {
            id: EventId { cycle: 1, index: 0 },
            cell: 0,
            veracity,
            confidence: confidence(veracity, 2.0),
            deadline_min: deadline,
            release_offset_min: 0.0,
            part: 0,
            parts: 1,
            needs_dispatch: false,
        }
    }

    #[test]
    fn empty_input_gives_no_groups() {
        let (groups, diags) = ingest_cycle(&[], 1, 100.0, &grid());
        assert!(groups.is_empty() && diags.is_empty());
    }

    #[test]
    fn same_cell_reports_form_one_group() {
        let reports = [report(1, 5, true), report(2, 5, true), report(3, 5, false)];
        let (groups, _) = ingest_cycle(&reports, 1, 100.0, &grid());
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].supporters.len(), 2);
        assert_eq!(groups[0].opposers.len(), 1);
    }

    #[test]
    fn distinct_cells_form_distinct_groups() {
        let reports = [report(1, 5, true), report(2, 6, true)];
        let (groups, _) = ingest_cycle(&reports, 1, 100.0, &grid());
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[1].id.index, 1);
    }

    #[test]
    fn blocked_cell_report_is_rejected_with_diagnostic() {
        let reports = [report(1, 15, true), report(2, 6, true), report(3, 99, false)];
        let (groups, diags) = ingest_cycle(&reports, 1, 100.0, &grid());
        assert_eq!(groups.len(), 1);
        assert_eq!(diags.len(), 2);
        assert_eq!(diags[0].report, 0);
        assert_eq!(diags[1].report, 2);
    }

    #[test]
    fn out_of_window_report_is_rejected() {
        let mut r = report(1, 5, true);
        r.timestamp_min = 150.0;
        let (groups, diags) = ingest_cycle(&[r], 1, 100.0, &grid());
        assert!(groups.is_empty());
        assert_eq!(diags.len(), 1);
    }

    #[test]
    fn unanimous_support_exceeds_midpoint() {
        let reports = [report(1, 5, true), report(2, 5, true), report(3, 5, true)];
        let (groups, _) = ingest_cycle(&reports, 1, 100.0, &grid());
        let est = estimate_truth(&groups, &mut WeightedVoting::default(), 2.0);
        assert!(est[0].veracity > 0.5);
        assert!(est[0].confidence > 0.0);
    }

    #[test]
    fn balanced_claims_are_maximally_uncertain() {
        let reports = [report(1, 5, true), report(2, 5, false)];
        let (groups, _) = ingest_cycle(&reports, 1, 100.0, &grid());
        let est = estimate_truth(&groups, &mut WeightedVoting::default(), 2.0);
        assert!((est[0].veracity - 0.5).abs() < 1e-12);
        assert!(est[0].confidence.abs() < 1e-12);
    }

    #[test]
    fn zero_mass_is_neutral() {
        let group = ClaimGroup {
            id: EventId { cycle: 1, index: 0 },
            cell: 0,
            supporters: vec![],
            opposers: vec![],
            deadline_min: 10.0,
        };
        let est = estimate_truth(&[group], &mut WeightedVoting::new(0.0), 2.0);
        assert_eq!(est[0].veracity, 0.5);
        assert_eq!(est[0].confidence, 0.0);
    }

    #[test]
    fn persistent_contrarian_loses_weight() {
        let mut est = WeightedVoting::default();
        for cycle in 1..=3 {
            let mut reports = Vec::new();
            for cell in [2, 7] {
                for s in 1..=4 {
                    reports.push(report(s, cell, true));
                }
                reports.push(report(5, cell, false));
            }
            let (groups, _) = ingest_cycle(
                &reports
                    .iter()
                    .map(|r| SocialReport {
                        timestamp_min: (cycle - 1) as f64 * 100.0 + 1.0,
                        ..r.clone()
                    })
                    .collect::<Vec<_>>(),
                cycle,
                100.0,
                &grid(),
            );
            estimate_truth(&groups, &mut est, 2.0);
        }
        let contrarian = est.reliability(5);
        for s in 1..=4 {
            assert!(contrarian < est.reliability(s));
        }
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_event(&estimate(0.7, 60.0), 100.0).len(), 1);
        let parts = split_event(&estimate(0.7, 250.0), 100.0);
        assert_eq!(parts.len(), 3);
        for p in &parts {
            assert!((p.deadline_min - 250.0 / 3.0).abs() < 1e-9);
            assert_eq!(p.veracity, 0.7);
        }
        let at_boundary = split_event(&estimate(0.7, 100.0), 100.0);
        assert_eq!(at_boundary.len(), 1);
        assert_eq!(at_boundary[0].deadline_min, 100.0);
    }

    #[test]
    fn gate_examples() {
        let mut confident = estimate(0.8, 50.0);
        confident.confidence = 0.9;
        let (c, t) = gate_dispatch(vec![confident], 0.5);
        assert_eq!(c.len(), 1);
        assert!(c[0].value);
        assert!(t.is_empty());

        let mut doubtful = estimate(0.55, 50.0);
        doubtful.confidence = 0.1;
        let (c, t) = gate_dispatch(vec![doubtful.clone()], 0.5);
        assert!(c.is_empty());
        assert!(t[0].needs_dispatch);

        let (c, t) = gate_dispatch(vec![doubtful, estimate(0.5, 10.0)], 0.0);
        assert_eq!(c.len(), 2);
        assert!(t.is_empty());
    }

    #[test]
    fn report_wire_format() {
        let line = r#"{"source_id":3,"cell":7,"state":1,"timestamp_min":12.5,"deadline_min":40.0}"#;
        let r = read_reports(line.as_bytes(), "mem").unwrap();
        assert_eq!(r, vec![SocialReport {
            source_id: 3,
            cell: 7,
            state: true,
            timestamp_min: 12.5,
            deadline_min: 40.0,
        }]);
        let bad = r#"{"source_id":3,"cell":7,"state":2,"timestamp_min":12.5,"deadline_min":40.0}"#;
        let err = read_reports(bad.as_bytes(), "mem").unwrap_err();
        assert!(err.to_string().starts_with("mem:1"));
    }

    proptest! {
        #[test]
        fn confidence_is_symmetric(x in 0.0f64..=0.5) {
            prop_assert!((confidence(0.5 + x, 2.0) - confidence(0.5 - x, 2.0)).abs() < 1e-12);
        }

        #[test]
        fn gate_partitions(conf in proptest::collection::vec(0.0f64..=1.0, 0..20), th in 0.0f64..=1.0) {
            let estimates: Vec<_> = conf.iter().enumerate().map(|(i, &c)| {
                let mut e = estimate(0.6, 30.0);
                e.id.index = i as u32;
                e.confidence = c;
                e
            }).collect();
            let (c, t) = gate_dispatch(estimates, th);
            prop_assert_eq!(c.len() + t.len(), conf.len());
            let mut ids: Vec<_> = c.iter().map(|x| x.estimate.id).chain(t.iter().map(|x| x.id)).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), conf.len());
        }

        #[test]
        fn split_spans_the_window(deadline in 1.0f64..1000.0, cycle in 10.0f64..200.0) {
            let parts = split_event(&estimate(0.4, deadline), cycle);
            let mut cursor = 0.0;
            for p in &parts {
                prop_assert!((p.release_offset_min - cursor).abs() < 1e-9);
                prop_assert!(p.deadline_min <= cycle + 1e-9);
                cursor += p.deadline_min;
            }
            prop_assert!((cursor - deadline).abs() < 1e-6);
        }

        #[test]
        fn estimator_terminates_and_stays_in_range(
            claims in proptest::collection::vec((0u32..8, 0usize..5, any::<bool>()), 0..40)
        ) {
            let g = Grid::new(5, 1, &[]).unwrap();
            let reports: Vec<_> = claims.iter().map(|&(s, c, v)| report(s, c, v)).collect();
            let (groups, _) = ingest_cycle(&reports, 1, 100.0, &g);
            let mut est = WeightedVoting::default();
            let out = estimate_truth(&groups, &mut est, 2.0);
            prop_assert!(est.last_iterations() <= 100);
            for e in out {
                prop_assert!(e.veracity > 0.0 && e.veracity <= 1.0);
                prop_assert!((0.0..=1.0).contains(&e.confidence));
            }
            for s in 0..8 {
                let w = est.reliability(s);
                prop_assert!(w > 0.0 && w <= 1.0);
            }
        }
    }
}
