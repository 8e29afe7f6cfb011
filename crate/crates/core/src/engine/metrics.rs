use serde::Serialize;

/// Confusion counts of estimated against true event states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Confusion {
    pub tp: u32,
    pub fp: u32,
    pub tn: u32,
    #[serde(rename = "fn")]
    pub fn_: u32,
}

/// A ratio that may be undefined (zero denominator). Undefined ratios
/// report a value of 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ratio {
    pub value: f64,
    pub defined: bool,
}

impl Ratio {
    pub fn of(num: f64, den: f64) -> Ratio {
        if den > 0.0 {
            Ratio {
                value: num / den,
                defined: true,
            }
        } else {
            Ratio {
                value: 0.0,
                defined: false,
            }
        }
    }
}

impl Confusion {
    /// Score one event. `None` means the event never got an estimate and
    /// counts as wrong.
    pub fn add(&mut self, truth: bool, estimate: Option<bool>) {
        match (truth, estimate) {
            (true, Some(true)) => self.tp += 1,
            (false, Some(false)) => self.tn += 1,
            (false, Some(true)) | (false, None) => self.fp += 1,
            (true, Some(false)) | (true, None) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn total(&self) -> u32 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> Ratio {
        Ratio::of((self.tp + self.tn) as f64, self.total() as f64)
    }

    pub fn precision(&self) -> Ratio {
        Ratio::of(self.tp as f64, (self.tp + self.fp) as f64)
    }

    pub fn recall(&self) -> Ratio {
        Ratio::of(self.tp as f64, (self.tp + self.fn_) as f64)
    }

    pub fn f1(&self) -> Ratio {
        Ratio::of(2.0 * self.tp as f64, (2 * self.tp + self.fp + self.fn_) as f64)
    }
}

/// Outcomes of accepted tasks, that is tasks some car took on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct DeadlineLog {
    /// Accepted tasks verified before their deadline.
    pub hits: u32,
    /// Accepted tasks that missed their deadline or were still open at the horizon.
    pub misses: u32,
    /// Assignments abandoned by their car. A dropped task can still be a hit
    /// if another car finishes it.
    pub drops: u32,
}

impl DeadlineLog {
    pub fn accepted(&self) -> u32 {
        self.hits + self.misses
    }

    pub fn hit_rate(&self) -> Ratio {
        Ratio::of(self.hits as f64, self.accepted() as f64)
    }

    pub fn merge(&mut self, other: &DeadlineLog) {
        self.hits += other.hits;
        self.misses += other.misses;
        self.drops += other.drops;
    }
}

/// Run-level metrics from the scored events and the deadline log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub confusion: Confusion,
    pub accuracy: Ratio,
    pub precision: Ratio,
    pub recall: Ratio,
    pub f1: Ratio,
    pub deadlines: DeadlineLog,
    pub deadline_hit_rate: Ratio,
}

/// Score `(true state, final estimate)` pairs. Events without an estimate
/// count as misclassified.
pub fn score_run(outcomes: &[(bool, Option<bool>)], deadlines: DeadlineLog) -> Metrics {
    let mut confusion = Confusion::default();
    for &(truth, estimate) in outcomes {
        confusion.add(truth, estimate);
    }
    Metrics::from_parts(confusion, deadlines)
}

impl Metrics {
    pub fn from_parts(confusion: Confusion, deadlines: DeadlineLog) -> Self {
        Metrics {
            confusion,
            accuracy: confusion.accuracy(),
            precision: confusion.precision(),
            recall: confusion.recall(),
            f1: confusion.f1(),
            deadlines,
            deadline_hit_rate: deadlines.hit_rate(),
        }
    }
}

/// Everything recorded for one cycle.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CycleMetrics {
    pub cycle: u32,
    /// Claim groups formed from this cycle's reports.
    pub events_reported: u32,
    /// Events resolved by confidence alone.
    pub concluded: u32,
    /// Tasks created (after splitting).
    pub tasks_created: u32,
    /// Events finalized this cycle, by outcome against ground truth.
    pub confusion: Confusion,
    pub verified: u32,
    pub unresolved: u32,
    pub deadlines: DeadlineLog,
    pub reassigned: u32,
    pub scouts: u32,
    pub allocations: u32,
    pub uncertified: u32,
    pub churn_triggers: u32,
    pub damaged_cells: u32,
    pub damage_detected: u32,
    pub known_damaged: u32,
    pub sigma: f64,
    pub kappa: f64,
    pub rejected_reports: u32,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_run() {
        let m = score_run(&[(true, Some(true)), (false, Some(false))], DeadlineLog::default());
        assert_eq!(m.accuracy.value, 1.0);
        assert_eq!(m.f1.value, 1.0);
    }

    #[test]
    fn formula_example() {
        let c = Confusion { tp: 2, fp: 1, fn_: 1, tn: 0 };
        let m = Metrics::from_parts(c, DeadlineLog::default());
        assert!((m.precision.value - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall.value - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.f1.value - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_accepted_is_flagged() {
        let m = score_run(&[], DeadlineLog::default());
        assert_eq!(m.deadline_hit_rate.value, 0.0);
        assert!(!m.deadline_hit_rate.defined);
        assert!(!m.precision.defined);
    }

    #[test]
    fn unresolved_counts_against_truth() {
        let m = score_run(&[(true, None), (false, None)], DeadlineLog::default());
        assert_eq!(m.confusion, Confusion { tp: 0, fp: 1, tn: 0, fn_: 1 });
        assert_eq!(m.accuracy.value, 0.0);
    }
}
