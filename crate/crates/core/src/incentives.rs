//! Reward control: a PID loop per task drives the summed reputation of the
//! cars picking it toward a set point, and a churn monitor asks for
//! reallocation when too many accepted tasks are dropped.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        PidGains {
            kp: 0.11,
            ki: 0.67,
            kd: 0.38,
        }
    }
}

/// Controller settings shared by every task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IncentiveParams {
    pub gains: PidGains,
    /// Target summed reputation per task.
    pub setpoint: f64,
    pub base_reward: f64,
    /// Integral magnitude limit, as a multiple of the set point.
    pub windup_factor: f64,
    /// Reward floor, as a fraction of the base reward.
    pub floor_fraction: f64,
}

impl Default for IncentiveParams {
    fn default() -> Self {
        IncentiveParams {
            gains: PidGains::default(),
            setpoint: 1.0,
            base_reward: 1.0,
            windup_factor: 10.0,
            floor_fraction: 0.1,
        }
    }
}

impl IncentiveParams {
    pub fn windup_bound(&self) -> f64 {
        self.windup_factor * self.setpoint
    }

    pub fn reward_floor(&self) -> f64 {
        self.floor_fraction * self.base_reward
    }

    /// Reward for an adjustment `q`, never below the floor.
    pub fn reward(&self, q: f64) -> f64 {
        (self.base_reward + q).max(self.reward_floor())
    }
}

/// Sum of reputations of the cars picking a task.
pub fn aggregate_reputation(picks: &[usize], reputation: &[f64]) -> f64 {
    picks.iter().map(|&p| reputation[p]).sum()
}

/// One task's controller.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: f64,
    pub steps: u32,
}

/// What one controller step produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PidStep {
    pub aggregate: f64,
    pub error: f64,
    pub adjustment: f64,
    pub reward: f64,
}

impl PidState {
    /// Advance one cycle with measured aggregate reputation `e`.
    pub fn step(&mut self, params: &IncentiveParams, e: f64) -> PidStep {
        let g = params.gains;
        let err = params.setpoint - e;
        let bound = params.windup_bound();
        self.integral = (self.integral + err).clamp(-bound, bound);
        let derivative = err - self.prev_error;
        self.prev_error = err;
        self.steps += 1;
        let q = g.kp * err + g.ki * self.integral + g.kd * derivative;
        PidStep {
            aggregate: e,
            error: err,
            adjustment: q,
            reward: params.reward(q),
        }
    }
}

/// Counts drops of accepted tasks within a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChurnMonitor {
    /// Drop fraction of active tasks that must be exceeded to fire.
    pub threshold: f64,
    pub drops: u32,
    pub fired: u32,
}

impl ChurnMonitor {
    pub fn new(threshold: f64) -> Self {
        ChurnMonitor {
            threshold,
            drops: 0,
            fired: 0,
        }
    }

    pub fn start_cycle(&mut self) {
        self.drops = 0;
    }

    /// Record one drop; true when the drop fraction now exceeds the
    /// threshold, in which case the count starts over.
    pub fn record_drop(&mut self, active_tasks: usize) -> bool {
        self.drops += 1;
        if active_tasks == 0 {
            return false;
        }
        if self.drops as f64 / active_tasks as f64 > self.threshold {
            self.drops = 0;
            self.fired += 1;
            true
        } else {
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn aggregate_examples() {
        let rep = [0.6, 0.3, 1.0];
        assert!((aggregate_reputation(&[0, 1], &rep) - 0.9).abs() < 1e-12);
        assert_eq!(aggregate_reputation(&[], &rep), 0.0);
        assert_eq!(aggregate_reputation(&[2], &rep), 1.0);
    }

    #[test]
    fn first_step_from_small_error() {
        let p = IncentiveParams::default();
        let mut pid = PidState::default();
        let s = pid.step(&p, 0.9);
        assert!((s.error - 0.1).abs() < 1e-12);
        assert!((s.adjustment - 0.116).abs() < 1e-12);
    }

    #[test]
    fn zero_error_leaves_base_reward() {
        let p = IncentiveParams::default();
        let s = PidState::default().step(&p, 1.0);
        assert_eq!(s.adjustment, 0.0);
        assert_eq!(s.reward, p.base_reward);
    }

    #[test]
    fn integral_ramp_until_windup() {
        let p = IncentiveParams {
            gains: PidGains { kp: 0.0, ki: 0.67, kd: 0.0 },
            ..Default::default()
        };
        let mut pid = PidState::default();
        let mut last = 0.0;
        for t in 1..=150 {
            let q = pid.step(&p, 0.9).adjustment;
            let expected = 0.67 * (0.1 * t as f64).min(p.windup_bound());
            assert!((q - expected).abs() < 1e-9, "cycle {t}");
            if (t as f64) * 0.1 < p.windup_bound() - 1e-9 {
                assert!((q - last - 0.067).abs() < 1e-9);
            }
            last = q;
        }
    }

    #[test]
    fn churn_examples() {
        let mut m = ChurnMonitor::new(0.62);
        assert!(!(0..6).any(|_| m.record_drop(10)));
        assert!(m.record_drop(10));
        assert_eq!(m.drops, 0);
        let fresh = ChurnMonitor::new(0.62);
        assert_eq!(fresh.fired, 0);
    }

    proptest! {
        #[test]
        fn reward_never_below_floor(es in proptest::collection::vec(0.0f64..20.0, 1..60)) {
            let p = IncentiveParams::default();
            let mut pid = PidState::default();
            for e in es {
                let s = pid.step(&p, e);
                prop_assert!(s.reward >= p.reward_floor());
                prop_assert!(pid.integral.abs() <= p.windup_bound() + 1e-12);
            }
        }

        #[test]
        fn persistent_shortfall_raises_adjustment(e in 0.0f64..0.99, kp in 0.01f64..1.0, ki in 0.01f64..1.0, kd in 0.0f64..1.0) {
            let p = IncentiveParams { gains: PidGains { kp, ki, kd }, ..Default::default() };
            let mut pid = PidState::default();
            let mut prev = f64::NEG_INFINITY;
            // the first step carries a derivative kick; after it only the integral moves
            for t in 0..30 {
                let q = pid.step(&p, e).adjustment;
                if t > 1 && pid.integral.abs() < p.windup_bound() {
                    prop_assert!(q > prev);
                }
                prev = q;
            }
        }

        #[test]
        fn pure_proportional(e in -5.0f64..5.0, kp in 0.0f64..2.0) {
            let p = IncentiveParams { gains: PidGains { kp, ki: 0.0, kd: 0.0 }, ..Default::default() };
            let s = PidState::default().step(&p, e);
            prop_assert!((s.adjustment - kp * (1.0 - e)).abs() < 1e-12);
        }

        #[test]
        fn churn_fires_iff_fraction_exceeds(active in 1usize..30, drops in 0u32..40, psi in 0.0f64..1.0) {
            let mut m = ChurnMonitor::new(psi);
            let mut fired_at = None;
            for d in 1..=drops {
                if m.record_drop(active) {
                    fired_at = Some(d);
                    break;
                }
            }
            let first = (1..=drops).find(|&d| d as f64 / active as f64 > psi);
            prop_assert_eq!(fired_at, first);
        }
    }
}
