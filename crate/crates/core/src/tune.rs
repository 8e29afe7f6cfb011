//! Parameter tuning: a bounded Nelder-Mead search maximizing F1 over the
//! early cycles of a scenario, and a scan for the initial accessibility.

use serde::{Deserialize, Serialize};

use crate::config::{Params, RunConfig, SCHEMA_VERSION};
use crate::engine::run;
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::sweep::median;

/// Simplex settings. Reflection, expansion, contraction and shrink use the
/// usual 1, 2, 1/2, 1/2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimplexOptions {
    /// Offset of the initial vertices from the start point, per coordinate.
    pub initial_step: f64,
    pub max_evals: usize,
    /// Stop once the spread of vertex values falls below this.
    pub f_tol: f64,
    /// ... and every vertex is within this distance of the best, per coordinate.
    pub x_tol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            initial_step: 0.25,
            max_evals: 60,
            f_tol: 1e-4,
            x_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    /// The tolerances were met before the evaluation budget ran out.
    pub converged: bool,
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

/// Maximize `f` over the box `bounds` starting at `x0`. Every trial point
/// is projected onto the box before evaluation.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    bounds: &[(f64, f64)],
    opts: &SimplexOptions,
) -> SimplexResult {
    let n = x0.len();
    assert_eq!(bounds.len(), n, "one bound per coordinate");
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        f(x)
    };
    let mut start = x0.to_vec();
    project(&mut start, bounds);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v = eval(&start, &mut evals);
    simplex.push((start.clone(), v));
    for i in 0..n {
        let mut x = start.clone();
        let (lo, hi) = bounds[i];
        // step inward when the start sits on the upper bound
        x[i] = if x[i] + opts.initial_step <= hi { x[i] + opts.initial_step } else { x[i] - opts.initial_step };
        x[i] = x[i].clamp(lo, hi);
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    let by_value = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut converged = false;
    loop {
        by_value(&mut simplex);
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread = (best - worst).abs();
        let size = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if n == 0 || (spread <= opts.f_tol && size <= opts.x_tol) {
            converged = true;
            break;
        }
        if evals >= opts.max_evals {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let toward = |t: f64, from: &[f64]| -> Vec<f64> {
            let mut p: Vec<f64> = centroid.iter().zip(from).map(|(c, w)| c + t * (c - w)).collect();
            project(&mut p, bounds);
            p
        };
        let worst_x = simplex[n].0.clone();
        let xr = toward(1.0, &worst_x);
        let fr = eval(&xr, &mut evals);
        if fr > simplex[0].1 {
            let xe = toward(2.0, &worst_x);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe > fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr > simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        // contract toward the better of the reflected and worst points
        let (xc, fc) = if fr > worst {
            let xc = toward(0.5, &worst_x);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = toward(-0.5, &worst_x);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc > worst.max(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let best_x = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let mut x: Vec<f64> = best_x.iter().zip(&vertex.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
            project(&mut x, bounds);
            let v = eval(&x, &mut evals);
            *vertex = (x, v);
        }
    }
    by_value(&mut simplex);
    let (x, value) = simplex.swap_remove(0);
    SimplexResult {
        x,
        value,
        evals,
        converged,
    }
}

/// Names of the tuned coordinates, in vector order.
pub const TUNED: [&str; 8] = [
    "lambda1",
    "lambda2",
    "lambda3",
    "kp",
    "ki",
    "kd",
    "churn_threshold",
    "kappa_default",
];

/// The tuned coordinates of `p`.
pub fn tuned_vector(p: &Params) -> Vec<f64> {
    let l = p.utility.lambda;
    let g = p.incentives.gains;
    vec![l[0], l[1], l[2], g.kp, g.ki, g.kd, p.churn_threshold, p.kappa_default]
}

/// `base` with the tuned coordinates replaced by `x`.
pub fn apply_vector(base: &Params, x: &[f64]) -> Params {
    let mut p = base.clone();
    p.utility.lambda = [x[0], x[1], x[2]];
    p.incentives.gains.kp = x[3];
    p.incentives.gains.ki = x[4];
    p.incentives.gains.kd = x[5];
    p.churn_threshold = x[6];
    p.kappa_default = x[7];
    p
}

/// Box for the tuned coordinates: the unit interval, with the kappa
/// fallback kept at or above its floor.
pub fn tuned_bounds(p: &Params) -> Vec<(f64, f64)> {
    let mut b = vec![(0.0, 1.0); TUNED.len()];
    b[7] = (p.kappa_floor, 1.0);
    b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneConfig {
    pub schema_version: u32,
    /// Seeds each candidate is scored on; the score is their median F1.
    pub seeds: Vec<u64>,
    /// Training cycles; `None` means the first quarter of the scenario.
    pub horizon: Option<u32>,
    /// Retention stages. Stage `s` trains on the first `s/stages` of the
    /// horizon, starting from the previous stage's best point.
    pub stages: u32,
    pub simplex: SimplexOptions,
    /// Start point; `None` means every tuned coordinate at 1.
    pub start: Option<Vec<f64>>,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            schema_version: SCHEMA_VERSION,
            seeds: vec![1],
            horizon: None,
            stages: 3,
            simplex: SimplexOptions::default(),
            start: None,
        }
    }
}

impl TuneConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let tc: TuneConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        if tc.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "{origin}: unsupported schema_version {}",
                tc.schema_version
            )));
        }
        Ok(tc)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// Training cycles for a scenario of `cycles` cycles.
    pub fn horizon_for(&self, cycles: u32) -> Result<u32> {
        let quarter = cycles / 4;
        let h = self.horizon.unwrap_or(quarter);
        if h == 0 || h > quarter {
            return Err(Error::InvalidConfig(format!(
                "tuning horizon {h} must lie in 1..={quarter} for a {cycles}-cycle scenario"
            )));
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub cycles: u32,
    pub f1: f64,
    pub evals: usize,
    pub converged: bool,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneReport {
    pub names: Vec<String>,
    /// The kept point and its F1 on the full training horizon.
    pub x: Vec<f64>,
    pub f1: f64,
    /// F1 of the unchanged parameters on the same horizon.
    pub default_f1: f64,
    /// Every stage met its tolerances.
    pub converged: bool,
    pub horizon: u32,
    pub stages: Vec<StageReport>,
    #[serde(skip)]
    pub params: Params,
}

/// Median F1 of `params` over the first `cycles` cycles.
pub fn score(scenario: &Scenario, base: &RunConfig, params: &Params, seeds: &[u64], cycles: u32) -> f64 {
    let f1: Vec<f64> = seeds
        .iter()
        .map(|&seed| {
            let cfg = RunConfig {
                seed,
                cycles: Some(cycles),
                params: params.clone(),
                ..base.clone()
            };
            // an invalid candidate scores worst
            run(scenario, &cfg).map_or(0.0, |r| r.summary.f1)
        })
        .collect();
    median(&f1)
}

/// Tune the scheme in `base` on `scenario`. The returned parameters are the
/// best of the defaults and each stage's result, judged on the full horizon.
pub fn tune(scenario: &Scenario, base: &RunConfig, tc: &TuneConfig) -> Result<TuneReport> {
    base.params.validate()?;
    if tc.seeds.is_empty() || tc.stages == 0 {
        return Err(Error::InvalidConfig("tuning needs a seed and at least one stage".into()));
    }
    let total = base.cycles.unwrap_or(scenario.cycles);
    let horizon = tc.horizon_for(total)?;
    let bounds = tuned_bounds(&base.params);
    let mut x = tc.start.clone().unwrap_or_else(|| vec![1.0; TUNED.len()]);
    if x.len() != TUNED.len() {
        return Err(Error::InvalidConfig(format!("tuning start needs {} values", TUNED.len())));
    }
    project(&mut x, &bounds);
    let full = |p: &Params| score(scenario, base, p, &tc.seeds, horizon);
    let default_f1 = full(&base.params);
    let mut kept = (tuned_vector(&base.params), default_f1);
    let mut stages = Vec::new();
    for s in 1..=tc.stages {
        let cycles = (horizon * s / tc.stages).max(1);
        let res = nelder_mead(
            |v| score(scenario, base, &apply_vector(&base.params, v), &tc.seeds, cycles),
            &x,
            &bounds,
            &tc.simplex,
        );
        x = res.x.clone();
        let f1 = if cycles == horizon { res.value } else { full(&apply_vector(&base.params, &x)) };
        if f1 > kept.1 {
            kept = (x.clone(), f1);
        }
        stages.push(StageReport {
            cycles,
            f1,
            evals: res.evals,
            converged: res.converged,
            x: res.x,
        });
    }
    Ok(TuneReport {
        names: TUNED.iter().map(|s| s.to_string()).collect(),
        params: apply_vector(&base.params, &kept.0),
        x: kept.0,
        f1: kept.1,
        default_f1,
        converged: stages.iter().all(|s| s.converged),
        horizon,
        stages,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct X0Point {
    pub x0: f64,
    pub access_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct X0Report {
    pub best: f64,
    pub access_error: f64,
    pub scan: Vec<X0Point>,
}

/// Scan the initial accessibility over `steps + 1` evenly spaced values in
/// [0, 1] and keep the one with the lowest mean |X - (1 - D)| over a
/// calibration run. Ties keep the smaller value.
pub fn tune_x0(scenario: &Scenario, base: &RunConfig, steps: u32) -> Result<X0Report> {
    if steps == 0 {
        return Err(Error::InvalidConfig("x0 scan needs at least one step".into()));
    }
    let mut scan = Vec::with_capacity(steps as usize + 1);
    for i in 0..=steps {
        let x0 = i as f64 / steps as f64;
        let mut cfg = base.clone();
        cfg.params.initial_accessibility = x0;
        let r = run(scenario, &cfg)?;
        scan.push(X0Point {
            x0,
            access_error: r.summary.access_error,
        });
    }
    let best = scan
        .iter()
        .fold(&scan[0], |b, p| if p.access_error < b.access_error { p } else { b })
        .clone();
    Ok(X0Report {
        best: best.x0,
        access_error: best.access_error,
        scan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn opts() -> SimplexOptions {
        SimplexOptions {
            max_evals: 400,
            ..Default::default()
        }
    }

    #[test]
    fn concave_peak_matches_grid_search() {
        let f = |x: &[f64]| 1.0 - (x[0] - 0.6).powi(2);
        let oracle = (0..=100)
            .map(|i| i as f64 / 100.0)
            .fold((0.0, f64::MIN), |b, x| if f(&[x]) > b.1 { (x, f(&[x])) } else { b })
            .0;
        let res = nelder_mead(f, &[1.0], &[(0.0, 1.0)], &opts());
        assert!((res.x[0] - oracle).abs() < 0.05, "{} vs {oracle}", res.x[0]);
        assert!((res.x[0] - 0.6).abs() < 0.05);
        assert!(res.converged);
    }

    #[test]
    fn flat_coordinate_stays_put() {
        // the second coordinate does not affect the objective
        let res = nelder_mead(|x| -(x[0] - 0.3).powi(2), &[1.0, 1.0], &[(0.0, 1.0); 2], &opts());
        assert!((res.x[0] - 0.3).abs() < 0.05);
        assert!((res.x[1] - 1.0).abs() < 0.25 + 1e-9, "{}", res.x[1]);
    }

    #[test]
    fn budget_exhaustion_is_flagged() {
        let res = nelder_mead(
            |x| -(x[0] - 0.2).powi(2) - (x[1] - 0.7).powi(2),
            &[1.0, 1.0],
            &[(0.0, 1.0); 2],
            &SimplexOptions {
                max_evals: 5,
                ..Default::default()
            },
        );
        assert!(!res.converged);
        assert!(res.evals >= 5);
    }

    #[test]
    fn vector_round_trip() {
        let p = Params::default();
        let v = tuned_vector(&p);
        assert_eq!(apply_vector(&p, &v), p);
        assert_eq!(v.len(), TUNED.len());
    }

    #[test]
    fn horizon_limits() {
        let tc = TuneConfig::default();
        assert_eq!(tc.horizon_for(36).unwrap(), 9);
        let late = TuneConfig {
            horizon: Some(10),
            ..Default::default()
        };
        assert!(late.horizon_for(36).is_err());
        assert!(tc.horizon_for(3).is_err());
    }

    fn small() -> Scenario {
        let mut sc = Scenario::reference();
        sc.cycles = 8;
        sc.grid = crate::scenario::GridSpec::open(6, 6);
        sc.fleet = crate::scenario::Fleet {
            completers: 3,
            aborters: 3,
            refusers: 2,
            abort_prob: 0.1,
        };
        sc.synthetic.as_mut().unwrap().per_cycle = [3, 5];
        sc
    }

    #[test]
    fn tuning_never_loses_to_defaults() {
        let tc = TuneConfig {
            seeds: vec![1, 2],
            simplex: SimplexOptions {
                max_evals: 12,
                ..Default::default()
            },
            ..Default::default()
        };
        let report = tune(&small(), &RunConfig::default(), &tc).unwrap();
        assert_eq!(report.horizon, 2);
        assert_eq!(report.stages.len(), 3);
        assert!(report.f1 >= report.default_f1);
        let bounds = tuned_bounds(&Params::default());
        for (v, (lo, hi)) in report.x.iter().zip(bounds) {
            assert!(*v >= lo && *v <= hi);
        }
        assert_eq!(tuned_vector(&report.params), report.x);
    }

    #[test]
    fn x0_scan_covers_the_unit_interval() {
        let cfg = RunConfig {
            cycles: Some(3),
            ..Default::default()
        };
        let report = tune_x0(&small(), &cfg, 4).unwrap();
        let xs: Vec<f64> = report.scan.iter().map(|p| p.x0).collect();
        assert_eq!(xs, [0.0, 0.25, 0.5, 0.75, 1.0]);
        let min = report.scan.iter().map(|p| p.access_error).fold(f64::MAX, f64::min);
        assert_eq!(report.access_error, min);
    }

    proptest! {
        #[test]
        fn search_stays_in_bounds(
            a in 0.0f64..1.0, b in 0.0f64..1.0, lo in 0.0f64..0.5, start in 0.0f64..1.0,
        ) {
            let bounds = [(lo, 1.0), (0.0, 1.0)];
            let mut inside = true;
            let res = nelder_mead(
                |x| {
                    inside &= x[0] >= lo && x[0] <= 1.0 && x[1] >= 0.0 && x[1] <= 1.0;
                    -(x[0] - a * 2.0).powi(2) - (x[1] + b).powi(2)
                },
                &[start, start],
                &bounds,
                &SimplexOptions::default(),
            );
            prop_assert!(inside);
            prop_assert!(res.x[0] >= lo && res.x[0] <= 1.0);
            prop_assert!(res.x[1] >= 0.0 && res.x[1] <= 1.0);
        }
    }
}
