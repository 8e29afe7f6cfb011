//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits nonzero if any failed.
//!
//! Run alone with `cargo test --release --test acceptance`.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use roadsense::allocation::{base_utility, best_response_allocate, BoardTask, Game, Scale, UtilityParams};
use roadsense::config::{Params, RunConfig};
use roadsense::engine::{run_with, RunOptions, SchemeId, TaskStatus, TraceRecord};
use roadsense::incentives::{IncentiveParams, PidGains, PidState};
use roadsense::output::write_run;
use roadsense::routing::{all_simple_paths, enumerate_actions, Choice, MdpState, MdpTable, RouteAction};
use roadsense::scenario::{Fleet, GridSpec, Rect, Scenario, SyntheticEvents};
use roadsense::scouting::{walk_route, AccessibilityMap, KappaWindow};
use roadsense::sweep::{sweep, SweepAxis, SweepPlan, SweepReport};
use roadsense::world::{CellId, Grid};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// random allocation instances

struct Instance {
    reputation: Vec<f64>,
    tasks: Vec<BoardTask>,
    hops: Vec<Vec<Option<u32>>>,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let cars = rng.gen_range(1..=6);
    let tasks = rng.gen_range(1..=5);
    Instance {
        reputation: (0..cars).map(|_| rng.gen_range(0.0..=1.0)).collect(),
        tasks: (0..tasks)
            .map(|_| BoardTask {
                reward: rng.gen_range(0.1..3.0),
                remaining_min: rng.gen_range(5.0..150.0),
                confidence: rng.gen_range(0.0..1.0),
            })
            .collect(),
        hops: (0..cars)
            .map(|_| {
                (0..tasks)
                    .map(|_| rng.gen_bool(0.9).then(|| rng.gen_range(0..25)))
                    .collect()
            })
            .collect(),
    }
}

fn base_matrix(inst: &Instance, reward_scale: f64, params: &UtilityParams) -> Vec<Vec<f64>> {
    let p = Params::default();
    let scale = Scale {
        cycle_length_min: p.cycle_length_min,
        travel_min_per_cell: p.travel_min_per_cell,
    };
    inst.hops
        .iter()
        .map(|row| {
            inst.tasks
                .iter()
                .zip(row)
                .map(|(t, &h)| {
                    let t = BoardTask {
                        reward: t.reward * reward_scale,
                        ..t.clone()
                    };
                    base_utility(&t, h, params, &scale)
                })
                .collect()
        })
        .collect()
}

/// Contention written out directly: sum of signed `(own - other)^k`,
/// `gamma_default` with no rivals, floored at epsilon.
fn oracle_utility(rep: &[f64], base: &[Vec<f64>], p: &UtilityParams, car: usize, task: usize, picks: &[Option<usize>]) -> f64 {
    if base[car][task] <= 0.0 {
        return 0.0;
    }
    let rivals: Vec<f64> = (0..rep.len())
        .filter(|&o| o != car && picks[o] == Some(task))
        .map(|o| rep[o])
        .collect();
    let gamma = if rivals.is_empty() {
        p.gamma_default
    } else {
        rivals
            .iter()
            .map(|&r| {
                let d = rep[car] - r;
                d.signum() * d.abs().powi(p.k as i32)
            })
            .sum()
    };
    base[car][task] / gamma.max(p.epsilon)
}

/// Every pure profile in which no car gains by switching to another task it
/// values or by going idle.
fn oracle_equilibria(rep: &[f64], base: &[Vec<f64>], p: &UtilityParams) -> BTreeSet<Vec<Option<usize>>> {
    let cars = rep.len();
    let tasks = base[0].len();
    let mut out = BTreeSet::new();
    let total = (tasks + 1).pow(cars as u32);
    for code in 0..total {
        let mut c = code;
        let picks: Vec<Option<usize>> = (0..cars)
            .map(|_| {
                let d = c % (tasks + 1);
                c /= tasks + 1;
                (d < tasks).then_some(d)
            })
            .collect();
        if picks.iter().enumerate().any(|(car, pick)| pick.is_some_and(|n| base[car][n] <= 0.0)) {
            continue;
        }
        let stable = (0..cars).all(|car| {
            let own = picks[car].map_or(0.0, |n| oracle_utility(rep, base, p, car, n, &picks));
            (0..tasks).all(|n| {
                let u = oracle_utility(rep, base, p, car, n, &picks);
                u <= own * (1.0 + 1e-9) + 1e-12
            })
        });
        if stable {
            out.insert(picks);
        }
    }
    out
}

fn psne_certification() -> Verdict {
    let params = UtilityParams::default();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut ok, mut no_psne, mut uncertified) = (0, 0, 0);
    let n = 1000;
    for i in 0..n {
        let inst = random_instance(&mut rng);
        let base = base_matrix(&inst, 1.0, &params);
        let mut game = Game::new(inst.reputation.clone(), base.clone(), &params);
        game.keep_coverage = false;
        let mut order_rng = ChaCha8Rng::seed_from_u64(1000 + i);
        let alloc = best_response_allocate(&game, &mut order_rng);
        let equilibria = oracle_equilibria(&inst.reputation, &base, &params);
        if equilibria.is_empty() {
            no_psne += 1;
        }
        if !alloc.certified {
            uncertified += 1;
        }
        if equilibria.contains(&alloc.picks) {
            ok += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        ok == n && secs < 10.0,
        format!("{ok}/{n} outputs are equilibria by exhaustive check ({no_psne} instances have none, {uncertified} uncertified); {secs:.2} s"),
    )
}

// ---------------------------------------------------------------------------
// routing

fn penalty(grid: &Grid, route: &[CellId]) -> usize {
    route.iter().filter(|&&c| grid.is_damaged(c)).count()
}

fn mdp_optimality() -> Verdict {
    let params = Params::default();
    let start = Instant::now();
    let (mut states, mut matched, mut global) = (0, 0, 0);
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut grid = Grid::new(6, 6, &[]).unwrap();
        let cells: Vec<CellId> = (0..36).collect();
        let mut pairs = Vec::new();
        while pairs.len() < 5 {
            let s = *cells.choose(&mut rng).unwrap();
            let d = *cells.choose(&mut rng).unwrap();
            if grid.manhattan(s, d) >= 4 && !pairs.iter().any(|&(a, b)| a == s || b == d || a == d || b == s) {
                pairs.push((s, d));
            }
        }
        for c in 0..36 {
            let endpoint = pairs.iter().any(|&(s, d)| s == c || d == c);
            if !endpoint && rng.gen_bool(0.15) {
                grid.set_damage(c, true);
            }
        }
        let cases: Vec<(MdpState, Vec<RouteAction>, usize)> = pairs
            .iter()
            .map(|&(s, d)| {
                let state = MdpState {
                    source: s,
                    destination: d,
                };
                let max_hops = grid.manhattan(s, d) + 4;
                (state, enumerate_actions(&grid, state, max_hops, 8, &|_| true), max_hops)
            })
            .collect();
        let exploration = 8;
        let kappa = 0.25;
        let mut table = MdpTable::new(exploration, 0.0);
        let mut x = AccessibilityMap::new(grid.len(), params.initial_accessibility);
        for cycle in 1..=exploration {
            for (state, actions, _) in &cases {
                let sel = table.select_action(*state, actions, x.values(), cycle, &mut rng);
                let walk = walk_route(&grid, &actions[sel.index].cells, params.observation_radius);
                for &(c, damaged) in &walk.readings {
                    x.observe(c, damaged, kappa, cycle);
                }
                table.mark_explored(*state, &actions[sel.index]);
            }
        }
        for (state, actions, max_hops) in &cases {
            let sel = table.select_action(*state, actions, x.values(), exploration + 1, &mut rng);
            assert_eq!(sel.choice, Choice::Exploit);
            let chosen = penalty(&grid, &actions[sel.index].cells);
            let best_action = actions.iter().map(|a| penalty(&grid, &a.cells)).min().unwrap();
            let longest = actions.iter().map(RouteAction::hops).max().unwrap().min(*max_hops);
            let best_any = all_simple_paths(&grid, state.source, state.destination, longest)
                .iter()
                .map(|p| penalty(&grid, p))
                .min()
                .unwrap();
            states += 1;
            matched += usize::from(chosen == best_action);
            global += usize::from(chosen == best_any);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let rate = matched as f64 / states as f64;
    verdict(
        rate >= 0.95 && secs < 30.0,
        format!(
            "exploited route has the least damage among the K routes in {matched}/{states} states ({:.1}%), among all simple paths of the same length bound in {global}/{states}; {secs:.2} s",
            100.0 * rate
        ),
    )
}

// ---------------------------------------------------------------------------
// accessibility and step size

fn accessibility_dynamics() -> Verdict {
    let cases = [(0.5, 0.15), (0.6, 0.2), (0.7, 0.1), (0.3, 0.1), (1.0, 0.65), (0.5, 0.5), (0.9, 0.07), (0.1, 0.3)];
    let mut bad = Vec::new();
    for &(x0, kappa) in &cases {
        let expected = (x0 / kappa - 1e-9_f64).ceil() as u32;
        let mut x = AccessibilityMap::new(1, x0);
        let mut visits = 0;
        while x.get(0) > 0.0 && visits < 1000 {
            visits += 1;
            x.observe(0, true, kappa, visits);
        }
        if visits != expected {
            bad.push(format!("X0={x0} kappa={kappa}: {visits} visits, expected {expected}"));
        }
    }
    verdict(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} (X0, kappa) pairs reach 0 in exactly ceil(X0/kappa) visits", cases.len())
        } else {
            bad.join("; ")
        },
    )
}

fn kappa_correlation() -> Verdict {
    let floor = Params::default().kappa_floor;
    let run = |series: &[(f64, f64)]| {
        let mut w = KappaWindow::new(series.len(), floor, 0.65);
        let mut k = 0.0;
        for &(d, e) in series {
            k = w.update(d, e);
        }
        k
    };
    let up = run(&[(1.0, 2.0), (2.0, 4.0), (3.0, 6.0), (5.0, 10.0)]);
    let down = run(&[(1.0, 8.0), (2.0, 6.0), (3.0, 4.0), (4.0, 2.0)]);
    let flat = run(&[(3.0, 1.0), (3.0, 5.0), (3.0, 9.0)]);
    let single = run(&[(4.0, 7.0)]);
    let pass = up == 1.0 && down == floor && flat == 0.65 && single == 0.65;
    verdict(
        pass,
        format!("r=+1 gives {up}, r=-1 gives {down} (floor {floor}), undefined gives {flat} and {single}"),
    )
}

// ---------------------------------------------------------------------------
// controller

fn pid_step_response() -> Verdict {
    let params = IncentiveParams {
        gains: PidGains {
            kp: 0.11,
            ki: 0.67,
            kd: 0.38,
        },
        ..IncentiveParams::default()
    };
    let bound = params.windup_bound();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for &e in &[0.3, -0.45, 1.7] {
        let mut pid = PidState::default();
        for t in 1..=40u32 {
            let ramp = e * t as f64;
            if ramp.abs() > bound {
                break;
            }
            let step = pid.step(&params, params.setpoint - e);
            let derivative = if t == 1 { e } else { 0.0 };
            let expected = 0.11 * e + 0.67 * ramp + 0.38 * derivative;
            worst = worst.max((step.adjustment - expected).abs());
            checked += 1;
        }
    }
    verdict(
        worst <= 1e-9,
        format!("{checked} steps before the windup bound, max deviation from kp*e + ki*t*e {worst:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// whole runs

fn determinism() -> Verdict {
    let scenario = Scenario::reference();
    let cfg = RunConfig {
        seed: 42,
        ..RunConfig::default()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let result = run_with(&scenario, &cfg, RunOptions { trace: true }).unwrap();
        write_run(d.path(), &result).unwrap();
    }
    let mut names: Vec<String> = std::fs::read_dir(dirs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| std::fs::read(dirs[0].path().join(n)).ok() != std::fs::read(dirs[1].path().join(n)).ok())
        .collect();
    verdict(
        differing.is_empty() && names.len() >= 5,
        format!("{} files compared, differing: {differing:?}", names.len()),
    )
}

fn reference_sweep() -> (SweepReport, Duration) {
    let start = Instant::now();
    let plan = SweepPlan {
        base: RunConfig::default(),
        schemes: SchemeId::ALL.to_vec(),
        seeds: (1..=10).collect(),
        axis: SweepAxis::None,
    };
    let report = sweep(&Scenario::reference(), &plan).unwrap();
    (report, start.elapsed())
}

fn f1_ordering(report: &SweepReport, elapsed: Duration) -> Verdict {
    let f1 = |s| report.median("base", s).unwrap().f1;
    let (dasc, no_mdp, social, random) = (
        f1(SchemeId::Dasc),
        f1(SchemeId::DascNoMdp),
        f1(SchemeId::SocialCar),
        f1(SchemeId::Random),
    );
    let pass = report.failures() == 0
        && dasc > no_mdp
        && dasc > social
        && dasc - random >= 0.05
        && elapsed.as_secs_f64() < 300.0;
    verdict(
        pass,
        format!(
            "median F1 DASC {dasc:.4}, no-MDP {no_mdp:.4}, SocialCar {social:.4}, Random {random:.4}; sweep of all schemes {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn hit_rate_ordering(report: &SweepReport) -> Verdict {
    let rate = |s| report.median("base", s).unwrap().deadline_hit_rate;
    let dasc = rate(SchemeId::Dasc);
    let others: Vec<String> = SchemeId::ALL
        .iter()
        .filter(|&&s| s != SchemeId::Dasc)
        .map(|&s| format!("{} {:.4}", s.name(), rate(s)))
        .collect();
    let beaten: Vec<&str> = SchemeId::ALL
        .iter()
        .filter(|&&s| s != SchemeId::Dasc && rate(s) > dasc)
        .map(|s| s.name())
        .collect();
    verdict(
        beaten.is_empty(),
        format!("DASC {dasc:.4} vs {}; higher: {beaten:?}", others.join(", ")),
    )
}

fn churn_robustness() -> Verdict {
    let shares = vec![0.0, 1.0 / 3.0, 2.0 / 3.0];
    let plan = SweepPlan {
        base: RunConfig::default(),
        schemes: vec![SchemeId::Dasc, SchemeId::Random],
        seeds: (1..=10).collect(),
        axis: SweepAxis::AborterShare(shares),
    };
    let report = sweep(&Scenario::reference(), &plan).unwrap();
    let points: Vec<String> = report
        .medians
        .iter()
        .filter(|m| m.scheme == SchemeId::Dasc)
        .map(|m| m.point.clone())
        .collect();
    let dasc: Vec<f64> = points.iter().map(|p| report.median(p, SchemeId::Dasc).unwrap().f1).collect();
    let random: Vec<f64> = points.iter().map(|p| report.median(p, SchemeId::Random).unwrap().f1).collect();
    let monotone = dasc.windows(2).all(|w| w[1] <= w[0]);
    let ahead = dasc.iter().zip(&random).all(|(d, r)| d > r);
    verdict(
        report.failures() == 0 && monotone && ahead,
        format!("median F1 over aborter shares 0, 1/3, 2/3: DASC {dasc:.4?}, Random {random:.4?}"),
    )
}

// ---------------------------------------------------------------------------
// reward scaling

fn argmax_set(game: &Game, car: usize, picks: &[Option<usize>]) -> BTreeSet<usize> {
    let utils: Vec<f64> = (0..game.tasks()).map(|n| game.utility_of(car, n, picks)).collect();
    let best = utils.iter().copied().fold(0.0, f64::max);
    if best <= 0.0 {
        return BTreeSet::new();
    }
    (0..game.tasks())
        .filter(|&n| utils[n] >= best * (1.0 - 1e-9))
        .collect()
}

fn argmax_invariance() -> Verdict {
    let params = UtilityParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut mismatches = 0;
    let n = 100;
    for i in 0..n {
        let inst = random_instance(&mut rng);
        let c = 10f64.powf(rng.gen_range(-3.0..3.0));
        let plain = Game::new(inst.reputation.clone(), base_matrix(&inst, 1.0, &params), &params);
        let scaled = Game::new(inst.reputation.clone(), base_matrix(&inst, c, &params), &params);
        let picks: Vec<Option<usize>> = (0..plain.cars())
            .map(|_| rng.gen_bool(0.8).then(|| rng.gen_range(0..plain.tasks())))
            .collect();
        let same_sets = (0..plain.cars()).all(|car| argmax_set(&plain, car, &picks) == argmax_set(&scaled, car, &picks));
        let a = best_response_allocate(&plain, &mut ChaCha8Rng::seed_from_u64(i));
        let b = best_response_allocate(&scaled, &mut ChaCha8Rng::seed_from_u64(i));
        if !same_sets || a.picks != b.picks {
            mismatches += 1;
        }
    }
    verdict(
        mismatches == 0,
        format!("{} of {n} instances keep every best-response set and the allocation under reward scaling", n - mismatches),
    )
}

// ---------------------------------------------------------------------------
// invariants over random scenarios

fn random_scenario(rng: &mut ChaCha8Rng) -> Scenario {
    let (w, h) = (rng.gen_range(4..=9), rng.gen_range(4..=9));
    let mut grid = GridSpec::open(w, h);
    if w >= 5 && h >= 5 && rng.gen_bool(0.5) {
        grid.blocked_rects.push(Rect {
            x: rng.gen_range(1..w - 2),
            y: rng.gen_range(1..h - 2),
            w: 1,
            h: 1,
        });
    }
    let mut sc = Scenario::reference();
    sc.name = "fuzz".into();
    sc.cycles = rng.gen_range(2..=6);
    sc.grid = grid;
    sc.fleet = Fleet {
        completers: rng.gen_range(0..=4),
        aborters: rng.gen_range(0..=4),
        refusers: rng.gen_range(1..=4),
        abort_prob: rng.gen_range(0.0..0.3),
    };
    sc.damage.appear_prob = rng.gen_range(0.0..0.15);
    sc.damage.repair_prob = rng.gen_range(0.0..0.3);
    let lo = rng.gen_range(0..4);
    sc.synthetic = Some(SyntheticEvents {
        per_cycle: [lo, lo + rng.gen_range(0..5)],
        true_fraction: rng.gen_range(0.2..0.9),
        ..SyntheticEvents::default()
    });
    sc
}

fn invariant_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let probe = MdpTable::new(1, 0.1);
    let sigma_range = 0.0..=probe.sigma_max;
    let mut problems: Vec<String> = Vec::new();
    let mut checks = 0u64;
    for i in 0..200 {
        let sc = random_scenario(&mut rng);
        let cfg = RunConfig {
            scheme: *SchemeId::ALL.choose(&mut rng).unwrap(),
            seed: rng.gen(),
            ..RunConfig::default()
        };
        let r = match run_with(&sc, &cfg, RunOptions { trace: true }) {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("scenario {i}: {e}"));
                continue;
            }
        };
        checks += r.audit.checks;
        if r.audit.violations > 0 {
            problems.push(format!("scenario {i}: {:?}", r.audit.examples));
        }
        for rec in &r.trace {
            match rec {
                TraceRecord::Route { probabilities, sigma, .. } => {
                    let sum: f64 = probabilities.iter().sum();
                    if (sum - 1.0).abs() > 1e-9 || probabilities.iter().any(|&p| p < 0.0) {
                        problems.push(format!("scenario {i}: route probabilities sum to {sum}"));
                    }
                    if !sigma_range.contains(sigma) {
                        problems.push(format!("scenario {i}: sigma {sigma}"));
                    }
                }
                TraceRecord::Incentive { reward, .. } => {
                    if *reward < cfg.params.incentives.reward_floor() - 1e-12 {
                        problems.push(format!("scenario {i}: reward {reward} below floor"));
                    }
                }
                _ => {}
            }
        }
        let s = &r.summary;
        let terminal = r.tasks.iter().all(|t| {
            matches!(t.status, TaskStatus::Verified | TaskStatus::DeadlineMissed | TaskStatus::Unresolved)
        });
        let conserved = s.tasks_created as usize == r.tasks.len()
            && s.tasks_verified + s.tasks_missed + s.tasks_unresolved == s.tasks_created;
        if !terminal || !conserved {
            problems.push(format!("scenario {i}: task statuses not conserved"));
        }
    }
    problems.truncate(5);
    verdict(
        problems.is_empty(),
        if problems.is_empty() {
            format!("200 random scenarios, {checks} engine checks plus trace and task checks, no violations")
        } else {
            problems.join("; ")
        },
    )
}

fn main() {
    // `cargo test -- --list` and filters expect a harness; honor --list quietly
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut results: Vec<(&str, Verdict)> = Vec::new();
    let mut record = |name, v: Verdict| {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {name}: {}", v.detail);
        results.push((name, v));
    };
    record("1 equilibrium certification", psne_certification());
    record("2 route choice avoids damage", mdp_optimality());
    record("3 accessibility reaches zero", accessibility_dynamics());
    record("4 step size from correlation", kappa_correlation());
    record("5 controller step response", pid_step_response());
    record("6 determinism", determinism());
    let (report, elapsed) = reference_sweep();
    record("7 F1 ordering", f1_ordering(&report, elapsed));
    record("8 deadline hit rate ordering", hit_rate_ordering(&report));
    record("9 robustness to aborters", churn_robustness());
    record("10 reward scaling invariance", argmax_invariance());
    record("11 invariant suite", invariant_suite());
    let failed = results.iter().filter(|(_, v)| !v.pass).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
