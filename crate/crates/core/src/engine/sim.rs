use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use rand::Rng;

use super::baselines::{incentive_picks, nearest_picks, patrol_tour, random_picks, reputation_picks};
use super::metrics::{Confusion, CycleMetrics, DeadlineLog, Metrics};
use super::trace::{AllocatedTask, Audit, CarPick, TraceRecord};
use super::{fleet_behaviors, Behavior, RunOptions, RunResult, SchemeId, Summary, TaskReport, TaskStatus};
use crate::allocation::{base_utility, best_response_allocate, congestion_rate, BoardTask, Game, Reputation, Scale};
use crate::config::{Params, RunConfig};
use crate::incentives::{aggregate_reputation, ChurnMonitor, PidState};
use crate::rng::{stream, stream_with, SimRng, Stream};
use crate::routing::{enumerate_actions, RouteAction, greedy_accessibility_route, observe_penalty, MdpState, MdpTable};
use crate::scenario::{Scenario, World};
use crate::scouting::{select_scouts, sense_around, AccessibilityMap, CoveragePlanner, KappaWindow};
use crate::social::{estimate_truth, gate_dispatch, ingest_cycle, split_event, EventId, SocialReport, WeightedVoting};
use crate::world::{seed_damage, step_damage, CellId, DamageProcess, DamageState, GroundTruthEvent, Grid};

#[derive(Debug, Clone)]
enum Role {
    Idle,
    Scout {
        route: Vec<CellId>,
        next: usize,
        left: usize,
    },
    Task {
        task: usize,
        route: Vec<CellId>,
        next: usize,
        /// Knowledge version at which no route was found.
        stuck: Option<u64>,
    },
    Patrol {
        /// Tour index of the last queued cell.
        idx: usize,
        queue: VecDeque<CellId>,
    },
}

#[derive(Debug, Clone)]
struct Driver {
    behavior: Behavior,
    position: CellId,
    role: Role,
    resting: bool,
    patrol: bool,
    /// Cells found damaged on the current trip (damage-oblivious routing).
    bumped: Vec<CellId>,
    abort_rng: SimRng,
}

#[derive(Debug, Clone)]
struct Task {
    event: usize,
    cell: CellId,
    part: u32,
    parts: u32,
    release: f64,
    deadline: f64,
    confidence: f64,
    reward: f64,
    pid: PidState,
    status: TaskStatus,
    holders: Vec<usize>,
    /// Some car took the task on at some point.
    accepted: bool,
}

#[derive(Debug, Clone)]
struct EventRecord {
    id: EventId,
    cell: CellId,
    truth: bool,
    estimate: Option<bool>,
    /// Pieces not yet terminal.
    open: u32,
    tasks: Vec<usize>,
}

pub(super) struct Simulation<'a> {
    scheme: SchemeId,
    seed: u64,
    params: &'a Params,
    cycles: u32,
    abort_prob: f64,
    options: RunOptions,
    process: DamageProcess,
    damage_state: DamageState,
    grid: Grid,
    truth: HashMap<(u32, CellId), bool>,
    ground_truth: Vec<GroundTruthEvent>,
    reports: BTreeMap<u32, Vec<SocialReport>>,
    drivers: Vec<Driver>,
    reputation: Reputation,
    known: Vec<bool>,
    version: u64,
    access: AccessibilityMap,
    x_snapshot: Vec<f64>,
    kappa: KappaWindow,
    mdp: MdpTable,
    estimator: WeightedVoting,
    events: Vec<EventRecord>,
    tasks: Vec<Task>,
    open_at: BTreeMap<CellId, Vec<usize>>,
    churn: ChurnMonitor,
    churn_fired: bool,
    dirty: bool,
    tour: Vec<CellId>,
    cycle: u32,
    now: f64,
    prior_known: Vec<bool>,
    seen_now: Vec<Option<bool>>,
    detected_now: HashSet<CellId>,
    executed: Vec<(usize, MdpState, Vec<CellId>)>,
    alloc_counter: u64,
    route_counter: u64,
    /// Candidate routes by (source, destination, hop limit), valid for one
    /// knowledge version.
    action_cache: (u64, HashMap<(CellId, CellId, usize), Vec<RouteAction>>),
    scout_covered: HashSet<(CellId, CellId)>,
    cm: CycleMetrics,
    deadlines: DeadlineLog,
    trace: Vec<TraceRecord>,
    audit: Audit,
    diagnostics: Vec<String>,
    per_cycle: Vec<CycleMetrics>,
    access_error: (f64, u32),
}

impl<'a> Simulation<'a> {
    pub(super) fn new(scenario: &Scenario, world: World, cfg: &'a RunConfig, options: RunOptions) -> Self {
        let params = &cfg.params;
        let mut grid = world.grid;
        seed_damage(&mut grid, &scenario.damage);
        let n = grid.len();
        let behaviors = fleet_behaviors(&scenario.fleet);
        let mut drivers: Vec<Driver> = behaviors
            .iter()
            .zip(&world.start_cells)
            .enumerate()
            .map(|(id, (&behavior, &position))| Driver {
                behavior,
                position,
                role: Role::Idle,
                resting: false,
                patrol: false,
                bumped: Vec::new(),
                abort_rng: stream_with(cfg.seed, 0, Stream::Abort, id as u64),
            })
            .collect();
        let mut tour = Vec::new();
        if cfg.scheme == SchemeId::FixedRoute {
            if let Some(start) = grid.open_cells().next() {
                tour = patrol_tour(&grid, start);
                if tour.len() > 1 {
                    tour.pop();
                }
            }
            let fleet: Vec<usize> = (0..drivers.len())
                .filter(|&c| drivers[c].behavior != Behavior::Refuser)
                .take(params.patrol_fleet)
                .collect();
            for (i, &car) in fleet.iter().enumerate() {
                let idx = i * tour.len() / fleet.len();
                let d = &mut drivers[car];
                d.patrol = true;
                d.position = tour[idx];
                d.role = Role::Patrol {
                    idx,
                    queue: VecDeque::new(),
                };
            }
        }
        let mut reports: BTreeMap<u32, Vec<SocialReport>> = BTreeMap::new();
        let mut diagnostics = Vec::new();
        for r in world.reports {
            let cycle = (r.timestamp_min / params.cycle_length_min).floor() as i64 + 1;
            if r.timestamp_min < 0.0 || cycle > scenario.cycles as i64 {
                diagnostics.push(format!(
                    "report from source {} at {} min falls outside the run",
                    r.source_id, r.timestamp_min
                ));
                continue;
            }
            reports.entry(cycle as u32).or_default().push(r);
        }
        let truth = world.events.iter().map(|e| ((e.cycle, e.cell), e.state)).collect();
        let mut mdp = MdpTable::new(params.exploration_for(scenario.cycles), params.mdp_epsilon);
        mdp.sigma_min = 0.01;
        Simulation {
            scheme: cfg.scheme,
            seed: cfg.seed,
            params,
            cycles: scenario.cycles,
            abort_prob: scenario.fleet.abort_prob,
            options,
            process: scenario.damage.clone(),
            damage_state: DamageState::new(&grid),
            reputation: Reputation::new(drivers.len(), params.initial_reputation, params.eta),
            known: vec![false; n],
            version: 0,
            access: AccessibilityMap::new(n, params.initial_accessibility),
            x_snapshot: vec![params.initial_accessibility; n],
            kappa: KappaWindow::new(params.kappa_window, params.kappa_floor, params.kappa_default),
            mdp,
            estimator: WeightedVoting::new(params.prior_mass),
            events: Vec::new(),
            tasks: Vec::new(),
            open_at: BTreeMap::new(),
            churn: ChurnMonitor::new(params.churn_threshold),
            churn_fired: false,
            dirty: false,
            tour,
            cycle: 0,
            now: 0.0,
            prior_known: vec![false; n],
            seen_now: vec![None; n],
            detected_now: HashSet::new(),
            executed: Vec::new(),
            alloc_counter: 0,
            route_counter: 0,
            action_cache: (0, HashMap::new()),
            scout_covered: HashSet::new(),
            cm: CycleMetrics::default(),
            deadlines: DeadlineLog::default(),
            trace: Vec::new(),
            audit: Audit::default(),
            diagnostics,
            per_cycle: Vec::new(),
            access_error: (0.0, 0),
            grid,
            truth,
            ground_truth: world.events,
            reports,
            drivers,
        }
    }

    fn quantum(&self) -> f64 {
        self.params.travel_min_per_cell
    }

    fn eligible(&self, car: usize) -> bool {
        let d = &self.drivers[car];
        d.behavior != Behavior::Refuser && !d.resting && !d.patrol && !matches!(d.role, Role::Scout { .. })
    }

    fn active_tasks(&self) -> usize {
        self.tasks.iter().filter(|t| t.status == TaskStatus::Active).count()
    }

    pub(super) fn run(mut self) -> RunResult {
        for t in 1..=self.cycles {
            self.run_cycle(t);
        }
        self.finish()
    }

    fn run_cycle(&mut self, t: u32) {
        let len = self.params.cycle_length_min;
        let start = (t - 1) as f64 * len;
        self.cycle = t;
        self.now = start;
        self.cm = CycleMetrics {
            cycle: t,
            ..Default::default()
        };
        self.churn.start_cycle();
        self.churn_fired = false;
        self.reputation.reset_counts();
        step_damage(
            &mut self.grid,
            &self.process,
            &mut self.damage_state,
            t,
            &mut stream(self.seed, t, Stream::Damage),
        );
        self.prior_known = self.known.clone();
        self.seen_now = vec![None; self.grid.len()];
        self.detected_now.clear();
        self.executed.clear();
        self.scout_covered.clear();
        self.x_snapshot = self.access.values().to_vec();
        for (id, d) in self.drivers.iter_mut().enumerate() {
            d.resting = false;
            d.abort_rng = stream_with(self.seed, t, Stream::Abort, id as u64);
            if matches!(d.role, Role::Scout { .. }) {
                d.role = Role::Idle;
            }
        }

        let claims = self.ingest(t, start);
        if self.scheme.uses_scouts() {
            self.dispatch_scouts(t);
        }
        if self.scheme.uses_game() {
            self.step_controllers();
        }
        self.release_due(start);
        self.allocate(true);
        self.dirty = false;

        let steps = self.params.steps_per_cycle();
        for s in 0..steps {
            let end = start + (s + 1) as f64 * self.quantum();
            self.now = end;
            for car in 0..self.drivers.len() {
                self.step_driver(car);
            }
            self.expire(end);
            self.release_due(end);
            if self.churn_fired {
                self.churn_fired = false;
                self.step_controllers();
                self.allocate(true);
                self.dirty = false;
            } else if self.dirty {
                self.dirty = false;
                self.allocate(false);
            }
        }
        self.close_cycle(claims);
    }

    /// Ingest this cycle's reports, estimate, gate and queue tasks.
    /// Returns the number of claim groups.
    fn ingest(&mut self, t: u32, start: f64) -> usize {
        let len = self.params.cycle_length_min;
        let batch = self.reports.remove(&t).unwrap_or_default();
        let (groups, diags) = ingest_cycle(&batch, t, len, &self.grid);
        self.cm.rejected_reports = diags.len() as u32;
        for d in diags {
            self.diagnostics.push(format!("cycle {t} report {}: {}", d.report, d.reason));
        }
        let estimates = estimate_truth(&groups, &mut self.estimator, self.params.confidence_scale);
        let (concluded, dispatch) = gate_dispatch(estimates, self.params.confidence_threshold);
        self.cm.events_reported = groups.len() as u32;
        self.cm.concluded = concluded.len() as u32;
        for c in concluded {
            let truth = self.truth.get(&(t, c.estimate.cell)).copied().unwrap_or(false);
            self.events.push(EventRecord {
                id: c.estimate.id,
                cell: c.estimate.cell,
                truth,
                estimate: Some(c.value),
                open: 0,
                tasks: Vec::new(),
            });
        }
        for e in dispatch {
            let truth = self.truth.get(&(t, e.cell)).copied().unwrap_or(false);
            let idx = self.events.len();
            let pieces = split_event(&e, len);
            let mut record = EventRecord {
                id: e.id,
                cell: e.cell,
                truth,
                estimate: None,
                open: pieces.len() as u32,
                tasks: Vec::new(),
            };
            for p in pieces {
                let release = start + p.release_offset_min;
                record.tasks.push(self.tasks.len());
                self.tasks.push(Task {
                    event: idx,
                    cell: p.cell,
                    part: p.part,
                    parts: p.parts,
                    release,
                    deadline: release + p.deadline_min,
                    confidence: p.confidence,
                    reward: self.params.incentives.base_reward,
                    pid: PidState::default(),
                    status: TaskStatus::Pending,
                    holders: Vec::new(),
                    accepted: self.scheme == SchemeId::FixedRoute,
                });
                self.cm.tasks_created += 1;
            }
            self.open_at.entry(e.cell).or_default().push(idx);
            self.events.push(record);
        }
        groups.len()
    }

    fn dispatch_scouts(&mut self, t: u32) {
        let willing: Vec<usize> = (0..self.drivers.len())
            .filter(|&c| self.drivers[c].behavior != Behavior::Refuser && !self.drivers[c].patrol)
            .collect();
        let scouts = select_scouts(&willing, self.params.scout_percent, &mut stream(self.seed, t, Stream::Scouts));
        let budget = self.params.scout_moves();
        let mut planner = CoveragePlanner::new(&self.grid, &self.known);
        let mut plans = Vec::with_capacity(scouts.len());
        for &car in &scouts {
            plans.push((car, planner.plan_route(self.drivers[car].position, budget)));
        }
        self.scout_covered = planner.into_covered();
        for (car, route) in plans {
            self.release_car(car, true);
            self.drivers[car].role = Role::Scout {
                route,
                next: 1,
                left: budget,
            };
        }
        self.cm.scouts = scouts.len() as u32;
    }

    /// Take a car off its task without an outcome.
    fn release_car(&mut self, car: usize, counted: bool) {
        if let Role::Task { task, .. } = self.drivers[car].role {
            self.tasks[task].holders.retain(|&c| c != car);
            if counted {
                self.cm.reassigned += 1;
            }
        }
        self.drivers[car].role = Role::Idle;
    }

    fn step_controllers(&mut self) {
        for n in 0..self.tasks.len() {
            if self.tasks[n].status == TaskStatus::Active {
                self.step_controller(n);
            }
        }
    }

    fn step_controller(&mut self, n: usize) {
        let task = &mut self.tasks[n];
        let e = aggregate_reputation(&task.holders, self.reputation.values());
        let step = task.pid.step(&self.params.incentives, e);
        task.reward = step.reward;
        self.audit.check(step.reward >= self.params.incentives.reward_floor() - 1e-12, || {
            format!("task {n} reward {} below floor", step.reward)
        });
        if self.options.trace {
            self.trace.push(TraceRecord::Incentive {
                cycle: self.cycle,
                task: n,
                aggregate: step.aggregate,
                error: step.error,
                adjustment: step.adjustment,
                reward: step.reward,
            });
        }
    }

    fn release_due(&mut self, now: f64) {
        for n in 0..self.tasks.len() {
            let task = &self.tasks[n];
            if task.status == TaskStatus::Pending && task.release <= now + 1e-9 {
                self.tasks[n].status = TaskStatus::Active;
                if self.scheme.uses_game() {
                    self.step_controller(n);
                }
                self.dirty = true;
            }
        }
    }

    /// Hop distances from `from` as the scheme sees the roads. Cells believed
    /// damaged get a distance but are not expanded, so a task on a damaged
    /// cell can still be approached.
    fn distances(&self, from: CellId) -> Vec<Option<u32>> {
        let aware = self.scheme.damage_aware();
        let mut dist = vec![None; self.grid.len()];
        dist[from] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(c) = queue.pop_front() {
            let d = dist[c].unwrap_or(0);
            for &n in self.grid.neighbors(c) {
                if dist[n].is_none() {
                    dist[n] = Some(d + 1);
                    if !(aware && self.known[n]) {
                        queue.push_back(n);
                    }
                }
            }
        }
        dist
    }

    fn allocate(&mut self, full: bool) {
        if self.scheme == SchemeId::FixedRoute {
            return;
        }
        let cars: Vec<usize> = (0..self.drivers.len())
            .filter(|&c| self.eligible(c) && (full || matches!(self.drivers[c].role, Role::Idle)))
            .collect();
        let tasks: Vec<usize> = (0..self.tasks.len())
            .filter(|&n| {
                self.tasks[n].status == TaskStatus::Active && (full || self.tasks[n].holders.is_empty())
            })
            .collect();
        if cars.is_empty() || tasks.is_empty() {
            return;
        }
        self.alloc_counter += 1;
        self.cm.allocations += 1;
        let dist: Vec<Vec<Option<u32>>> = cars
            .iter()
            .map(|&c| {
                let d = self.distances(self.drivers[c].position);
                tasks.iter().map(|&n| d[self.tasks[n].cell]).collect()
            })
            .collect();
        let remaining: Vec<f64> = tasks
            .iter()
            .map(|&n| (self.tasks[n].deadline - self.now).max(0.0))
            .collect();
        let scale = Scale {
            cycle_length_min: self.params.cycle_length_min,
            travel_min_per_cell: self.params.travel_min_per_cell,
        };
        let picks = match self.scheme {
            SchemeId::Dasc | SchemeId::DascNoMdp | SchemeId::SocialCar => {
                self.game_picks(full, &cars, &tasks, &dist, &remaining, &scale)
            }
            SchemeId::Random => {
                let mut rng = stream_with(self.seed, self.cycle, Stream::Baseline, self.alloc_counter);
                random_picks(cars.len(), tasks.len(), &mut rng)
            }
            SchemeId::ShortestDistance => nearest_picks(&dist, tasks.len()),
            SchemeId::ReputationBased => {
                let rep: Vec<f64> = cars.iter().map(|&c| self.reputation.get(c)).collect();
                reputation_picks(&rep, &remaining)
            }
            SchemeId::IncentiveBased => incentive_picks(
                &dist,
                &remaining,
                self.params.incentives.base_reward,
                self.params.travel_min_per_cell,
                scale.max_hops(),
            ),
            SchemeId::FixedRoute => unreachable!("patrols are not allocated"),
        };
        for (i, &car) in cars.iter().enumerate() {
            if let Some(j) = picks[i] {
                self.assign(car, tasks[j]);
            }
        }
    }

    fn game_picks(
        &mut self,
        full: bool,
        cars: &[usize],
        tasks: &[usize],
        dist: &[Vec<Option<u32>>],
        remaining: &[f64],
        scale: &Scale,
    ) -> Vec<Option<usize>> {
        let board: Vec<BoardTask> = tasks
            .iter()
            .zip(remaining)
            .map(|(&n, &r)| BoardTask {
                reward: self.tasks[n].reward,
                remaining_min: r,
                confidence: self.tasks[n].confidence,
            })
            .collect();
        let base: Vec<Vec<f64>> = dist
            .iter()
            .map(|row| {
                board
                    .iter()
                    .zip(row)
                    .map(|(b, &d)| base_utility(b, d, &self.params.utility, scale))
                    .collect()
            })
            .collect();
        let reps: Vec<f64> = cars.iter().map(|&c| self.reputation.get(c)).collect();
        let mut game = Game::new(reps.clone(), base, &self.params.utility);
        game.keep_coverage = self.params.keep_coverage;
        let mut rng = stream_with(self.seed, self.cycle, Stream::AllocationOrder, self.alloc_counter);
        let alloc = best_response_allocate(&game, &mut rng);
        if !alloc.certified {
            self.cm.uncertified += 1;
        }
        for (i, pick) in alloc.picks.iter().enumerate() {
            if let Some(n) = pick {
                let rivals = alloc
                    .picks
                    .iter()
                    .enumerate()
                    .filter(|&(p, q)| p != i && q == pick)
                    .map(|(p, _)| reps[p]);
                let gamma = congestion_rate(reps[i], rivals, &self.params.utility);
                self.audit.check(gamma >= self.params.utility.epsilon, || {
                    format!("congestion {gamma} below floor for car {} on task {}", cars[i], tasks[*n])
                });
            }
        }
        if self.options.trace {
            let lists = alloc.pick_lists(tasks.len());
            self.trace.push(TraceRecord::Allocation {
                cycle: self.cycle,
                time_min: self.now,
                full,
                certified: alloc.certified,
                tasks: tasks
                    .iter()
                    .zip(&board)
                    .zip(lists)
                    .map(|((&n, b), picks)| AllocatedTask {
                        task: n,
                        event: self.events[self.tasks[n].event].id.to_string(),
                        reward: b.reward,
                        picks: picks.into_iter().map(|i| cars[i]).collect(),
                    })
                    .collect(),
                cars: cars
                    .iter()
                    .enumerate()
                    .map(|(i, &car)| CarPick {
                        car,
                        task: alloc.picks[i].map(|j| tasks[j]),
                        utility: alloc.pick_utility[i],
                        best_deviation: alloc.best_deviation[i],
                    })
                    .collect(),
            });
        }
        alloc.picks
    }

    fn assign(&mut self, car: usize, task: usize) {
        if let Role::Task { task: cur, .. } = self.drivers[car].role {
            if cur == task {
                return;
            }
        }
        self.release_car(car, true);
        self.drivers[car].bumped.clear();
        self.tasks[task].holders.push(car);
        self.tasks[task].accepted = true;
        let route = self.route_for(car, self.tasks[task].cell, self.tasks[task].deadline - self.now);
        let stuck = route.is_none().then_some(self.version);
        self.drivers[car].role = Role::Task {
            task,
            route: route.unwrap_or_else(|| vec![self.drivers[car].position]),
            next: 1,
            stuck,
        };
    }

    /// A route from the car's position to `target` under the scheme's rule.
    fn route_for(&mut self, car: usize, target: CellId, remaining: f64) -> Option<Vec<CellId>> {
        let from = self.drivers[car].position;
        if from == target {
            return Some(vec![from]);
        }
        let known = &self.known;
        let passable = |c: CellId| !known[c] || c == target;
        match self.scheme {
            SchemeId::Dasc => {
                let state = MdpState {
                    source: from,
                    destination: target,
                };
                let max_hops = (remaining.max(0.0) / self.quantum()).floor() as usize;
                if self.action_cache.0 != self.version {
                    self.action_cache = (self.version, HashMap::new());
                }
                let actions = self
                    .action_cache
                    .1
                    .entry((from, target, max_hops))
                    .or_insert_with(|| enumerate_actions(&self.grid, state, max_hops, self.params.route_k, &passable))
                    .clone();
                if actions.is_empty() {
                    return self.grid.shortest_path(from, target, passable);
                }
                self.route_counter += 1;
                let mut rng = stream_with(self.seed, self.cycle, Stream::Routing, self.route_counter);
                let sel = self.mdp.select_action(state, &actions, &self.x_snapshot, self.cycle, &mut rng);
                let sum: f64 = sel.probabilities.iter().sum();
                self.audit.check(
                    (sum - 1.0).abs() < 1e-9 && sel.probabilities.iter().all(|&p| p >= 0.0),
                    || format!("route probabilities sum to {sum}"),
                );
                let route = actions[sel.index].cells.clone();
                self.mdp.mark_explored(state, &actions[sel.index]);
                if self.options.trace {
                    self.trace.push(TraceRecord::Route {
                        cycle: self.cycle,
                        car,
                        source: from,
                        destination: target,
                        cells: route.clone(),
                        probabilities: sel.probabilities,
                        choice: sel.choice,
                        sigma: self.mdp.sigma,
                    });
                }
                self.executed.push((car, state, route.clone()));
                Some(route)
            }
            SchemeId::DascNoMdp => {
                greedy_accessibility_route(&self.grid, from, target, &self.x_snapshot, &passable)
            }
            SchemeId::SocialCar => {
                let bumped = &self.drivers[car].bumped;
                self.grid
                    .shortest_path(from, target, |c| c == target || !bumped.contains(&c))
            }
            _ => self.grid.shortest_path(from, target, passable),
        }
    }

    /// Record what a car at `cell` sees. `entered` marks the cell it moved onto.
    fn sense(&mut self, car: usize, cell: CellId, entered: bool) {
        let readings = if entered {
            sense_around(&self.grid, cell, self.params.observation_radius)
        } else {
            vec![(cell, self.grid.is_damaged(cell))]
        };
        let kappa = self.kappa.kappa();
        for (c, damaged) in readings {
            self.seen_now[c] = Some(damaged);
            if damaged {
                self.detected_now.insert(c);
            }
            let changed = self.known[c] != damaged;
            if changed {
                self.known[c] = damaged;
                self.version += 1;
            }
            if self.options.trace && (changed || damaged) {
                self.trace.push(TraceRecord::DamageObservation {
                    cycle: self.cycle,
                    cell: c,
                    damaged,
                    observer: car,
                });
            }
            if damaged || (entered && c == cell) {
                self.access.observe(c, damaged, kappa, self.cycle);
            }
        }
        if entered {
            self.passive_verify(cell);
        }
    }

    fn passive_verify(&mut self, cell: CellId) {
        let Some(list) = self.open_at.get(&cell) else { return };
        let open: Vec<usize> = list.iter().copied().filter(|&e| self.events[e].open > 0).collect();
        for e in open {
            self.verify_event(e);
        }
    }

    fn verify_event(&mut self, e: usize) {
        if self.events[e].open == 0 {
            return;
        }
        self.events[e].estimate = Some(self.events[e].truth);
        self.events[e].open = 0;
        self.cm.verified += 1;
        for i in 0..self.events[e].tasks.len() {
            let n = self.events[e].tasks[i];
            let task = &mut self.tasks[n];
            if !task.status.is_terminal() {
                task.status = TaskStatus::Verified;
                if task.accepted {
                    self.deadlines.hits += 1;
                    self.cm.deadlines.hits += 1;
                }
            }
            // cars still heading there have nothing left to sense
            for car in std::mem::take(&mut self.tasks[n].holders) {
                self.drivers[car].role = Role::Idle;
                self.dirty = true;
            }
        }
        self.close_event(e);
    }

    fn close_event(&mut self, e: usize) {
        let cell = self.events[e].cell;
        if let Some(list) = self.open_at.get_mut(&cell) {
            list.retain(|&x| x != e);
            if list.is_empty() {
                self.open_at.remove(&cell);
            }
        }
    }

    /// Reputation update for one car's assignment; drops are also logged.
    fn record_outcome(&mut self, car: usize, success: bool, dropped: bool) {
        self.reputation.record(car, success);
        if dropped {
            self.deadlines.drops += 1;
            self.cm.deadlines.drops += 1;
        }
    }

    fn arrive(&mut self, car: usize, task: usize) {
        self.tasks[task].holders.retain(|&c| c != car);
        self.drivers[car].role = Role::Idle;
        self.dirty = true;
        let on_time = self.now <= self.tasks[task].deadline + 1e-9;
        self.record_outcome(car, on_time, false);
        if on_time && self.tasks[task].status == TaskStatus::Active {
            let e = self.tasks[task].event;
            self.verify_event(e);
        }
    }

    fn drop_task(&mut self, car: usize, task: usize) {
        self.tasks[task].holders.retain(|&c| c != car);
        self.drivers[car].role = Role::Idle;
        self.drivers[car].resting = true;
        self.dirty = true;
        self.record_outcome(car, false, true);
        let active = self.active_tasks();
        if self.scheme.uses_game() && self.churn.record_drop(active) {
            self.churn_fired = true;
            self.cm.churn_triggers += 1;
        }
    }

    fn step_driver(&mut self, car: usize) {
        let abort_draw = if self.drivers[car].behavior == Behavior::Aborter {
            Some(self.drivers[car].abort_rng.gen::<f64>())
        } else {
            None
        };
        let role = std::mem::replace(&mut self.drivers[car].role, Role::Idle);
        let role = match role {
            Role::Idle => Role::Idle,
            Role::Task {
                task,
                route,
                next,
                stuck,
            } => {
                if abort_draw.is_some_and(|u| u < self.fleet_abort_prob()) {
                    self.drop_task(car, task);
                    return;
                }
                self.step_task(car, task, route, next, stuck)
            }
            Role::Scout { route, next, left } => self.step_scout(car, route, next, left),
            Role::Patrol { idx, queue } => self.step_patrol(car, idx, queue),
        };
        if !matches!(self.drivers[car].role, Role::Idle) {
            // the step already set a new role (arrival handled inside)
            return;
        }
        self.drivers[car].role = role;
    }

    fn fleet_abort_prob(&self) -> f64 {
        self.abort_prob
    }

    fn move_to(&mut self, car: usize, c: CellId) {
        self.audit.check(!self.grid.is_blocked(c) && !self.grid.is_damaged(c), || {
            format!("car {car} entered unusable cell {c}")
        });
        self.drivers[car].position = c;
        self.sense(car, c, true);
    }

    fn step_task(
        &mut self,
        car: usize,
        task: usize,
        mut route: Vec<CellId>,
        mut next: usize,
        mut stuck: Option<u64>,
    ) -> Role {
        let target = self.tasks[task].cell;
        if self.drivers[car].position == target {
            self.arrive(car, task);
            return Role::Idle;
        }
        if next >= route.len() || stuck.is_some() {
            if stuck == Some(self.version) {
                return Role::Task {
                    task,
                    route,
                    next,
                    stuck,
                };
            }
            match self.route_for(car, target, self.tasks[task].deadline - self.now) {
                Some(r) => {
                    route = r;
                    next = 1;
                    stuck = None;
                }
                None => {
                    return Role::Task {
                        task,
                        route,
                        next,
                        stuck: Some(self.version),
                    }
                }
            }
        }
        let c = route[next];
        if self.grid.is_damaged(c) {
            self.sense(car, c, false);
            if c == target {
                self.arrive(car, task);
                return Role::Idle;
            }
            if !self.scheme.damage_aware() {
                self.drivers[car].bumped.push(c);
            }
            let (route, stuck) = match self.route_for(car, target, self.tasks[task].deadline - self.now) {
                Some(r) => (r, None),
                None => (route, Some(self.version)),
            };
            return Role::Task {
                task,
                route,
                next: 1,
                stuck,
            };
        }
        let before = self.version;
        self.move_to(car, c);
        next += 1;
        if c == target {
            self.arrive(car, task);
            return Role::Idle;
        }
        // damage-aware cars reroute as soon as they learn the way ahead is cut
        if self.scheme.damage_aware()
            && self.version != before
            && route[next..].iter().any(|&x| x != target && self.known[x])
        {
            match self.route_for(car, target, self.tasks[task].deadline - self.now) {
                Some(r) => {
                    route = r;
                    next = 1;
                }
                None => {
                    stuck = Some(self.version);
                }
            }
        }
        Role::Task {
            task,
            route,
            next,
            stuck,
        }
    }

    fn replan_scout(&mut self, from: CellId, budget: usize) -> Vec<CellId> {
        let covered = std::mem::take(&mut self.scout_covered);
        let mut planner = CoveragePlanner::with_covered(&self.grid, &self.known, covered);
        let route = planner.plan_route(from, budget);
        self.scout_covered = planner.into_covered();
        route
    }

    fn step_scout(&mut self, car: usize, mut route: Vec<CellId>, mut next: usize, mut left: usize) -> Role {
        if left == 0 {
            return Role::Scout { route, next, left };
        }
        if next >= route.len() {
            route = self.replan_scout(self.drivers[car].position, left);
            next = 1;
            if route.len() < 2 {
                return Role::Scout {
                    route,
                    next,
                    left: 0,
                };
            }
        }
        let c = route[next];
        if self.grid.is_damaged(c) {
            self.sense(car, c, false);
            let route = self.replan_scout(self.drivers[car].position, left);
            return Role::Scout { route, next: 1, left };
        }
        self.move_to(car, c);
        left -= 1;
        next += 1;
        Role::Scout { route, next, left }
    }

    fn step_patrol(&mut self, car: usize, mut idx: usize, mut queue: VecDeque<CellId>) -> Role {
        let len = self.tour.len();
        if len < 2 {
            return Role::Patrol { idx, queue };
        }
        if queue.is_empty() {
            idx = (idx + 1) % len;
            queue.push_back(self.tour[idx]);
        }
        let c = *queue.front().expect("queued");
        if c == self.drivers[car].position {
            queue.pop_front();
            return Role::Patrol { idx, queue };
        }
        if self.grid.is_damaged(c) || !self.grid.are_adjacent(self.drivers[car].position, c) {
            if self.grid.is_damaged(c) {
                self.sense(car, c, false);
            }
            queue.clear();
            let from = self.drivers[car].position;
            for k in 0..len {
                let j = (idx + k) % len;
                let cand = self.tour[j];
                if cand == from || self.known[cand] {
                    continue;
                }
                let known = &self.known;
                if let Some(path) = self.grid.shortest_path(from, cand, |x| !known[x]) {
                    queue.extend(&path[1..]);
                    idx = j;
                    break;
                }
            }
            return Role::Patrol { idx, queue };
        }
        queue.pop_front();
        self.move_to(car, c);
        Role::Patrol { idx, queue }
    }

    /// Close tasks that can no longer be reached in time.
    fn expire(&mut self, now: f64) {
        let q = self.quantum();
        for n in 0..self.tasks.len() {
            let task = &self.tasks[n];
            let late = now + q > task.deadline + 1e-9;
            if !late || task.status == TaskStatus::Pending {
                continue;
            }
            let holders = std::mem::take(&mut self.tasks[n].holders);
            for car in holders {
                self.drivers[car].role = Role::Idle;
                self.record_outcome(car, false, false);
                self.dirty = true;
            }
            if self.tasks[n].status == TaskStatus::Active {
                self.tasks[n].status = TaskStatus::DeadlineMissed;
                if self.tasks[n].accepted {
                    self.deadlines.misses += 1;
                    self.cm.deadlines.misses += 1;
                }
                let e = self.tasks[n].event;
                self.events[e].open -= 1;
                if self.events[e].open == 0 {
                    self.cm.unresolved += 1;
                    self.close_event(e);
                }
            }
        }
    }

    fn close_cycle(&mut self, claims: usize) {
        if self.scheme == SchemeId::Dasc {
            let executed = std::mem::take(&mut self.executed);
            for (car, state, route) in executed {
                let penalty = observe_penalty(&route, &self.prior_known, &self.seen_now);
                self.mdp.record_penalty(penalty);
                if self.options.trace {
                    self.trace.push(TraceRecord::RoutePenalty {
                        cycle: self.cycle,
                        car,
                        source: state.source,
                        destination: state.destination,
                        penalty,
                    });
                }
            }
            let sigma = self.mdp.end_cycle();
            self.audit.check(
                (self.mdp.sigma_min..=self.mdp.sigma_max).contains(&sigma),
                || format!("sigma {sigma} out of range"),
            );
        }
        self.kappa.update(self.detected_now.len() as f64, claims as f64);
        let x_ok = self.access.values().iter().all(|x| (0.0..=1.0).contains(x));
        self.audit.check(x_ok, || format!("accessibility out of range in cycle {}", self.cycle));
        let pi_ok = self.reputation.values().iter().all(|p| (0.0..=1.0).contains(p));
        self.audit.check(pi_ok, || format!("reputation out of range in cycle {}", self.cycle));
        let mut err = 0.0;
        let mut open = 0;
        for c in self.grid.open_cells() {
            let passable = if self.grid.is_damaged(c) { 0.0 } else { 1.0 };
            err += (self.access.get(c) - passable).abs();
            open += 1;
        }
        if open > 0 {
            self.access_error.0 += err / open as f64;
            self.access_error.1 += 1;
        }
        self.cm.sigma = self.mdp.sigma;
        self.cm.kappa = self.kappa.kappa();
        self.cm.damaged_cells = self.grid.open_cells().filter(|&c| self.grid.is_damaged(c)).count() as u32;
        self.cm.damage_detected = self.detected_now.len() as u32;
        self.cm.known_damaged = self.known.iter().filter(|&&k| k).count() as u32;
        self.per_cycle.push(std::mem::take(&mut self.cm));
    }

    fn finish(mut self) -> RunResult {
        let mut unresolved_now = 0;
        for n in 0..self.tasks.len() {
            if !self.tasks[n].status.is_terminal() {
                self.tasks[n].status = TaskStatus::Unresolved;
                if self.tasks[n].accepted {
                    self.deadlines.misses += 1;
                    if let Some(last) = self.per_cycle.last_mut() {
                        last.deadlines.misses += 1;
                    }
                }
                self.tasks[n].holders.clear();
            }
        }
        for e in &mut self.events {
            if e.open > 0 {
                e.open = 0;
                unresolved_now += 1;
            }
        }
        if let Some(last) = self.per_cycle.last_mut() {
            last.unresolved += unresolved_now;
        }
        let terminal = self.tasks.iter().all(|t| t.status.is_terminal());
        self.audit.check(terminal, || "a task ended without a terminal status".into());

        // score every ground-truth event by its report cycle and cell
        let estimates: HashMap<(u32, CellId), Option<bool>> = self
            .events
            .iter()
            .map(|e| ((e.id.cycle, e.cell), e.estimate))
            .collect();
        let mut confusion = Confusion::default();
        let mut by_cycle: BTreeMap<u32, Confusion> = BTreeMap::new();
        for g in &self.ground_truth {
            let est = estimates.get(&(g.cycle, g.cell)).copied().flatten();
            confusion.add(g.state, est);
            by_cycle.entry(g.cycle).or_default().add(g.state, est);
        }
        for cm in &mut self.per_cycle {
            cm.confusion = by_cycle.get(&cm.cycle).copied().unwrap_or_default();
        }
        let unscored = self
            .events
            .iter()
            .filter(|e| !self.truth.contains_key(&(e.id.cycle, e.cell)))
            .count() as u32;
        let metrics = Metrics::from_parts(confusion, self.deadlines);
        let count = |s: TaskStatus| self.tasks.iter().filter(|t| t.status == s).count() as u32;
        let sum = |f: fn(&CycleMetrics) -> u32| self.per_cycle.iter().map(f).sum::<u32>();
        let summary = Summary {
            scheme: self.scheme,
            seed: self.seed,
            cycles: self.cycles,
            cars: self.drivers.len(),
            events_scored: self.ground_truth.len() as u32,
            events_unscored: unscored,
            tp: confusion.tp,
            fp: confusion.fp,
            tn: confusion.tn,
            fn_: confusion.fn_,
            accuracy: metrics.accuracy.value,
            precision: metrics.precision.value,
            precision_defined: metrics.precision.defined,
            recall: metrics.recall.value,
            recall_defined: metrics.recall.defined,
            f1: metrics.f1.value,
            f1_defined: metrics.f1.defined,
            deadline_hits: self.deadlines.hits,
            deadline_misses: self.deadlines.misses,
            drops: self.deadlines.drops,
            deadline_hit_rate: metrics.deadline_hit_rate.value,
            hit_rate_defined: metrics.deadline_hit_rate.defined,
            tasks_created: self.tasks.len() as u32,
            tasks_verified: count(TaskStatus::Verified),
            tasks_missed: count(TaskStatus::DeadlineMissed),
            tasks_unresolved: count(TaskStatus::Unresolved),
            reassignments: sum(|c| c.reassigned),
            allocations: sum(|c| c.allocations),
            uncertified_allocations: sum(|c| c.uncertified),
            churn_triggers: sum(|c| c.churn_triggers),
            rejected_reports: self.diagnostics.len() as u32,
            sigma: self.mdp.sigma,
            sigma_cap_hits: self.mdp.cap_hits,
            kappa: self.kappa.kappa(),
            access_error: if self.access_error.1 > 0 {
                self.access_error.0 / self.access_error.1 as f64
            } else {
                0.0
            },
        };
        let tasks = self
            .tasks
            .iter()
            .map(|t| TaskReport {
                event: self.events[t.event].id.to_string(),
                cell: t.cell,
                part: t.part,
                parts: t.parts,
                release_min: t.release,
                deadline_min: t.deadline,
                status: t.status,
            })
            .collect();
        RunResult {
            summary,
            metrics,
            cycles: self.per_cycle,
            tasks,
            trace: self.trace,
            diagnostics: self.diagnostics,
            audit: self.audit,
        }
    }
}
