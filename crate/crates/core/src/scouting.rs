//! Road-damage discovery: scout selection, coverage planning, damage
//! observation and the per-cell accessibility index.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet, VecDeque};

use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use crate::world::{CellId, Grid};

/// Per-cell belief that a cell is passable, in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AccessibilityMap {
    values: Vec<f64>,
    initial: f64,
    last_visited: Vec<Option<u32>>,
}

impl AccessibilityMap {
    pub fn new(cells: usize, initial: f64) -> Self {
        let initial = initial.clamp(0.0, 1.0);
        AccessibilityMap {
            values: vec![initial; cells],
            initial,
            last_visited: vec![None; cells],
        }
    }

    pub fn get(&self, c: CellId) -> f64 {
        self.values[c]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    pub fn last_visited(&self, c: CellId) -> Option<u32> {
        self.last_visited[c]
    }

    /// Move a visited cell's index by `kappa`: down when damage was seen,
    /// up otherwise. A cell moves at most once per cycle; later calls in
    /// the same cycle are ignored and return `false`.
    pub fn observe(&mut self, c: CellId, damaged: bool, kappa: f64, cycle: u32) -> bool {
        if self.last_visited[c] == Some(cycle) {
            return false;
        }
        self.last_visited[c] = Some(cycle);
        let step = if damaged { -kappa } else { kappa };
        let mut v = (self.values[c] + step).clamp(0.0, 1.0);
        // drop rounding residue so k steps of kappa land exactly on a bound
        if v < 1e-12 {
            v = 0.0;
        } else if v > 1.0 - 1e-12 {
            v = 1.0;
        }
        self.values[c] = v;
        true
    }

    pub fn set(&mut self, c: CellId, value: f64) {
        self.values[c] = value.clamp(0.0, 1.0);
    }
}

/// Sliding window of (damages detected, events reported) per cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaWindow {
    pub length: usize,
    pub floor: f64,
    pub default: f64,
    entries: VecDeque<(f64, f64)>,
    kappa: f64,
}

impl KappaWindow {
    pub fn new(length: usize, floor: f64, default: f64) -> Self {
        KappaWindow {
            length: length.max(1),
            floor,
            default,
            entries: VecDeque::new(),
            kappa: default,
        }
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn entries(&self) -> impl Iterator<Item = &(f64, f64)> {
        self.entries.iter()
    }

    /// Push this cycle's totals and recompute the step size.
    pub fn update(&mut self, damages: f64, events: f64) -> f64 {
        if self.entries.len() == self.length {
            self.entries.pop_front();
        }
        self.entries.push_back((damages, events));
        self.kappa = match pearson(self.entries.iter().copied()) {
            Some(r) => r.clamp(self.floor, 1.0),
            None => self.default,
        };
        self.kappa
    }
}

/// Sample correlation; `None` with fewer than two points or zero variance.
pub fn pearson(points: impl Iterator<Item = (f64, f64)> + Clone) -> Option<f64> {
    let n = points.clone().count();
    if n < 2 {
        return None;
    }
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n as f64, sy / n as f64);
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (x, y) in points {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx <= 1e-12 || vy <= 1e-12 {
        return None;
    }
    Some((cov / (vx.sqrt() * vy.sqrt())).clamp(-1.0, 1.0))
}

/// Choose `floor(q/100 * |willing|)` scouts uniformly at random, returned
/// in ascending id order.
pub fn select_scouts<R: Rng + ?Sized>(willing: &[usize], q_percent: f64, rng: &mut R) -> Vec<usize> {
    let q = q_percent.clamp(0.0, 100.0);
    let count = ((q / 100.0) * willing.len() as f64 + 1e-9).floor() as usize;
    let count = count.min(willing.len());
    let mut chosen: Vec<usize> = sample(rng, willing.len(), count)
        .into_iter()
        .map(|i| willing[i])
        .collect();
    chosen.sort_unstable();
    chosen
}

/// The double-sweep approximation of a diameter: the cell farthest from
/// `start`, then the cell farthest from that one.
pub fn farthest_pair(grid: &Grid, start: CellId, passable: &dyn Fn(CellId) -> bool) -> (CellId, CellId) {
    let far = |from: CellId| {
        grid.distances_from(from, passable)
            .iter()
            .enumerate()
            .filter_map(|(c, d)| d.map(|d| (d, Reverse(c))))
            .max()
            .map(|(_, Reverse(c))| c)
            .unwrap_or(from)
    };
    let a = far(start);
    (a, far(a))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoutRoute {
    pub car: usize,
    pub cells: Vec<CellId>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ScoutPlan {
    pub routes: Vec<ScoutRoute>,
    /// Distinct road edges covered by the union of routes.
    pub covered_edges: usize,
}

fn edge(a: CellId, b: CellId) -> (CellId, CellId) {
    (a.min(b), a.max(b))
}

/// Plans scout walks that spread over as many distinct edges as possible.
/// Routes never enter cells rejected by the passability mask, and a single
/// scout never reuses an edge.
#[derive(Debug, Clone)]
pub struct CoveragePlanner<'a> {
    grid: &'a Grid,
    passable: Vec<bool>,
    covered: HashSet<(CellId, CellId)>,
    /// Extra cost of traversing an edge some scout already covered.
    pub revisit_penalty: f64,
}

impl<'a> CoveragePlanner<'a> {
    /// `known_damaged` cells are avoided.
    pub fn new(grid: &'a Grid, known_damaged: &[bool]) -> Self {
        let passable = (0..grid.len())
            .map(|c| !grid.is_blocked(c) && !known_damaged[c])
            .collect();
        CoveragePlanner {
            grid,
            passable,
            covered: HashSet::new(),
            revisit_penalty: 4.0,
        }
    }

    /// Continue from edges already covered earlier in the cycle.
    pub fn with_covered(grid: &'a Grid, known_damaged: &[bool], covered: HashSet<(CellId, CellId)>) -> Self {
        CoveragePlanner {
            covered,
            ..Self::new(grid, known_damaged)
        }
    }

    pub fn into_covered(self) -> HashSet<(CellId, CellId)> {
        self.covered
    }

    pub fn covered_edges(&self) -> usize {
        self.covered.len()
    }

    pub fn mark_impassable(&mut self, c: CellId) {
        self.passable[c] = false;
    }

    fn uncovered_edge_at(&self, c: CellId, own: &HashSet<(CellId, CellId)>) -> bool {
        self.grid.neighbors(c).iter().any(|&n| {
            self.passable[n] && !self.covered.contains(&edge(c, n)) && !own.contains(&edge(c, n))
        })
    }

    /// Hop distances from `from` without reusing `own` edges.
    fn reach(&self, from: CellId, own: &HashSet<(CellId, CellId)>) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.grid.len()];
        dist[from] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(c) = queue.pop_front() {
            let d = dist[c].unwrap_or(0);
            for &n in self.grid.neighbors(c) {
                if dist[n].is_none() && self.passable[n] && !own.contains(&edge(c, n)) {
                    dist[n] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    /// A* from `from` to `to`, with covered edges costing extra and `own`
    /// edges forbidden. The heuristic is the exact hop distance to `to`,
    /// which never overestimates since every edge costs at least one.
    fn astar(&self, from: CellId, to: CellId, own: &HashSet<(CellId, CellId)>) -> Option<Vec<CellId>> {
        let h = self.grid.distances_from(to, |c| self.passable[c] || c == from);
        let n = self.grid.len();
        let mut g = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        let mut heap = BinaryHeap::new();
        g[from] = 0.0;
        let key = |f: f64| (f * 1024.0).round() as u64;
        heap.push(Reverse((key(h[from]? as f64), from)));
        let mut closed = vec![false; n];
        while let Some(Reverse((_, c))) = heap.pop() {
            if closed[c] {
                continue;
            }
            closed[c] = true;
            if c == to {
                let mut path = vec![to];
                let mut cur = to;
                while cur != from {
                    cur = prev[cur];
                    path.push(cur);
                }
                path.reverse();
                return Some(path);
            }
            for &m in self.grid.neighbors(c) {
                let e = edge(c, m);
                if !self.passable[m] || own.contains(&e) || closed[m] {
                    continue;
                }
                let Some(hm) = h[m] else { continue };
                let cost = 1.0 + if self.covered.contains(&e) { self.revisit_penalty } else { 0.0 };
                let tentative = g[c] + cost;
                if tentative < g[m] {
                    g[m] = tentative;
                    prev[m] = c;
                    heap.push(Reverse((key(tentative + hm as f64), m)));
                }
            }
        }
        None
    }

    /// Route for one scout from `start` using at most `budget` moves.
    /// Each leg heads for the farthest reachable cell that still touches an
    /// uncovered edge. Covered edges are added to the shared set.
    pub fn plan_route(&mut self, start: CellId, budget: usize) -> Vec<CellId> {
        let mut route = vec![start];
        let mut own: HashSet<(CellId, CellId)> = HashSet::new();
        let mut cur = start;
        while route.len() - 1 < budget {
            let dist = self.reach(cur, &own);
            let target = dist
                .iter()
                .enumerate()
                .filter(|&(c, d)| d.is_some() && c != cur && self.uncovered_edge_at(c, &own))
                .map(|(c, d)| (d.unwrap_or(0), Reverse(c)))
                .max()
                .map(|(_, Reverse(c))| c);
            let target = match target {
                Some(t) => t,
                // the current cell itself may still have an uncovered edge
                None => match self.grid.neighbors(cur).iter().copied().find(|&n| {
                    self.passable[n] && !own.contains(&edge(cur, n)) && !self.covered.contains(&edge(cur, n))
                }) {
                    Some(n) => n,
                    None => break,
                },
            };
            let Some(leg) = self.astar(cur, target, &own) else {
                break;
            };
            for w in leg.windows(2) {
                if route.len() - 1 >= budget {
                    break;
                }
                let e = edge(w[0], w[1]);
                own.insert(e);
                self.covered.insert(e);
                route.push(w[1]);
                cur = w[1];
            }
        }
        route
    }
}

/// Plan coverage for every scout in order, sharing covered edges so later
/// scouts spread out.
pub fn plan_coverage(
    grid: &Grid,
    known_damaged: &[bool],
    scouts: &[(usize, CellId)],
    budget: usize,
) -> ScoutPlan {
    let mut planner = CoveragePlanner::new(grid, known_damaged);
    let routes = scouts
        .iter()
        .map(|&(car, start)| ScoutRoute {
            car,
            cells: planner.plan_route(start, budget),
        })
        .collect();
    ScoutPlan {
        routes,
        covered_edges: planner.covered_edges(),
    }
}

/// Distinct edges covered by a set of routes.
pub fn edges_covered(routes: &[Vec<CellId>]) -> usize {
    routes
        .iter()
        .flat_map(|r| r.windows(2).map(|w| edge(w[0], w[1])))
        .collect::<HashSet<_>>()
        .len()
}

/// One damage reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DamageObservation {
    pub cycle: u32,
    pub cell: CellId,
    pub damaged: bool,
    pub observer: usize,
}

/// What a walker standing on `cell` sees: the cell itself first, then
/// every road cell within `radius` hops with its true state. Sight does not
/// pass beyond a damaged cell.
pub fn sense_around(grid: &Grid, cell: CellId, radius: u32) -> Vec<(CellId, bool)> {
    let mut out = vec![(cell, grid.is_damaged(cell))];
    if radius == 0 {
        return out;
    }
    let mut dist = vec![u32::MAX; grid.len()];
    dist[cell] = 0;
    let mut queue = VecDeque::from([cell]);
    while let Some(c) = queue.pop_front() {
        if dist[c] == radius {
            continue;
        }
        for &n in grid.neighbors(c) {
            if dist[n] == u32::MAX {
                dist[n] = dist[c] + 1;
                let damaged = grid.is_damaged(n);
                out.push((n, damaged));
                if !damaged {
                    queue.push_back(n);
                }
            }
        }
    }
    out
}

/// Result of walking a planned route over the true grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Walk {
    pub traversed: Vec<CellId>,
    pub readings: Vec<(CellId, bool)>,
    /// First damaged cell that stopped the walk, if any.
    pub blocked_at: Option<CellId>,
}

/// Advance along `route` until the next cell is damaged, sensing as it goes.
pub fn walk_route(grid: &Grid, route: &[CellId], radius: u32) -> Walk {
    let mut walk = Walk::default();
    let Some(&start) = route.first() else {
        return walk;
    };
    walk.traversed.push(start);
    walk.readings.extend(sense_around(grid, start, radius));
    for &c in &route[1..] {
        if grid.is_damaged(c) {
            walk.readings.push((c, true));
            walk.blocked_at = Some(c);
            break;
        }
        walk.traversed.push(c);
        walk.readings.extend(sense_around(grid, c, radius));
    }
    walk
}

/// Run scouts over the true grid: each follows its plan, and on hitting
/// damage marks it and replans from where it stands with the budget left.
/// Returns per-scout walked routes and all readings, in scout order.
pub fn run_scouts(
    grid: &Grid,
    known_damaged: &[bool],
    scouts: &[(usize, CellId)],
    budget: usize,
    radius: u32,
) -> (Vec<ScoutRoute>, Vec<(usize, CellId, bool)>) {
    let mut planner = CoveragePlanner::new(grid, known_damaged);
    let mut walked = Vec::new();
    let mut readings = Vec::new();
    for &(car, start) in scouts {
        let mut path = vec![start];
        let mut left = budget;
        let mut replans = 0;
        loop {
            let here = *path.last().expect("non-empty");
            let plan = planner.plan_route(here, left);
            let walk = walk_route(grid, &plan, radius);
            readings.extend(walk.readings.iter().map(|&(c, d)| (car, c, d)));
            left -= walk.traversed.len() - 1;
            path.extend(&walk.traversed[1..]);
            match walk.blocked_at {
                Some(c) if left > 0 && replans < budget => {
                    planner.mark_impassable(c);
                    replans += 1;
                }
                _ => break,
            }
        }
        walked.push(ScoutRoute { car, cells: path });
    }
    (walked, readings)
}
