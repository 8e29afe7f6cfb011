//! Route selection as a source-destination MDP.
//!
//! Actions for a state are the K shortest loopless routes. Each route is
//! weighted by the product of accessibility over its cells times a global
//! penalty differential, weights are normalized, and a contextual
//! epsilon-greedy schedule picks one: explore unseen routes first, then
//! mostly exploit the best-weighted route.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use rand::Rng;
use serde::Serialize;

use crate::world::{CellId, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct MdpState {
    pub source: CellId,
    pub destination: CellId,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct RouteAction {
    pub cells: Vec<CellId>,
}

impl RouteAction {
    /// Number of moves along the route.
    pub fn hops(&self) -> usize {
        self.cells.len().saturating_sub(1)
    }
}

/// BFS path avoiding banned cells and banned (undirected, `a < b`) edges.
/// Reusable BFS buffers. A cell counts as seen when its stamp equals the
/// current generation, so buffers need no clearing between searches.
struct Scratch {
    prev: Vec<CellId>,
    stamp: Vec<u32>,
    banned: Vec<u32>,
    generation: u32,
    queue: VecDeque<CellId>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch {
            prev: vec![usize::MAX; n],
            stamp: vec![0; n],
            banned: vec![0; n],
            generation: 0,
            queue: VecDeque::new(),
        }
    }

    fn next_generation(&mut self) -> u32 {
        self.generation += 1;
        self.generation
    }
}

/// BFS shortest path avoiding cells stamped banned in generation `ban` and
/// the listed undirected edges.
fn restricted_path(
    grid: &Grid,
    from: CellId,
    to: CellId,
    passable: &dyn Fn(CellId) -> bool,
    ban: u32,
    banned_edges: &[(CellId, CellId)],
    s: &mut Scratch,
) -> Option<Vec<CellId>> {
    if from == to {
        return Some(vec![from]);
    }
    let gen = s.next_generation();
    s.stamp[from] = gen;
    s.queue.clear();
    s.queue.push_back(from);
    while let Some(c) = s.queue.pop_front() {
        for &n in grid.neighbors(c) {
            if s.stamp[n] == gen || (ban != 0 && s.banned[n] == ban) || !passable(n) {
                continue;
            }
            if banned_edges.contains(&(c.min(n), c.max(n))) {
                continue;
            }
            s.stamp[n] = gen;
            s.prev[n] = c;
            if n == to {
                let mut path = vec![to];
                let mut cur = to;
                while cur != from {
                    cur = s.prev[cur];
                    path.push(cur);
                }
                path.reverse();
                return Some(path);
            }
            s.queue.push_back(n);
        }
    }
    None
}

/// Up to `k` shortest simple paths from `from` to `to` in nondecreasing
/// length order (Yen's algorithm on unit edge weights). Only cells accepted
/// by `passable` are entered; the source is always allowed. Paths longer
/// than `max_hops` are dropped.
pub fn k_shortest_paths(
    grid: &Grid,
    from: CellId,
    to: CellId,
    k: usize,
    max_hops: usize,
    passable: &dyn Fn(CellId) -> bool,
) -> Vec<Vec<CellId>> {
    if k == 0 || !grid.contains(from) || !grid.contains(to) {
        return Vec::new();
    }
    if grid.is_blocked(from) || grid.is_blocked(to) {
        return Vec::new();
    }
    if from == to {
        return vec![vec![from]];
    }
    let mut scratch = Scratch::new(grid.len());
    let Some(first) = restricted_path(grid, from, to, passable, 0, &[], &mut scratch) else {
        return Vec::new();
    };
    if first.len() - 1 > max_hops {
        return Vec::new();
    }
    let mut found: Vec<Vec<CellId>> = vec![first];
    let mut candidates: BTreeSet<(usize, Vec<CellId>)> = BTreeSet::new();
    while found.len() < k {
        let last = found.last().expect("at least one path").clone();
        for i in 0..last.len() - 1 {
            let spur = last[i];
            let root = &last[..=i];
            let mut banned_edges = Vec::new();
            for p in &found {
                if p.len() > i + 1 && &p[..=i] == root {
                    let (a, b) = (p[i], p[i + 1]);
                    banned_edges.push((a.min(b), a.max(b)));
                }
            }
            let ban = scratch.next_generation();
            for &c in &root[..i] {
                scratch.banned[c] = ban;
            }
            if let Some(spur_path) =
                restricted_path(grid, spur, to, passable, ban, &banned_edges, &mut scratch)
            {
                let mut total = root[..i].to_vec();
                total.extend(spur_path);
                if total.len() - 1 <= max_hops && !found.contains(&total) {
                    candidates.insert((total.len(), total));
                }
            }
        }
        match candidates.pop_first() {
            Some((_, p)) => found.push(p),
            None => break,
        }
    }
    found
}

/// Every simple path from `from` to `to` with at most `max_hops` moves,
/// by exhaustive depth-first search. Ignores damage. Exponential; meant for
/// tiny grids and as a test oracle.
pub fn all_simple_paths(grid: &Grid, from: CellId, to: CellId, max_hops: usize) -> Vec<Vec<CellId>> {
    fn dfs(
        grid: &Grid,
        to: CellId,
        max_hops: usize,
        path: &mut Vec<CellId>,
        on_path: &mut [bool],
        out: &mut Vec<Vec<CellId>>,
    ) {
        let c = *path.last().expect("non-empty path");
        if c == to {
            out.push(path.clone());
            return;
        }
        if path.len() > max_hops {
            return;
        }
        for &n in grid.neighbors(c) {
            if !on_path[n] {
                on_path[n] = true;
                path.push(n);
                dfs(grid, to, max_hops, path, on_path, out);
                path.pop();
                on_path[n] = false;
            }
        }
    }
    let mut out = Vec::new();
    if grid.is_blocked(from) || grid.is_blocked(to) {
        return out;
    }
    let mut on_path = vec![false; grid.len()];
    on_path[from] = true;
    dfs(grid, to, max_hops, &mut vec![from], &mut on_path, &mut out);
    out
}

/// Candidate routes for a state: up to `k` shortest simple paths through
/// cells accepted by `passable` whose length fits `max_hops`.
pub fn enumerate_actions(
    grid: &Grid,
    state: MdpState,
    max_hops: usize,
    k: usize,
    passable: &dyn Fn(CellId) -> bool,
) -> Vec<RouteAction> {
    k_shortest_paths(grid, state.source, state.destination, k, max_hops, passable)
        .into_iter()
        .map(|cells| RouteAction { cells })
        .collect()
}

/// Raw route weight: `sigma` times the product of accessibility over the
/// route's cells.
pub fn route_weight(action: &RouteAction, accessibility: &[f64], sigma: f64) -> f64 {
    sigma * action.cells.iter().map(|&c| accessibility[c]).product::<f64>()
}

/// Normalized selection distribution over `actions`; uniform when every
/// weight is zero.
pub fn action_probabilities(actions: &[RouteAction], accessibility: &[f64], sigma: f64) -> Vec<f64> {
    let raw: Vec<f64> = actions
        .iter()
        .map(|a| route_weight(a, accessibility, sigma))
        .collect();
    normalize(&raw)
}

fn normalize(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    if raw.is_empty() {
        Vec::new()
    } else if total > 0.0 && total.is_finite() {
        raw.iter().map(|w| w / total).collect()
    } else {
        vec![1.0 / raw.len() as f64; raw.len()]
    }
}

/// Penalty observed along an executed route. A cell counts when this
/// cycle's observation says damaged, or when it went unobserved and was
/// believed damaged beforehand. An observed repair counts zero.
pub fn observe_penalty(route: &[CellId], prior: &[bool], observed: &[Option<bool>]) -> u32 {
    route
        .iter()
        .filter(|&&c| observed[c].unwrap_or(prior[c]))
        .count() as u32
}

fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let p = normalize(weights);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// How the chosen action was picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Explore,
    Exploit,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub index: usize,
    pub choice: Choice,
    pub probabilities: Vec<f64>,
}

/// Learned routing state shared by all cars in a run.
#[derive(Debug, Clone)]
pub struct MdpTable {
    pub sigma: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Cycles (1-based, inclusive) during which unexplored routes are preferred.
    pub exploration_cycles: u32,
    pub epsilon: f64,
    pub cap_hits: u32,
    explored: HashMap<MdpState, HashSet<Vec<CellId>>>,
    penalty_now: f64,
    penalty_prev: f64,
}

impl MdpTable {
    pub fn new(exploration_cycles: u32, epsilon: f64) -> Self {
        MdpTable {
            sigma: 1.0,
            sigma_min: 0.01,
            sigma_max: 10.0,
            exploration_cycles,
            epsilon,
            cap_hits: 0,
            explored: HashMap::new(),
            penalty_now: 0.0,
            penalty_prev: 0.0,
        }
    }

    pub fn is_explored(&self, state: MdpState, action: &RouteAction) -> bool {
        self.explored
            .get(&state)
            .is_some_and(|s| s.contains(&action.cells))
    }

    pub fn mark_explored(&mut self, state: MdpState, action: &RouteAction) {
        self.explored
            .entry(state)
            .or_default()
            .insert(action.cells.clone());
    }

    /// Pick a route. `accessibility` is the per-cell index the weights are
    /// built from. Ties in exploitation go to the route with the lowest
    /// expected damage `sum(1 - X)`, then the lowest index.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        state: MdpState,
        actions: &[RouteAction],
        accessibility: &[f64],
        cycle: u32,
        rng: &mut R,
    ) -> Selection {
        assert!(!actions.is_empty(), "select_action needs at least one action");
        let raw: Vec<f64> = actions
            .iter()
            .map(|a| route_weight(a, accessibility, self.sigma))
            .collect();
        let probabilities = normalize(&raw);
        if cycle <= self.exploration_cycles {
            let fresh: Vec<usize> = (0..actions.len())
                .filter(|&i| !self.is_explored(state, &actions[i]))
                .collect();
            if !fresh.is_empty() {
                let w: Vec<f64> = fresh.iter().map(|&i| probabilities[i]).collect();
                let index = fresh[sample_index(&w, rng)];
                return Selection {
                    index,
                    choice: Choice::Explore,
                    probabilities,
                };
            }
        }
        if self.epsilon > 0.0 && rng.gen::<f64>() < self.epsilon {
            let index = sample_index(&probabilities, rng);
            return Selection {
                index,
                choice: Choice::Sample,
                probabilities,
            };
        }
        let expected = |a: &RouteAction| -> f64 {
            a.cells.iter().map(|&c| 1.0 - accessibility[c]).sum()
        };
        let mut best = 0;
        for i in 1..actions.len() {
            let (pi, pb) = (probabilities[i], probabilities[best]);
            let better = if (pi - pb).abs() > 1e-12 * pb.max(pi).max(f64::MIN_POSITIVE) {
                pi > pb
            } else {
                expected(&actions[i]) < expected(&actions[best]) - 1e-12
            };
            if better {
                best = i;
            }
        }
        Selection {
            index: best,
            choice: Choice::Exploit,
            probabilities,
        }
    }

    /// Add an executed route's penalty to this cycle's total.
    pub fn record_penalty(&mut self, penalty: u32) {
        self.penalty_now += penalty as f64;
    }

    pub fn cycle_penalty(&self) -> f64 {
        self.penalty_now
    }

    /// Close the cycle: move sigma by the normalized change in total
    /// penalty and roll the totals over.
    pub fn end_cycle(&mut self) -> f64 {
        let (now, prev) = (self.penalty_now, self.penalty_prev);
        self.update_sigma(now, prev);
        self.penalty_prev = now;
        self.penalty_now = 0.0;
        self.sigma
    }

    pub fn update_sigma(&mut self, now: f64, prev: f64) -> f64 {
        let total = now + prev;
        if total <= 0.0 {
            return self.sigma;
        }
        let next = self.sigma - (now - prev) / total;
        if next > self.sigma_max {
            self.cap_hits += 1;
        }
        self.sigma = next.clamp(self.sigma_min, self.sigma_max);
        self.sigma
    }
}

/// One-step-lookahead route: from each cell move to the neighbor that stays
/// on a shortest path to `to` and has the highest accessibility (lowest
/// index on ties).
pub fn greedy_accessibility_route(
    grid: &Grid,
    from: CellId,
    to: CellId,
    accessibility: &[f64],
    passable: &dyn Fn(CellId) -> bool,
) -> Option<Vec<CellId>> {
    if from == to {
        return Some(vec![from]);
    }
    if !passable(to) || grid.is_blocked(to) {
        return None;
    }
    let dist = grid.distances_from(to, |c| c == from || passable(c));
    dist[from]?;
    let mut route = vec![from];
    let mut cur = from;
    while cur != to {
        let d = dist[cur].expect("on a shortest path");
        let next = grid
            .neighbors(cur)
            .iter()
            .copied()
            .filter(|&n| dist[n] == Some(d - 1) && passable(n))
            .fold(None::<CellId>, |best, n| match best {
                Some(b) if accessibility[b] >= accessibility[n] => Some(b),
                _ => Some(n),
            })?;
        route.push(next);
        cur = next;
    }
    Some(route)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    fn open(_: CellId) -> bool {
        true
    }

    fn state(source: CellId, destination: CellId) -> MdpState {
        MdpState {
            source,
            destination,
        }
    }

    #[test]
    fn corridor_has_one_action() {
        let g = Grid::new(3, 1, &[]).unwrap();
        let a = enumerate_actions(&g, state(0, 2), usize::MAX, 4, &open);
        assert_eq!(a, vec![RouteAction { cells: vec![0, 1, 2] }]);
    }

    #[test]
    fn ring_has_two_equal_actions() {
        let g = Grid::new(2, 2, &[]).unwrap();
        let a = enumerate_actions(&g, state(0, 3), usize::MAX, 4, &open);
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|x| x.hops() == 2));
        let mut oracle = all_simple_paths(&g, 0, 3, usize::MAX);
        oracle.sort();
        let mut got: Vec<_> = a.into_iter().map(|x| x.cells).collect();
        got.sort();
        assert_eq!(got, oracle);
    }

    #[test]
    fn blocked_destination_has_no_actions() {
        let g = Grid::new(3, 3, &[8]).unwrap();
        assert!(enumerate_actions(&g, state(0, 8), usize::MAX, 4, &open).is_empty());
    }

    #[test]
    fn deadline_budget_prunes_long_routes() {
        let g = Grid::new(3, 3, &[]).unwrap();
        let all = enumerate_actions(&g, state(0, 2), usize::MAX, 8, &open);
        let short = enumerate_actions(&g, state(0, 2), 2, 8, &open);
        assert!(all.len() > 1);
        assert_eq!(short.len(), 1);
    }

    #[test]
    fn yen_matches_exhaustive_ranking() {
        let g = Grid::new(4, 3, &[5]).unwrap();
        let mut oracle = all_simple_paths(&g, 0, 11, usize::MAX);
        oracle.sort_by_key(|p| p.len());
        let got = k_shortest_paths(&g, 0, 11, 6, usize::MAX, &open);
        assert_eq!(got.len(), 6);
        for (i, p) in got.iter().enumerate() {
            assert!(g.is_simple_path(p));
            assert_eq!(p.len(), oracle[i].len(), "rank {i}");
        }
    }

    #[test]
    fn probability_examples() {
        let x = vec![0.5, 0.8, 0.1, 0.0];
        let single = [RouteAction { cells: vec![0, 1] }];
        assert!((route_weight(&single[0], &x, 1.0) - 0.4).abs() < 1e-12);
        assert_eq!(action_probabilities(&single, &x, 1.0), vec![1.0]);

        let two = [RouteAction { cells: vec![0, 1] }, RouteAction { cells: vec![2] }];
        let p = action_probabilities(&two, &x, 1.0);
        assert!((p[0] - 0.8).abs() < 1e-12 && (p[1] - 0.2).abs() < 1e-12);

        let dead = [RouteAction { cells: vec![3] }, RouteAction { cells: vec![3, 0] }];
        assert_eq!(action_probabilities(&dead, &x, 1.0), vec![0.5, 0.5]);
    }

    #[test]
    fn exploration_prefers_unexplored() {
        let actions = [RouteAction { cells: vec![0, 1] }, RouteAction { cells: vec![0, 2] }];
        let x = vec![1.0, 1.0, 0.1];
        let mut t = MdpTable::new(5, 0.1);
        t.mark_explored(state(0, 9), &actions[0]);
        for seed in 0..20 {
            let s = t.select_action(state(0, 9), &actions, &x, 1, &mut stream(seed, 1, Stream::Routing));
            assert_eq!(s.index, 1);
            assert_eq!(s.choice, Choice::Explore);
        }
    }

    #[test]
    fn greedy_exploitation_takes_the_heaviest_route() {
        let actions = [RouteAction { cells: vec![0] }, RouteAction { cells: vec![1] }];
        let x = vec![0.8, 0.2];
        let t = MdpTable::new(0, 0.0);
        for seed in 0..20 {
            let s = t.select_action(state(0, 9), &actions, &x, 3, &mut stream(seed, 3, Stream::Routing));
            assert_eq!(s.index, 0);
        }
    }

    #[test]
    fn learned_routes_avoid_static_damage() {
        // 3x3 ring around a blocked centre; the top route crosses damaged cell 1
        let mut grid = Grid::new(3, 3, &[4]).unwrap();
        grid.set_damage(1, true);
        let st = state(0, 8);
        let actions = enumerate_actions(&grid, st, 4, 4, &open);
        assert_eq!(actions.len(), 2);
        let damage = |a: &RouteAction| a.cells.iter().filter(|&&c| grid.is_damaged(c)).count();
        let cleanest = all_simple_paths(&grid, 0, 8, 4).iter().map(|p| p.iter().filter(|&&c| grid.is_damaged(c)).count()).min();
        assert_eq!(cleanest, Some(0));
        let explore = 2;
        let mut t = MdpTable::new(explore, 0.1);
        let mut x = vec![0.5; grid.len()];
        for cycle in 1..=explore {
            let s = t.select_action(st, &actions, &x, cycle, &mut stream(1, cycle, Stream::Routing));
            // walk until the first damaged cell, which is seen but not entered
            for &c in &actions[s.index].cells {
                x[c] = if grid.is_damaged(c) { 0.0 } else { 1.0 };
                if grid.is_damaged(c) {
                    break;
                }
            }
            t.mark_explored(st, &actions[s.index]);
        }
        let rounds = 200;
        let clean = (explore + 1..=explore + rounds)
            .filter(|&cycle| {
                let s = t.select_action(st, &actions, &x, cycle, &mut stream(1, cycle, Stream::Routing));
                damage(&actions[s.index]) == 0
            })
            .count();
        assert!(clean as f64 >= 0.95 * rounds as f64, "{clean}/{rounds}");
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(observe_penalty(&[0, 1, 2], &[false; 3], &[None; 3]), 0);
        assert_eq!(
            observe_penalty(&[0, 1, 2], &[false, true, false], &[None, None, Some(true)]),
            2
        );
        assert_eq!(observe_penalty(&[0], &[true], &[Some(false)]), 0);
    }

    #[test]
    fn sigma_examples() {
        let mut t = MdpTable::new(0, 0.1);
        assert!((t.update_sigma(3.0, 1.0) - 0.5).abs() < 1e-12);
        assert!((t.update_sigma(0.0, 0.0) - 0.5).abs() < 1e-12);
        assert!((t.update_sigma(0.0, 4.0) - 1.5).abs() < 1e-12);
        for _ in 0..20 {
            t.update_sigma(0.0, 4.0);
        }
        assert_eq!(t.sigma, 10.0);
        assert!(t.cap_hits > 0);
        for _ in 0..40 {
            t.update_sigma(4.0, 0.0);
        }
        assert_eq!(t.sigma, 0.01);
    }

    #[test]
    fn greedy_route_follows_accessibility() {
        let g = Grid::new(2, 2, &[]).unwrap();
        let x = vec![0.5, 0.2, 0.9, 0.5];
        assert_eq!(greedy_accessibility_route(&g, 0, 3, &x, &open), Some(vec![0, 2, 3]));
        let x = vec![0.5, 0.9, 0.2, 0.5];
        assert_eq!(greedy_accessibility_route(&g, 0, 3, &x, &open), Some(vec![0, 1, 3]));
    }

    fn grid_with_blocks(mask: &[bool]) -> Grid {
        let blocked: Vec<CellId> = (0..36).filter(|&c| mask[c]).collect();
        Grid::new(6, 6, &blocked).unwrap()
    }

    proptest! {
        #[test]
        fn routes_are_simple_and_avoid_blocks(
            mask in proptest::collection::vec(proptest::bool::weighted(0.2), 36),
            from in 0usize..36,
            to in 0usize..36,
        ) {
            let g = grid_with_blocks(&mask);
            for p in k_shortest_paths(&g, from, to, 8, usize::MAX, &open) {
                prop_assert!(g.is_simple_path(&p));
                prop_assert_eq!(p[0], from);
                prop_assert_eq!(*p.last().unwrap(), to);
                prop_assert!(p.iter().all(|&c| !g.is_blocked(c)));
            }
        }

        #[test]
        fn probabilities_form_a_distribution(
            x in proptest::collection::vec(0.0f64..=1.0, 16),
            sigma in 0.01f64..10.0,
        ) {
            let g = Grid::new(4, 4, &[]).unwrap();
            let actions = enumerate_actions(&g, state(0, 15), usize::MAX, 8, &open);
            let p = action_probabilities(&actions, &x, sigma);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn lowering_accessibility_never_raises_probability(
            x in proptest::collection::vec(0.05f64..=1.0, 16),
            which in 0usize..8,
            cell_pick in 0usize..16,
            drop in 0.0f64..1.0,
        ) {
            let g = Grid::new(4, 4, &[]).unwrap();
            let actions = enumerate_actions(&g, state(0, 15), usize::MAX, 8, &open);
            let v = which % actions.len();
            // lower X on a cell exclusive to route v so other routes stay fixed
            let exclusive: Vec<CellId> = actions[v].cells.iter().copied()
                .filter(|c| actions.iter().enumerate().all(|(i, a)| i == v || !a.cells.contains(c)))
                .collect();
            prop_assume!(!exclusive.is_empty());
            let c = exclusive[cell_pick % exclusive.len()];
            let before = action_probabilities(&actions, &x, 1.0)[v];
            let mut lowered = x.clone();
            lowered[c] *= drop;
            let after = action_probabilities(&actions, &lowered, 1.0)[v];
            prop_assert!(after <= before + 1e-12);
        }

        #[test]
        fn sigma_stays_in_range(steps in proptest::collection::vec((0u32..20, 0u32..20), 0..50)) {
            let mut t = MdpTable::new(0, 0.1);
            for (a, _) in steps {
                t.record_penalty(a);
                t.end_cycle();
                prop_assert!(t.sigma >= t.sigma_min && t.sigma <= t.sigma_max);
            }
        }
    }
}
