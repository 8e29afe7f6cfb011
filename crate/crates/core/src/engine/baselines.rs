//! Allocation rules of the comparison schemes, as pure functions over
//! per-car distances and per-task deadlines.

use std::collections::VecDeque;

use rand::Rng;

use crate::world::{CellId, Grid};

/// Each car picks a task uniformly at random.
pub fn random_picks<R: Rng + ?Sized>(cars: usize, tasks: usize, rng: &mut R) -> Vec<Option<usize>> {
    (0..cars)
        .map(|_| (tasks > 0).then(|| rng.gen_range(0..tasks)))
        .collect()
}

/// Repeatedly pair the closest (car, task) among unpicked tasks until every
/// reachable task has a car, then send leftover cars to their nearest task.
/// Ties go to the lower car id, then the lower task index.
pub fn nearest_picks(dist: &[Vec<Option<u32>>], tasks: usize) -> Vec<Option<usize>> {
    let cars = dist.len();
    let mut picks = vec![None; cars];
    let mut covered = vec![false; tasks];
    loop {
        let best = (0..cars)
            .filter(|&c| picks[c].is_none())
            .flat_map(|c| {
                (0..tasks)
                    .filter(|&n| !covered[n])
                    .filter_map(move |n| dist[c][n].map(|d| (d, c, n)))
            })
            .min();
        let Some((_, c, n)) = best else { break };
        picks[c] = Some(n);
        covered[n] = true;
    }
    for c in 0..cars {
        if picks[c].is_none() {
            picks[c] = (0..tasks)
                .filter_map(|n| dist[c][n].map(|d| (d, n)))
                .min()
                .map(|(_, n)| n);
        }
    }
    picks
}

/// Tasks in ascending remaining time zipped with cars in descending
/// reputation (ties by id); extra cars wrap around to the start.
pub fn reputation_picks(reputation: &[f64], remaining_min: &[f64]) -> Vec<Option<usize>> {
    let mut picks = vec![None; reputation.len()];
    if remaining_min.is_empty() {
        return picks;
    }
    let mut tasks: Vec<usize> = (0..remaining_min.len()).collect();
    tasks.sort_by(|&a, &b| remaining_min[a].total_cmp(&remaining_min[b]).then(a.cmp(&b)));
    let mut cars: Vec<usize> = (0..reputation.len()).collect();
    cars.sort_by(|&a, &b| reputation[b].total_cmp(&reputation[a]).then(a.cmp(&b)));
    for (i, car) in cars.into_iter().enumerate() {
        picks[car] = Some(tasks[i % tasks.len()]);
    }
    picks
}

/// Rewards by deadline rank: the tightest task earns twice the base, the
/// loosest slightly more than the base.
pub fn rank_rewards(remaining_min: &[f64], base_reward: f64) -> Vec<f64> {
    let n = remaining_min.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| remaining_min[a].total_cmp(&remaining_min[b]).then(a.cmp(&b)));
    let mut rewards = vec![0.0; n];
    for (rank, task) in order.into_iter().enumerate() {
        rewards[task] = base_reward * (1.0 + (n - rank) as f64 / n as f64);
    }
    rewards
}

/// Cars in id order take the task with the best reward times proximity,
/// shared among the cars already on it. Only tasks reachable in time count.
pub fn incentive_picks(
    dist: &[Vec<Option<u32>>],
    remaining_min: &[f64],
    base_reward: f64,
    travel_min_per_cell: f64,
    max_hops: f64,
) -> Vec<Option<usize>> {
    let rewards = rank_rewards(remaining_min, base_reward);
    let mut load = vec![0usize; remaining_min.len()];
    dist.iter()
        .map(|row| {
            let mut best: Option<(f64, usize)> = None;
            for (n, d) in row.iter().enumerate() {
                let Some(d) = d else { continue };
                if *d as f64 * travel_min_per_cell > remaining_min[n] {
                    continue;
                }
                let proximity = (1.0 - *d as f64 / max_hops).max(0.0);
                let score = rewards[n] * proximity / (1 + load[n]) as f64;
                if best.map_or(true, |(b, _)| score > b) {
                    best = Some((score, n));
                }
            }
            best.map(|(_, n)| {
                load[n] += 1;
                n
            })
        })
        .collect()
}

fn bfs_path(grid: &Grid, from: CellId, to: CellId) -> Option<Vec<CellId>> {
    grid.shortest_path(from, to, |_| true)
}

/// Closed patrol walk visiting every open cell reachable from `start`:
/// nearest-unvisited-neighbor tour, legs joined by shortest paths, and a
/// final leg back to `start`. Consecutive cells are adjacent.
pub fn patrol_tour(grid: &Grid, start: CellId) -> Vec<CellId> {
    let mut visited = vec![false; grid.len()];
    let mut tour = vec![start];
    visited[start] = true;
    let mut cur = start;
    loop {
        // nearest unvisited cell by BFS, lowest index on ties
        let mut dist = vec![u32::MAX; grid.len()];
        dist[cur] = 0;
        let mut queue = VecDeque::from([cur]);
        let mut target: Option<(u32, CellId)> = None;
        while let Some(c) = queue.pop_front() {
            if let Some((d, _)) = target {
                if dist[c] > d {
                    break;
                }
            }
            if !visited[c] {
                target = match target {
                    Some((d, t)) if d == dist[c] && t < c => Some((d, t)),
                    _ => Some((dist[c], c)),
                };
                continue;
            }
            for &n in grid.neighbors(c) {
                if dist[n] == u32::MAX {
                    dist[n] = dist[c] + 1;
                    queue.push_back(n);
                }
            }
        }
        let Some((_, next)) = target else { break };
        let leg = bfs_path(grid, cur, next).expect("target found by search");
        for &c in &leg[1..] {
            visited[c] = true;
            tour.push(c);
        }
        cur = next;
    }
    if cur != start {
        let leg = bfs_path(grid, cur, start).expect("start reachable");
        tour.extend(&leg[1..]);
    }
    tour
}
