use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Index of a sensing cell, row-major over the grid.
pub type CellId = usize;

/// A single sensing cell as seen through the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensingCell {
    pub id: CellId,
    pub damaged: bool,
    pub blocked: bool,
}

/// The spatial world: a rectangle of sensing cells joined by an undirected
/// road graph, with a ground-truth damage bit per cell.
///
/// Blocked cells are permanently unreachable and never carry edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    blocked: Vec<bool>,
    adjacency: Vec<Vec<CellId>>,
    damage: Vec<bool>,
}

impl Grid {
    /// 4-connected grid with `blocked` cells removed.
    pub fn new(width: usize, height: usize, blocked: &[CellId]) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidGrid("width and height must be positive".into()));
        }
        let n = width * height;
        let mut blocked_mask = vec![false; n];
        for &c in blocked {
            if c >= n {
                return Err(Error::UnknownCell(c));
            }
            blocked_mask[c] = true;
        }
        let mut adjacency = vec![Vec::new(); n];
        for y in 0..height {
            for x in 0..width {
                let c = y * width + x;
                if blocked_mask[c] {
                    continue;
                }
                if x + 1 < width && !blocked_mask[c + 1] {
                    adjacency[c].push(c + 1);
                    adjacency[c + 1].push(c);
                }
                if y + 1 < height && !blocked_mask[c + width] {
                    adjacency[c].push(c + width);
                    adjacency[c + width].push(c);
                }
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Grid {
            width,
            height,
            blocked: blocked_mask,
            adjacency,
            damage: vec![false; n],
        })
    }

    /// Drop road edges, e.g. to model a sparse street network.
    pub fn remove_edges(&mut self, edges: &[(CellId, CellId)]) -> Result<()> {
        for &(a, b) in edges {
            self.check(a)?;
            self.check(b)?;
            self.adjacency[a].retain(|&x| x != b);
            self.adjacency[b].retain(|&x| x != a);
        }
        Ok(())
    }

    /// Add road edges between non-blocked cells (bridges, diagonals).
    pub fn add_edges(&mut self, edges: &[(CellId, CellId)]) -> Result<()> {
        for &(a, b) in edges {
            self.check_open(a)?;
            self.check_open(b)?;
            if a == b {
                return Err(Error::InvalidGrid(format!("self-loop on cell {a}")));
            }
            if !self.adjacency[a].contains(&b) {
                self.adjacency[a].push(b);
                self.adjacency[a].sort_unstable();
                self.adjacency[b].push(a);
                self.adjacency[b].sort_unstable();
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.blocked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocked.is_empty()
    }

    pub fn contains(&self, c: CellId) -> bool {
        c < self.len()
    }

    pub fn is_blocked(&self, c: CellId) -> bool {
        self.blocked[c]
    }

    pub fn is_damaged(&self, c: CellId) -> bool {
        self.damage[c]
    }

    pub fn damage(&self) -> &[bool] {
        &self.damage
    }

    pub fn set_damage(&mut self, c: CellId, damaged: bool) {
        if !self.blocked[c] {
            self.damage[c] = damaged;
        }
    }

    pub fn cell(&self, c: CellId) -> SensingCell {
        SensingCell {
            id: c,
            damaged: self.damage[c],
            blocked: self.blocked[c],
        }
    }

    pub fn neighbors(&self, c: CellId) -> &[CellId] {
        &self.adjacency[c]
    }

    pub fn are_adjacent(&self, a: CellId, b: CellId) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    /// Iterator over all traversable (non-blocked) cells.
    pub fn open_cells(&self) -> impl Iterator<Item = CellId> + '_ {
        (0..self.len()).filter(move |&c| !self.blocked[c])
    }

    pub fn coords(&self, c: CellId) -> (usize, usize) {
        (c % self.width, c / self.width)
    }

    pub fn cell_at(&self, x: usize, y: usize) -> CellId {
        y * self.width + x
    }

    /// Manhattan distance; a lower bound on hop distance for 4-connected
    /// grids without added edges.
    pub fn manhattan(&self, a: CellId, b: CellId) -> usize {
        let (ax, ay) = self.coords(a);
        let (bx, by) = self.coords(b);
        ax.abs_diff(bx) + ay.abs_diff(by)
    }

    /// All undirected edges `(a, b)` with `a < b`.
    pub fn edges(&self) -> Vec<(CellId, CellId)> {
        let mut out = Vec::new();
        for (a, list) in self.adjacency.iter().enumerate() {
            for &b in list {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn check(&self, c: CellId) -> Result<()> {
        if self.contains(c) {
            Ok(())
        } else {
            Err(Error::UnknownCell(c))
        }
    }

    pub fn check_open(&self, c: CellId) -> Result<()> {
        self.check(c)?;
        if self.blocked[c] {
            Err(Error::BlockedCell(c))
        } else {
            Ok(())
        }
    }

    /// Verify the structural invariants: symmetric adjacency that never
    /// touches a blocked cell.
    pub fn validate(&self) -> Result<()> {
        for (a, list) in self.adjacency.iter().enumerate() {
            for &b in list {
                if b >= self.len() {
                    return Err(Error::InvalidGrid(format!("edge {a}-{b} leaves the grid")));
                }
                if self.blocked[a] || self.blocked[b] {
                    return Err(Error::InvalidGrid(format!("edge {a}-{b} touches a blocked cell")));
                }
                if !self.adjacency[b].contains(&a) {
                    return Err(Error::InvalidGrid(format!("edge {a}-{b} is not symmetric")));
                }
            }
        }
        Ok(())
    }

    /// BFS hop distances from `from` through cells accepted by `passable`.
    /// The source itself is always expanded; blocked cells never are.
    pub fn distances_from<F>(&self, from: CellId, passable: F) -> Vec<Option<u32>>
    where
        F: Fn(CellId) -> bool,
    {
        let mut dist = vec![None; self.len()];
        if self.blocked[from] {
            return dist;
        }
        dist[from] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(c) = queue.pop_front() {
            let d = dist[c].unwrap_or(0);
            for &n in &self.adjacency[c] {
                if dist[n].is_none() && passable(n) {
                    dist[n] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    /// Minimum hop count from `from` to `to` entering only undamaged cells
    /// according to `damaged`. `None` means unreachable.
    pub fn shortest_distance(&self, from: CellId, to: CellId, damaged: &[bool]) -> Option<u32> {
        if from == to {
            return Some(0);
        }
        if self.blocked[to] || damaged[to] {
            return None;
        }
        self.distances_from(from, |c| !damaged[c])[to]
    }

    /// Minimum hop count under ground-truth damage.
    pub fn true_distance(&self, from: CellId, to: CellId) -> Option<u32> {
        self.shortest_distance(from, to, &self.damage)
    }

    /// A deterministic shortest path (lowest-index predecessor wins).
    pub fn shortest_path<F>(&self, from: CellId, to: CellId, passable: F) -> Option<Vec<CellId>>
    where
        F: Fn(CellId) -> bool,
    {
        if from == to {
            return Some(vec![from]);
        }
        if self.blocked[from] || self.blocked[to] || !passable(to) {
            return None;
        }
        let mut prev = vec![usize::MAX; self.len()];
        let mut seen = vec![false; self.len()];
        seen[from] = true;
        let mut queue = VecDeque::from([from]);
        while let Some(c) = queue.pop_front() {
            if c == to {
                break;
            }
            for &n in &self.adjacency[c] {
                if !seen[n] && passable(n) {
                    seen[n] = true;
                    prev[n] = c;
                    queue.push_back(n);
                }
            }
        }
        if !seen[to] {
            return None;
        }
        let mut path = vec![to];
        let mut c = to;
        while c != from {
            c = prev[c];
            path.push(c);
        }
        path.reverse();
        Some(path)
    }

    /// Connected components over open cells (ignoring damage).
    pub fn components(&self) -> Vec<Vec<CellId>> {
        let mut label = vec![usize::MAX; self.len()];
        let mut out: Vec<Vec<CellId>> = Vec::new();
        for start in self.open_cells() {
            if label[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut members = vec![start];
            label[start] = id;
            let mut i = 0;
            while i < members.len() {
                let c = members[i];
                for &n in &self.adjacency[c] {
                    if label[n] == usize::MAX {
                        label[n] = id;
                        members.push(n);
                    }
                }
                i += 1;
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    /// True if every consecutive pair is adjacent and no cell repeats.
    pub fn is_simple_path(&self, path: &[CellId]) -> bool {
        let mut seen = std::collections::HashSet::new();
        path.iter().all(|c| seen.insert(*c))
            && path.windows(2).all(|w| self.are_adjacent(w[0], w[1]))
    }
}
