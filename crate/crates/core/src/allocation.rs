//! Task allocation as a singleton weighted congestion game.
//!
//! Cars pick one task each. A pick's utility is the task's reward times a
//! weighted priority score, discounted by how contested the task is among
//! cars of similar reputation. Best-response dynamics search for a pure
//! Nash equilibrium after a first phase that spreads cars over unpicked
//! tasks.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Move a reputation by `eta` per success and per failure, clamped to [0, 1].
pub fn update_reputation(pi: f64, eta: f64, successes: u32, failures: u32) -> f64 {
    (pi + eta * (successes as f64 - failures as f64)).clamp(0.0, 1.0)
}

/// Per-car reputation with per-cycle outcome counters.
#[derive(Debug, Clone, PartialEq)]
pub struct Reputation {
    pub eta: f64,
    values: Vec<f64>,
    successes: Vec<u32>,
    failures: Vec<u32>,
}

impl Reputation {
    pub fn new(cars: usize, initial: f64, eta: f64) -> Self {
        Reputation {
            eta,
            values: vec![initial.clamp(0.0, 1.0); cars],
            successes: vec![0; cars],
            failures: vec![0; cars],
        }
    }

    pub fn get(&self, car: usize) -> f64 {
        self.values[car]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn set(&mut self, car: usize, value: f64) {
        self.values[car] = value.clamp(0.0, 1.0);
    }

    pub fn record(&mut self, car: usize, success: bool) {
        let (s, f) = if success { (1, 0) } else { (0, 1) };
        self.successes[car] += s;
        self.failures[car] += f;
        self.values[car] = update_reputation(self.values[car], self.eta, s, f);
    }

    /// Successes and failures recorded since the last reset.
    pub fn counts(&self, car: usize) -> (u32, u32) {
        (self.successes[car], self.failures[car])
    }

    pub fn reset_counts(&mut self) {
        self.successes.iter_mut().for_each(|x| *x = 0);
        self.failures.iter_mut().for_each(|x| *x = 0);
    }
}

/// How the priority score combines its three factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorityForm {
    /// Proximity and urgency normalized to [0, 1].
    #[default]
    Normalized,
    /// Raw hop distance and raw remaining minutes, added as-is.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UtilityParams {
    pub lambda: [f64; 3],
    pub k: u32,
    pub epsilon: f64,
    pub gamma_default: f64,
    pub form: PriorityForm,
}

impl Default for UtilityParams {
    fn default() -> Self {
        UtilityParams {
            lambda: [0.82, 0.58, 0.49],
            k: 2,
            epsilon: 0.01,
            gamma_default: 1.0,
            form: PriorityForm::Normalized,
        }
    }
}

/// Contention a car with reputation `own` faces from `others` on one task.
/// Each term is `(own - other)^k`; for even `k` it carries the sign of the
/// difference. No rivals gives `gamma_default`; the result is floored at
/// `epsilon`.
pub fn congestion_rate(own: f64, others: impl IntoIterator<Item = f64>, params: &UtilityParams) -> f64 {
    let mut any = false;
    let mut sum = 0.0;
    for other in others {
        any = true;
        let d = own - other;
        let term = d.powi(params.k as i32);
        sum += if params.k % 2 == 0 { d.signum() * term } else { term };
    }
    if !any {
        return params.gamma_default.max(params.epsilon);
    }
    sum.max(params.epsilon)
}

/// A task as seen by allocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoardTask {
    pub reward: f64,
    /// Minutes left before the deadline.
    pub remaining_min: f64,
    pub confidence: f64,
}

/// Units for the normalized priority factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scale {
    pub cycle_length_min: f64,
    pub travel_min_per_cell: f64,
}

impl Scale {
    /// Hop distance that maps to zero proximity.
    pub fn max_hops(&self) -> f64 {
        self.cycle_length_min / self.travel_min_per_cell
    }
}

/// Congestion-free utility of a task for a car `hops` away.
pub fn base_utility(task: &BoardTask, hops: Option<u32>, params: &UtilityParams, scale: &Scale) -> f64 {
    let Some(hops) = hops else { return 0.0 };
    if task.remaining_min <= 0.0 || hops as f64 * scale.travel_min_per_cell > task.remaining_min {
        return 0.0;
    }
    let uncertainty = 1.0 - task.confidence;
    let [l1, l2, l3] = params.lambda;
    let score = match params.form {
        PriorityForm::Normalized => {
            let proximity = (1.0 - hops as f64 / scale.max_hops()).max(0.0);
            let urgency = (1.0 - task.remaining_min / scale.cycle_length_min).max(0.0);
            l1 * proximity + l2 * urgency + l3 * uncertainty
        }
        PriorityForm::Literal => l1 * hops as f64 + l2 * task.remaining_min + l3 * uncertainty,
    };
    (task.reward * score).max(0.0)
}

/// Full utility: base utility over the congestion rate.
pub fn utility(base: f64, gamma: f64) -> f64 {
    if base <= 0.0 {
        0.0
    } else {
        base / gamma
    }
}

/// One allocation round.
#[derive(Debug, Clone)]
pub struct Game<'a> {
    /// Reputation of each participating car.
    pub reputation: Vec<f64>,
    /// `base[car][task]`, congestion-free utilities.
    pub base: Vec<Vec<f64>>,
    pub params: &'a UtilityParams,
    /// When set, a car that is the only picker of a task may not leave it
    /// while there are at least as many cars as coverable tasks.
    pub keep_coverage: bool,
}

impl<'a> Game<'a> {
    pub fn new(reputation: Vec<f64>, base: Vec<Vec<f64>>, params: &'a UtilityParams) -> Self {
        Game {
            reputation,
            base,
            params,
            keep_coverage: true,
        }
    }

    pub fn cars(&self) -> usize {
        self.reputation.len()
    }

    pub fn tasks(&self) -> usize {
        self.base.first().map_or(0, Vec::len)
    }

    /// Tasks some car values positively.
    fn coverable(&self) -> Vec<bool> {
        (0..self.tasks())
            .map(|n| self.base.iter().any(|row| row[n] > 0.0))
            .collect()
    }

    fn coverage_binding(&self) -> bool {
        self.keep_coverage && self.cars() >= self.coverable().iter().filter(|&&c| c).count()
    }

    /// Utility of `task` for `car` with everyone else's picks fixed.
    pub fn utility_of(&self, car: usize, task: usize, picks: &[Option<usize>]) -> f64 {
        let rivals = picks
            .iter()
            .enumerate()
            .filter(|&(p, pick)| p != car && *pick == Some(task))
            .map(|(p, _)| self.reputation[p]);
        let gamma = congestion_rate(self.reputation[car], rivals, self.params);
        utility(self.base[car][task], gamma)
    }

    /// Cars on each task, in car order.
    fn pickers(&self, picks: &[Option<usize>]) -> Vec<Vec<usize>> {
        let mut lists = vec![Vec::new(); self.tasks()];
        for (car, pick) in picks.iter().enumerate() {
            if let Some(n) = pick {
                lists[*n].push(car);
            }
        }
        lists
    }

    /// As [`Game::utility_of`], reading rivals from precomputed lists.
    fn utility_in(&self, car: usize, task: usize, pickers: &[Vec<usize>]) -> f64 {
        let rivals = pickers[task]
            .iter()
            .filter(|&&p| p != car)
            .map(|&p| self.reputation[p]);
        let gamma = congestion_rate(self.reputation[car], rivals, self.params);
        utility(self.base[car][task], gamma)
    }

    /// Best admissible move for `car`, keeping its current pick on ties.
    fn best_response_in(
        &self,
        car: usize,
        picks: &[Option<usize>],
        pickers: &[Vec<usize>],
        binding: bool,
    ) -> (Option<usize>, f64) {
        let cur = picks[car];
        let mut best = cur;
        let mut best_u = cur.map_or(0.0, |n| self.utility_in(car, n, pickers));
        for n in self.admissible_in(car, cur, pickers, binding) {
            let u = self.utility_in(car, n, pickers);
            if u > best_u * (1.0 + 1e-12) + 1e-15 {
                best = Some(n);
                best_u = u;
            }
        }
        (best, best_u)
    }

    fn admissible_in(
        &self,
        car: usize,
        cur: Option<usize>,
        pickers: &[Vec<usize>],
        binding: bool,
    ) -> Vec<usize> {
        if binding {
            if let Some(n) = cur {
                if pickers[n].len() == 1 && self.base.iter().any(|row| row[n] > 0.0) {
                    return vec![n];
                }
            }
        }
        (0..self.tasks()).filter(|&n| self.base[car][n] > 0.0).collect()
    }

    /// Per car: utility of its pick and of its best admissible deviation.
    pub fn certificate(&self, picks: &[Option<usize>]) -> (Vec<f64>, Vec<f64>, bool) {
        let binding = self.coverage_binding();
        let pickers = self.pickers(picks);
        let mut own = Vec::with_capacity(self.cars());
        let mut dev = Vec::with_capacity(self.cars());
        let mut ok = true;
        for car in 0..self.cars() {
            let u = picks[car].map_or(0.0, |n| self.utility_in(car, n, &pickers));
            let best = self
                .admissible_in(car, picks[car], &pickers, binding)
                .into_iter()
                .map(|n| self.utility_in(car, n, &pickers))
                .fold(u, f64::max);
            if best > u * (1.0 + 1e-9) + 1e-12 {
                ok = false;
            }
            own.push(u);
            dev.push(best);
        }
        (own, dev, ok)
    }

    /// Whether `picks` is an equilibrium of this game.
    pub fn is_equilibrium(&self, picks: &[Option<usize>]) -> bool {
        self.certificate(picks).2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Allocation {
    /// Task index per car, `None` for idle cars.
    pub picks: Vec<Option<usize>>,
    pub pick_utility: Vec<f64>,
    pub best_deviation: Vec<f64>,
    pub certified: bool,
    pub passes: usize,
    pub restarts: usize,
}

impl Allocation {
    /// Cars holding each task.
    pub fn pick_lists(&self, tasks: usize) -> Vec<Vec<usize>> {
        let mut lists = vec![Vec::new(); tasks];
        for (car, pick) in self.picks.iter().enumerate() {
            if let Some(n) = pick {
                lists[*n].push(car);
            }
        }
        lists
    }
}

/// Spread cars in `order` over unpicked tasks until every coverable task
/// has a picker or cars run out.
fn cover_phase(game: &Game, order: &[usize], picks: &mut [Option<usize>]) {
    let mut picked = vec![false; game.tasks()];
    for p in picks.iter().flatten() {
        picked[*p] = true;
    }
    loop {
        let mut progress = false;
        for &car in order {
            if picks[car].is_some() {
                continue;
            }
            let choice = (0..game.tasks())
                .filter(|&n| !picked[n] && game.base[car][n] > 0.0)
                .map(|n| (n, game.utility_of(car, n, picks)))
                .fold(None::<(usize, f64)>, |best, (n, u)| match best {
                    Some((_, bu)) if bu >= u => best,
                    _ => Some((n, u)),
                });
            if let Some((n, _)) = choice {
                picks[car] = Some(n);
                picked[n] = true;
                progress = true;
            }
        }
        if !progress {
            break;
        }
    }
}

/// Best-response passes until nobody moves, a profile repeats, or the pass
/// cap is hit. Returns whether a fixed point was reached and the passes used.
fn respond_phase(game: &Game, order: &[usize], picks: &mut [Option<usize>], cap: usize) -> (bool, usize) {
    let binding = game.coverage_binding();
    let mut seen: HashSet<Vec<Option<usize>>> = HashSet::new();
    let mut pickers = game.pickers(picks);
    for pass in 1..=cap {
        let mut moved = false;
        for &car in order {
            let (best, _) = game.best_response_in(car, picks, &pickers, binding);
            if best != picks[car] {
                if let Some(old) = picks[car] {
                    pickers[old].retain(|&c| c != car);
                }
                if let Some(new) = best {
                    let at = pickers[new].partition_point(|&c| c < car);
                    pickers[new].insert(at, car);
                }
                picks[car] = best;
                moved = true;
            }
        }
        if !moved {
            return (true, pass);
        }
        if !seen.insert(picks.to_vec()) {
            return (false, pass);
        }
    }
    (false, cap)
}

/// Restarts tried after best-response dynamics cycle: at least
/// `MIN_RESTARTS`, more for small games where a restart is cheap.
pub const MIN_RESTARTS: usize = 64;
const RESTART_WORK: usize = 1536;

fn restart_budget(cars: usize) -> usize {
    MIN_RESTARTS.max(RESTART_WORK / cars.max(1))
}

/// Two-phase best-response allocation. The car order is shuffled with
/// `rng`; cycling dynamics are restarted from a perturbed profile.
pub fn best_response_allocate<R: Rng + ?Sized>(game: &Game, rng: &mut R) -> Allocation {
    let cars = game.cars();
    let mut order: Vec<usize> = (0..cars).collect();
    order.shuffle(rng);
    let cap = 100 * cars.max(1);
    let mut picks = vec![None; cars];
    cover_phase(game, &order, &mut picks);
    let (mut done, mut passes) = respond_phase(game, &order, &mut picks, cap);
    let mut restarts = 0;
    let mut fallback = picks.clone();
    let violations = |p: &[Option<usize>]| {
        let (own, dev, _) = game.certificate(p);
        own.iter().zip(&dev).filter(|(u, d)| **d > **u * (1.0 + 1e-9) + 1e-12).count()
    };
    let mut fallback_violations = violations(&fallback);
    let budget = restart_budget(cars);
    while !done && restarts < budget {
        restarts += 1;
        order.shuffle(rng);
        let mut trial = vec![None; cars];
        cover_phase(game, &order, &mut trial);
        for car in 0..cars {
            if trial[car].is_none() {
                let options: Vec<usize> = (0..game.tasks()).filter(|&n| game.base[car][n] > 0.0).collect();
                trial[car] = options.choose(rng).copied();
            }
        }
        let (ok, used) = respond_phase(game, &order, &mut trial, cap);
        passes += used;
        let v = violations(&trial);
        if v < fallback_violations {
            fallback = trial.clone();
            fallback_violations = v;
        }
        if ok {
            picks = trial;
            done = true;
        }
    }
    if !done {
        picks = fallback;
    }
    let (pick_utility, best_deviation, certified) = game.certificate(&picks);
    Allocation {
        picks,
        pick_utility,
        best_deviation,
        certified,
        passes,
        restarts,
    }
}

/// Exhaustively enumerate every profile (each car idle or on a task it
/// values) and return the equilibria. Exponential; a test oracle.
pub fn enumerate_equilibria(game: &Game) -> Vec<Vec<Option<usize>>> {
    let options: Vec<Vec<Option<usize>>> = (0..game.cars())
        .map(|car| {
            let mut o: Vec<Option<usize>> = (0..game.tasks())
                .filter(|&n| game.base[car][n] > 0.0)
                .map(Some)
                .collect();
            if o.is_empty() {
                o.push(None);
            }
            o
        })
        .collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; game.cars()];
    loop {
        let profile: Vec<Option<usize>> = idx.iter().enumerate().map(|(c, &i)| options[c][i]).collect();
        if game.is_equilibrium(&profile) && covers(game, &profile) {
            out.push(profile);
        }
        let mut c = 0;
        loop {
            if c == idx.len() {
                return out;
            }
            idx[c] += 1;
            if idx[c] < options[c].len() {
                break;
            }
            idx[c] = 0;
            c += 1;
        }
    }
}

/// Whether every coverable task has a picker (vacuous when coverage is not
/// binding).
pub fn covers(game: &Game, picks: &[Option<usize>]) -> bool {
    if !game.coverage_binding() {
        return true;
    }
    let coverable = game.coverable();
    (0..game.tasks()).all(|n| !coverable[n] || picks.contains(&Some(n)))
}

/// Terminal outcome of an accepted task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    MissedDeadline,
    Dropped,
}

/// Live picks per task.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskBoard {
    pub tasks: Vec<BoardTask>,
    pub picks: Vec<Vec<usize>>,
}

impl TaskBoard {
    pub fn new(tasks: Vec<BoardTask>) -> Self {
        let picks = vec![Vec::new(); tasks.len()];
        TaskBoard { tasks, picks }
    }

    pub fn assign(&mut self, car: usize, task: usize) {
        if !self.picks[task].contains(&car) {
            self.picks[task].push(car);
        }
    }
}

/// Apply a task outcome: reputation moves, the car leaves the pick list,
/// and the return value says whether the outcome counts as a drop.
pub fn mark_outcome(
    board: &mut TaskBoard,
    rep: &mut Reputation,
    car: usize,
    task: usize,
    outcome: Outcome,
) -> Result<bool> {
    let list = board
        .picks
        .get_mut(task)
        .ok_or(Error::NotAssigned { car, task })?;
    let pos = list
        .iter()
        .position(|&c| c == car)
        .ok_or(Error::NotAssigned { car, task })?;
    list.remove(pos);
    rep.record(car, outcome == Outcome::Completed);
    Ok(outcome == Outcome::Dropped)
}
