//! Send scouts over a damaged grid and watch the accessibility index move
//! toward the true road state as more scouts share the coverage work.
//!
//! Usage: cargo run --example scout_coverage [SEED]

use rand::seq::SliceRandom;
use rand::Rng;

use roadsense::config::Params;
use roadsense::rng::{stream, Stream};
use roadsense::scenario::Scenario;
use roadsense::scouting::{edges_covered, run_scouts, AccessibilityMap};

fn main() -> roadsense::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let params = Params::default();
    let mut grid = Scenario::reference().grid.build()?;
    let mut rng = stream(seed, 0, Stream::Damage);
    let open: Vec<_> = grid.open_cells().collect();
    for &c in &open {
        if rng.gen_bool(0.1) {
            grid.set_damage(c, true);
        }
    }
    let intact: Vec<_> = open.iter().copied().filter(|&c| !grid.is_damaged(c)).collect();
    let known = vec![false; grid.len()];
    let budget = params.scout_moves();
    let total_edges = grid.edges().len();
    let error = |x: &AccessibilityMap| {
        let sum: f64 = open
            .iter()
            .map(|&c| (x.get(c) - if grid.is_damaged(c) { 0.0 } else { 1.0 }).abs())
            .sum();
        sum / open.len() as f64
    };

    println!("budget {budget} moves per scout, {total_edges} road edges");
    println!("scouts  edges covered  cells seen  accessibility error");
    for n in [1, 3, 9, 27] {
        let starts: Vec<(usize, _)> = intact.choose_multiple(&mut rng, n).copied().enumerate().collect();
        let (routes, readings) = run_scouts(&grid, &known, &starts, budget, params.observation_radius);
        let cells: Vec<Vec<_>> = routes.into_iter().map(|r| r.cells).collect();
        let mut x = AccessibilityMap::new(grid.len(), params.initial_accessibility);
        let before = error(&x);
        for &(_, c, damaged) in &readings {
            x.observe(c, damaged, params.kappa_default, 1);
        }
        let seen = x.values().iter().enumerate().filter(|&(c, _)| x.last_visited(c).is_some()).count();
        println!(
            "{n:>6}  {:>13}  {seen:>10}  {before:.3} -> {:.3}",
            edges_covered(&cells),
            error(&x)
        );
    }
    Ok(())
}
