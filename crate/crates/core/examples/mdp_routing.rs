//! Choose routes between two cells from the K shortest loopless paths,
//! weighting each by the accessibility of its cells.
//!
//! Usage: cargo run --example mdp_routing

use roadsense::rng::{stream, Stream};
use roadsense::routing::{action_probabilities, enumerate_actions, MdpState, MdpTable};
use roadsense::scouting::AccessibilityMap;
use roadsense::world::Grid;

fn main() -> roadsense::Result<()> {
    let grid = Grid::new(6, 6, &[14, 15, 20, 21])?;
    let state = MdpState {
        source: grid.cell_at(0, 0),
        destination: grid.cell_at(5, 5),
    };
    let actions = enumerate_actions(&grid, state, 14, 8, &|_| true);

    // a scout saw damage near the top-right corner and clear road down the left side
    let mut x = AccessibilityMap::new(grid.len(), 0.6);
    x.observe(4, true, 0.3, 1);
    for c in [1, 6, 12, 18, 24, 30] {
        x.observe(c, false, 0.3, 1);
    }
    let probs = action_probabilities(&actions, x.values(), 1.0);
    println!("route                                        hops  probability");
    for (a, p) in actions.iter().zip(&probs) {
        let cells: Vec<String> = a.cells.iter().map(|c| c.to_string()).collect();
        println!("{:<44} {:>4}  {p:.3}", cells.join("-"), a.hops());
    }

    let mut table = MdpTable::new(2, 0.1);
    println!();
    println!("cycle  choice   route");
    for cycle in 1..=6 {
        let mut rng = stream(5, cycle, Stream::Routing);
        let pick = table.select_action(state, &actions, x.values(), cycle, &mut rng);
        table.mark_explored(state, &actions[pick.index]);
        println!("{cycle:>5}  {:<7}  {}", format!("{:?}", pick.choice), pick.index);
    }
    Ok(())
}
