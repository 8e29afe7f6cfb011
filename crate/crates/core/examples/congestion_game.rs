//! Allocate cars to verification tasks with best-response dynamics and
//! check the result is an equilibrium, comparing against exhaustive search
//! on a small instance.
//!
//! Usage: cargo run --example congestion_game [SEED]

use rand::Rng;

use roadsense::allocation::{best_response_allocate, covers, enumerate_equilibria, Game, UtilityParams};
use roadsense::rng::{stream, Stream};

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(11);
    let params = UtilityParams::default();
    let mut rng = stream(seed, 0, Stream::AllocationOrder);
    let (cars, tasks) = (5, 3);
    let reputation: Vec<f64> = (0..cars).map(|_| rng.gen_range(0.2..1.0)).collect();
    let base: Vec<Vec<f64>> = (0..cars)
        .map(|_| {
            (0..tasks)
                .map(|_| if rng.gen_bool(0.8) { rng.gen_range(0.1..1.5) } else { 0.0 })
                .collect()
        })
        .collect();
    let game = Game::new(reputation.clone(), base.clone(), &params);

    println!("car  reputation  base utility per task");
    for c in 0..cars {
        let row: Vec<String> = base[c].iter().map(|u| format!("{u:.2}")).collect();
        println!("{c:>3}  {:>10.2}  {}", reputation[c], row.join("  "));
    }

    let alloc = best_response_allocate(&game, &mut rng);
    println!();
    println!("best response after {} passes, {} restarts", alloc.passes, alloc.restarts);
    for (c, pick) in alloc.picks.iter().enumerate() {
        let task = pick.map_or("idle".to_string(), |t| format!("task {t}"));
        println!(
            "  car {c}: {task:<7} utility {:.3}, best deviation {:.3}",
            alloc.pick_utility[c], alloc.best_deviation[c]
        );
    }
    println!("certified equilibrium: {}", alloc.certified);
    println!("every coverable task held: {}", covers(&game, &alloc.picks));

    let all = enumerate_equilibria(&game);
    println!("exhaustive search finds {} equilibria", all.len());
    println!("found profile among them: {}", all.contains(&alloc.picks));
}
