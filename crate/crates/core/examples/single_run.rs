//! Run every scheme once on the reference scenario and print a one-line summary each.

use roadsense::config::RunConfig;
use roadsense::engine::{run, SchemeId};
use roadsense::scenario::Scenario;

fn main() -> roadsense::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let scenario = Scenario::reference();
    for scheme in SchemeId::ALL {
        let cfg = RunConfig {
            scheme,
            seed,
            ..RunConfig::default()
        };
        let r = run(&scenario, &cfg)?;
        let s = &r.summary;
        println!(
            "{:<18} acc {:.3} f1 {:.3} hit {:.3} (hits {} misses {} drops {}) verified {}/{} audit {}/{}",
            scheme.name(),
            s.accuracy,
            s.f1,
            s.deadline_hit_rate,
            s.deadline_hits,
            s.deadline_misses,
            s.drops,
            s.tasks_verified,
            s.tasks_created,
            r.audit.violations,
            r.audit.checks,
        );
    }
    Ok(())
}
