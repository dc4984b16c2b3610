//! Coverage on MultiRoom-3 with count-based frontier sampling versus
//! uniform landmark sampling.
//!
//! cargo run --release --example frontier_ablation -- [seeds] [steps]

use sfl::agent::{Agent, FrontierStrategy};
use sfl::config::SflConfig;
use sfl::gridworld::GridMap;
use sfl::metrics::mean_se;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(5);
    let steps: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(30_000);
    let map = GridMap::parse(include_str!("../maps/multiroom3.txt"))?;
    let base = SflConfig::from_toml(include_str!("../configs/multiroom3.toml"))?;

    for (name, strategy) in [("frontier", FrontierStrategy::Count), ("uniform", FrontierStrategy::Uniform)] {
        let mut config = base.clone();
        config.agent.frontier = strategy;
        let mut coverage = Vec::new();
        for seed in 0..seeds {
            let mut agent = Agent::new(map.clone(), config.clone(), seed)?;
            agent.train(steps, |_, _| {})?;
            coverage.push(agent.coverage_pct());
            println!("  {name:<8} seed {seed}: {:.1}%", agent.coverage_pct());
        }
        println!("{name:<8} coverage {}", mean_se(&coverage));
    }
    Ok(())
}
