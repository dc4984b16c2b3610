//! Trains on the FourRoom map and evaluates fixed-spawn goal reaching.
//!
//! cargo run --release --example train_fourroom -- [seed] [steps]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sfl::agent::{random_baseline, Agent};
use sfl::config::SflConfig;
use sfl::gridworld::{GridMap, GridState, Heading};
use sfl::landmarks::edge_soundness;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let steps: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200_000);

    let map = GridMap::parse(include_str!("../maps/fourroom.txt"))?;
    let config = SflConfig::from_toml(include_str!("../configs/fourroom.toml"))?;
    let mut agent = Agent::new(map.clone(), config, seed)?;
    let t0 = std::time::Instant::now();
    agent.train(steps, |a, trace| {
        if trace.episode % 250 == 0 {
            let m = a.metrics(trace);
            println!(
                "step {:>7}  landmarks {:>2}  edges {:>3}  coverage {:5.1}%",
                m.step, m.num_landmarks, m.num_edges, m.coverage_pct
            );
        }
    })?;
    println!("trained {} steps in {:.1?}", agent.steps(), t0.elapsed());

    let (gx, gy) = map.goal().expect("map has a goal");
    let goal = GridState::new(gx, gy, Heading::E);
    let start = map.start_state();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xE7A1);
    let trials = 100;
    let mut wins = 0;
    let mut base = 0;
    for _ in 0..trials {
        wins += agent.evaluate(&start, &goal, 100, &mut rng)?.success as usize;
        base += random_baseline(&map, &start, &goal, 100, &mut rng).success as usize;
    }
    let report = edge_soundness(agent.graph(), &map, 3.0)?;
    println!("success {wins}/{trials}, random baseline {base}/{trials}");
    println!(
        "edges {} unsound {} ({:.1}%), median spacing {}",
        report.edges,
        report.unsound,
        100.0 * report.fraction(),
        report.median_spacing
    );
    for l in agent.graph().landmarks() {
        println!("  landmark {} at {} visits {}", l.id, l.snapshot, l.visit_count);
    }
    for e in agent.graph().edges() {
        println!("  edge {} -> {} count {}", e.from, e.to, e.count);
    }
    Ok(())
}
