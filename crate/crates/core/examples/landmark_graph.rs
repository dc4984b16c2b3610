//! Trains briefly on FourRoom and prints the landmark graph as DOT.
//!
//! cargo run --release --example landmark_graph -- [steps] > graph.dot

use sfl::agent::Agent;
use sfl::config::SflConfig;
use sfl::gridworld::GridMap;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(50_000);
    let map = GridMap::parse(include_str!("../maps/fourroom.txt"))?;
    let config = SflConfig::from_toml(include_str!("../configs/fourroom.toml"))?;
    let mut agent = Agent::new(map, config, 0)?;
    agent.train(steps, |_, _| {})?;
    let graph = agent.graph();
    eprintln!(
        "{} landmarks, {} edges, edge threshold {:.3}, coverage {:.1}%",
        graph.len(),
        graph.num_edges(),
        graph.dynamic_edge_threshold(),
        agent.coverage_pct()
    );
    print!(
        "{}",
        graph.to_dot(|s| format!("x={}, y={}, heading={}", s.x, s.y, s.heading))
    );
    Ok(())
}
