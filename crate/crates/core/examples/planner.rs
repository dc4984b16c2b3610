//! Shortest landmark paths and waypoint stepping on a small hand-built graph.
//!
//! cargo run --example planner

use sfl::landmarks::Edge;
use sfl::planner::{next_waypoint, shortest_path, NextWaypoint};

fn edge(from: usize, to: usize, count: u64) -> Edge {
    Edge {
        from,
        to,
        count,
        weight: (-(count as f64)).exp(),
        filtered_by: vec![],
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Weight exp(-count): well-travelled edges are cheap.
    let edges = vec![
        edge(0, 1, 5),
        edge(1, 2, 5),
        edge(2, 4, 5),
        edge(0, 3, 1),
        edge(3, 4, 1),
        edge(1, 4, 2),
    ];
    let plan = shortest_path(5, &edges, 0, 4, 0)?;
    println!("plan {:?} weight {:.5}", plan.waypoints, plan.total_weight);

    let mut at = 0;
    loop {
        match next_waypoint(&plan, at) {
            NextWaypoint::Next(w) => {
                println!("  at {at}, head to {w}");
                at = w;
            }
            NextWaypoint::Done => {
                println!("  at {at}, goal reached");
                break;
            }
            NextWaypoint::Replan => {
                println!("  at {at}, off plan");
                break;
            }
        }
    }
    println!("off-plan landmark 3 -> {:?}", next_waypoint(&plan, 3));
    match shortest_path(5, &edges, 4, 0, 0) {
        Ok(p) => println!("4 -> 0: {:?}", p.waypoints),
        Err(e) => println!("4 -> 0: {e}"),
    }
    Ok(())
}
