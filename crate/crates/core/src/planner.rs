//! Minimal-weight landmark paths and waypoint following.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::landmarks::Edge;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("landmark {to} is unreachable from {from}")]
    Unreachable { from: usize, to: usize },
    #[error("unknown landmark id {0}")]
    UnknownLandmark(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub waypoints: Vec<usize>,
    pub total_weight: f64,
    pub created_at_step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextWaypoint {
    Next(usize),
    Done,
    Replan,
}

/// Dijkstra over directed non-negative edges. Among equal-weight paths the
/// lexicographically smallest waypoint sequence wins.
pub fn shortest_path(num_nodes: usize, edges: &[Edge], from: usize, to: usize, step: u64) -> Result<Plan, PlanError> {
    for id in [from, to] {
        if id >= num_nodes {
            return Err(PlanError::UnknownLandmark(id));
        }
    }
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); num_nodes];
    for e in edges {
        if e.from < num_nodes && e.to < num_nodes {
            adj[e.from].push((e.to, e.weight));
        }
    }
    let mut best: Vec<Option<(f64, Vec<usize>)>> = vec![None; num_nodes];
    let mut done = vec![false; num_nodes];
    best[from] = Some((0.0, vec![from]));
    loop {
        let mut pick: Option<usize> = None;
        for v in 0..num_nodes {
            let (false, Some((d, p))) = (done[v], &best[v]) else { continue };
            let better = match pick {
                None => true,
                Some(u) => {
                    let (du, pu) = best[u].as_ref().unwrap();
                    d < du || (d == du && p < pu)
                }
            };
            if better {
                pick = Some(v);
            }
        }
        let Some(u) = pick else { break };
        done[u] = true;
        if u == to {
            break;
        }
        let (du, pu) = best[u].clone().unwrap();
        for &(v, w) in &adj[u] {
            if done[v] {
                continue;
            }
            let nd = du + w;
            let replace = match &best[v] {
                None => true,
                Some((dv, pv)) => nd < *dv || (nd == *dv && pu.iter().chain([&v]).lt(pv.iter())),
            };
            if replace {
                let mut np = pu.clone();
                np.push(v);
                best[v] = Some((nd, np));
            }
        }
    }
    match best[to].take() {
        Some((total_weight, waypoints)) if done[to] => Ok(Plan {
            waypoints,
            total_weight,
            created_at_step: step,
        }),
        _ => Err(PlanError::Unreachable { from, to }),
    }
}

pub fn next_waypoint(plan: &Plan, current: usize) -> NextWaypoint {
    match plan.waypoints.iter().position(|&w| w == current) {
        Some(i) if i + 1 == plan.waypoints.len() => NextWaypoint::Done,
        Some(i) => NextWaypoint::Next(plan.waypoints[i + 1]),
        None => NextWaypoint::Replan,
    }
}
