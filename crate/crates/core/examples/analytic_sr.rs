//! Closed-form successor representation under the uniform-random policy.
//!
//! cargo run --release --example analytic_sr -- [gamma]

use sfl::gridworld::{ActionMode, GridMap, TabularDynamics, DEFAULT_STATE_CAP};
use sfl::similarity::sfs;
use sfl::successor::{analytic_sr, SfVector};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gamma: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0.5);

    let line = TabularDynamics::line(3);
    let sr = analytic_sr(&line, gamma)?;
    println!("Line3, gamma = {gamma}");
    for s in 0..3 {
        let row = sr.state_row(s);
        println!("  M[{s}] = [{:.4}, {:.4}, {:.4}]  sum {:.4}", row[0], row[1], row[2], row.iter().sum::<f64>());
    }
    let row = |s| SfVector::state(sr.state_row(s));
    println!("  sfs(0,1) = {:.4}", sfs(&row(0), &row(1))?);
    println!("  sfs(0,2) = {:.4}", sfs(&row(0), &row(2))?);

    let map = GridMap::parse(include_str!("../maps/fourroom.txt"))?;
    let dynamics = TabularDynamics::from_grid(&map, ActionMode::Full, DEFAULT_STATE_CAP)?;
    let t0 = std::time::Instant::now();
    let sr = analytic_sr(&dynamics, gamma)?;
    let worst = sr
        .m
        .row_iter()
        .map(|r| (r.sum() - 1.0 / (1.0 - gamma)).abs())
        .fold(0.0, f64::max);
    println!(
        "FourRoom: {} states, solved in {:.1?}, max row-sum error {worst:.1e}",
        sr.num_states(),
        t0.elapsed()
    );
    Ok(())
}
