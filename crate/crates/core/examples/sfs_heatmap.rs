//! ASCII heatmap of analytic SFS from one reference cell on FourRoom.
//! Each cell shows the best SFS over headings, scaled to 0-9.
//!
//! cargo run --release --example sfs_heatmap -- [x] [y]

use sfl::gridworld::{ActionMode, GridMap, GridState, Heading, TabularDynamics, DEFAULT_STATE_CAP};
use sfl::similarity::heatmap;
use sfl::successor::{analytic_sr, AnalyticSf};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let x: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2);
    let y: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2);

    let map = GridMap::parse(include_str!("../maps/fourroom.txt"))?;
    let dynamics = TabularDynamics::from_grid(&map, ActionMode::Full, DEFAULT_STATE_CAP)?;
    let sr = analytic_sr(&dynamics, 0.95)?;
    let source = AnalyticSf::new(&map, &sr);
    let reference = GridState::new(x, y, Heading::E);
    let rows = heatmap(&map, &source, &reference)?;

    let mut best = vec![vec![None::<f64>; map.width()]; map.height()];
    for r in &rows {
        let cell = &mut best[r.y][r.x];
        *cell = Some(cell.map_or(r.sfs, |v: f64| v.max(r.sfs)));
    }
    println!("reference {reference}");
    for (yy, line) in best.iter().enumerate() {
        let s: String = line
            .iter()
            .enumerate()
            .map(|(xx, v)| match v {
                _ if (xx, yy) == (x, y) => '@',
                Some(v) => char::from_digit((v * 9.0).round().clamp(0.0, 9.0) as u32, 10).unwrap(),
                None => '#',
            })
            .collect();
        println!("  {s}");
    }
    Ok(())
}
