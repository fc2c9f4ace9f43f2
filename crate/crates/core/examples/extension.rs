//! Rebuilding the top signature level from the lower ones by refining partitions.

use zakai_lab::error::Result;
use zakai_lab::experiments::extension_experiment;
use zakai_lab::sde::PathGrid;
use zakai_lab::signature::Schedule;

fn main() -> Result<()> {
    let path = PathGrid::brownian(1.0, 256, 2, 19);
    for n in 3..=4 {
        for r in extension_experiment(&path, n, &[Schedule::Dyadic, Schedule::Ternary, Schedule::Greedy])? {
            println!("level {n} {:?}: {} refinements, max difference {:.2e}", r.schedule, r.refinements, r.max_difference);
        }
    }
    Ok(())
}
