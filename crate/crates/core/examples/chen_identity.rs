//! Multiplicative identity of iterated integrals and the neo-classical inequality.

use zakai_lab::error::Result;
use zakai_lab::experiments::{chen_experiment, neoclassical_experiment};
use zakai_lab::sde::PathGrid;
use zakai_lab::signature::{chen_check, neoclassical_check};

fn main() -> Result<()> {
    let path = PathGrid::brownian(1.0, 4096, 2, 11);
    println!("single triple (0, 1000, 4096): {:.2e}", chen_check(&path, 4, 0, 1000, 4096)?);
    let c = chen_experiment(&path, 4, 50, 11)?;
    println!("{} random triples, max violation {:.2e}", c.triples, c.max_violation);
    let r = neoclassical_check(2.0, 5, 0.3, 0.9)?;
    println!("q = 2, n = 5: lhs {:.6} <= rhs {:.6}", r.lhs, r.rhs);
    let n = neoclassical_experiment(1000, 11)?;
    println!("{} random cases, {} failures, min slack {:.3e}", n.cases, n.failures, n.min_slack);
    Ok(())
}
