//! Lower bound on the total mass of the unnormalised filter along Brownian observation paths.

use zakai_lab::error::Result;
use zakai_lab::experiments::mass_bound_experiment;
use zakai_lab::grid::SpatialGrid;
use zakai_lab::model::ModelSpec;
use zakai_lab::semigroup::GridBackend;

fn main() -> Result<()> {
    let backend = GridBackend::new(ModelSpec::CubicSensor { a: 1.0, sigma: 1.0, gain: 1.0 }.build()?, SpatialGrid::line(201, 4.0)?)?;
    for (i, r) in mass_bound_experiment(&backend, &[0.0], 0.5, 500, 10, 17)?.iter().enumerate() {
        println!("path {i}: 1/mass {:.6} <= {:.3} ({}), with quadratic factor {:.3} ({})", r.lhs, r.rhs, r.pass, r.rhs_corrected, r.pass_corrected);
    }
    Ok(())
}
