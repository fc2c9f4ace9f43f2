//! Pathwise (integrated-by-parts) terms against the stochastic-integral form of each level.

use zakai_lab::chaos::r_operator_grid;
use zakai_lab::error::Result;
use zakai_lab::grid::SpatialGrid;
use zakai_lab::model::ModelSpec;
use zakai_lab::robust::{ibp_level, ibp_terms};
use zakai_lab::sde::PathGrid;
use zakai_lab::semigroup::GridBackend;

fn main() -> Result<()> {
    for term in ibp_terms(2)? {
        println!("{term}");
    }
    let backend = GridBackend::new(ModelSpec::LinearGaussian { a: 1.0, sigma: 1.0, gain: 1.0 }.build()?, SpatialGrid::line(101, 4.0)?)?;
    let phi = backend.grid().sample(|x| (-x[0] * x[0] / 2.0).exp());
    let x = backend.grid().nearest(&[0.5]);
    for steps in [128, 256, 512, 1024] {
        let path = PathGrid::brownian(0.5, steps, 1, 5);
        let row: Vec<String> = (1..=3)
            .map(|m| {
                let pathwise = ibp_level(&backend, &path, 0, steps, &phi, m)?.total;
                let direct = r_operator_grid(&backend, &path, &vec![0; m], 0, steps, &phi)?;
                Ok(format!("{:.2e}", (pathwise[x] - direct[x]).abs()))
            })
            .collect::<Result<_>>()?;
        println!("steps {steps:>5}: |pathwise - direct| at levels 1..3 = {}", row.join(", "));
    }
    Ok(())
}
