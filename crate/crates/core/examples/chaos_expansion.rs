//! Level-by-level perturbation series of the unnormalised filter and its partial sums.

use zakai_lab::chaos::truncated_expansion;
use zakai_lab::error::Result;
use zakai_lab::filtering::rho_grid;
use zakai_lab::grid::SpatialGrid;
use zakai_lab::model::ModelSpec;
use zakai_lab::sde::PathGrid;
use zakai_lab::semigroup::GridBackend;

fn main() -> Result<()> {
    let backend = GridBackend::new(ModelSpec::LinearGaussian { a: 1.0, sigma: 1.0, gain: 0.25 }.build()?, SpatialGrid::line(201, 4.0)?)?;
    let path = PathGrid::brownian(0.5, 500, 1, 3);
    let phi = backend.grid().sample(|x| (-x[0] * x[0] / 2.0).exp());
    let x0 = [0.5];
    let r = truncated_expansion(&backend, &x0, &path, &phi, 6)?;
    let exact = rho_grid(&backend, &path, &phi)?[backend.grid().nearest(&x0)];
    for (m, (c, s)) in r.levels.iter().zip(&r.partial_sums).enumerate() {
        println!("level {m}: {c:+.3e}   partial sum {s:.10}   gap {:+.2e}", s - exact);
    }
    Ok(())
}
