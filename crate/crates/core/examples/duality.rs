//! Forward and adjoint series agree level by level when paired.

use zakai_lab::error::Result;
use zakai_lab::experiments::duality_experiment;
use zakai_lab::grid::SpatialGrid;
use zakai_lab::model::ModelSpec;
use zakai_lab::sde::PathGrid;
use zakai_lab::semigroup::{AdjointMode, GridBackend};

fn main() -> Result<()> {
    let backend = GridBackend::new(ModelSpec::LinearGaussian { a: 1.0, sigma: 1.0, gain: 1.0 }.build()?, SpatialGrid::line(101, 4.0)?)?;
    let phi = backend.grid().sample(|x| (-x[0] * x[0] / 0.98).exp());
    let g = backend.grid().sample(|x| (-(x[0] - 0.5).powi(2) / 0.5).exp());
    let path = PathGrid::brownian(0.5, 500, 1, 13);
    for mode in [AdjointMode::Transpose, AdjointMode::Formal] {
        let s = duality_experiment(&backend, &path, &phi, &g, 4, mode)?;
        println!("{mode:?}: max residual {:.2e} (tolerance {:.0e})", s.max_residual, s.tolerance);
        for r in &s.rows {
            println!("  level {:>5}: <phi, adjoint> {:+.10} vs <forward, g> {:+.10}", r.level.map_or("sum".into(), |l| l.to_string()), r.adjoint, r.forward);
        }
    }
    Ok(())
}
