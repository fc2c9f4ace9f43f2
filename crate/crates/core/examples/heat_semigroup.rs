//! Grid heat semigroup of Brownian motion against the Gaussian convolution formula.

use zakai_lab::error::Result;
use zakai_lab::grid::SpatialGrid;
use zakai_lab::model::ModelSpec;
use zakai_lab::semigroup::GridBackend;

fn main() -> Result<()> {
    let backend = GridBackend::new(ModelSpec::Bm1d { gain: 0.0 }.build()?, SpatialGrid::line(401, 8.0)?)?;
    let phi = backend.grid().sample(|x| (-x[0] * x[0] / 2.0).exp());
    for t in [0.1, 0.5, 1.0, 2.0] {
        let v = backend.heat(t, &phi.clone().into())?;
        let exact = backend.grid().sample(|x| (-x[0] * x[0] / (2.0 * (1.0 + t))).exp() / (1.0 + t).sqrt());
        println!("t = {t:<4} T_t phi(0) = {:.6}, max interior error {:.2e}", v[backend.grid().nearest(&[0.0])], backend.grid().sup_interior(&(&v - &exact)));
    }
    Ok(())
}
