//! Small-time blow-up rate of derivatives of the heat semigroup applied to a near step.

use zakai_lab::error::Result;
use zakai_lab::gradient::{dyadic_times, gradient_exponent_fit, Target};
use zakai_lab::grid::SpatialGrid;
use zakai_lab::model::ModelSpec;
use zakai_lab::semigroup::GridBackend;
use zakai_lab::ufg::MultiIndex;

fn main() -> Result<()> {
    let backend = GridBackend::new(ModelSpec::Bm1d { gain: 0.0 }.build()?, SpatialGrid::line(401, 1.0)?)?;
    let phi = backend.grid().sample(|x| (x[0] / 0.003).tanh());
    let times = dyadic_times(0.1, 7);
    let one = MultiIndex::new(vec![1]);
    for (alpha, beta) in [(MultiIndex::empty(), MultiIndex::empty()), (one.clone(), MultiIndex::empty()), (one.clone(), one.clone())] {
        let r = gradient_exponent_fit(&backend, Target::Heat, &alpha, &beta, &phi, &times, None)?;
        println!("alpha {:?} beta {:?}: slope {:+.3}, theory {:+.1}, pass {}", alpha, beta, r.slope, r.theoretical, r.pass);
    }
    Ok(())
}
