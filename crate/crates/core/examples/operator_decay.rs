//! Norm of single-word perturbation operators as the time interval shrinks.

use zakai_lab::chaos::operator_norm_decay;
use zakai_lab::error::Result;
use zakai_lab::grid::SpatialGrid;
use zakai_lab::model::ModelSpec;
use zakai_lab::sde::PathGrid;
use zakai_lab::semigroup::GridBackend;

fn main() -> Result<()> {
    let backend = GridBackend::new(ModelSpec::LinearGaussian { a: 1.0, sigma: 1.0, gain: 1.0 }.build()?, SpatialGrid::line(101, 4.0)?)?;
    let paths: Vec<PathGrid> = (0..10).map(|i| PathGrid::brownian(0.5, 2048, 1, 23 + i)).collect();
    for m in 1..=3 {
        let r = operator_norm_decay(&backend, &paths, m, 0.4, 4..=9, 16)?;
        let norms: Vec<String> = r.samples.iter().map(|(len, n)| format!("{len:.4}: {n:.2e}")).collect();
        println!("word length {m}: slope {:.3}, need >= {:.1}, pass {}\n  {}", r.slope, m as f64 * r.gamma - 0.1, r.pass, norms.join("  "));
    }
    Ok(())
}
