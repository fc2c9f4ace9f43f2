//! Conditional mean of a linear model: Kalman-Bucy, particle filter, grid Zakai and weighted Monte Carlo.

use zakai_lab::error::Result;
use zakai_lab::filtering::{filter_grid, kalman_bucy_oracle, particle_filter_oracle, rho_mc, LinearParams, McSettings};
use zakai_lab::grid::SpatialGrid;
use zakai_lab::model::ModelSpec;
use zakai_lab::sde::generate_observation;
use zakai_lab::semigroup::GridBackend;
use zakai_lab::ufg::ScalarField;

fn main() -> Result<()> {
    let params = LinearParams { a: 1.0, sigma: 1.0, gain: 1.0 };
    let model = ModelSpec::LinearGaussian { a: params.a, sigma: params.sigma, gain: params.gain }.build()?;
    let (path, signal) = generate_observation(&model, &[0.0], 0.5, 500, 7)?;
    let identity = ScalarField::from_value(1, |x| x[0]);
    let (mean, var) = kalman_bucy_oracle(params, 0.0, 0.0, &path);
    let pf = particle_filter_oracle(&model, &[0.0], &path, &identity, 10_000, 20, 8)?;
    let mc = rho_mc(&model, &[0.0], &path, &identity, McSettings { n_paths: 50_000, seed: 9 })?;
    let grid = filter_grid(&GridBackend::new(model, SpatialGrid::line(201, 5.0)?)?, &[0.0], &path, &identity)?;
    println!("true X_T          {:+.5}", signal.last()[0]);
    println!("Kalman-Bucy       {mean:+.5} (variance {var:.5})");
    println!("particle filter   {:+.5} +- {:.5}", pf.pi_phi, pf.pi_stderr.unwrap_or(f64::NAN));
    println!("weighted MC       {:+.5} +- {:.5}", mc.pi_phi, mc.pi_stderr.unwrap_or(f64::NAN));
    println!("grid Zakai        {:+.5}", grid.pi_phi);
    Ok(())
}
