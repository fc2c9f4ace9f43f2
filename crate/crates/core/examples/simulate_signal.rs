//! Euler-Maruyama signal and observation for the cubic-sensor model.

use zakai_lab::error::Result;
use zakai_lab::model::ModelSpec;
use zakai_lab::sde::generate_observation;

fn main() -> Result<()> {
    let model = ModelSpec::CubicSensor { a: 1.0, sigma: 1.0, gain: 1.0 }.build()?;
    let (path, signal) = generate_observation(&model, &[0.5], 1.0, 1000, 42)?;
    println!("{:>6} {:>10} {:>10}", "t", "X", "Y");
    for k in (0..=path.steps()).step_by(100) {
        println!("{:>6.2} {:>10.5} {:>10.5}", path.time(k), signal.at(k)[0], path.y(k, 0));
    }
    Ok(())
}
