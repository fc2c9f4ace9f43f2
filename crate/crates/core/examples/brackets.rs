//! Iterated Lie brackets of the fields of a planar model.

use zakai_lab::error::Result;
use zakai_lab::ufg::{bracket_field, enumerate_a1, VectorField};

fn main() -> Result<()> {
    // V0 rotates, V1 is a nonlinear shear; together they span the plane away from the axis.
    let v0 = VectorField::new(2, |x, o| { o[0] = -x[1]; o[1] = x[0]; }, |_, j| { j.copy_from_slice(&[0.0, -1.0, 1.0, 0.0]); });
    let v1 = VectorField::from_value(2, |x, o| { o[0] = x[1].sin(); o[1] = 0.0; });
    let fields = [v0, v1];
    let x = [0.3, 0.7];
    for alpha in enumerate_a1(3, 1)? {
        let v = bracket_field(&fields, &alpha)?.eval(&x);
        println!("{:?} (degree {}): [{:+.6}, {:+.6}]", alpha.entries(), alpha.degree(), v[0], v[1]);
    }
    Ok(())
}
