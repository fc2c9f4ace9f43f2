//! Euler–Maruyama simulation of the signal, its Jacobian flow, and observation paths.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::{ItoScratch, SdeModel};
use crate::ufg::fd_jacobian;

/// Independent random stream number `stream` derived from a root seed.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Uniform time grid carrying an observation path `Y` and, optionally, driving increments `dB`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathGrid {
    dt: f64,
    steps: usize,
    d1: usize,
    d2: usize,
    db: Vec<f64>,
    y: Vec<f64>,
    seed: u64,
}

impl PathGrid {
    /// Grid with no driving noise and `Y ≡ 0`.
    pub fn zeros(horizon: f64, steps: usize, d2: usize) -> Self {
        PathGrid { dt: horizon / steps as f64, steps, d1: 0, d2, db: vec![], y: vec![0.0; (steps + 1) * d2], seed: 0 }
    }

    /// Observation path given by its values on the grid (row `k` holds `Y_{t_k}`).
    pub fn from_values(horizon: f64, steps: usize, d2: usize, y: Vec<f64>) -> Result<Self> {
        if y.len() != (steps + 1) * d2 {
            return Err(LabError::DimensionMismatch(format!(
                "expected {} observation values, got {}",
                (steps + 1) * d2,
                y.len()
            )));
        }
        if y[..d2].iter().any(|&v| v != 0.0) {
            return Err(LabError::InvalidArgument("observation path must start at 0".into()));
        }
        Ok(PathGrid { dt: horizon / steps as f64, steps, d1: 0, d2, db: vec![], y, seed: 0 })
    }

    /// `Y` a standard `d2`-dimensional Brownian path.
    pub fn brownian(horizon: f64, steps: usize, d2: usize, seed: u64) -> Self {
        let mut rng = substream(seed, 0);
        let dt = horizon / steps as f64;
        let sq = dt.sqrt();
        let mut y = vec![0.0; (steps + 1) * d2];
        for k in 0..steps {
            for i in 0..d2 {
                y[(k + 1) * d2 + i] = y[k * d2 + i] + sq * normal(&mut rng);
            }
        }
        PathGrid { dt, steps, d1: 0, d2, db: vec![], y, seed }
    }

    /// Same `Y`, with fresh driving increments for `d1` Brownian motions.
    pub fn with_driving_noise(mut self, d1: usize, seed: u64) -> Self {
        let mut rng = substream(seed, 1);
        let sq = self.dt.sqrt();
        self.db = (0..self.steps * d1).map(|_| sq * normal(&mut rng)).collect();
        self.d1 = d1;
        self
    }

    pub fn with_driving_increments(mut self, d1: usize, db: Vec<f64>) -> Result<Self> {
        if db.len() != self.steps * d1 {
            return Err(LabError::DimensionMismatch("driving increments have the wrong length".into()));
        }
        self.d1 = d1;
        self.db = db;
        Ok(self)
    }

    /// Prefix of the path up to step `steps`.
    pub fn truncated(&self, steps: usize) -> Result<Self> {
        if steps > self.steps {
            return Err(LabError::InvalidArgument(format!("cannot truncate {} steps to {steps}", self.steps)));
        }
        Ok(PathGrid {
            dt: self.dt,
            steps,
            d1: self.d1,
            d2: self.d2,
            db: self.db[..(steps * self.d1).min(self.db.len())].to_vec(),
            y: self.y[..(steps + 1) * self.d2].to_vec(),
            seed: self.seed,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn d1(&self) -> usize {
        self.d1
    }

    pub fn d2(&self) -> usize {
        self.d2
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn time(&self, k: usize) -> f64 {
        self.dt * k as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Grid index of time `t`, if `t` lies on the grid.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let r = t / self.dt;
        let k = r.round();
        if (r - k).abs() > 1e-9 || k < 0.0 || k as usize > self.steps {
            return Err(LabError::InvalidArgument(format!("time {t} is not a grid point")));
        }
        Ok(k as usize)
    }

    pub fn y(&self, k: usize, i: usize) -> f64 {
        self.y[k * self.d2 + i]
    }

    pub fn y_values(&self) -> &[f64] {
        &self.y
    }

    /// `Y^i_{t_{k+1}} - Y^i_{t_k}`.
    pub fn dy(&self, k: usize, i: usize) -> f64 {
        self.y[(k + 1) * self.d2 + i] - self.y[k * self.d2 + i]
    }

    pub fn db(&self, k: usize, i: usize) -> f64 {
        self.db[k * self.d1 + i]
    }

    pub fn has_driving_noise(&self) -> bool {
        !self.db.is_empty()
    }

    /// Every `factor`-th grid point; driving noise is summed over merged steps.
    pub fn subsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.steps % factor != 0 {
            return Err(LabError::InvalidArgument(format!("{factor} does not divide {} steps", self.steps)));
        }
        let steps = self.steps / factor;
        let y = (0..=steps).flat_map(|k| (0..self.d2).map(move |i| (k, i))).map(|(k, i)| self.y(k * factor, i)).collect();
        let db = if self.db.is_empty() {
            vec![]
        } else {
            (0..steps)
                .flat_map(|k| (0..self.d1).map(move |i| (k, i)))
                .map(|(k, i)| (0..factor).map(|j| self.db(k * factor + j, i)).sum())
                .collect()
        };
        Ok(PathGrid { dt: self.dt * factor as f64, steps, d1: self.d1, d2: self.d2, db, y, seed: self.seed })
    }

    /// Adds `eps` to every `Y` value after time zero.
    pub fn shifted(&self, eps: f64) -> Self {
        let mut g = self.clone();
        for v in g.y.iter_mut().skip(self.d2) {
            *v += eps;
        }
        g
    }

    pub fn sup_abs(&self, i: usize) -> f64 {
        (0..=self.steps).map(|k| self.y(k, i).abs()).fold(0.0, f64::max)
    }
}

/// Grid values of a state trajectory; row `k` holds `X_{t_k}`.
#[derive(Clone, Debug, PartialEq)]
pub struct StatePath {
    dim: usize,
    values: Vec<f64>,
}

impl StatePath {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.at(self.len() - 1)
    }
}

/// Allocation-free Euler–Maruyama stepper on the Ito form of the signal.
pub struct EulerStepper<'a> {
    model: &'a SdeModel,
    drift: Vec<f64>,
    v: Vec<f64>,
    pre: Vec<f64>,
    scratch: ItoScratch,
}

impl<'a> EulerStepper<'a> {
    pub fn new(model: &'a SdeModel) -> Self {
        let n = model.dim();
        EulerStepper { model, drift: vec![0.0; n], v: vec![0.0; n], pre: vec![0.0; n], scratch: ItoScratch::new(n) }
    }

    /// Advances `x` in place by one step with driving increments `db`.
    pub fn step(&mut self, x: &mut [f64], dt: f64, db: &[f64]) {
        self.model.ito_drift_into(x, &mut self.drift, &mut self.scratch);
        self.pre.copy_from_slice(x);
        for (xi, bi) in x.iter_mut().zip(&self.drift) {
            *xi += bi * dt;
        }
        for (i, field) in self.model.diffusion().iter().enumerate() {
            field.eval_into(&self.pre, &mut self.v);
            for (xi, vi) in x.iter_mut().zip(&self.v) {
                *xi += vi * db[i];
            }
        }
    }

    /// Allocation-free step for scalar signals.
    pub fn step_scalar(&mut self, x: f64, dt: f64, db: &[f64]) -> f64 {
        let xs = [x];
        self.model.ito_drift_into(&xs, &mut self.drift, &mut self.scratch);
        let mut out = x + self.drift[0] * dt;
        for (i, field) in self.model.diffusion().iter().enumerate() {
            field.eval_into(&xs, &mut self.v);
            out += self.v[0] * db[i];
        }
        out
    }
}

/// Signal path driven by the increments stored in `grid`.
pub fn simulate_signal(model: &SdeModel, x0: &[f64], grid: &PathGrid) -> Result<StatePath> {
    if x0.len() != model.dim() {
        return Err(LabError::DimensionMismatch("initial point has the wrong dimension".into()));
    }
    if model.d1() > 0 && (!grid.has_driving_noise() || grid.d1() != model.d1()) {
        return Err(LabError::InvalidArgument("grid must carry driving increments for every diffusion field".into()));
    }
    let n = model.dim();
    let mut values = Vec::with_capacity((grid.steps() + 1) * n);
    values.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut db = vec![0.0; model.d1()];
    let mut stepper = EulerStepper::new(model);
    for k in 0..grid.steps() {
        for (i, b) in db.iter_mut().enumerate() {
            *b = grid.db(k, i);
        }
        stepper.step(&mut x, grid.dt(), &db);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Divergence { step: k + 1 });
        }
        values.extend_from_slice(&x);
    }
    Ok(StatePath { dim: n, values })
}

/// `Y_{k+1} = Y_k + h(X_k) Δ + ΔW_k` per channel; `dw` is row-major `steps × d2`.
pub fn simulate_observation(model: &SdeModel, signal: &StatePath, grid: &PathGrid, dw: &[f64]) -> Result<PathGrid> {
    let d2 = model.d2();
    let steps = grid.steps();
    if signal.len() != steps + 1 || signal.dim() != model.dim() {
        return Err(LabError::DimensionMismatch("signal path does not match the grid".into()));
    }
    if dw.len() != steps * d2 {
        return Err(LabError::DimensionMismatch(format!("expected {} noise increments, got {}", steps * d2, dw.len())));
    }
    let mut y = vec![0.0; (steps + 1) * d2];
    for k in 0..steps {
        let x = signal.at(k);
        for (i, h) in model.sensors().iter().enumerate() {
            y[(k + 1) * d2 + i] = y[k * d2 + i] + h.eval(x) * grid.dt() + dw[k * d2 + i];
        }
    }
    let mut out = PathGrid::from_values(grid.horizon(), steps, d2, y)?;
    out.d1 = grid.d1;
    out.db = grid.db.clone();
    out.seed = grid.seed;
    Ok(out)
}

/// Simulates a signal from `x0` and returns the resulting observation path along with the signal.
pub fn generate_observation(model: &SdeModel, x0: &[f64], horizon: f64, steps: usize, seed: u64) -> Result<(PathGrid, StatePath)> {
    let mut base = PathGrid::zeros(horizon, steps, model.d2()).with_driving_noise(model.d1(), seed);
    base.seed = seed;
    let signal = simulate_signal(model, x0, &base)?;
    let mut rng = substream(seed, 2);
    let sq = base.dt().sqrt();
    let dw: Vec<f64> = (0..steps * model.d2()).map(|_| sq * normal(&mut rng)).collect();
    let obs = simulate_observation(model, &signal, &base, &dw)?;
    Ok((obs, signal))
}

/// Variational Euler scheme `J_{k+1} = J_k + Db J_k Δ + Σ DV_i J_k ΔB^i`, `J_0 = I`.
///
/// Entry `(i, j)` of each matrix is `∂X^i / ∂x_j`.
pub fn jacobian_flow(model: &SdeModel, x0: &[f64], grid: &PathGrid) -> Result<Vec<DMatrix<f64>>> {
    let path = simulate_signal(model, x0, grid)?;
    let n = model.dim();
    let mut out = Vec::with_capacity(grid.steps() + 1);
    let mut j = DMatrix::<f64>::identity(n, n);
    out.push(j.clone());
    let drift = |x: &[f64], o: &mut [f64]| {
        let b = model.ito_drift(x);
        o.copy_from_slice(&b);
    };
    let mut db_jac = vec![0.0; n * n];
    for k in 0..grid.steps() {
        let x = path.at(k);
        fd_jacobian(&drift, n, x, &mut db_jac);
        let mut inc = DMatrix::from_row_slice(n, n, &db_jac) * grid.dt();
        for (i, field) in model.diffusion().iter().enumerate() {
            inc += DMatrix::from_row_slice(n, n, &field.jacobian(x)) * grid.db(k, i);
        }
        j = &j + inc * &j;
        if j.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Divergence { step: k + 1 });
        }
        out.push(j.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::linear_sensor;

    #[test]
    fn zero_fields_stay_put() {
        let m = SdeModel::new(
            "zero",
            crate::ufg::VectorField::zero(2),
            vec![crate::ufg::VectorField::zero(2)],
            vec![],
            1,
        )
        .unwrap();
        let g = PathGrid::zeros(1.0, 50, 0).with_driving_noise(1, 3);
        let p = simulate_signal(&m, &[0.5, -1.0], &g).unwrap();
        assert_eq!(p.last(), &[0.5, -1.0]);
        let j = jacobian_flow(&m, &[0.5, -1.0], &g).unwrap();
        assert_eq!(j.last().unwrap(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn constant_sensor_without_noise() {
        let m = SdeModel::ou(1.0, 1.0, crate::ufg::ScalarField::constant(1, 2.0), "c");
        let g = PathGrid::zeros(1.0, 10, 1).with_driving_noise(1, 1);
        let s = simulate_signal(&m, &[0.0], &g).unwrap();
        let obs = simulate_observation(&m, &s, &g, &vec![0.0; 10]).unwrap();
        for k in 0..=10 {
            assert!((obs.y(k, 0) - 2.0 * g.time(k)).abs() < 1e-14);
        }
        let _ = linear_sensor(1.0);
    }
}
