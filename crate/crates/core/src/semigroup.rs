//! Heat, perturbed and adjoint semigroups on a grid or by Monte Carlo.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DVector;
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{assemble_generator, csr_mul, OperatorFields, Propagator, SpatialGrid};
use crate::model::SdeModel;
use crate::sde::{normal, substream, EulerStepper};
use crate::ufg::{bracket_field, enumerate_a0, ScalarField, VectorField};

/// A test function, either as a callable field or sampled on a grid.
#[derive(Clone, Debug)]
pub enum TestFunction {
    Callable(ScalarField),
    Sampled(DVector<f64>),
}

impl From<ScalarField> for TestFunction {
    fn from(f: ScalarField) -> Self {
        TestFunction::Callable(f)
    }
}

impl From<DVector<f64>> for TestFunction {
    fn from(v: DVector<f64>) -> Self {
        TestFunction::Sampled(v)
    }
}

/// Values of an operation at the backend's query points.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub values: DVector<f64>,
    /// Monte Carlo standard errors; absent for deterministic backends.
    pub stderr: Option<DVector<f64>>,
}

/// How the grid backend realises the adjoint semigroup.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjointMode {
    /// Transpose of the discrete semigroup.
    #[default]
    Transpose,
    /// Discretisation of the formal adjoint diffusion with its potential.
    Formal,
}

/// Finite-difference backend.
#[derive(Clone, Debug)]
pub struct GridBackend {
    grid: SpatialGrid,
    model: SdeModel,
    generator: CsrMatrix<f64>,
    cache: Arc<Mutex<HashMap<u64, Arc<Propagator>>>>,
}

impl GridBackend {
    pub fn new(model: SdeModel, grid: SpatialGrid) -> Result<Self> {
        if model.dim() != grid.dim() {
            return Err(LabError::DimensionMismatch(format!(
                "model is {}-dimensional, grid is {}-dimensional",
                model.dim(),
                grid.dim()
            )));
        }
        let generator = assemble_generator(
            &grid,
            &OperatorFields { drift: model.drift(), diffusion: model.diffusion(), potential: None },
        );
        Ok(GridBackend { grid, model, generator, cache: Arc::default() })
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn model(&self) -> &SdeModel {
        &self.model
    }

    /// Discrete generator `A_h`.
    pub fn generator(&self) -> &CsrMatrix<f64> {
        &self.generator
    }

    pub fn sample(&self, phi: &TestFunction) -> Result<DVector<f64>> {
        match phi {
            TestFunction::Callable(f) => {
                if f.dim() != self.grid.dim() {
                    return Err(LabError::DimensionMismatch("test function dimension differs from grid".into()));
                }
                Ok(self.grid.sample_field(f))
            }
            TestFunction::Sampled(v) => {
                if v.len() != self.grid.size() {
                    return Err(LabError::DimensionMismatch(format!(
                        "sampled function has {} values, grid has {}",
                        v.len(),
                        self.grid.size()
                    )));
                }
                Ok(v.clone())
            }
        }
    }

    pub fn sensor_values(&self, i: usize) -> DVector<f64> {
        self.grid.sample_field(&self.model.sensors()[i])
    }

    /// `P_t` on the grid; built once per distinct `t` and shared between clones.
    pub fn propagator(&self, t: f64) -> Result<Arc<Propagator>> {
        let key = t.to_bits();
        if let Some(p) = self.cache.lock().expect("propagator cache poisoned").get(&key) {
            return Ok(p.clone());
        }
        let p = Arc::new(Propagator::new(&self.generator, t)?);
        self.cache.lock().expect("propagator cache poisoned").insert(key, p.clone());
        Ok(p)
    }

    /// `A_h + diag(c)`.
    pub fn perturbed_generator(&self, c: &ScalarField) -> CsrMatrix<f64> {
        let cv = self.grid.sample_field(c);
        let mut coo = CooMatrix::new(cv.len(), cv.len());
        for (i, &v) in cv.iter().enumerate() {
            coo.push(i, i, v);
        }
        &self.generator + &CsrMatrix::from(&coo)
    }

    /// Generator of the formal adjoint diffusion, potential included.
    pub fn formal_adjoint_generator(&self) -> CsrMatrix<f64> {
        let adj = self.model.formal_adjoint();
        assemble_generator(
            &self.grid,
            &OperatorFields { drift: &adj.drift, diffusion: &adj.diffusion, potential: Some(&adj.potential) },
        )
    }

    pub fn heat(&self, t: f64, phi: &TestFunction) -> Result<DVector<f64>> {
        let v = self.sample(phi)?;
        Ok(self.propagator(t)?.apply(&v))
    }

    pub fn perturbed(&self, t: f64, phi: &TestFunction, c: &ScalarField) -> Result<DVector<f64>> {
        let v = self.sample(phi)?;
        Ok(Propagator::new(&self.perturbed_generator(c), t)?.apply(&v))
    }

    pub fn adjoint(&self, t: f64, g: &TestFunction, mode: AdjointMode) -> Result<DVector<f64>> {
        let v = self.sample(g)?;
        match mode {
            AdjointMode::Transpose => Ok(self.propagator(t)?.apply_transpose(&v)),
            AdjointMode::Formal => Ok(Propagator::new(&self.formal_adjoint_generator(), t)?.apply(&v)),
        }
    }

    pub fn apply_first_order(&self, v: &VectorField, phi: &TestFunction) -> Result<DVector<f64>> {
        let s = self.sample(phi)?;
        Ok(self.grid.apply_first_order(v, &s))
    }

    /// `A_h φ`.
    pub fn apply_generator(&self, phi: &DVector<f64>) -> DVector<f64> {
        csr_mul(&self.generator, phi)
    }

    /// `V_[α] φ`, with `V_[∅]` the identity.
    pub fn apply_bracket(&self, alpha: &crate::ufg::MultiIndex, phi: &DVector<f64>) -> Result<DVector<f64>> {
        if alpha.is_empty() {
            return Ok(phi.clone());
        }
        let field = bracket_field(&self.model.fields(), alpha)?;
        Ok(self.grid.apply_first_order(&field, phi))
    }

    /// `Σ_{α ∈ A0(ℓ)} ‖V_[α] φ‖∞` over interior grid points.
    pub fn h1_norm(&self, phi: &TestFunction) -> Result<f64> {
        let v = self.sample(phi)?;
        self.h1_norm_sampled(&v)
    }

    pub fn h1_norm_sampled(&self, v: &DVector<f64>) -> Result<f64> {
        let mut total = 0.0;
        for alpha in enumerate_a0(self.model.ufg_ell(), self.model.d1())? {
            total += self.grid.sup_interior(&self.apply_bracket(&alpha, v)?);
        }
        Ok(total)
    }
}

/// Monte Carlo backend evaluating at fixed query points.
#[derive(Clone, Debug)]
pub struct McBackend {
    model: SdeModel,
    points: Vec<Vec<f64>>,
    n_paths: usize,
    dt: f64,
    seed: u64,
}

impl McBackend {
    pub fn new(model: SdeModel, points: Vec<Vec<f64>>, n_paths: usize, dt: f64, seed: u64) -> Result<Self> {
        if points.iter().any(|p| p.len() != model.dim()) {
            return Err(LabError::DimensionMismatch("query point dimension differs from model".into()));
        }
        if n_paths < 2 || dt <= 0.0 {
            return Err(LabError::InvalidArgument("need at least two paths and a positive step".into()));
        }
        Ok(McBackend { model, points, n_paths, dt, seed })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    fn callable(phi: &TestFunction) -> Result<&ScalarField> {
        match phi {
            TestFunction::Callable(f) => Ok(f),
            TestFunction::Sampled(_) => {
                Err(LabError::Unsupported("the Monte Carlo backend needs callable test functions".into()))
            }
        }
    }

    /// `E[φ(X_t^x) exp(∫ c(X_s) ds)]` for every query point, with left-point weights.
    fn expectation(&self, model: &SdeModel, t: f64, phi: &ScalarField, c: Option<&ScalarField>) -> Result<Evaluation> {
        if t < 0.0 {
            return Err(LabError::InvalidArgument(format!("negative time {t}")));
        }
        let steps = (t / self.dt).round().max(if t > 0.0 { 1.0 } else { 0.0 }) as usize;
        let dt = if steps > 0 { t / steps as f64 } else { 0.0 };
        let d1 = model.d1();
        let mut means = Vec::with_capacity(self.points.len());
        let mut errs = Vec::with_capacity(self.points.len());
        for x0 in &self.points {
            let samples: Vec<f64> = (0..self.n_paths)
                .into_par_iter()
                .map(|p| {
                    let mut rng = substream(self.seed, p as u64);
                    let mut stepper = EulerStepper::new(model);
                    let mut x = x0.clone();
                    let mut db = vec![0.0; d1];
                    let mut integral = 0.0;
                    let sq = dt.sqrt();
                    for _ in 0..steps {
                        if let Some(c) = c {
                            integral += c.eval(&x) * dt;
                        }
                        db.iter_mut().for_each(|b| *b = sq * normal(&mut rng));
                        stepper.step(&mut x, dt, &db);
                    }
                    phi.eval(&x) * integral.exp()
                })
                .collect();
            let (m, s) = mean_stderr(&samples);
            means.push(m);
            errs.push(s);
        }
        Ok(Evaluation { values: DVector::from_vec(means), stderr: Some(DVector::from_vec(errs)) })
    }

    pub fn heat(&self, t: f64, phi: &TestFunction) -> Result<Evaluation> {
        self.expectation(&self.model, t, Self::callable(phi)?, None)
    }

    pub fn perturbed(&self, t: f64, phi: &TestFunction, c: &ScalarField) -> Result<Evaluation> {
        self.expectation(&self.model, t, Self::callable(phi)?, Some(c))
    }

    /// Perturbed semigroup of the formal adjoint diffusion.
    pub fn adjoint(&self, t: f64, g: &TestFunction) -> Result<Evaluation> {
        let adj = self.model.formal_adjoint();
        let m = SdeModel::new("adjoint", adj.drift, adj.diffusion, vec![], self.model.ufg_ell())?;
        self.expectation(&m, t, Self::callable(g)?, Some(&adj.potential))
    }

    /// `V·∇φ` from the analytic gradient.
    pub fn apply_first_order(&self, v: &VectorField, phi: &TestFunction) -> Result<Evaluation> {
        let f = Self::callable(phi)?;
        let vals = self.points.iter().map(|x| v.apply_to_gradient(x, &f.gradient(x)));
        Ok(Evaluation { values: DVector::from_iterator(self.points.len(), vals), stderr: None })
    }
}

/// Either backend behind one interface.
#[derive(Clone, Debug)]
pub enum Backend {
    Grid(GridBackend),
    MonteCarlo(McBackend),
}

impl Backend {
    pub fn as_grid(&self) -> Result<&GridBackend> {
        match self {
            Backend::Grid(g) => Ok(g),
            Backend::MonteCarlo(_) => Err(LabError::Unsupported("operation needs the grid backend".into())),
        }
    }
}

fn exact(values: DVector<f64>) -> Evaluation {
    Evaluation { values, stderr: None }
}

pub fn heat_semigroup(backend: &Backend, t: f64, phi: &TestFunction) -> Result<Evaluation> {
    match backend {
        Backend::Grid(g) => g.heat(t, phi).map(exact),
        Backend::MonteCarlo(m) => m.heat(t, phi),
    }
}

pub fn perturbed_semigroup(backend: &Backend, t: f64, phi: &TestFunction, c: &ScalarField) -> Result<Evaluation> {
    match backend {
        Backend::Grid(g) => g.perturbed(t, phi, c).map(exact),
        Backend::MonteCarlo(m) => m.perturbed(t, phi, c),
    }
}

/// The grid backend uses the formal adjoint construction here.
pub fn adjoint_semigroup(backend: &Backend, t: f64, g: &TestFunction) -> Result<Evaluation> {
    match backend {
        Backend::Grid(b) => b.adjoint(t, g, AdjointMode::Formal).map(exact),
        Backend::MonteCarlo(m) => m.adjoint(t, g),
    }
}

pub fn apply_first_order(backend: &Backend, v: &VectorField, phi: &TestFunction) -> Result<Evaluation> {
    match backend {
        Backend::Grid(g) => g.apply_first_order(v, phi).map(exact),
        Backend::MonteCarlo(m) => m.apply_first_order(v, phi),
    }
}

pub fn h1_norm(backend: &Backend, phi: &TestFunction) -> Result<f64> {
    backend.as_grid()?.h1_norm(phi)
}

/// Sample mean and its standard error.
pub fn mean_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}
