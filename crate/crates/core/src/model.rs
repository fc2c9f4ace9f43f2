//! Signal/observation models: drift `V0`, diffusion fields `V1..Vd1`, sensors `h`.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::ufg::{ScalarField, VectorField};

/// Model specification as it appears in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// dX = -a X dt + sigma dB, h(x) = gain x.
    LinearGaussian {
        #[serde(default = "one")]
        a: f64,
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default = "one")]
        gain: f64,
    },
    /// dX = -a X dt + sigma dB, h(x) = gain tanh(x^3).
    CubicSensor {
        #[serde(default = "one")]
        a: f64,
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default = "one")]
        gain: f64,
    },
    /// Pure Brownian signal with sensor h(x) = gain x.
    #[serde(rename = "bm-1d")]
    Bm1d {
        #[serde(default)]
        gain: f64,
    },
    /// Affine drift, constant diffusion columns, linear sensors in any dimension.
    Affine {
        drift_matrix: Vec<Vec<f64>>,
        drift_offset: Vec<f64>,
        diffusion: Vec<Vec<f64>>,
        sensors: Vec<Vec<f64>>,
        #[serde(default = "one_usize")]
        ufg_ell: usize,
    },
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

impl ModelSpec {
    pub fn build(&self) -> Result<SdeModel> {
        match *self {
            ModelSpec::LinearGaussian { a, sigma, gain } => Ok(SdeModel::ou(a, sigma, linear_sensor(gain), "linear-gaussian")),
            ModelSpec::CubicSensor { a, sigma, gain } => Ok(SdeModel::ou(a, sigma, tanh_cubic_sensor(gain), "cubic-sensor")),
            ModelSpec::Bm1d { gain } => Ok(SdeModel::ou(0.0, 1.0, linear_sensor(gain), "bm-1d")),
            ModelSpec::Affine { ref drift_matrix, ref drift_offset, ref diffusion, ref sensors, ufg_ell } => {
                let n = drift_offset.len();
                if drift_matrix.len() != n || drift_matrix.iter().any(|r| r.len() != n) {
                    return Err(LabError::DimensionMismatch(format!("drift_matrix must be {n}x{n}")));
                }
                let m: Vec<f64> = drift_matrix.iter().flatten().copied().collect();
                let drift = VectorField::affine(m, drift_offset.clone());
                let mut diff = Vec::new();
                for col in diffusion {
                    if col.len() != n {
                        return Err(LabError::DimensionMismatch(format!("diffusion column must have length {n}")));
                    }
                    diff.push(VectorField::constant(col.clone()));
                }
                let mut hs = Vec::new();
                for s in sensors {
                    if s.len() != n {
                        return Err(LabError::DimensionMismatch(format!("sensor row must have length {n}")));
                    }
                    let (s1, s2) = (s.clone(), s.clone());
                    hs.push(ScalarField::new(
                        n,
                        move |x| s1.iter().zip(x).map(|(a, b)| a * b).sum(),
                        move |_, g| g.copy_from_slice(&s2),
                    ));
                }
                SdeModel::new("affine", drift, diff, hs, ufg_ell)
            }
        }
    }
}

pub fn linear_sensor(gain: f64) -> ScalarField {
    ScalarField::scalar(move |x| gain * x, move |_| gain)
}

pub fn tanh_cubic_sensor(gain: f64) -> ScalarField {
    ScalarField::scalar(
        move |x| gain * (x * x * x).tanh(),
        move |x| {
            let t = (x * x * x).tanh();
            gain * 3.0 * x * x * (1.0 - t * t)
        },
    )
}

/// Collection `(V0, .., Vd1, h1, .., hd2)` together with the UFG index `ell`.
#[derive(Clone, Debug)]
pub struct SdeModel {
    name: String,
    dim: usize,
    drift: VectorField,
    diffusion: Vec<VectorField>,
    sensors: Vec<ScalarField>,
    ufg_ell: usize,
}

impl SdeModel {
    pub fn new(
        name: impl Into<String>,
        drift: VectorField,
        diffusion: Vec<VectorField>,
        sensors: Vec<ScalarField>,
        ufg_ell: usize,
    ) -> Result<Self> {
        let dim = drift.dim();
        if diffusion.iter().any(|v| v.dim() != dim) || sensors.iter().any(|h| h.dim() != dim) {
            return Err(LabError::DimensionMismatch("all fields must share the state dimension".into()));
        }
        if ufg_ell < 1 {
            return Err(LabError::InvalidArgument("ufg_ell must be at least 1".into()));
        }
        Ok(SdeModel { name: name.into(), dim, drift, diffusion, sensors, ufg_ell })
    }

    /// Scalar OU signal `dX = -a X dt + sigma dB` with one sensor.
    pub fn ou(a: f64, sigma: f64, sensor: ScalarField, name: &str) -> Self {
        let drift = VectorField::scalar(move |x| -a * x, move |_| -a);
        let diff = VectorField::constant(vec![sigma]);
        SdeModel::new(name, drift, vec![diff], vec![sensor], 1).expect("scalar model is consistent")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn d1(&self) -> usize {
        self.diffusion.len()
    }

    pub fn d2(&self) -> usize {
        self.sensors.len()
    }

    pub fn ufg_ell(&self) -> usize {
        self.ufg_ell
    }

    pub fn drift(&self) -> &VectorField {
        &self.drift
    }

    pub fn diffusion(&self) -> &[VectorField] {
        &self.diffusion
    }

    pub fn sensors(&self) -> &[ScalarField] {
        &self.sensors
    }

    /// `[V0, V1, .., Vd1]`.
    pub fn fields(&self) -> Vec<VectorField> {
        let mut f = vec![self.drift.clone()];
        f.extend(self.diffusion.iter().cloned());
        f
    }

    pub fn with_sensors(&self, sensors: Vec<ScalarField>) -> Result<Self> {
        SdeModel::new(self.name.clone(), self.drift.clone(), self.diffusion.clone(), sensors, self.ufg_ell)
    }

    pub fn with_ell(mut self, ell: usize) -> Self {
        self.ufg_ell = ell.max(1);
        self
    }

    /// Ito drift `V0 + ½ Σ DV_i V_i`, written into `out`.
    pub fn ito_drift_into(&self, x: &[f64], out: &mut [f64], scratch: &mut ItoScratch) {
        self.drift.eval_into(x, out);
        let n = self.dim;
        for v in &self.diffusion {
            v.eval_into(x, &mut scratch.v);
            v.jacobian_into(x, &mut scratch.jac);
            for i in 0..n {
                let mut s = 0.0;
                for j in 0..n {
                    s += scratch.jac[i * n + j] * scratch.v[j];
                }
                out[i] += 0.5 * s;
            }
        }
    }

    pub fn ito_drift(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.ito_drift_into(x, &mut out, &mut ItoScratch::new(self.dim));
        out
    }

    /// Diffusion matrix `a = ½ Σ V_i V_iᵀ`, row-major.
    pub fn diffusion_matrix(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut a = vec![0.0; n * n];
        for v in &self.diffusion {
            let vx = v.eval(x);
            for i in 0..n {
                for j in 0..n {
                    a[i * n + j] += 0.5 * vx[i] * vx[j];
                }
            }
        }
        a
    }

    /// Generator applied to a scalar field: `b·∇f + a:∇²f`.
    pub fn generator_apply(&self, f: &ScalarField, x: &[f64]) -> f64 {
        let b = self.ito_drift(x);
        let g = f.gradient(x);
        let hess = f.hessian(x);
        let a = self.diffusion_matrix(x);
        let first: f64 = b.iter().zip(&g).map(|(b, g)| b * g).sum();
        let second: f64 = a.iter().zip(&hess).map(|(a, h)| a * h).sum();
        first + second
    }

    /// Data of the formal adjoint: drift `Ṽ0 = -V0 + Σ (div V_j) V_j` and
    /// potential `c̃ = -div V0 + ½ Σ V_j(div V_j) + ½ Σ (div V_j)²`.
    pub fn formal_adjoint(&self) -> AdjointData {
        let diff = self.diffusion.clone();
        let drift = self.drift.clone();
        let n = self.dim;
        let d2 = diff.clone();
        let adj_drift = VectorField::from_value(n, move |x, out| {
            drift.eval_into(x, out);
            out.iter_mut().for_each(|o| *o = -*o);
            for v in &d2 {
                let dv = v.divergence(x);
                let vx = v.eval(x);
                out.iter_mut().zip(&vx).for_each(|(o, vi)| *o += dv * vi);
            }
        });
        let drift = self.drift.clone();
        let potential = ScalarField::from_value(n, move |x| {
            let mut c = -drift.divergence(x);
            for v in &diff {
                let dv = v.divergence(x);
                let div_field = {
                    let v = v.clone();
                    ScalarField::from_value(n, move |y| v.divergence(y))
                };
                let grad = div_field.gradient(x);
                c += 0.5 * v.apply_to_gradient(x, &grad) + 0.5 * dv * dv;
            }
            c
        });
        AdjointData { drift: adj_drift, diffusion: self.diffusion.clone(), potential }
    }
}

/// Fields of the adjoint diffusion together with its potential.
#[derive(Clone, Debug)]
pub struct AdjointData {
    pub drift: VectorField,
    pub diffusion: Vec<VectorField>,
    pub potential: ScalarField,
}

/// Reusable buffers for drift evaluation in hot loops.
pub struct ItoScratch {
    v: Vec<f64>,
    jac: Vec<f64>,
}

impl ItoScratch {
    pub fn new(dim: usize) -> Self {
        ItoScratch { v: vec![0.0; dim], jac: vec![0.0; dim * dim] }
    }
}
