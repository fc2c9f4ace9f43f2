//! The unnormalised filter `ρ_t` for a fixed observation path, its normalisation,
//! and independent reference filters.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::model::SdeModel;
use crate::sde::{normal, substream, EulerStepper, PathGrid};
use crate::semigroup::{mean_stderr, GridBackend};
use crate::ufg::ScalarField;

/// `ρ_t(φ)`, `ρ_t(1)` and `π_t(φ) = ρ_t(φ) / ρ_t(1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FilterEstimate {
    pub rho_phi: f64,
    pub rho_one: f64,
    pub pi_phi: f64,
    pub rho_phi_stderr: Option<f64>,
    pub rho_one_stderr: Option<f64>,
    pub pi_stderr: Option<f64>,
}

/// Monte Carlo settings shared by the weighted estimators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McSettings {
    pub n_paths: usize,
    pub seed: u64,
}

fn log_weight_step(model: &SdeModel, x: &[f64], path: &PathGrid, k: usize) -> f64 {
    let dt = path.dt();
    model
        .sensors()
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let hv = h.eval(x);
            hv * path.dy(k, i) - 0.5 * hv * hv * dt
        })
        .sum()
}

/// Weighted Monte Carlo estimates for several test functions on common random numbers.
///
/// The signal is driven by fresh noise; `Y` is held fixed.
pub fn rho_mc_many(
    model: &SdeModel,
    x0: &[f64],
    path: &PathGrid,
    phis: &[ScalarField],
    settings: McSettings,
) -> Result<Vec<FilterEstimate>> {
    if path.d2() != model.d2() {
        return Err(LabError::DimensionMismatch("observation channels differ from sensors".into()));
    }
    if x0.len() != model.dim() {
        return Err(LabError::DimensionMismatch("initial point has the wrong dimension".into()));
    }
    let d1 = model.d1();
    let nphi = phis.len();
    // Per path: Z followed by φ_j(X_T).
    let samples: Vec<Vec<f64>> = (0..settings.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = substream(settings.seed, p as u64);
            let mut stepper = EulerStepper::new(model);
            let mut x = x0.to_vec();
            let mut db = vec![0.0; d1];
            let sq = path.dt().sqrt();
            let mut logz = 0.0;
            for k in 0..path.steps() {
                logz += log_weight_step(model, &x, path, k);
                db.iter_mut().for_each(|b| *b = sq * normal(&mut rng));
                stepper.step(&mut x, path.dt(), &db);
            }
            let mut out = Vec::with_capacity(nphi + 1);
            out.push(logz.exp());
            out.extend(phis.iter().map(|f| f.eval(&x)));
            out
        })
        .collect();
    if samples.iter().all(|s| !(s[0] >= 1e-300)) {
        return Err(LabError::DegenerateWeights("every path weight is below 1e-300".into()));
    }
    let z: Vec<f64> = samples.iter().map(|s| s[0]).collect();
    let (rho_one, rho_one_err) = mean_stderr(&z);
    let zsum: f64 = z.iter().sum();
    let mut out = Vec::with_capacity(nphi);
    for j in 0..nphi {
        let fz: Vec<f64> = samples.iter().map(|s| s[0] * s[j + 1]).collect();
        let (rho_phi, rho_phi_err) = mean_stderr(&fz);
        let pi = fz.iter().sum::<f64>() / zsum;
        let spread: f64 = samples.iter().map(|s| (s[0] * (s[j + 1] - pi)).powi(2)).sum();
        out.push(FilterEstimate {
            rho_phi,
            rho_one,
            pi_phi: pi,
            rho_phi_stderr: Some(rho_phi_err),
            rho_one_stderr: Some(rho_one_err),
            pi_stderr: Some(spread.sqrt() / zsum),
        });
    }
    Ok(out)
}

/// `ρ_t(φ)` by averaging `φ(X_T) Z_T` over signal paths with left-point weights.
pub fn rho_mc(model: &SdeModel, x0: &[f64], path: &PathGrid, phi: &ScalarField, settings: McSettings) -> Result<FilterEstimate> {
    Ok(rho_mc_many(model, x0, path, std::slice::from_ref(phi), settings)?.remove(0))
}

/// `ρ_t(φ)` at every grid point via `G_0 P_Δ G_1 P_Δ .. G_{M-1} P_Δ φ`,
/// `G_k = diag(exp(Σ_i h_i ΔY^i_k - ½ h_i² Δ))`.
pub fn rho_grid(backend: &GridBackend, path: &PathGrid, phi: &DVector<f64>) -> Result<DVector<f64>> {
    let weights = step_weights(backend, path)?;
    let p = backend.propagator(path.dt())?;
    let mut v = phi.clone();
    for g in weights.iter().rev() {
        v = p.apply(&v);
        v.component_mul_assign(g);
    }
    Ok(v)
}

/// Diagonals `G_k` of the discrete Zakai product.
pub fn step_weights(backend: &GridBackend, path: &PathGrid) -> Result<Vec<DVector<f64>>> {
    let model = backend.model();
    if path.d2() != model.d2() {
        return Err(LabError::DimensionMismatch("observation channels differ from sensors".into()));
    }
    let hs: Vec<DVector<f64>> = (0..model.d2()).map(|i| backend.sensor_values(i)).collect();
    let dt = path.dt();
    Ok((0..path.steps())
        .map(|k| {
            let mut log = DVector::zeros(backend.grid().size());
            for (i, h) in hs.iter().enumerate() {
                let dy = path.dy(k, i);
                log += h.map(|v| v * dy - 0.5 * v * v * dt);
            }
            log.map(f64::exp)
        })
        .collect())
}

/// Filter estimate at `x0` from the grid Zakai product.
pub fn filter_grid(backend: &GridBackend, x0: &[f64], path: &PathGrid, phi: &ScalarField) -> Result<FilterEstimate> {
    let idx = backend.grid().nearest(x0);
    let rho = rho_grid(backend, path, &backend.grid().sample_field(phi))?;
    let one = rho_grid(backend, path, &DVector::from_element(backend.grid().size(), 1.0))?;
    if one[idx] <= 1e-300 {
        return Err(LabError::DegenerateWeights("grid mass vanished".into()));
    }
    Ok(FilterEstimate {
        rho_phi: rho[idx],
        rho_one: one[idx],
        pi_phi: rho[idx] / one[idx],
        rho_phi_stderr: None,
        rho_one_stderr: None,
        pi_stderr: None,
    })
}

/// Scalar linear model `dX = -a X dt + σ dB`, `dY = g X dt + dW`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearParams {
    pub a: f64,
    pub sigma: f64,
    pub gain: f64,
}

/// Kalman–Bucy mean and variance at the end of the path, by Euler integration of
/// `dm = -a m dt + P g (dY - g m dt)` and `dP/dt = -2aP + σ² - g²P²`.
pub fn kalman_bucy_oracle(params: LinearParams, x0: f64, p0: f64, path: &PathGrid) -> (f64, f64) {
    let LinearParams { a, sigma, gain } = params;
    let dt = path.dt();
    let (mut m, mut p) = (x0, p0);
    for k in 0..path.steps() {
        let dy = path.dy(k, 0);
        let m_next = m - a * m * dt + p * gain * (dy - gain * m * dt);
        p += (-2.0 * a * p + sigma * sigma - gain * gain * p * p) * dt;
        m = m_next;
    }
    (m, p)
}

/// Bootstrap particle filter on independent islands; the spread between islands
/// gives the standard error.
pub fn particle_filter_oracle(
    model: &SdeModel,
    x0: &[f64],
    path: &PathGrid,
    phi: &ScalarField,
    n_particles: usize,
    islands: usize,
    seed: u64,
) -> Result<FilterEstimate> {
    if islands < 2 || n_particles < 2 * islands {
        return Err(LabError::InvalidArgument("need at least two islands of two particles".into()));
    }
    let per = n_particles / islands;
    let results: Vec<Result<(f64, f64)>> = (0..islands)
        .into_par_iter()
        .map(|isl| island(model, x0, path, phi, per, seed, isl as u64))
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let pis: Vec<f64> = results.iter().map(|r| r.0).collect();
    let logmass: Vec<f64> = results.iter().map(|r| r.1).collect();
    let (pi, pi_err) = mean_stderr(&pis);
    let masses: Vec<f64> = logmass.iter().map(|l| l.exp()).collect();
    let (mass, mass_err) = mean_stderr(&masses);
    Ok(FilterEstimate {
        rho_phi: pi * mass,
        rho_one: mass,
        pi_phi: pi,
        rho_phi_stderr: None,
        rho_one_stderr: Some(mass_err),
        pi_stderr: Some(pi_err),
    })
}

/// One island: returns `(π_T(φ), log ρ_T(1))`.
fn island(model: &SdeModel, x0: &[f64], path: &PathGrid, phi: &ScalarField, n: usize, seed: u64, stream: u64) -> Result<(f64, f64)> {
    let dim = model.dim();
    let d1 = model.d1();
    let mut rng = substream(seed, stream);
    let mut xs: Vec<f64> = x0.iter().copied().cycle().take(n * dim).collect();
    let mut next = vec![0.0; n * dim];
    let mut w = vec![0.0; n];
    let mut db = vec![0.0; d1];
    let mut stepper = EulerStepper::new(model);
    let sq = path.dt().sqrt();
    let mut log_mass = 0.0;
    for k in 0..path.steps() {
        let logs: Vec<f64> = (0..n).map(|j| log_weight_step(model, &xs[j * dim..(j + 1) * dim], path, k)).collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (wj, l) in w.iter_mut().zip(&logs) {
            *wj = (l - top).exp();
        }
        let sum: f64 = w.iter().sum();
        let sum2: f64 = w.iter().map(|v| v * v).sum();
        let ess = sum * sum / sum2;
        if !(ess >= 2.0) {
            return Err(LabError::WeightCollapse { step: k, ess });
        }
        log_mass += top + (sum / n as f64).ln();
        // Systematic resampling.
        let u0: f64 = rng.random::<f64>() / n as f64;
        let mut cum = w[0] / sum;
        let mut src = 0;
        for j in 0..n {
            let u = u0 + j as f64 / n as f64;
            while u > cum && src + 1 < n {
                src += 1;
                cum += w[src] / sum;
            }
            next[j * dim..(j + 1) * dim].copy_from_slice(&xs[src * dim..(src + 1) * dim]);
        }
        std::mem::swap(&mut xs, &mut next);
        for j in 0..n {
            db.iter_mut().for_each(|b| *b = sq * normal(&mut rng));
            stepper.step(&mut xs[j * dim..(j + 1) * dim], path.dt(), &db);
        }
    }
    let pi = (0..n).map(|j| phi.eval(&xs[j * dim..(j + 1) * dim])).sum::<f64>() / n as f64;
    Ok((pi, log_mass))
}

/// Both sides of the lower mass bound on a realised path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MassBoundReport {
    /// `1 / ρ_t(1)(x0)`.
    pub lhs: f64,
    /// `exp(C Σ_i (sup|Y^i| + sup|Y^i|²))`.
    pub rhs: f64,
    /// `rhs` times `exp(½ t max_x Σ_i h_i²)`, the factor from the quadratic part of the weight.
    pub rhs_corrected: f64,
    pub constant: f64,
    pub pass: bool,
    pub pass_corrected: bool,
}

/// Evaluates the mass lower bound with sup-norms taken as maxima over all grid points and
/// `ρ_t(1)` from the grid Zakai product.
pub fn mass_lower_bound_check(backend: &GridBackend, x0: &[f64], path: &PathGrid) -> Result<MassBoundReport> {
    let model = backend.model();
    let grid = backend.grid();
    let t = path.horizon();
    let d2 = model.d2() as f64;
    let pts: Vec<Vec<f64>> = (0..grid.size()).map(|i| grid.point(i)).collect();
    let sup = |f: &dyn Fn(&[f64]) -> f64| pts.iter().map(|x| f(x).abs()).fold(0.0, f64::max);
    let mut constant: f64 = 0.0;
    let mut h2max: f64 = 0.0;
    for h in model.sensors() {
        let hs = sup(&|x| h.eval(x));
        let ah = sup(&|x| model.generator_apply(h, x));
        let vh: f64 = model
            .diffusion()
            .iter()
            .map(|v| {
                let s = sup(&|x| v.apply_to_gradient(x, &h.gradient(x)));
                s * s
            })
            .sum();
        constant = constant.max(hs + t * ah + 0.5 * d2 * t * vh);
        h2max += hs * hs;
    }
    let ysum: f64 = (0..model.d2()).map(|i| {
        let s = path.sup_abs(i);
        s + s * s
    }).sum();
    let one = rho_grid(backend, path, &DVector::from_element(grid.size(), 1.0))?;
    let mass = one[grid.nearest(x0)];
    if !(mass > 0.0) {
        return Err(LabError::DegenerateWeights("grid mass vanished".into()));
    }
    let lhs = 1.0 / mass;
    let rhs = (constant * ysum).exp();
    let rhs_corrected = rhs * (0.5 * t * h2max).exp();
    Ok(MassBoundReport {
        lhs,
        rhs,
        rhs_corrected,
        constant,
        pass: lhs <= rhs,
        pass_corrected: lhs <= rhs_corrected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kalman_stationary_variance() {
        let path = PathGrid::zeros(20.0, 20000, 1);
        let (m, p) = kalman_bucy_oracle(LinearParams { a: 1.0, sigma: 2f64.sqrt(), gain: 1.0 }, 0.0, 0.0, &path);
        assert_eq!(m, 0.0);
        assert!((p - (3f64.sqrt() - 1.0)).abs() < 1e-6);
    }

    #[test]
    fn noiseless_kalman_decays() {
        let path = PathGrid::brownian(1.0, 1000, 1, 5);
        let (m, p) = kalman_bucy_oracle(LinearParams { a: 1.0, sigma: 0.0, gain: 1.0 }, 2.0, 0.0, &path);
        assert_eq!(p, 0.0);
        assert!((m - 2.0 * (1.0f64 - 1e-3).powi(1000)).abs() < 1e-12);
    }
}
