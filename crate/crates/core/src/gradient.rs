//! Small-time gradient scaling of `P_t`, `ρ_t` and `π_t` on the grid.
//!
//! One outer and one inner bracket field are supported: `V_[α] T_t (V_[β] φ)` with
//! `α, β` each either empty or a single multi-index.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::chaos::loglog_slope;
use crate::error::{LabError, Result};
use crate::filtering::rho_grid;
use crate::sde::PathGrid;
use crate::semigroup::GridBackend;
use crate::ufg::MultiIndex;

/// Operator whose gradients are measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Heat,
    Rho,
    Pi,
}

impl std::str::FromStr for Target {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heat" => Ok(Target::Heat),
            "rho" => Ok(Target::Rho),
            "pi" => Ok(Target::Pi),
            other => Err(LabError::InvalidArgument(format!("unknown target {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentReport {
    pub target: Target,
    pub alpha: MultiIndex,
    pub beta: MultiIndex,
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
    pub slope: f64,
    /// `-(‖α‖ + ‖β‖) / 2`.
    pub theoretical: f64,
    /// `slope - (theoretical - 0.1)`; nonnegative when the fit passes.
    pub margin: f64,
    pub pass: bool,
}

/// `t_max · 2^{-k}` for `k = 0..count`.
pub fn dyadic_times(t_max: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| t_max * 0.5f64.powi(k as i32)).collect()
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.len() < 5 {
        return Err(LabError::InvalidArgument(format!("need at least 5 times, got {}", times.len())));
    }
    if times.windows(2).any(|w| w[1] >= w[0]) || times.iter().any(|&t| t <= 0.0) {
        return Err(LabError::InvalidArgument("times must be positive and strictly decreasing".into()));
    }
    Ok(())
}

fn observed(path: Option<&PathGrid>, t: f64) -> Result<PathGrid> {
    let path = path.ok_or_else(|| LabError::InvalidArgument("this target needs an observation path".into()))?;
    path.truncated(path.index_of(t)?)
}

/// `T_t ψ` as a grid function.
pub fn apply_target(backend: &GridBackend, target: Target, t: f64, psi: &DVector<f64>, path: Option<&PathGrid>) -> Result<DVector<f64>> {
    match target {
        Target::Heat => Ok(backend.propagator(t)?.apply(psi)),
        Target::Rho => rho_grid(backend, &observed(path, t)?, psi),
        Target::Pi => {
            let obs = observed(path, t)?;
            let one = rho_grid(backend, &obs, &DVector::from_element(psi.len(), 1.0))?;
            guard_mass(&one)?;
            Ok(rho_grid(backend, &obs, psi)?.component_div(&one))
        }
    }
}

fn guard_mass(one: &DVector<f64>) -> Result<()> {
    if one.min() < 1e-12 {
        return Err(LabError::DegenerateWeights(format!("rho(1) fell to {:.3e}", one.min())));
    }
    Ok(())
}

/// Least-squares exponent of `t ↦ ‖V_[α] T_t (V_[β] φ)‖∞` over the given times.
pub fn gradient_exponent_fit(
    backend: &GridBackend,
    target: Target,
    alpha: &MultiIndex,
    beta: &MultiIndex,
    phi: &DVector<f64>,
    times: &[f64],
    path: Option<&PathGrid>,
) -> Result<ExponentReport> {
    check_times(times)?;
    let grid = backend.grid();
    let inner = backend.apply_bracket(beta, phi)?;
    let differentiated = !(alpha.is_empty() && beta.is_empty());
    let mut norms = Vec::with_capacity(times.len());
    for &t in times {
        let v = backend.apply_bracket(alpha, &apply_target(backend, target, t, &inner, path)?)?;
        if differentiated && grid.peak_in_boundary_layer(&v) {
            return Err(LabError::BoundaryContamination(format!("maximum at t = {t} lies in the boundary layer")));
        }
        let norm = grid.sup_interior(&v);
        if norm < 1e-12 {
            return Err(LabError::VacuousFit(format!("norm {norm:.3e} at t = {t}")));
        }
        norms.push(norm);
    }
    let points: Vec<(f64, f64)> = times.iter().copied().zip(norms.iter().copied()).collect();
    let slope = loglog_slope(&points);
    let theoretical = -((alpha.degree() + beta.degree()) as f64) / 2.0 + 0.0;
    let margin = slope - (theoretical - 0.1);
    Ok(ExponentReport { target, alpha: alpha.clone(), beta: beta.clone(), times: times.to_vec(), norms, slope, theoretical, margin, pass: margin >= 0.0 })
}

/// Sixth-order centred `V·∇` in one dimension; zero on the three outermost cells.
fn derivative(backend: &GridBackend, alpha: &MultiIndex, v: &DVector<f64>) -> Result<DVector<f64>> {
    if alpha.is_empty() {
        return Ok(v.clone());
    }
    let grid = backend.grid();
    if grid.dim() != 1 {
        return Err(LabError::Unsupported("quotient check is one-dimensional".into()));
    }
    let field = crate::ufg::bracket_field(&backend.model().fields(), alpha)?;
    const W: [f64; 3] = [3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0];
    let n = v.len();
    let dx = grid.dx();
    let mut out = DVector::zeros(n);
    for i in 3..n - 3 {
        let d: f64 = (0..3).map(|k| W[k] * (v[i + k + 1] - v[i - k - 1])).sum::<f64>() / dx;
        out[i] = field.eval(&grid.point(i))[0] * d;
    }
    Ok(out)
}

/// Sup over interior points of `V_[α]π_t(ψ) − (V_[α]ρ_t(ψ)·ρ_t(1) − ρ_t(ψ)·V_[α]ρ_t(1)) / ρ_t(1)²`
/// with `ψ = V_[β]φ`.
pub fn normalised_quotient_check(backend: &GridBackend, alpha: &MultiIndex, beta: &MultiIndex, phi: &DVector<f64>, t: f64, path: &PathGrid) -> Result<f64> {
    let obs = path.truncated(path.index_of(t)?)?;
    let psi = backend.apply_bracket(beta, phi)?;
    let rho = rho_grid(backend, &obs, &psi)?;
    let one = rho_grid(backend, &obs, &DVector::from_element(psi.len(), 1.0))?;
    guard_mass(&one)?;
    let pi = rho.component_div(&one);
    let lhs = derivative(backend, alpha, &pi)?;
    let d_rho = derivative(backend, alpha, &rho)?;
    let d_one = derivative(backend, alpha, &one)?;
    let rhs = (d_rho.component_mul(&one) - rho.component_mul(&d_one)).component_div(&one.component_mul(&one));
    Ok(backend.grid().sup_interior(&(lhs - rhs)))
}
