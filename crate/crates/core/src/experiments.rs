//! End-to-end checks shared by the command line and the test suites.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::chaos::{adjoint_levels_grid, expansion_levels_grid, loglog_slope, r_operator_grid, remainder_bound, truncated_expansion};
use crate::error::{LabError, Result};
use crate::filtering::{kalman_bucy_oracle, mass_lower_bound_check, particle_filter_oracle, rho_mc, LinearParams, MassBoundReport, McSettings};
use crate::gradient::{gradient_exponent_fit, ExponentReport, Target};
use crate::model::SdeModel;
use crate::robust::ibp_level;
use crate::sde::{generate_observation, PathGrid};
use crate::semigroup::{AdjointMode, GridBackend};
use crate::signature::{chen_check, extend_multiplicative, neoclassical_check, signature_series, Schedule};
use crate::ufg::{MultiIndex, ScalarField};

/// Independent seed for item `i` of a labelled family, by SplitMix64 finalisation.
pub fn derive_seed(root: u64, label: u64, i: u64) -> u64 {
    let mut z = root ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ i.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const LABEL_Y: u64 = 1;
const LABEL_MC: u64 = 2;
const LABEL_PF: u64 = 3;
const LABEL_TRIPLES: u64 = 4;
const LABEL_CASES: u64 = 5;

/// Observation path `i` of a family: simulated from `model` or standard Brownian.
pub fn observation_path(model: Option<&SdeModel>, x0: &[f64], horizon: f64, steps: usize, d2: usize, root: u64, i: usize) -> Result<PathGrid> {
    let seed = derive_seed(root, LABEL_Y, i as u64);
    match model {
        Some(m) => Ok(generate_observation(m, x0, horizon, steps, seed)?.0),
        None => Ok(PathGrid::brownian(horizon, steps, d2, seed)),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ChenSummary {
    pub depth: usize,
    pub triples: usize,
    pub max_violation: f64,
    pub pass: bool,
}

/// Largest multiplicative-identity violation over random ordered triples of grid indices.
pub fn chen_experiment(path: &PathGrid, depth: usize, triples: usize, seed: u64) -> Result<ChenSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, LABEL_TRIPLES, 0));
    let mut worst: f64 = 0.0;
    for _ in 0..triples {
        let mut v = [0usize; 3];
        for x in v.iter_mut() {
            *x = rng.random_range(0..=path.steps());
        }
        v.sort_unstable();
        worst = worst.max(chen_check(path, depth, v[0], v[1], v[2])?);
    }
    Ok(ChenSummary { depth, triples, max_violation: worst, pass: worst <= 1e-12 })
}

#[derive(Clone, Debug, Serialize)]
pub struct NeoclassicalSummary {
    pub cases: usize,
    pub failures: usize,
    pub min_slack: f64,
    /// Largest relative gap between the two sides at `q = 1`.
    pub equality_gap: f64,
    pub pass: bool,
}

/// Random cases with `q ∈ [1, 4]`, `n ≤ 12`, `s, t ∈ [0, 10]`, plus the same draws at `q = 1`.
pub fn neoclassical_experiment(cases: usize, seed: u64) -> Result<NeoclassicalSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, LABEL_CASES, 0));
    let mut failures = 0;
    let mut min_slack = f64::INFINITY;
    let mut equality_gap: f64 = 0.0;
    for _ in 0..cases {
        let q = rng.random_range(1.0..=4.0);
        let n = rng.random_range(0..=12u32);
        let s = rng.random_range(0.0..=10.0);
        let t = rng.random_range(0.0..=10.0);
        let r = neoclassical_check(q, n, s, t)?;
        min_slack = min_slack.min(r.slack);
        if !r.pass {
            failures += 1;
        }
        let e = neoclassical_check(1.0, n, s, t)?;
        equality_gap = equality_gap.max(e.slack.abs());
    }
    Ok(NeoclassicalSummary { cases, failures, min_slack, equality_gap, pass: failures == 0 && equality_gap <= 1e-12 })
}

/// Estimator compared against the Kalman–Bucy mean.
#[derive(Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMethod {
    WeightedMc { n_paths: usize },
    Particle { n_particles: usize, islands: usize },
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleRow {
    pub path: usize,
    pub kalman_mean: f64,
    pub kalman_variance: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub z: f64,
    pub within: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleSummary {
    pub method: FilterMethod,
    pub rows: Vec<OracleRow>,
    pub within: usize,
    pub required: usize,
    pub pass: bool,
}

/// Filter mean of the first coordinate on one path against the Kalman–Bucy mean.
pub fn oracle_row(params: LinearParams, x0: f64, path: &PathGrid, method: FilterMethod, seed: u64, index: usize) -> Result<OracleRow> {
    let model = SdeModel::ou(params.a, params.sigma, crate::model::linear_sensor(params.gain), "linear-gaussian");
    let (m, p) = kalman_bucy_oracle(params, x0, 0.0, path);
    let id = ScalarField::from_value(1, |x| x[0]);
    let est = match method {
        FilterMethod::WeightedMc { n_paths } => rho_mc(&model, &[x0], path, &id, McSettings { n_paths, seed: derive_seed(seed, LABEL_MC, index as u64) })?,
        FilterMethod::Particle { n_particles, islands } => {
            particle_filter_oracle(&model, &[x0], path, &id, n_particles, islands, derive_seed(seed, LABEL_PF, index as u64))?
        }
    };
    let stderr = est.pi_stderr.unwrap_or(f64::NAN);
    let z = (est.pi_phi - m) / stderr;
    Ok(OracleRow { path: index, kalman_mean: m, kalman_variance: p, estimate: est.pi_phi, stderr, z, within: z.abs() <= 3.0 })
}

/// Runs [`oracle_row`] on `y_paths` observation paths generated from the linear model.
pub fn kalman_oracle_experiment(
    params: LinearParams,
    x0: f64,
    horizon: f64,
    steps: usize,
    y_paths: usize,
    required: usize,
    method: FilterMethod,
    seed: u64,
) -> Result<OracleSummary> {
    let model = SdeModel::ou(params.a, params.sigma, crate::model::linear_sensor(params.gain), "linear-gaussian");
    let mut rows = Vec::with_capacity(y_paths);
    for i in 0..y_paths {
        let path = observation_path(Some(&model), &[x0], horizon, steps, 1, seed, i)?;
        rows.push(oracle_row(params, x0, &path, method, seed, i)?);
    }
    let within = rows.iter().filter(|r| r.within).count();
    Ok(OracleSummary { method, rows, within, required, pass: within >= required })
}

#[derive(Clone, Debug, Serialize)]
pub struct ExpansionRow {
    pub path: usize,
    pub partial_sums: Vec<f64>,
    pub expansion: f64,
    pub mc: f64,
    pub mc_stderr: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Truncated series on the grid against weighted Monte Carlo for `ρ_T(φ)(x0)`.
pub fn expansion_vs_mc_experiment(
    backend: &GridBackend,
    x0: &[f64],
    phi: &ScalarField,
    horizon: f64,
    steps: usize,
    max_level: usize,
    y_paths: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<ExpansionRow>> {
    let model = backend.model();
    let sampled = backend.grid().sample_field(phi);
    let mut rows = Vec::with_capacity(y_paths);
    for i in 0..y_paths {
        let path = observation_path(Some(model), x0, horizon, steps, model.d2(), seed, i)?;
        let series = truncated_expansion(backend, x0, &path, &sampled, max_level)?;
        let mc = rho_mc(model, x0, &path, phi, McSettings { n_paths, seed: derive_seed(seed, LABEL_MC, i as u64) })?;
        let err = mc.rho_phi_stderr.unwrap_or(0.0);
        let tolerance = (0.02 * mc.rho_phi.abs()).max(3.0 * err);
        let pass = (series.total() - mc.rho_phi).abs() <= tolerance;
        rows.push(ExpansionRow { path: i, partial_sums: series.partial_sums.clone(), expansion: series.total(), mc: mc.rho_phi, mc_stderr: err, tolerance, pass });
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct RemainderRow {
    pub truncation: usize,
    /// Root mean square over paths of the level `truncation + 1` term.
    pub l2: f64,
    pub stderr: f64,
    pub bound: f64,
    pub pass: bool,
}

/// `L²`-over-`Y` size of the gap between consecutive truncations, against the factorial bound.
pub fn remainder_experiment(
    backend: &GridBackend,
    x0: &[f64],
    phi: &DVector<f64>,
    horizon: f64,
    steps: usize,
    truncations: std::ops::RangeInclusive<usize>,
    y_paths: usize,
    seed: u64,
) -> Result<Vec<RemainderRow>> {
    let top = *truncations.end() + 1;
    let d2 = backend.model().d2();
    let mut squares: Vec<Vec<f64>> = vec![Vec::with_capacity(y_paths); top + 1];
    for i in 0..y_paths {
        let path = observation_path(None, x0, horizon, steps, d2, seed, i)?;
        let r = truncated_expansion(backend, x0, &path, phi, top)?;
        for (m, v) in r.levels.iter().enumerate() {
            squares[m].push(v * v);
        }
    }
    let h_sup = (0..d2).map(|i| backend.sensor_values(i).amax()).fold(0.0, f64::max);
    let phi_sup = phi.amax();
    Ok(truncations
        .map(|m| {
            let (mean, se) = crate::semigroup::mean_stderr(&squares[m + 1]);
            let l2 = mean.sqrt();
            // Delta method for the square root of a mean.
            let stderr = if l2 > 0.0 { se / (2.0 * l2) } else { 0.0 };
            let bound = remainder_bound(h_sup, horizon, m, phi_sup).sqrt();
            RemainderRow { truncation: m, l2, stderr, bound, pass: l2 <= bound + 3.0 * stderr }
        })
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct IbpRow {
    pub level: usize,
    pub steps: Vec<usize>,
    /// Mean over paths of the interior sup distance at each resolution.
    pub errors: Vec<f64>,
    pub slope: f64,
    pub pass: bool,
}

/// Interior sup distance between pathwise and direct level terms under successive halving
/// of the time step, averaged over observation paths. Each path in `fines` is subsampled by
/// `2^halvings, .., 2, 1`.
pub fn ibp_convergence_experiment(backend: &GridBackend, fines: &[PathGrid], phi: &DVector<f64>, levels: std::ops::RangeInclusive<usize>, halvings: u32) -> Result<Vec<IbpRow>> {
    let first = fines.first().ok_or_else(|| LabError::InvalidArgument("need at least one observation path".into()))?;
    let grid = backend.grid();
    let factors: Vec<usize> = (0..=halvings).rev().map(|j| 1usize << j).collect();
    let steps: Vec<usize> = factors.iter().map(|f| first.steps() / f).collect();
    let mut rows = Vec::new();
    for m in levels {
        let mut errors = vec![0.0; factors.len()];
        for fine in fines {
            for (e, &f) in errors.iter_mut().zip(&factors) {
                let path = fine.subsample(f)?;
                let direct = r_operator_grid(backend, &path, &vec![0; m], 0, path.steps(), phi)?;
                let pathwise = ibp_level(backend, &path, 0, path.steps(), phi, m)?.total;
                *e += grid.sup_interior(&(pathwise - direct)) / fines.len() as f64;
            }
        }
        let pts: Vec<(f64, f64)> = steps.iter().zip(&errors).map(|(&k, &e)| (first.horizon() / k as f64, e)).collect();
        let slope = loglog_slope(&pts);
        rows.push(IbpRow { level: m, steps: steps.clone(), errors, slope, pass: slope >= 0.9 });
    }
    Ok(rows)
}

/// Gradient fits on several observation paths.
pub fn gradient_path_experiment(
    backend: &GridBackend,
    target: Target,
    alpha: &MultiIndex,
    beta: &MultiIndex,
    phi: &DVector<f64>,
    times: &[f64],
    y_paths: usize,
    seed: u64,
) -> Result<Vec<ExponentReport>> {
    let t_max = times.iter().cloned().fold(0.0, f64::max);
    let t_min = times.iter().cloned().fold(f64::INFINITY, f64::min);
    let steps = (16.0 * t_max / t_min).round() as usize;
    let d2 = backend.model().d2();
    (0..y_paths)
        .map(|i| {
            let path = observation_path(None, &[], t_max, steps, d2, seed, i)?;
            gradient_exponent_fit(backend, target, alpha, beta, phi, times, Some(&path))
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct DualityRow {
    /// Level, or `None` for the sum over levels.
    pub level: Option<usize>,
    pub forward: f64,
    pub adjoint: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DualitySummary {
    pub mode: AdjointMode,
    pub rows: Vec<DualityRow>,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// `⟨Σ R^m φ, g⟩` against `⟨φ, Σ R^{m*} g⟩` level by level and summed.
pub fn duality_experiment(backend: &GridBackend, path: &PathGrid, phi: &DVector<f64>, g: &DVector<f64>, max_level: usize, mode: AdjointMode) -> Result<DualitySummary> {
    let grid = backend.grid();
    let fwd = expansion_levels_grid(backend, path, phi, max_level)?;
    let adj = adjoint_levels_grid(backend, path, g, max_level, mode)?;
    let mut rows = Vec::with_capacity(max_level + 2);
    let (mut sf, mut sa) = (0.0, 0.0);
    for m in 0..=max_level {
        let f = grid.inner(&fwd[m], g);
        let a = grid.inner(phi, &adj[m]);
        sf += f;
        sa += a;
        rows.push(DualityRow { level: Some(m), forward: f, adjoint: a, residual: (f - a).abs() });
    }
    rows.push(DualityRow { level: None, forward: sf, adjoint: sa, residual: (sf - sa).abs() });
    let max_residual = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
    let tolerance = match mode {
        AdjointMode::Transpose => 1e-8,
        AdjointMode::Formal => 1e-4,
    };
    Ok(DualitySummary { mode, rows, max_residual, tolerance, pass: max_residual <= tolerance })
}

#[derive(Clone, Debug, Serialize)]
pub struct ExtensionRow {
    pub schedule: Schedule,
    pub refinements: usize,
    pub max_difference: f64,
    pub pass: bool,
}

/// Extension of levels `0..n-1` to level `n` on the whole path against direct sums.
pub fn extension_experiment(path: &PathGrid, n: usize, schedules: &[Schedule]) -> Result<Vec<ExtensionRow>> {
    if n < 1 {
        return Err(LabError::InvalidArgument("target level must be at least 1".into()));
    }
    let direct = signature_series(path, n, 0, path.steps())?;
    let lower = |a: usize, b: usize| signature_series(path, n - 1, a, b);
    schedules
        .iter()
        .map(|&schedule| {
            let r = extend_multiplicative(&lower, path.d2(), n, 0, path.steps(), schedule, None)?;
            let max_difference = r.level.iter().zip(direct.level(n)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            Ok(ExtensionRow { schedule, refinements: r.refinements, max_difference, pass: max_difference <= 1e-8 })
        })
        .collect()
}

/// Mass lower bound on Brownian observation paths.
pub fn mass_bound_experiment(backend: &GridBackend, x0: &[f64], horizon: f64, steps: usize, y_paths: usize, seed: u64) -> Result<Vec<MassBoundReport>> {
    let d2 = backend.model().d2();
    (0..y_paths)
        .map(|i| {
            let path = observation_path(None, x0, horizon, steps, d2, seed, i)?;
            mass_lower_bound_check(backend, x0, &path)
        })
        .collect()
}
