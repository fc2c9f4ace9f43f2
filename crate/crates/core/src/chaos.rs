//! Perturbation series of the filter in iterated integrals of `Y`.
//!
//! On the grid, the level-`m` term for the word `(i_1, .., i_m)` is
//! `Σ_{s <= k_1 < .. < k_m < t} P_{t_{k_1}-s} H_{i_1} P_{t_{k_2}-t_{k_1}} .. H_{i_m} P_{t-t_{k_m}} φ ΔY^{i_1}_{k_1} .. ΔY^{i_m}_{k_m}`
//! with `H_i` multiplication by `h_i`. All words are carried together through one
//! backward recursion in time.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::function::gamma::gamma;

use crate::error::{LabError, Result};
use crate::grid::Propagator;
use crate::sde::PathGrid;
use crate::semigroup::{AdjointMode, GridBackend};
use crate::signature::word_at;

/// Default cap on the number of levels.
pub const DEFAULT_MAX_LEVEL: usize = 8;

/// Column layout of all words of length `0..=depth` over `d` letters.
#[derive(Clone, Copy, Debug)]
struct WordLayout {
    d: usize,
    depth: usize,
}

impl WordLayout {
    fn offset(&self, len: usize) -> usize {
        (0..len).map(|j| self.d.pow(j as u32)).sum()
    }

    fn total(&self) -> usize {
        self.offset(self.depth + 1)
    }
}

fn check_levels(backend: &GridBackend, path: &PathGrid, max_level: usize) -> Result<()> {
    if path.d2() != backend.model().d2() {
        return Err(LabError::DimensionMismatch("observation channels differ from sensors".into()));
    }
    if max_level > DEFAULT_MAX_LEVEL {
        return Err(LabError::InvalidArgument(format!("level {max_level} exceeds the cap {DEFAULT_MAX_LEVEL}")));
    }
    if path.d2() > 3 {
        return Err(LabError::Unsupported("word enumeration is capped at three channels".into()));
    }
    Ok(())
}

fn sensor_matrix(backend: &GridBackend) -> Vec<DVector<f64>> {
    (0..backend.model().d2()).map(|i| backend.sensor_values(i)).collect()
}

fn check_window(path: &PathGrid, s: usize, t: usize) -> Result<()> {
    if s > t || t > path.steps() {
        return Err(LabError::InvalidArgument(format!("need 0 <= s <= t <= {}, got ({s}, {t})", path.steps())));
    }
    Ok(())
}

/// Grid functions `R^w φ` on `[s, t]` for every word with `|w| <= depth`, columns ordered by
/// length and then word index. Column 0 is `P_{t-s} φ`.
pub fn all_word_terms(
    backend: &GridBackend,
    path: &PathGrid,
    s: usize,
    t: usize,
    phi: &DVector<f64>,
    depth: usize,
) -> Result<DMatrix<f64>> {
    check_levels(backend, path, depth)?;
    check_window(path, s, t)?;
    let p = backend.propagator(path.dt())?;
    let hs = sensor_matrix(backend);
    let layout = WordLayout { d: path.d2(), depth };
    let mut state = DMatrix::zeros(phi.len(), layout.total());
    state.set_column(0, phi);
    for k in (s..t).rev() {
        let w = p.apply_columns(&state);
        let mut next = w.clone();
        for len in 1..=depth {
            let off = layout.offset(len);
            let prev_off = layout.offset(len - 1);
            let tail_size = layout.d.pow(len as u32 - 1);
            for idx in 0..layout.d.pow(len as u32) {
                let first = idx / tail_size;
                let tail = idx % tail_size;
                let dy = path.dy(k, first);
                if dy == 0.0 {
                    continue;
                }
                let mut col = next.column_mut(off + idx);
                let src = w.column(prev_off + tail);
                for r in 0..col.len() {
                    col[r] += hs[first][r] * src[r] * dy;
                }
            }
        }
        state = next;
    }
    Ok(state)
}

/// `R^{m, w}_{s,t} φ` for one word `w` (zero-based channels).
pub fn r_operator_grid(backend: &GridBackend, path: &PathGrid, word: &[usize], s: usize, t: usize, phi: &DVector<f64>) -> Result<DVector<f64>> {
    check_levels(backend, path, word.len())?;
    check_window(path, s, t)?;
    if word.is_empty() {
        return Err(LabError::InvalidArgument("word must be nonempty".into()));
    }
    if let Some(&bad) = word.iter().find(|&&i| i >= path.d2()) {
        return Err(LabError::InvalidIndex { index: word.to_vec(), reason: format!("channel {bad} out of range") });
    }
    let p = backend.propagator(path.dt())?;
    let hs = sensor_matrix(backend);
    let m = word.len();
    // Column j carries the suffix of length j.
    let mut state = DMatrix::zeros(phi.len(), m + 1);
    state.set_column(0, phi);
    for k in (s..t).rev() {
        let w = p.apply_columns(&state);
        let mut next = w.clone();
        for j in 1..=m {
            let letter = word[m - j];
            let dy = path.dy(k, letter);
            let mut col = next.column_mut(j);
            let src = w.column(j - 1);
            for r in 0..col.len() {
                col[r] += hs[letter][r] * src[r] * dy;
            }
        }
        state = next;
    }
    Ok(state.column(m).into_owned())
}

/// Per-level contributions of the truncated series at one point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExpansionResult {
    /// `level[m]` is the sum over words of length `m`; `level[0] = P_t φ`.
    pub levels: Vec<f64>,
    pub partial_sums: Vec<f64>,
    /// `(word, contribution)` for every word of length at least one.
    pub words: Vec<(Vec<usize>, f64)>,
}

impl ExpansionResult {
    fn from_columns(values: &[f64], d: usize, depth: usize) -> Self {
        let layout = WordLayout { d, depth };
        let mut levels = vec![0.0; depth + 1];
        let mut words = Vec::new();
        for (len, level) in levels.iter_mut().enumerate() {
            let off = layout.offset(len);
            for idx in 0..d.pow(len as u32) {
                let v = values[off + idx];
                *level += v;
                if len > 0 {
                    words.push((word_at(idx, len, d), v));
                }
            }
        }
        let mut acc = 0.0;
        let partial_sums = levels
            .iter()
            .map(|l| {
                acc += l;
                acc
            })
            .collect();
        ExpansionResult { levels, partial_sums, words }
    }

    pub fn total(&self) -> f64 {
        *self.partial_sums.last().expect("at least level 0")
    }
}

/// Level-by-level grid functions `Σ_{|w| = m} R^w φ` on `[0, T]`.
pub fn expansion_levels_grid(backend: &GridBackend, path: &PathGrid, phi: &DVector<f64>, max_level: usize) -> Result<Vec<DVector<f64>>> {
    let cols = all_word_terms(backend, path, 0, path.steps(), phi, max_level)?;
    let layout = WordLayout { d: path.d2(), depth: max_level };
    Ok((0..=max_level)
        .map(|len| {
            let off = layout.offset(len);
            let mut acc = DVector::zeros(phi.len());
            for idx in 0..layout.d.pow(len as u32) {
                acc += cols.column(off + idx);
            }
            acc
        })
        .collect())
}

/// `P_T φ(x0)` plus all word terms up to `max_level`, evaluated at the grid point nearest `x0`.
pub fn truncated_expansion(backend: &GridBackend, x0: &[f64], path: &PathGrid, phi: &DVector<f64>, max_level: usize) -> Result<ExpansionResult> {
    let cols = all_word_terms(backend, path, 0, path.steps(), phi, max_level)?;
    let idx = backend.grid().nearest(x0);
    let row: Vec<f64> = cols.row(idx).iter().copied().collect();
    Ok(ExpansionResult::from_columns(&row, path.d2(), max_level))
}

/// Adjoint series with reversed operator order, as grid functions per word.
///
/// `AdjointMode::Transpose` uses transposed grid semigroups, which makes the duality
/// with [`all_word_terms`] exact up to rounding.
pub fn adjoint_word_terms(
    backend: &GridBackend,
    path: &PathGrid,
    s: usize,
    t: usize,
    g: &DVector<f64>,
    depth: usize,
    mode: AdjointMode,
) -> Result<DMatrix<f64>> {
    check_levels(backend, path, depth)?;
    check_window(path, s, t)?;
    let formal;
    let (p, transpose): (&Propagator, bool) = match mode {
        AdjointMode::Transpose => {
            formal = backend.propagator(path.dt())?;
            (&formal, true)
        }
        AdjointMode::Formal => {
            formal = std::sync::Arc::new(Propagator::new(&backend.formal_adjoint_generator(), path.dt())?);
            (&formal, false)
        }
    };
    let hs = sensor_matrix(backend);
    let layout = WordLayout { d: path.d2(), depth };
    let mut state = DMatrix::zeros(g.len(), layout.total());
    state.set_column(0, g);
    for k in s..t {
        let mut pre = state.clone();
        for len in 1..=depth {
            let off = layout.offset(len);
            let prev_off = layout.offset(len - 1);
            for idx in 0..layout.d.pow(len as u32) {
                let last = idx % layout.d;
                let head = idx / layout.d;
                let dy = path.dy(k, last);
                if dy == 0.0 {
                    continue;
                }
                let mut col = pre.column_mut(off + idx);
                let src = state.column(prev_off + head);
                for r in 0..col.len() {
                    col[r] += hs[last][r] * src[r] * dy;
                }
            }
        }
        state = if transpose {
            let mut out = pre.clone();
            for j in 0..pre.ncols() {
                out.set_column(j, &p.apply_transpose(&pre.column(j).into_owned()));
            }
            out
        } else {
            p.apply_columns(&pre)
        };
    }
    Ok(state)
}

/// Adjoint levels on `[0, T]` as grid functions.
pub fn adjoint_levels_grid(backend: &GridBackend, path: &PathGrid, g: &DVector<f64>, max_level: usize, mode: AdjointMode) -> Result<Vec<DVector<f64>>> {
    let cols = adjoint_word_terms(backend, path, 0, path.steps(), g, max_level, mode)?;
    let layout = WordLayout { d: path.d2(), depth: max_level };
    Ok((0..=max_level)
        .map(|len| {
            let off = layout.offset(len);
            let mut acc = DVector::zeros(g.len());
            for idx in 0..layout.d.pow(len as u32) {
                acc += cols.column(off + idx);
            }
            acc
        })
        .collect())
}

/// Adjoint series evaluated at the grid point nearest `x0`.
pub fn adjoint_truncated_expansion(
    backend: &GridBackend,
    x0: &[f64],
    path: &PathGrid,
    g: &DVector<f64>,
    max_level: usize,
    mode: AdjointMode,
) -> Result<ExpansionResult> {
    let cols = adjoint_word_terms(backend, path, 0, path.steps(), g, max_level, mode)?;
    let idx = backend.grid().nearest(x0);
    let row: Vec<f64> = cols.row(idx).iter().copied().collect();
    Ok(ExpansionResult::from_columns(&row, path.d2(), max_level))
}

/// Mean-square bound on the tail after level `k`:
/// `e^{t‖h‖} ‖h‖^{2(k+1)} / (k+1)! ‖φ‖²`.
pub fn remainder_bound(h_sup: f64, t: f64, k: usize, phi_sup: f64) -> f64 {
    let k1 = (k + 1) as f64;
    (t * h_sup).exp() * h_sup.powf(2.0 * k1) / gamma(k1 + 1.0) * phi_sup * phi_sup
}

/// `a_k = 4 (2√π)^k c / (k Γ(k/2))`.
pub fn simplex_volume_constant(k: usize, c: f64) -> Result<f64> {
    if k < 1 || c <= 0.0 {
        return Err(LabError::InvalidArgument("need k >= 1 and c > 0".into()));
    }
    let kf = k as f64;
    Ok(4.0 * (2.0 * std::f64::consts::PI.sqrt()).powf(kf) * c / (kf * gamma(kf / 2.0)))
}

/// Fixed dictionary of 16 smooth bumps and 16 plane waves on the grid.
pub fn test_dictionary(backend: &GridBackend) -> DMatrix<f64> {
    let grid = backend.grid();
    let l = grid.half_width();
    let mut cols = Vec::with_capacity(32);
    for j in 0..16 {
        let c = -0.5 * l + l * j as f64 / 15.0;
        let w = 0.25 * l;
        cols.push(grid.sample(|x| {
            let r2: f64 = x.iter().enumerate().map(|(a, v)| if a == 0 { (v - c).powi(2) } else { v * v }).sum::<f64>() / (w * w);
            if r2 < 1.0 {
                (1.0 - 1.0 / (1.0 - r2)).exp()
            } else {
                0.0
            }
        }));
    }
    for j in 0..8 {
        let k = std::f64::consts::PI * (j + 1) as f64 / l;
        cols.push(grid.sample(|x| (k * x[0]).cos()));
        cols.push(grid.sample(|x| (k * x[0]).sin()));
    }
    DMatrix::from_columns(&cols)
}

/// Result of the operator-norm scaling fit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayReport {
    pub level: usize,
    pub gamma: f64,
    /// `(|t - s|, path average of the max norm ratio over sampled intervals)` per scale.
    pub samples: Vec<(f64, f64)>,
    pub slope: f64,
    pub trivial_path: bool,
    pub pass: bool,
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Scaling of the `H¹ → H¹` norm surrogate of `R^{m, (0,..,0)}_{s,t}` with `|t - s|`.
///
/// For each dyadic scale in `scales` (lengths `T 2^{-j}`), up to `max_intervals` evenly
/// spread intervals are examined and the largest ratio `‖Rφ‖_{H¹} / ‖φ‖_{H¹}` over the
/// dictionary is kept.
pub fn operator_norm_decay(
    backend: &GridBackend,
    paths: &[PathGrid],
    m: usize,
    gamma: f64,
    scales: std::ops::RangeInclusive<u32>,
    max_intervals: usize,
) -> Result<DecayReport> {
    if m == 0 || m > 4 {
        return Err(LabError::InvalidArgument("word length must be between 1 and 4".into()));
    }
    let Some(first) = paths.first() else {
        return Err(LabError::InvalidArgument("no observation paths".into()));
    };
    if paths.iter().any(|p| p.steps() != first.steps() || p.dt() != first.dt()) {
        return Err(LabError::DimensionMismatch("paths must share one time grid".into()));
    }
    let steps = first.steps();
    let pieces: Vec<usize> = scales.map(|j| 1usize << j).filter(|&n| steps % n == 0 && steps / n >= 2).collect();
    if pieces.len() < 4 {
        return Err(LabError::DegenerateFit(format!("only {} interval scales available", pieces.len())));
    }
    // Same number of intervals at every scale, so the maximum does not drift with the count.
    let count = max_intervals.min(pieces[0]).max(1);
    let dict = test_dictionary(backend);
    let base: Vec<f64> = (0..dict.ncols())
        .map(|j| backend.h1_norm_sampled(&dict.column(j).into_owned()))
        .collect::<Result<_>>()?;
    let word = vec![0usize; m];
    let p = backend.propagator(first.dt())?;
    let hs = sensor_matrix(backend);
    let mut samples = Vec::with_capacity(pieces.len());
    for &n in &pieces {
        let len = steps / n;
        let mut mean = 0.0;
        for path in paths {
            let mut best: f64 = 0.0;
            for c in 0..count {
                let start = (c * n / count) * len;
                let out = batched_word(&p, &hs, path, &word, start, start + len, &dict);
                for (col, b) in base.iter().enumerate() {
                    best = best.max(backend.h1_norm_sampled(&out.column(col).into_owned())? / b);
                }
            }
            mean += best / paths.len() as f64;
        }
        samples.push((len as f64 * first.dt(), mean));
    }
    if samples.iter().all(|s| s.1 == 0.0) {
        return Ok(DecayReport { level: m, gamma, samples, slope: f64::NAN, trivial_path: true, pass: true });
    }
    let slope = loglog_slope(&samples);
    Ok(DecayReport { level: m, gamma, samples, slope, trivial_path: false, pass: slope >= m as f64 * gamma - 0.1 })
}

fn batched_word(p: &Propagator, hs: &[DVector<f64>], path: &PathGrid, word: &[usize], s: usize, t: usize, phis: &DMatrix<f64>) -> DMatrix<f64> {
    let m = word.len();
    let cols = phis.ncols();
    let mut state: Vec<DMatrix<f64>> = vec![DMatrix::zeros(phis.nrows(), cols); m + 1];
    state[0] = phis.clone();
    for k in (s..t).rev() {
        let w: Vec<DMatrix<f64>> = state.iter().map(|x| p.apply_columns(x)).collect();
        let mut next = w.clone();
        for j in 1..=m {
            let letter = word[m - j];
            let dy = path.dy(k, letter);
            for c in 0..cols {
                for r in 0..phis.nrows() {
                    next[j][(r, c)] += hs[letter][r] * w[j - 1][(r, c)] * dy;
                }
            }
        }
        state = next;
    }
    state.pop().expect("nonempty")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_values() {
        assert!((remainder_bound(1.0, 1.0, 2, 1.0) - std::f64::consts::E / 6.0).abs() < 1e-14);
        assert_eq!(remainder_bound(0.0, 1.0, 0, 1.0), 0.0);
        assert!((simplex_volume_constant(2, 1.0).unwrap() - 8.0 * std::f64::consts::PI).abs() < 1e-12);
        assert!((simplex_volume_constant(1, 1.0).unwrap() - 8.0).abs() < 1e-12);
    }
}
