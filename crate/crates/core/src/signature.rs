//! Iterated Ito sums of an observation path and truncated tensor series.
//!
//! Words are sequences of zero-based channel indices. Inside a level of
//! length `j`, the word `(w_1, .., w_j)` sits at position `Σ w_k d^(j-k)`.

use nalgebra::DMatrix;
use serde::Serialize;
use statrs::function::gamma::gamma;

use crate::error::{LabError, Result};
use crate::sde::PathGrid;

/// Position of `word` inside its level.
pub fn word_index(word: &[usize], d: usize) -> usize {
    word.iter().fold(0, |acc, &w| acc * d + w)
}

/// Inverse of [`word_index`] for words of length `len`.
pub fn word_at(mut idx: usize, len: usize, d: usize) -> Vec<usize> {
    let mut w = vec![0; len];
    for k in (0..len).rev() {
        w[k] = idx % d;
        idx /= d;
    }
    w
}

/// All words of length exactly `len` over `d` letters, in index order.
pub fn words(len: usize, d: usize) -> Vec<Vec<usize>> {
    (0..d.pow(len as u32)).map(|i| word_at(i, len, d)).collect()
}

/// Coefficient algebra for [`LevelSeries`].
pub trait Coefficient: Clone {
    fn zero_like(&self) -> Self;
    fn unit_like(&self) -> Self;
    fn add_assign(&mut self, other: &Self);
    fn mul(&self, other: &Self) -> Self;
    fn sup_norm(&self) -> f64;
}

impl Coefficient for f64 {
    fn zero_like(&self) -> Self {
        0.0
    }
    fn unit_like(&self) -> Self {
        1.0
    }
    fn add_assign(&mut self, other: &Self) {
        *self += other;
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn sup_norm(&self) -> f64 {
        self.abs()
    }
}

impl Coefficient for DMatrix<f64> {
    fn zero_like(&self) -> Self {
        DMatrix::zeros(self.nrows(), self.ncols())
    }
    fn unit_like(&self) -> Self {
        DMatrix::identity(self.nrows(), self.ncols())
    }
    fn add_assign(&mut self, other: &Self) {
        *self += other;
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn sup_norm(&self) -> f64 {
        self.amax()
    }
}

/// Truncated series `Q^0 + .. + Q^k`, one coefficient per word.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSeries<A> {
    d: usize,
    levels: Vec<Vec<A>>,
}

impl<A: Coefficient> LevelSeries<A> {
    /// All coefficients zero except the empty word, which holds `level0`.
    pub fn from_level0(level0: A, d: usize, depth: usize) -> Self {
        let zero = level0.zero_like();
        let mut levels = vec![vec![level0]];
        for j in 1..=depth {
            levels.push(vec![zero.clone(); d.pow(j as u32)]);
        }
        LevelSeries { d, levels }
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn channels(&self) -> usize {
        self.d
    }

    pub fn level(&self, j: usize) -> &[A] {
        &self.levels[j]
    }

    pub fn level_mut(&mut self, j: usize) -> &mut [A] {
        &mut self.levels[j]
    }

    pub fn get(&self, word: &[usize]) -> &A {
        &self.levels[word.len()][word_index(word, self.d)]
    }

    pub fn set(&mut self, word: &[usize], value: A) {
        let d = self.d;
        self.levels[word.len()][word_index(word, d)] = value;
    }

    /// Concatenation product truncated at the common depth.
    pub fn product(&self, other: &Self) -> Self {
        self.product_with(other, false)
    }

    /// Same pairs of words as [`LevelSeries::product`], coefficients multiplied right-to-left.
    pub fn reversed_product(&self, other: &Self) -> Self {
        self.product_with(other, true)
    }

    fn product_with(&self, other: &Self, reversed: bool) -> Self {
        assert_eq!(self.d, other.d, "channel counts differ");
        let depth = self.depth().min(other.depth());
        let d = self.d;
        let zero = self.levels[0][0].zero_like();
        let mut levels = Vec::with_capacity(depth + 1);
        for n in 0..=depth {
            let size = d.pow(n as u32);
            let mut lvl = vec![zero.clone(); size];
            for (idx, slot) in lvl.iter_mut().enumerate() {
                for split in 0..=n {
                    let right_len = n - split;
                    let rsize = d.pow(right_len as u32);
                    let (li, ri) = (idx / rsize, idx % rsize);
                    let a = &self.levels[split][li];
                    let b = &other.levels[right_len][ri];
                    let term = if reversed { b.mul(a) } else { a.mul(b) };
                    slot.add_assign(&term);
                }
            }
            levels.push(lvl);
        }
        LevelSeries { d, levels }
    }

    /// Largest coefficient norm among the levels `from..=to`.
    pub fn sup_norm_levels(&self, from: usize, to: usize) -> f64 {
        (from..=to.min(self.depth())).flat_map(|j| self.levels[j].iter()).map(|c| c.sup_norm()).fold(0.0, f64::max)
    }

    /// Levels `0..=depth`, dropping the rest.
    pub fn truncate(&self, depth: usize) -> Self {
        LevelSeries { d: self.d, levels: self.levels[..=depth.min(self.depth())].to_vec() }
    }

    /// Extends with zero levels up to `depth`.
    pub fn pad(&self, depth: usize) -> Self {
        let mut out = self.clone();
        let zero = self.levels[0][0].zero_like();
        for j in self.depth() + 1..=depth {
            out.levels.push(vec![zero.clone(); self.d.pow(j as u32)]);
        }
        out
    }
}

impl LevelSeries<f64> {
    pub fn unit(d: usize, depth: usize) -> Self {
        Self::from_level0(1.0, d, depth)
    }

    /// Largest coefficient difference over all words.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.levels
            .iter()
            .zip(&other.levels)
            .flat_map(|(a, b)| a.iter().zip(b))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Iterated Ito sum `q^w_{s,t}` between grid indices `s <= t`.
pub fn iterated_ito(path: &PathGrid, word: &[usize], s: usize, t: usize) -> Result<f64> {
    if s > t || t > path.steps() {
        return Err(LabError::InvalidArgument(format!("need 0 <= s <= t <= {}, got ({s}, {t})", path.steps())));
    }
    if let Some(&bad) = word.iter().find(|&&i| i >= path.d2()) {
        return Err(LabError::InvalidIndex { index: word.to_vec(), reason: format!("channel {bad} out of range") });
    }
    let m = word.len();
    let mut v = vec![0.0; m + 1];
    v[0] = 1.0;
    for k in s..t {
        for j in (1..=m).rev() {
            v[j] += v[j - 1] * path.dy(k, word[j - 1]);
        }
    }
    Ok(v[m])
}

/// Iterated Ito sum between two times, which must be grid points.
pub fn iterated_ito_at(path: &PathGrid, word: &[usize], s: f64, t: f64) -> Result<f64> {
    iterated_ito(path, word, path.index_of(s)?, path.index_of(t)?)
}

/// All `q^w_{s,t}` with `|w| <= depth`, as a scalar series.
pub fn signature_series(path: &PathGrid, depth: usize, s: usize, t: usize) -> Result<LevelSeries<f64>> {
    if s > t || t > path.steps() {
        return Err(LabError::InvalidArgument(format!("need 0 <= s <= t <= {}, got ({s}, {t})", path.steps())));
    }
    let d = path.d2();
    let mut q = LevelSeries::unit(d, depth);
    let mut dy = vec![0.0; d];
    for k in s..t {
        for (i, v) in dy.iter_mut().enumerate() {
            *v = path.dy(k, i);
        }
        // Left-point update: q^{w*i} += q^w dY^i, longest words first.
        for j in (1..=depth).rev() {
            let (lower, upper) = q.levels.split_at_mut(j);
            let prev = &lower[j - 1];
            for (idx, slot) in upper[0].iter_mut().enumerate() {
                *slot += prev[idx / d] * dy[idx % d];
            }
        }
    }
    Ok(q)
}

/// Table of iterated sums for every word up to a depth over a set of index pairs.
#[derive(Clone, Debug)]
pub struct IteratedIntegralTable {
    pub pairs: Vec<(usize, usize)>,
    pub series: Vec<LevelSeries<f64>>,
}

impl IteratedIntegralTable {
    pub fn build(path: &PathGrid, depth: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let series = pairs.iter().map(|&(s, t)| signature_series(path, depth, s, t)).collect::<Result<Vec<_>>>()?;
        Ok(IteratedIntegralTable { pairs: pairs.to_vec(), series })
    }

    pub fn value(&self, pair: usize, word: &[usize]) -> f64 {
        *self.series[pair].get(word)
    }
}

/// Largest violation of `Q_{s,t} = Q_{s,u} Q_{u,t}` over words up to `depth`.
pub fn chen_check(path: &PathGrid, depth: usize, s: usize, u: usize, t: usize) -> Result<f64> {
    if !(s <= u && u <= t) {
        return Err(LabError::InvalidArgument("need s <= u <= t".into()));
    }
    let st = signature_series(path, depth, s, t)?;
    let su = signature_series(path, depth, s, u)?;
    let ut = signature_series(path, depth, u, t)?;
    Ok(st.max_abs_diff(&su.product(&ut)))
}

/// `x!` extended to real arguments as `Γ(x + 1)`.
pub fn factorial(x: f64) -> f64 {
    gamma(x + 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NeoclassicalReport {
    pub lhs: f64,
    pub rhs: f64,
    /// `(rhs - lhs) / max(1, rhs)`.
    pub slack: f64,
    pub pass: bool,
}

/// Both sides of the fractional binomial inequality with parameter `q`.
pub fn neoclassical_check(q: f64, n: u32, s: f64, t: f64) -> Result<NeoclassicalReport> {
    if q < 1.0 || s < 0.0 || t < 0.0 {
        return Err(LabError::InvalidArgument("need q >= 1 and s, t >= 0".into()));
    }
    let mut sum = 0.0;
    for i in 0..=n {
        let a = i as f64 / q;
        let b = (n - i) as f64 / q;
        sum += s.powf(a) * t.powf(b) / (factorial(a) * factorial(b));
    }
    let lhs = sum / (q * q);
    let rhs = (s + t).powf(n as f64 / q) / factorial(n as f64 / q);
    let slack = (rhs - lhs) / rhs.max(1.0);
    Ok(NeoclassicalReport { lhs, rhs, slack, pass: slack >= -1e-12 })
}

/// Riemann zeta for real `s > 1` by Euler–Maclaurin summation.
pub fn zeta(s: f64) -> Result<f64> {
    if s <= 1.0 {
        return Err(LabError::DivergentSeries(format!("zeta({s}) diverges")));
    }
    const N: usize = 12;
    // B_{2j} / (2j)!
    const B: [f64; 6] = [
        1.0 / 12.0,
        -1.0 / 720.0,
        1.0 / 30240.0,
        -1.0 / 1209600.0,
        1.0 / 47900160.0,
        -691.0 / 1307674368000.0,
    ];
    let n = N as f64;
    let mut sum: f64 = (1..N).map(|k| (k as f64).powf(-s)).sum();
    sum += n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s);
    let mut rising = s;
    let mut npow = n.powf(-s - 1.0);
    for (j, b) in B.iter().enumerate() {
        sum += b * rising * npow;
        let m = 2.0 * j as f64;
        rising *= (s + m + 1.0) * (s + m + 2.0);
        npow /= n * n;
    }
    Ok(sum)
}

/// `θ(q) = q² + 2^p ζ(p)` with `p = (⌊q⌋ + 1) / q`.
pub fn theta_constant(q: f64) -> Result<f64> {
    if q <= 1.0 {
        return Err(LabError::InvalidArgument(format!("theta needs q > 1, got {q}")));
    }
    let p = (q.floor() + 1.0) / q;
    if p <= 1.0 {
        return Err(LabError::DivergentSeries(format!("exponent {p} <= 1")));
    }
    Ok(q * q + 2f64.powf(p) * zeta(p)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HolderFit {
    pub c_hat: f64,
    pub gamma: f64,
    pub theta: f64,
    pub k_max: usize,
    /// Number of dyadic intervals examined.
    pub intervals: usize,
}

impl HolderFit {
    /// `(c |t-s|)^{kγ} / (θ (kγ)!)`.
    pub fn bound(&self, k: usize, len: f64) -> f64 {
        let e = k as f64 * self.gamma;
        (self.c_hat * len).powf(e) / (self.theta * factorial(e))
    }
}

/// Dyadic index pairs covering the grid at every scale of at least `min_steps` steps.
pub fn dyadic_pairs(steps: usize, min_steps: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut pieces = 1;
    while steps % pieces == 0 && steps / pieces >= min_steps {
        let len = steps / pieces;
        for j in 0..pieces {
            out.push((j * len, (j + 1) * len));
        }
        pieces *= 2;
    }
    out
}

/// Smallest `c` for which `|q^w_{s,t}| <= (c|t-s|)^{kγ} / (θ (kγ)!)` holds on all dyadic
/// intervals of at least four steps and all words with `1 <= |w| <= k_max`.
///
/// A larger `θ` forces a larger `c`.
pub fn holder_constant_fit(path: &PathGrid, gamma: f64, k_max: usize) -> Result<HolderFit> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(LabError::InvalidArgument(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    let theta = theta_constant(1.0 / gamma)?;
    let pairs = dyadic_pairs(path.steps(), 4);
    let mut c_hat: f64 = 0.0;
    for &(s, t) in &pairs {
        let q = signature_series(path, k_max, s, t)?;
        let len = path.time(t) - path.time(s);
        for k in 1..=k_max {
            let e = k as f64 * gamma;
            let m = q.sup_norm_levels(k, k);
            if m > 0.0 {
                c_hat = c_hat.max((m * theta * factorial(e)).powf(1.0 / e) / len);
            }
        }
    }
    Ok(HolderFit { c_hat, gamma, theta, k_max, intervals: pairs.len() })
}

/// Refinement schedule for the partition products of the extension construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// 2^r nearly equal pieces.
    Dyadic,
    /// 3^r nearly equal pieces.
    Ternary,
    /// Reverse of greedy coarsening: removing, at each step, the interior point whose
    /// neighbours are closest together.
    Greedy,
}

fn equal_partition(s: usize, t: usize, pieces: usize) -> Vec<usize> {
    let n = t - s;
    let pieces = pieces.min(n).max(1);
    let mut pts: Vec<usize> = (0..=pieces).map(|j| s + (j * n) / pieces).collect();
    pts.dedup();
    pts
}

/// Removal order of interior points under greedy coarsening of the full grid on `[s, t]`.
fn greedy_removal_order(s: usize, t: usize) -> Vec<usize> {
    let mut pts: Vec<usize> = (s..=t).collect();
    let mut order = Vec::new();
    while pts.len() > 2 {
        let mut best = 1;
        let mut best_gap = usize::MAX;
        for j in 1..pts.len() - 1 {
            let gap = pts[j + 1] - pts[j - 1];
            if gap < best_gap {
                best_gap = gap;
                best = j;
            }
        }
        order.push(pts.remove(best));
    }
    order
}

/// Partition sequence for a schedule; the last entry is always the full grid.
pub fn partition_sequence(schedule: Schedule, s: usize, t: usize, max_depth: usize) -> Vec<Vec<usize>> {
    let n = t - s;
    let mut seq = Vec::new();
    match schedule {
        Schedule::Dyadic | Schedule::Ternary => {
            let base = if schedule == Schedule::Dyadic { 2usize } else { 3 };
            let mut pieces = 1usize;
            for _ in 0..=max_depth {
                seq.push(equal_partition(s, t, pieces));
                if pieces >= n {
                    break;
                }
                pieces = pieces.saturating_mul(base);
            }
        }
        Schedule::Greedy => {
            let order = greedy_removal_order(s, t);
            let kept = n + 1;
            let mut sizes = vec![];
            let mut size = 2usize;
            while size < kept {
                sizes.push(size);
                size *= 2;
            }
            sizes.push(kept);
            for &sz in sizes.iter().take(max_depth + 1) {
                let removed = kept - sz;
                let mut pts: Vec<usize> = vec![s, t];
                pts.extend_from_slice(&order[removed..]);
                pts.sort_unstable();
                pts.dedup();
                seq.push(pts);
            }
        }
    }
    seq
}

#[derive(Clone, Debug, Serialize)]
pub struct ExtensionReport {
    /// Extended coefficients of the target level, in word-index order.
    pub level: Vec<f64>,
    pub refinements: usize,
    pub last_change: f64,
    /// Whether the extended level satisfies the Holder bound with the supplied constants.
    pub holder_ok: Option<bool>,
}

/// Level-`n` coefficients of `∏_D Q̂` over refining partitions `D` of `[s, t]`, where
/// `Q̂` carries the supplied levels `0..n-1` and a zero level `n`.
///
/// `lower(a, b)` must return a Chen-consistent series of depth `n - 1` on `[a, b]`.
pub fn extend_multiplicative(
    lower: &dyn Fn(usize, usize) -> Result<LevelSeries<f64>>,
    d: usize,
    n: usize,
    s: usize,
    t: usize,
    schedule: Schedule,
    holder: Option<(&HolderFit, f64)>,
) -> Result<ExtensionReport> {
    const TOL: f64 = 1e-10;
    const MAX_DEPTH: usize = 16;
    if n < 1 {
        return Err(LabError::InvalidArgument("target level must be at least 1".into()));
    }
    if s == t {
        return Ok(ExtensionReport { level: vec![0.0; d.pow(n as u32)], refinements: 0, last_change: 0.0, holder_ok: Some(true) });
    }
    let seq = partition_sequence(schedule, s, t, MAX_DEPTH);
    let mut prev: Option<Vec<f64>> = None;
    let mut last_change = f64::INFINITY;
    for (r, pts) in seq.iter().enumerate() {
        let mut prod = LevelSeries::unit(d, n);
        for w in pts.windows(2) {
            let piece = lower(w[0], w[1])?;
            if piece.depth() + 1 != n {
                return Err(LabError::InvalidArgument(format!("lower levels have depth {}, expected {}", piece.depth(), n - 1)));
            }
            prod = prod.product(&piece.pad(n));
        }
        let level = prod.level(n).to_vec();
        if let Some(p) = &prev {
            last_change = p.iter().zip(&level).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if last_change < TOL {
                let holder_ok = holder.map(|(fit, len)| level.iter().all(|v| v.abs() <= fit.bound(n, len) * (1.0 + 1e-12)));
                return Ok(ExtensionReport { level, refinements: r, last_change, holder_ok });
            }
        }
        prev = Some(level);
    }
    Err(LabError::NoConvergence { depth: MAX_DEPTH, change: last_change })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeta_reference_values() {
        assert!((zeta(1.5).unwrap() - 2.612_375_348_685_488_3).abs() < 1e-12);
        assert!((zeta(1.2).unwrap() - 5.591_582_441_177_75).abs() < 1e-11);
        assert!((zeta(2.0).unwrap() - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-13);
    }

    #[test]
    fn word_roundtrip() {
        for i in 0..27 {
            assert_eq!(word_index(&word_at(i, 3, 3), 3), i);
        }
    }

    #[test]
    fn single_step_has_no_second_level() {
        let p = PathGrid::brownian(1.0, 8, 2, 1);
        let q = signature_series(&p, 3, 2, 3).unwrap();
        assert_eq!(q.sup_norm_levels(2, 3), 0.0);
    }
}
