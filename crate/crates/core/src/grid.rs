//! Finite-difference generators on truncated 1-D and 2-D grids and their semigroups.
//!
//! Grid functions are `DVector<f64>` indexed as `i` in 1-D and `i * n + j` in 2-D,
//! with `i` along the first axis. The discrete inner product uses the uniform weight
//! `dx^N`, so adjoints on the grid are plain transposes.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::ufg::{ScalarField, VectorField};

/// Largest grid for which the semigroup is a dense matrix exponential.
pub const DENSE_LIMIT: usize = 500;
/// Largest Crank–Nicolson substep.
pub const CN_MAX_STEP: f64 = 1e-3;

/// Uniform tensor grid on `[-L, L]^N` with `n` points per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    dim: usize,
    n: usize,
    half_width: f64,
}

impl SpatialGrid {
    pub fn new(dim: usize, n: usize, half_width: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(LabError::Unsupported(format!("{dim}-dimensional grids")));
        }
        if n < 5 || half_width <= 0.0 {
            return Err(LabError::InvalidArgument("grid needs at least 5 points and L > 0".into()));
        }
        Ok(SpatialGrid { dim, n, half_width })
    }

    pub fn line(n: usize, half_width: f64) -> Result<Self> {
        Self::new(1, n, half_width)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / (self.n - 1) as f64
    }

    pub fn size(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.dx()
    }

    /// Axis indices of a flat index.
    pub fn axes(&self, idx: usize) -> [usize; 2] {
        if self.dim == 1 {
            [idx, 0]
        } else {
            [idx / self.n, idx % self.n]
        }
    }

    pub fn flat(&self, axes: [usize; 2]) -> usize {
        if self.dim == 1 {
            axes[0]
        } else {
            axes[0] * self.n + axes[1]
        }
    }

    pub fn point_into(&self, idx: usize, x: &mut [f64]) {
        let a = self.axes(idx);
        for k in 0..self.dim {
            x[k] = self.coord(a[k]);
        }
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        self.point_into(idx, &mut x);
        x
    }

    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> DVector<f64> {
        let mut x = vec![0.0; self.dim];
        DVector::from_iterator(
            self.size(),
            (0..self.size()).map(|idx| {
                self.point_into(idx, &mut x);
                f(&x)
            }),
        )
    }

    pub fn sample_field(&self, f: &ScalarField) -> DVector<f64> {
        self.sample(|x| f.eval(x))
    }

    /// Index of the grid point nearest to `x`.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut a = [0usize; 2];
        for k in 0..self.dim {
            let r = ((x[k] + self.half_width) / self.dx()).round();
            a[k] = r.clamp(0.0, (self.n - 1) as f64) as usize;
        }
        self.flat(a)
    }

    /// Width of the excluded boundary layer, in cells.
    pub fn boundary_layer(&self) -> usize {
        10.min((self.n - 1) / 4)
    }

    pub fn is_interior(&self, idx: usize) -> bool {
        let layer = self.boundary_layer();
        let a = self.axes(idx);
        (0..self.dim).all(|k| a[k] >= layer && a[k] + layer < self.n)
    }

    /// Grid maximum of `|v|` over interior points.
    pub fn sup_interior(&self, v: &DVector<f64>) -> f64 {
        v.iter().enumerate().filter(|(i, _)| self.is_interior(*i)).map(|(_, x)| x.abs()).fold(0.0, f64::max)
    }

    /// Whether `|v|` attains its global maximum inside the boundary layer.
    pub fn peak_in_boundary_layer(&self, v: &DVector<f64>) -> bool {
        let global = v.amax();
        let inner = self.sup_interior(v);
        global > inner * (1.0 + 1e-9) && global > 0.0
    }

    /// `Σ u v dx^N`.
    pub fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(v) * self.dx().powi(self.dim as i32)
    }

    /// Linear interpolation of a 1-D grid function.
    pub fn interpolate(&self, v: &DVector<f64>, x: f64) -> f64 {
        let r = ((x + self.half_width) / self.dx()).clamp(0.0, (self.n - 1) as f64);
        let i = (r.floor() as usize).min(self.n - 2);
        let w = r - i as f64;
        (1.0 - w) * v[i] + w * v[i + 1]
    }

    fn reflect(&self, i: isize) -> usize {
        let last = (self.n - 1) as isize;
        let r = if i < 0 {
            -i
        } else if i > last {
            2 * last - i
        } else {
            i
        };
        r as usize
    }

    fn shifted(&self, idx: usize, off: [isize; 2]) -> usize {
        let a = self.axes(idx);
        let mut b = [0usize; 2];
        for k in 0..self.dim {
            b[k] = self.reflect(a[k] as isize + off[k]);
        }
        self.flat(b)
    }

    /// `V·∇φ` by centred differences, one-sided on the boundary.
    pub fn apply_first_order(&self, v: &VectorField, phi: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.size());
        let mut x = vec![0.0; self.dim];
        let mut vx = vec![0.0; self.dim];
        let dx = self.dx();
        for idx in 0..self.size() {
            self.point_into(idx, &mut x);
            v.eval_into(&x, &mut vx);
            let a = self.axes(idx);
            let mut s = 0.0;
            for k in 0..self.dim {
                if vx[k] == 0.0 {
                    continue;
                }
                let mut up = a;
                let mut dn = a;
                let d = if a[k] == 0 {
                    up[k] += 1;
                    (phi[self.flat(up)] - phi[idx]) / dx
                } else if a[k] == self.n - 1 {
                    dn[k] -= 1;
                    (phi[idx] - phi[self.flat(dn)]) / dx
                } else {
                    up[k] += 1;
                    dn[k] -= 1;
                    (phi[self.flat(up)] - phi[self.flat(dn)]) / (2.0 * dx)
                };
                s += vx[k] * d;
            }
            out[idx] = s;
        }
        out
    }
}

/// Fields defining a second-order operator `V0·∇ + ½ Σ (V_i·∇)² + c`.
#[derive(Clone, Debug)]
pub struct OperatorFields<'a> {
    pub drift: &'a VectorField,
    pub diffusion: &'a [VectorField],
    pub potential: Option<&'a ScalarField>,
}

/// Sparse finite-difference matrix of an operator given by its fields.
///
/// Drift terms switch to upwind differences where the cell Peclet number exceeds one.
/// Reflecting ghost nodes make every row sum to the potential.
pub fn assemble_generator(grid: &SpatialGrid, fields: &OperatorFields<'_>) -> CsrMatrix<f64> {
    let size = grid.size();
    let dim = grid.dim();
    let dx = grid.dx();
    let mut coo = CooMatrix::new(size, size);
    let mut x = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let mut jac = vec![0.0; dim * dim];
    let mut b = vec![0.0; dim];
    let mut a = vec![0.0; dim * dim];
    for idx in 0..size {
        grid.point_into(idx, &mut x);
        fields.drift.eval_into(&x, &mut b);
        a.fill(0.0);
        for field in fields.diffusion {
            field.eval_into(&x, &mut v);
            field.jacobian_into(&x, &mut jac);
            for i in 0..dim {
                for j in 0..dim {
                    b[i] += 0.5 * jac[i * dim + j] * v[j];
                    a[i * dim + j] += 0.5 * v[i] * v[j];
                }
            }
        }
        let mut push = |off: [isize; 2], w: f64| {
            if w != 0.0 {
                coo.push(idx, grid.shifted(idx, off), w);
            }
        };
        for k in 0..dim {
            let mut e = [0isize; 2];
            e[k] = 1;
            let m = [-e[0], -e[1]];
            let akk = a[k * dim + k];
            push(e, akk / (dx * dx));
            push(m, akk / (dx * dx));
            push([0, 0], -2.0 * akk / (dx * dx));
            let bk = b[k];
            if bk.abs() * dx > 2.0 * akk {
                if bk > 0.0 {
                    push(e, bk / dx);
                    push([0, 0], -bk / dx);
                } else {
                    push([0, 0], bk / dx);
                    push(m, -bk / dx);
                }
            } else {
                push(e, bk / (2.0 * dx));
                push(m, -bk / (2.0 * dx));
            }
        }
        if dim == 2 {
            let w = 2.0 * a[1] / (4.0 * dx * dx);
            push([1, 1], w);
            push([1, -1], -w);
            push([-1, 1], -w);
            push([-1, -1], w);
        }
        if let Some(c) = fields.potential {
            push([0, 0], c.eval(&x));
        }
    }
    CsrMatrix::from(&coo)
}

/// `out = A v` for a CSR matrix.
pub fn csr_mul_into(a: &CsrMatrix<f64>, v: &[f64], out: &mut [f64]) {
    let (offsets, cols, vals) = a.csr_data();
    for (r, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for p in offsets[r]..offsets[r + 1] {
            s += vals[p] * v[cols[p]];
        }
        *o = s;
    }
}

pub fn csr_mul(a: &CsrMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.nrows());
    csr_mul_into(a, v.as_slice(), out.as_mut_slice());
    out
}

pub fn csr_to_dense(a: &CsrMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows(), a.ncols());
    for (r, c, v) in a.triplet_iter() {
        m[(r, c)] += *v;
    }
    m
}

/// LU factors of a banded matrix, computed without pivoting.
#[derive(Clone, Debug)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    /// Row `i` holds columns `i - kl ..= i + ku`.
    band: Vec<f64>,
}

impl BandLu {
    fn width(&self) -> usize {
        self.kl + self.ku + 1
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.band[i * self.width() + (j + self.kl - i)]
    }

    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let w = self.width();
        &mut self.band[i * w + (j + self.kl - i)]
    }

    /// Factorises `alpha I + beta A`.
    pub fn factor(a: &CsrMatrix<f64>, alpha: f64, beta: f64) -> Result<Self> {
        let n = a.nrows();
        let (mut kl, mut ku) = (0usize, 0usize);
        for (r, c, _) in a.triplet_iter() {
            if c < r {
                kl = kl.max(r - c);
            } else {
                ku = ku.max(c - r);
            }
        }
        let mut lu = BandLu { n, kl, ku, band: vec![0.0; n * (kl + ku + 1)] };
        for (r, c, v) in a.triplet_iter() {
            *lu.at_mut(r, c) += beta * v;
        }
        for i in 0..n {
            *lu.at_mut(i, i) += alpha;
        }
        for k in 0..n {
            let pivot = lu.at(k, k);
            if pivot.abs() < 1e-300 {
                return Err(LabError::DegenerateFit(format!("zero pivot at row {k} in banded factorisation")));
            }
            for i in k + 1..(k + kl + 1).min(n) {
                let l = lu.at(i, k) / pivot;
                *lu.at_mut(i, k) = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..(k + ku + 1).min(n) {
                    let u = lu.at(k, j);
                    *lu.at_mut(i, j) -= l * u;
                }
            }
        }
        Ok(lu)
    }

    /// Solves `M x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for j in i.saturating_sub(self.kl)..i {
                s -= self.at(i, j) * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..(i + self.ku + 1).min(n) {
                s -= self.at(i, j) * b[j];
            }
            b[i] = s / self.at(i, i);
        }
    }

    /// Solves `Mᵀ x = b` in place.
    pub fn solve_transpose(&self, b: &mut [f64]) {
        let n = self.n;
        // Uᵀ z = b
        for i in 0..n {
            let mut s = b[i];
            for j in i.saturating_sub(self.ku)..i {
                s -= self.at(j, i) * b[j];
            }
            b[i] = s / self.at(i, i);
        }
        // Lᵀ x = z
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..(i + self.kl + 1).min(n) {
                s -= self.at(j, i) * b[j];
            }
            b[i] = s;
        }
    }
}

/// Crank–Nicolson propagator with an implicit-Euler start.
#[derive(Clone, Debug)]
pub struct CrankNicolson {
    implicit: BandLu,
    explicit: CsrMatrix<f64>,
    explicit_t: CsrMatrix<f64>,
    steps: usize,
}

impl CrankNicolson {
    pub fn new(generator: &CsrMatrix<f64>, t: f64) -> Result<Self> {
        let steps = ((t / CN_MAX_STEP).ceil() as usize).max(2);
        let tau = t / steps as f64;
        let implicit = BandLu::factor(generator, 1.0, -0.5 * tau)?;
        let mut explicit = generator.clone();
        explicit.values_mut().iter_mut().for_each(|v| *v *= 0.5 * tau);
        let explicit = &explicit + &CsrMatrix::identity(generator.nrows());
        let explicit_t = explicit.transpose();
        Ok(CrankNicolson { implicit, explicit, explicit_t, steps })
    }

    fn apply(&self, v: &mut [f64], scratch: &mut [f64]) {
        // Four implicit-Euler half steps replace the first two CN steps;
        // `I - τA/2` is also the CN left-hand side.
        for _ in 0..4 {
            self.implicit.solve(v);
        }
        for _ in 2..self.steps {
            csr_mul_into(&self.explicit, v, scratch);
            self.implicit.solve(scratch);
            v.copy_from_slice(scratch);
        }
    }

    fn apply_transpose(&self, v: &mut [f64], scratch: &mut [f64]) {
        for _ in 2..self.steps {
            self.implicit.solve_transpose(v);
            csr_mul_into(&self.explicit_t, v, scratch);
            v.copy_from_slice(scratch);
        }
        for _ in 0..4 {
            self.implicit.solve_transpose(v);
        }
    }
}

/// Discrete semigroup `P_t` on a grid.
#[derive(Clone, Debug)]
pub enum Propagator {
    Identity(usize),
    Dense(DMatrix<f64>),
    CrankNicolson(Box<CrankNicolson>),
}

impl Propagator {
    /// Dense exponential for small grids, Crank–Nicolson otherwise.
    pub fn new(generator: &CsrMatrix<f64>, t: f64) -> Result<Self> {
        if t < 0.0 {
            return Err(LabError::InvalidArgument(format!("negative time {t}")));
        }
        if t == 0.0 {
            return Ok(Propagator::Identity(generator.nrows()));
        }
        if generator.nrows() <= DENSE_LIMIT {
            Ok(Self::dense(generator, t))
        } else {
            Ok(Propagator::CrankNicolson(Box::new(CrankNicolson::new(generator, t)?)))
        }
    }

    pub fn dense(generator: &CsrMatrix<f64>, t: f64) -> Self {
        Propagator::Dense((csr_to_dense(generator) * t).exp())
    }

    pub fn crank_nicolson(generator: &CsrMatrix<f64>, t: f64) -> Result<Self> {
        Ok(Propagator::CrankNicolson(Box::new(CrankNicolson::new(generator, t)?)))
    }

    pub fn size(&self) -> usize {
        match self {
            Propagator::Identity(n) => *n,
            Propagator::Dense(m) => m.nrows(),
            Propagator::CrankNicolson(c) => c.explicit.nrows(),
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Propagator::Identity(_) => v.clone(),
            Propagator::Dense(m) => m * v,
            Propagator::CrankNicolson(c) => {
                let mut out = v.clone();
                let mut scratch = vec![0.0; v.len()];
                c.apply(out.as_mut_slice(), &mut scratch);
                out
            }
        }
    }

    pub fn apply_transpose(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Propagator::Identity(_) => v.clone(),
            Propagator::Dense(m) => m.tr_mul(v),
            Propagator::CrankNicolson(c) => {
                let mut out = v.clone();
                let mut scratch = vec![0.0; v.len()];
                c.apply_transpose(out.as_mut_slice(), &mut scratch);
                out
            }
        }
    }

    /// Applies the propagator to every column.
    pub fn apply_columns(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Propagator::Identity(_) => v.clone(),
            Propagator::Dense(m) => m * v,
            Propagator::CrankNicolson(_) => {
                let mut out = v.clone();
                for j in 0..v.ncols() {
                    let col = self.apply(&v.column(j).into_owned());
                    out.set_column(j, &col);
                }
                out
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.size();
        self.apply_columns(&DMatrix::identity(n, n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_lu_matches_dense_solve() {
        let g = SpatialGrid::new(2, 7, 1.0).unwrap();
        let drift = VectorField::affine(vec![-1.0, 0.3, 0.0, -0.5], vec![0.1, 0.0]);
        let diff = [VectorField::constant(vec![1.0, 0.2]), VectorField::constant(vec![0.0, 0.8])];
        let a = assemble_generator(&g, &OperatorFields { drift: &drift, diffusion: &diff, potential: None });
        let lu = BandLu::factor(&a, 1.0, -0.01).unwrap();
        let m = DMatrix::identity(49, 49) - csr_to_dense(&a) * 0.01;
        let b = DVector::from_fn(49, |i, _| (i as f64).sin());
        let mut x = b.clone();
        lu.solve(x.as_mut_slice());
        assert!((&m * &x - &b).amax() < 1e-12);
        let mut y = b.clone();
        lu.solve_transpose(y.as_mut_slice());
        assert!((m.transpose() * &y - &b).amax() < 1e-12);
    }

    #[test]
    fn rows_sum_to_zero() {
        let g = SpatialGrid::line(31, 3.0).unwrap();
        let drift = VectorField::scalar(|x| -4.0 * x, |_| -4.0);
        let diff = [VectorField::scalar(|x| 0.3 + 0.1 * x.sin(), |x| 0.1 * x.cos())];
        let a = assemble_generator(&g, &OperatorFields { drift: &drift, diffusion: &diff, potential: None });
        let ones = DVector::from_element(31, 1.0);
        assert!(csr_mul(&a, &ones).amax() < 1e-10);
    }
}
