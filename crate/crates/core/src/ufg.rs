//! Multi-indices, vector fields and iterated Lie brackets.
//!
//! A multi-index is a word over `{0, .., d1}`. Letter `0` refers to the drift
//! field and carries weight two in the degree.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Word over `{0, .., d1}`; serialises as a plain integer array.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    pub fn new(entries: impl Into<Vec<usize>>) -> Self {
        MultiIndex(entries.into())
    }

    pub fn empty() -> Self {
        MultiIndex(Vec::new())
    }

    pub fn entries(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Length plus the number of zero letters.
    pub fn degree(&self) -> usize {
        self.0.len() + self.0.iter().filter(|&&a| a == 0).count()
    }

    pub fn concat(&self, other: &MultiIndex) -> MultiIndex {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        MultiIndex(v)
    }

    /// Member of A1: nonempty and different from the single letter `0`.
    pub fn in_a1(&self) -> bool {
        !self.0.is_empty() && self.0 != [0]
    }

    fn check_range(&self, d1: usize) -> Result<()> {
        if let Some(&bad) = self.0.iter().find(|&&a| a > d1) {
            return Err(LabError::InvalidIndex {
                index: self.0.clone(),
                reason: format!("letter {bad} exceeds d1 = {d1}"),
            });
        }
        Ok(())
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "()");
        }
        let parts: Vec<String> = self.0.iter().map(|a| a.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

pub fn degree(alpha: &MultiIndex) -> usize {
    alpha.degree()
}

pub fn concat(alpha: &MultiIndex, beta: &MultiIndex) -> MultiIndex {
    alpha.concat(beta)
}

/// All of A1(j): words of degree at most `j`, excluding the empty word and `(0)`.
///
/// Ordered by length, then lexicographically.
pub fn enumerate_a1(j: usize, d1: usize) -> Result<Vec<MultiIndex>> {
    if j < 1 {
        return Err(LabError::EmptySet(format!("A1({j}) requires j >= 1")));
    }
    let mut out = Vec::new();
    let mut layer: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..j {
        let mut next = Vec::new();
        for w in &layer {
            for a in 0..=d1 {
                let mut v = w.clone();
                v.push(a);
                let m = MultiIndex(v);
                if m.degree() <= j {
                    if m.in_a1() {
                        out.push(m.clone());
                    }
                    next.push(m.0);
                }
            }
        }
        layer = next;
    }
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(out)
}

/// A0(j): the empty word followed by A1(j).
pub fn enumerate_a0(j: usize, d1: usize) -> Result<Vec<MultiIndex>> {
    let mut out = vec![MultiIndex::empty()];
    out.extend(enumerate_a1(j, d1)?);
    Ok(out)
}

pub type VecFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type RealFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

fn fd_step(x: f64) -> f64 {
    1e-5 * (x.abs() + 1.0)
}

/// Smooth vector field on R^N with value and Jacobian evaluators.
///
/// The Jacobian is stored row-major: `jac[i * N + j] = dV^i / dx^j`.
#[derive(Clone)]
pub struct VectorField {
    dim: usize,
    value: VecFn,
    jacobian: VecFn,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl VectorField {
    pub fn new(
        dim: usize,
        value: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        jacobian: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        VectorField { dim, value: Arc::new(value), jacobian: Arc::new(jacobian) }
    }

    /// Field whose Jacobian is taken by centred finite differences.
    pub fn from_value(dim: usize, value: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        let value: VecFn = Arc::new(value);
        let v2 = value.clone();
        let jacobian: VecFn = Arc::new(move |x: &[f64], jac: &mut [f64]| fd_jacobian(&*v2, dim, x, jac));
        VectorField { dim, value, jacobian }
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(dim, |_, out| out.fill(0.0), |_, jac| jac.fill(0.0))
    }

    pub fn constant(c: Vec<f64>) -> Self {
        let dim = c.len();
        Self::new(dim, move |_, out| out.copy_from_slice(&c), |_, jac| jac.fill(0.0))
    }

    /// x ↦ M x + b with `m` row-major.
    pub fn affine(m: Vec<f64>, b: Vec<f64>) -> Self {
        let dim = b.len();
        assert_eq!(m.len(), dim * dim, "affine field needs a square matrix");
        let m2 = m.clone();
        Self::new(
            dim,
            move |x, out| {
                for i in 0..dim {
                    out[i] = b[i] + (0..dim).map(|j| m[i * dim + j] * x[j]).sum::<f64>();
                }
            },
            move |_, jac| jac.copy_from_slice(&m2),
        )
    }

    /// One-dimensional field from a value and its derivative.
    pub fn scalar(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::new(1, move |x, out| out[0] = f(x[0]), move |x, jac| jac[0] = df(x[0]))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (self.value)(x, out)
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out);
        out
    }

    pub fn jacobian_into(&self, x: &[f64], jac: &mut [f64]) {
        (self.jacobian)(x, jac)
    }

    pub fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        let mut jac = vec![0.0; self.dim * self.dim];
        self.jacobian_into(x, &mut jac);
        jac
    }

    pub fn divergence(&self, x: &[f64]) -> f64 {
        let jac = self.jacobian(x);
        (0..self.dim).map(|i| jac[i * self.dim + i]).sum()
    }

    /// Directional derivative V·∇f given the gradient of f at x.
    pub fn apply_to_gradient(&self, x: &[f64], grad: &[f64]) -> f64 {
        self.eval(x).iter().zip(grad).map(|(v, g)| v * g).sum()
    }

    pub fn neg(&self) -> VectorField {
        let (v, j) = (self.value.clone(), self.jacobian.clone());
        VectorField::new(
            self.dim,
            move |x, out| {
                v(x, out);
                out.iter_mut().for_each(|o| *o = -*o);
            },
            move |x, jac| {
                j(x, jac);
                jac.iter_mut().for_each(|o| *o = -*o);
            },
        )
    }

    /// Pointwise sum with a finite-difference Jacobian.
    pub fn add(&self, other: &VectorField) -> VectorField {
        let (a, b) = (self.value.clone(), other.value.clone());
        let dim = self.dim;
        VectorField::from_value(dim, move |x, out| {
            a(x, out);
            let mut tmp = vec![0.0; dim];
            b(x, &mut tmp);
            out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
        })
    }
}

/// Centred finite-difference Jacobian, step `1e-5 (|x_j| + 1)`.
pub fn fd_jacobian(value: &(dyn Fn(&[f64], &mut [f64]) + Send + Sync), dim: usize, x: &[f64], jac: &mut [f64]) {
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; dim];
    let mut fm = vec![0.0; dim];
    for j in 0..dim {
        let h = fd_step(x[j]);
        xp[j] = x[j] + h;
        value(&xp, &mut fp);
        xp[j] = x[j] - h;
        value(&xp, &mut fm);
        xp[j] = x[j];
        for i in 0..dim {
            jac[i * dim + j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
}

/// Lie bracket `[V, W](x) = DW(x) V(x) - DV(x) W(x)`.
///
/// The result differentiates itself numerically.
pub fn lie_bracket(v: &VectorField, w: &VectorField) -> VectorField {
    let dim = v.dim;
    let (v, w) = (v.clone(), w.clone());
    VectorField::from_value(dim, move |x, out| {
        let vx = v.eval(x);
        let wx = w.eval(x);
        let dv = v.jacobian(x);
        let dw = w.jacobian(x);
        for i in 0..dim {
            let mut s = 0.0;
            for j in 0..dim {
                s += dw[i * dim + j] * vx[j] - dv[i * dim + j] * wx[j];
            }
            out[i] = s;
        }
    })
}

/// `V_[α]` with `V_[(i)] = V_i` and `V_[α*i] = [V_[α], V_i]`.
pub fn bracket_field(fields: &[VectorField], alpha: &MultiIndex) -> Result<VectorField> {
    if fields.is_empty() {
        return Err(LabError::InvalidArgument("no fields supplied".into()));
    }
    if alpha.is_empty() {
        return Err(LabError::InvalidIndex { index: vec![], reason: "empty word has no bracket field".into() });
    }
    alpha.check_range(fields.len() - 1)?;
    let e = alpha.entries();
    let mut acc = fields[e[0]].clone();
    for &i in &e[1..] {
        acc = lie_bracket(&acc, &fields[i]);
    }
    Ok(acc)
}

/// Smooth scalar field with a gradient evaluator.
#[derive(Clone)]
pub struct ScalarField {
    dim: usize,
    value: RealFn,
    gradient: VecFn,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl ScalarField {
    pub fn new(
        dim: usize,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        ScalarField { dim, value: Arc::new(value), gradient: Arc::new(gradient) }
    }

    pub fn from_value(dim: usize, value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        let value: RealFn = Arc::new(value);
        let v2 = value.clone();
        let gradient: VecFn = Arc::new(move |x: &[f64], g: &mut [f64]| {
            let mut xp = x.to_vec();
            for j in 0..x.len() {
                let h = fd_step(x[j]);
                xp[j] = x[j] + h;
                let fp = v2(&xp);
                xp[j] = x[j] - h;
                let fm = v2(&xp);
                xp[j] = x[j];
                g[j] = (fp - fm) / (2.0 * h);
            }
        });
        ScalarField { dim, value, gradient }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::new(dim, move |_| c, |_, g| g.fill(0.0))
    }

    pub fn scalar(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::new(1, move |x| f(x[0]), move |x, g| g[0] = df(x[0]))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn gradient_into(&self, x: &[f64], g: &mut [f64]) {
        (self.gradient)(x, g)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.gradient_into(x, &mut g);
        g
    }

    /// Hessian by centred differences of the gradient.
    pub fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut hess = vec![0.0; n * n];
        let mut xp = x.to_vec();
        let (mut gp, mut gm) = (vec![0.0; n], vec![0.0; n]);
        for j in 0..n {
            let h = 1e-4 * (x[j].abs() + 1.0);
            xp[j] = x[j] + h;
            self.gradient_into(&xp, &mut gp);
            xp[j] = x[j] - h;
            self.gradient_into(&xp, &mut gm);
            xp[j] = x[j];
            for i in 0..n {
                hess[i * n + j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        hess
    }
}
