//! Pathwise form of the level terms: stochastic integrals against `Y` rewritten by
//! integration by parts into Riemann integrals with iterated-integral coefficients.
//!
//! A term at level `m` reads
//!
//! ```text
//! sign · q^{(E)}_{s,T} · ∫_{s<r_1<..<r_k<T} Π_j c_j(r_j) P_{r_1-s} Γ_1 P_{r_2-r_1} .. Γ_k P_{T-r_k} h^p φ dr
//! ```
//!
//! where `q^{(a)}` is the iterated integral of the word `(1, .., 1)` of length `a`,
//! each `c_j` is a product of such integrals on `[s, r_j]`, and each `Γ_j` is a chain of
//! `Φ_p` (multiplication by `h^p`) and `Ψ_p = [A, h^p]`. Only one observation channel
//! is supported.

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::csr_mul;
use crate::sde::PathGrid;
use crate::semigroup::GridBackend;
use crate::ufg::ScalarField;

/// Primitive operator in a chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Prim {
    /// Multiplication by `h^p`.
    Phi(usize),
    /// Commutator `[A, h^p]`.
    Psi(usize),
}

impl fmt::Display for Prim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prim::Phi(p) => write!(f, "Phi{p}"),
            Prim::Psi(p) => write!(f, "Psi{p}"),
        }
    }
}

/// One `dr` variable with its coefficient and operator chain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeFactor {
    /// Lengths of the iterated integrals multiplied together at `r`.
    pub coefficient: Vec<usize>,
    /// Operators written left to right.
    pub chain: Vec<Prim>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathwiseTerm {
    pub sign: i8,
    /// Length of the endpoint integral `q_{s,T}`; zero for none.
    pub endpoint: usize,
    pub factors: Vec<TimeFactor>,
    /// Power of `h` applied to `φ` before the last semigroup.
    pub end_power: usize,
}

impl PathwiseTerm {
    fn base() -> Self {
        PathwiseTerm { sign: 1, endpoint: 0, factors: vec![], end_power: 0 }
    }

    /// Total number of `dY` integrations carried by the coefficients.
    pub fn degree(&self) -> usize {
        self.endpoint + self.factors.iter().flat_map(|f| f.coefficient.iter()).sum::<usize>()
    }

    /// Integration-by-parts step from level `m` to `m + 1`.
    fn lift(&self) -> Vec<PathwiseTerm> {
        let e1 = self.endpoint + 1;
        let mut out = Vec::with_capacity(3);
        // Endpoint term: the new integral multiplies the whole expression at T.
        out.push(PathwiseTerm { sign: self.sign, endpoint: e1, factors: self.factors.clone(), end_power: self.end_power + 1 });
        // The last time variable hits the upper limit.
        if let Some((last, rest)) = self.factors.split_last() {
            let mut coefficient = last.coefficient.clone();
            coefficient.push(e1);
            let mut chain = last.chain.clone();
            chain.push(Prim::Phi(self.end_power + 1));
            let mut factors = rest.to_vec();
            factors.push(TimeFactor { coefficient, chain });
            out.push(PathwiseTerm { sign: -self.sign, endpoint: 0, factors, end_power: 0 });
        }
        // Time derivative of the inner semigroups brings in a commutator.
        let mut factors = self.factors.clone();
        factors.push(TimeFactor { coefficient: vec![e1], chain: vec![Prim::Psi(self.end_power + 1)] });
        out.push(PathwiseTerm { sign: -self.sign, endpoint: 0, factors, end_power: 0 });
        out
    }

    /// Operator-chain label, e.g. `P Psi1 P Phi1`.
    pub fn chain_label(&self) -> String {
        let mut parts = vec!["P".to_string()];
        for f in &self.factors {
            parts.extend(f.chain.iter().map(|p| p.to_string()));
            parts.push("P".into());
        }
        if self.end_power > 0 {
            parts.push(format!("Phi{}", self.end_power));
        }
        parts.join(" ")
    }

    /// Coefficient label, e.g. `q2(T) * int q1(r1)`.
    pub fn coefficient_label(&self) -> String {
        let mut parts = Vec::new();
        if self.endpoint > 0 {
            parts.push(format!("q{}(T)", self.endpoint));
        }
        for (j, f) in self.factors.iter().enumerate() {
            let c: Vec<String> = f.coefficient.iter().map(|a| format!("q{a}(r{})", j + 1)).collect();
            parts.push(format!("int {}", c.join("*")));
        }
        if parts.is_empty() {
            "1".into()
        } else {
            parts.join(" * ")
        }
    }
}

impl fmt::Display for PathwiseTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.sign > 0 { '+' } else { '-' };
        write!(f, "{sign} {} [{}]", self.coefficient_label(), self.chain_label())
    }
}

/// Largest level with a supported term list.
pub const MAX_IBP_LEVEL: usize = 3;

/// Term list at `level`, generated from `P_{T-s} φ` by repeated integration by parts.
pub fn ibp_terms(level: usize) -> Result<Vec<PathwiseTerm>> {
    if level > MAX_IBP_LEVEL {
        return Err(LabError::Unsupported(format!("pathwise level {level}")));
    }
    let mut terms = vec![PathwiseTerm::base()];
    for _ in 0..level {
        terms = terms.iter().flat_map(|t| t.lift()).collect();
    }
    Ok(terms)
}

fn factor(coefficient: &[usize], chain: &[Prim]) -> TimeFactor {
    TimeFactor { coefficient: coefficient.to_vec(), chain: chain.to_vec() }
}

/// The five second-level terms written out by hand.
pub fn level2_terms() -> Vec<PathwiseTerm> {
    use Prim::*;
    vec![
        PathwiseTerm { sign: 1, endpoint: 2, factors: vec![], end_power: 2 },
        PathwiseTerm { sign: -1, endpoint: 0, factors: vec![factor(&[2], &[Psi(2)])], end_power: 0 },
        PathwiseTerm { sign: -1, endpoint: 1, factors: vec![factor(&[1], &[Psi(1)])], end_power: 1 },
        PathwiseTerm { sign: 1, endpoint: 0, factors: vec![factor(&[1, 1], &[Psi(1), Phi(1)])], end_power: 0 },
        PathwiseTerm { sign: 1, endpoint: 0, factors: vec![factor(&[1], &[Psi(1)]), factor(&[1], &[Psi(1)])], end_power: 0 },
    ]
}

/// Frozen third-level term list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermFixture {
    pub version: u32,
    pub level: usize,
    pub terms: Vec<PathwiseTerm>,
}

const LEVEL3_FIXTURE: &str = include_str!("../fixtures/ibp_level3.json");

pub fn level3_fixture() -> Result<TermFixture> {
    Ok(serde_json::from_str(LEVEL3_FIXTURE)?)
}

/// Every term's coefficient degree equals `level`.
pub fn degree_audit(terms: &[PathwiseTerm], level: usize) -> bool {
    terms.iter().all(|t| t.degree() == level)
}

/// `[A_h, h^p] φ` as a matrix commutator on the grid.
pub fn psi_operator(backend: &GridBackend, p: usize, phi: &DVector<f64>) -> DVector<f64> {
    let hp = backend.sensor_values(0).map(|v| v.powi(p as i32));
    let a = backend.generator();
    csr_mul(a, &hp.component_mul(phi)) - hp.component_mul(&csr_mul(a, phi))
}

/// `(A h^p) φ + Σ_i (V_i h^p)(V_i φ)` with each factor discretised separately.
pub fn psi_operator_formula(backend: &GridBackend, p: usize, phi: &DVector<f64>) -> DVector<f64> {
    let grid = backend.grid();
    let model = backend.model();
    let h = &model.sensors()[0];
    let hp = grid.sample(|x| h.eval(x).powi(p as i32));
    let hp_field = {
        let h = h.clone();
        ScalarField::from_value(grid.dim(), move |y| h.eval(y).powi(p as i32))
    };
    let ahp = grid.sample(|x| model.generator_apply(&hp_field, x));
    let mut out = ahp.component_mul(phi);
    for v in model.diffusion() {
        out += grid.apply_first_order(v, &hp).component_mul(&grid.apply_first_order(v, phi));
    }
    out
}

fn apply_chain(backend: &GridBackend, h: &DVector<f64>, chain: &[Prim], v: &DVector<f64>) -> DVector<f64> {
    let mut out = v.clone();
    for prim in chain.iter().rev() {
        out = match *prim {
            Prim::Phi(p) => h.map(|x| x.powi(p as i32)).component_mul(&out),
            Prim::Psi(p) => psi_operator(backend, p, &out),
        };
    }
    out
}

/// `q^{(a)}_{s, s+i}` for `a = 0..=depth`, `i = 0..=K`.
fn ones_integrals(path: &PathGrid, s: usize, t: usize, depth: usize) -> Vec<Vec<f64>> {
    let k = t - s;
    let mut q = vec![vec![0.0; k + 1]; depth + 1];
    q[0].iter_mut().for_each(|v| *v = 1.0);
    for i in 0..k {
        let dy = path.dy(s + i, 0);
        for a in 1..=depth {
            q[a][i + 1] = q[a][i] + q[a - 1][i] * dy;
        }
    }
    q
}

fn check_single_channel(backend: &GridBackend, path: &PathGrid) -> Result<()> {
    if path.d2() != 1 || backend.model().d2() != 1 {
        return Err(LabError::Unsupported("pathwise terms are implemented for one observation channel".into()));
    }
    Ok(())
}

/// Grid value of one term on `[s, t]`, with trapezoid rules for every `dr` integral.
pub fn evaluate_term(backend: &GridBackend, path: &PathGrid, s: usize, t: usize, phi: &DVector<f64>, term: &PathwiseTerm) -> Result<DVector<f64>> {
    check_single_channel(backend, path)?;
    if s > t || t > path.steps() {
        return Err(LabError::InvalidArgument(format!("need 0 <= s <= t <= {}, got ({s}, {t})", path.steps())));
    }
    let depth = term.degree().max(1);
    let q = ones_integrals(path, s, t, depth);
    let kk = t - s;
    let dt = path.dt();
    let p = backend.propagator(dt)?;
    let h = backend.sensor_values(0);
    let sign = term.sign as f64;
    let endpoint = q[term.endpoint][kk];
    let end = h.map(|x| x.powi(term.end_power as i32)).component_mul(phi);
    let coef = |f: &TimeFactor, i: usize| f.coefficient.iter().map(|&a| q[a][i]).product::<f64>();

    if term.factors.is_empty() {
        let mut v = end;
        for _ in 0..kk {
            v = p.apply(&v);
        }
        return Ok(v * (sign * endpoint));
    }
    if kk == 0 {
        return Ok(DVector::zeros(phi.len()));
    }
    let nf = term.factors.len();
    // Outermost variable r_k on [s, T] with trapezoid weights.
    let mut tail = vec![DVector::zeros(phi.len()); kk + 1];
    tail[kk] = end;
    for i in (0..kk).rev() {
        tail[i] = p.apply(&tail[i + 1]);
    }
    let last = &term.factors[nf - 1];
    let mut v: Vec<DVector<f64>> = (0..=kk)
        .map(|i| {
            let w = if i == 0 || i == kk { 0.5 * dt } else { dt };
            apply_chain(backend, &h, &last.chain, &tail[i]) * (w * coef(last, i))
        })
        .collect();
    // Inner variables: weight ½Δ on the diagonal, and ½Δ for the left endpoint.
    for f in term.factors[..nf - 1].iter().rev() {
        let mut b = DVector::zeros(phi.len());
        let mut next = vec![DVector::zeros(phi.len()); kk + 1];
        for i in (0..=kk).rev() {
            if i < kk {
                b = p.apply(&(&v[i + 1] + &b));
            }
            let alpha = if i == 0 { 0.5 } else { 1.0 };
            let diag = if i > 0 { 0.5 } else { 0.0 };
            let inner = (&v[i] * diag + &b * alpha) * dt;
            next[i] = apply_chain(backend, &h, &f.chain, &inner) * coef(f, i);
        }
        v = next;
    }
    let mut acc = v[kk].clone();
    for i in (0..kk).rev() {
        acc = p.apply(&acc) + &v[i];
    }
    Ok(acc * (sign * endpoint))
}

/// Sum of a term list together with each term's own contribution.
#[derive(Clone, Debug)]
pub struct IbpEvaluation {
    pub total: DVector<f64>,
    pub terms: Vec<(PathwiseTerm, DVector<f64>)>,
}

pub fn evaluate_terms(backend: &GridBackend, path: &PathGrid, s: usize, t: usize, phi: &DVector<f64>, terms: &[PathwiseTerm]) -> Result<IbpEvaluation> {
    let mut total = DVector::zeros(phi.len());
    let mut out = Vec::with_capacity(terms.len());
    for term in terms {
        let v = evaluate_term(backend, path, s, t, phi, term)?;
        total += &v;
        out.push((term.clone(), v));
    }
    Ok(IbpEvaluation { total, terms: out })
}

pub fn ibp_level1(backend: &GridBackend, path: &PathGrid, s: usize, t: usize, phi: &DVector<f64>) -> Result<IbpEvaluation> {
    evaluate_terms(backend, path, s, t, phi, &ibp_terms(1)?)
}

pub fn ibp_level2(backend: &GridBackend, path: &PathGrid, s: usize, t: usize, phi: &DVector<f64>) -> Result<IbpEvaluation> {
    evaluate_terms(backend, path, s, t, phi, &level2_terms())
}

pub fn ibp_level3(backend: &GridBackend, path: &PathGrid, s: usize, t: usize, phi: &DVector<f64>) -> Result<IbpEvaluation> {
    evaluate_terms(backend, path, s, t, phi, &level3_fixture()?.terms)
}

pub fn ibp_level(backend: &GridBackend, path: &PathGrid, s: usize, t: usize, phi: &DVector<f64>, level: usize) -> Result<IbpEvaluation> {
    match level {
        1 => ibp_level1(backend, path, s, t, phi),
        2 => ibp_level2(backend, path, s, t, phi),
        3 => ibp_level3(backend, path, s, t, phi),
        _ => Err(LabError::Unsupported(format!("pathwise level {level}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn term_counts() {
        assert_eq!(ibp_terms(1).unwrap().len(), 2);
        assert_eq!(ibp_terms(2).unwrap().len(), 5);
        assert_eq!(ibp_terms(3).unwrap().len(), 14);
        assert!(ibp_terms(4).is_err());
    }

    #[test]
    fn generated_level2_matches_hand_list() {
        let mut a = ibp_terms(2).unwrap();
        let mut b = level2_terms();
        let key = |t: &PathwiseTerm| format!("{t}");
        a.sort_by_key(key);
        b.sort_by_key(key);
        assert_eq!(a, b);
    }

    #[test]
    fn level3_fixture_is_current() {
        let fx = level3_fixture().unwrap();
        assert_eq!(fx.level, 3);
        assert_eq!(fx.terms, ibp_terms(3).unwrap());
        assert!(degree_audit(&fx.terms, 3));
    }
}
