use proptest::prelude::*;
use zakai_lab::ufg::{bracket_field, concat, degree, enumerate_a1, lie_bracket, MultiIndex, VectorField};

fn word(max_letter: usize, max_len: usize) -> impl Strategy<Value = MultiIndex> {
    prop::collection::vec(0..=max_letter, 0..=max_len).prop_map(MultiIndex::new)
}

fn analytic_fields() -> [VectorField; 3] {
    let u = VectorField::new(2, |x, o| { o[0] = x[1].sin(); o[1] = x[0] * x[1]; }, |x, j| {
        j.copy_from_slice(&[0.0, x[1].cos(), x[1], x[0]]);
    });
    let v = VectorField::new(2, |x, o| { o[0] = x[0].cos(); o[1] = 1.0 + 0.5 * x[0]; }, |x, j| {
        j.copy_from_slice(&[-x[0].sin(), 0.0, 0.5, 0.0]);
    });
    let w = VectorField::new(2, |x, o| { o[0] = x[1] * x[1]; o[1] = (0.3 * x[0]).exp(); }, |x, j| {
        j.copy_from_slice(&[0.0, 2.0 * x[1], 0.3 * (0.3 * x[0]).exp(), 0.0]);
    });
    [u, v, w]
}

#[test]
fn degree_examples() {
    assert_eq!(degree(&MultiIndex::new([1])), 1);
    assert_eq!(degree(&MultiIndex::new([0])), 2);
    assert_eq!(degree(&MultiIndex::empty()), 0);
}

#[test]
fn concat_examples() {
    assert_eq!(concat(&MultiIndex::new([1]), &MultiIndex::new([2, 0])), MultiIndex::new([1, 2, 0]));
    assert_eq!(concat(&MultiIndex::empty(), &MultiIndex::new([1])), MultiIndex::new([1]));
    assert_eq!(concat(&MultiIndex::new([0]), &MultiIndex::empty()), MultiIndex::new([0]));
}

#[test]
fn bracket_examples() {
    let fields = [VectorField::affine(vec![1.0], vec![0.0]), VectorField::constant(vec![1.0])];
    let b = bracket_field(&fields, &MultiIndex::new([1, 0])).unwrap();
    for x in [-2.0, 0.0, 3.5] {
        assert!((b.eval(&[x])[0] - 1.0).abs() < 1e-9);
    }
    let consts = [VectorField::constant(vec![0.3, -1.0]), VectorField::constant(vec![2.0, 0.5])];
    for alpha in enumerate_a1(4, 1).unwrap().into_iter().filter(|a| a.len() > 1) {
        let v = bracket_field(&consts, &alpha).unwrap().eval(&[0.7, -0.2]);
        assert!(v.iter().all(|c| c.abs() < 1e-9), "{alpha}");
    }
}

#[test]
fn bracket_rejects_bad_words() {
    let fields = [VectorField::constant(vec![1.0]), VectorField::constant(vec![1.0])];
    assert!(bracket_field(&fields, &MultiIndex::empty()).is_err());
    assert!(bracket_field(&fields, &MultiIndex::new([1, 2])).is_err());
}

#[test]
fn jacobian_matches_centred_differences() {
    let [u, _, _] = analytic_fields();
    let x = [0.4, -0.9];
    let jac = u.jacobian(&x);
    let mut prev = f64::INFINITY;
    for step in [1e-2, 5e-3, 2.5e-3] {
        let mut err: f64 = 0.0;
        for j in 0..2 {
            let (mut xp, mut xm) = (x, x);
            xp[j] += step;
            xm[j] -= step;
            let (vp, vm) = (u.eval(&xp), u.eval(&xm));
            for i in 0..2 {
                err = err.max(((vp[i] - vm[i]) / (2.0 * step) - jac[i * 2 + j]).abs());
            }
        }
        assert!(err < prev / 3.0, "no second-order decrease: {err} after {prev}");
        prev = err;
    }
}

proptest! {
    #[test]
    fn degree_is_additive(a in word(3, 6), b in word(3, 6)) {
        prop_assert_eq!(degree(&concat(&a, &b)), degree(&a) + degree(&b));
    }

    #[test]
    fn concat_is_associative(a in word(3, 4), b in word(3, 4), c in word(3, 4)) {
        prop_assert_eq!(concat(&concat(&a, &b), &c), concat(&a, &concat(&b, &c)));
        prop_assert_eq!(concat(&MultiIndex::empty(), &a), a.clone());
        prop_assert_eq!(concat(&a, &MultiIndex::empty()), a);
    }

    #[test]
    fn enumeration_is_distinct_and_bounded(j in 1usize..6, d1 in 1usize..4) {
        let list = enumerate_a1(j, d1).unwrap();
        let mut sorted = list.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), list.len());
        for a in &list {
            prop_assert!(a.degree() <= j && a.in_a1());
            prop_assert!(a.entries().iter().all(|&e| e <= d1));
        }
    }

    #[test]
    fn bracket_is_antisymmetric(x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let [u, v, _] = analytic_fields();
        let a = lie_bracket(&u, &v).eval(&[x, y]);
        let b = lie_bracket(&v, &u).eval(&[x, y]);
        for i in 0..2 {
            prop_assert!((a[i] + b[i]).abs() <= 1e-10);
        }
    }

    #[test]
    fn jacobi_identity(x in -1.5f64..1.5, y in -1.5f64..1.5) {
        let [u, v, w] = analytic_fields();
        let p = [x, y];
        let t1 = lie_bracket(&u, &lie_bracket(&v, &w)).eval(&p);
        let t2 = lie_bracket(&v, &lie_bracket(&w, &u)).eval(&p);
        let t3 = lie_bracket(&w, &lie_bracket(&u, &v)).eval(&p);
        for i in 0..2 {
            prop_assert!((t1[i] + t2[i] + t3[i]).abs() <= 1e-6, "residual {}", t1[i] + t2[i] + t3[i]);
        }
    }
}
