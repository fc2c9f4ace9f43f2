use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use zakai_lab::chaos::{
    adjoint_levels_grid, adjoint_truncated_expansion, expansion_levels_grid, operator_norm_decay, r_operator_grid,
    remainder_bound, simplex_volume_constant, truncated_expansion,
};
use zakai_lab::filtering::{rho_mc, McSettings};
use zakai_lab::grid::SpatialGrid;
use zakai_lab::model::{linear_sensor, SdeModel};
use zakai_lab::sde::PathGrid;
use zakai_lab::semigroup::{AdjointMode, GridBackend};
use zakai_lab::ufg::ScalarField;

fn backend(sensor: ScalarField, n: usize) -> GridBackend {
    GridBackend::new(SdeModel::ou(1.0, 1.0, sensor, "ou"), SpatialGrid::line(n, 4.0).unwrap()).unwrap()
}

fn bump(b: &GridBackend, c: f64) -> DVector<f64> {
    b.grid().sample(|x| (-(x[0] - c).powi(2) / 0.5).exp())
}

fn bounded_sensor() -> ScalarField {
    ScalarField::scalar(f64::tanh, |x| 1.0 - x.tanh().powi(2))
}

#[test]
fn flat_observation_kills_every_level() {
    let b = backend(linear_sensor(1.0), 61);
    let path = PathGrid::zeros(0.5, 32, 1);
    let phi = bump(&b, 0.0);
    for m in 1..=3 {
        let r = r_operator_grid(&b, &path, &vec![0; m], 0, 32, &phi).unwrap();
        assert_eq!(r.amax(), 0.0);
    }
}

#[test]
fn unit_sensor_multiplies_by_increment() {
    let b = backend(ScalarField::constant(1, 1.0), 61);
    let path = PathGrid::brownian(0.5, 40, 1, 12);
    let phi = bump(&b, 0.3);
    let (s, t) = (5, 33);
    let r = r_operator_grid(&b, &path, &[0], s, t, &phi).unwrap();
    let p = b.propagator(path.dt()).unwrap();
    let mut expected = phi.clone();
    for _ in s..t {
        expected = p.apply(&expected);
    }
    expected *= path.y(t, 0) - path.y(s, 0);
    assert!((r - expected).amax() <= 1e-12);
}

#[test]
fn first_level_matches_brute_force_sum() {
    let b = backend(linear_sensor(1.0), 41);
    let path = PathGrid::brownian(0.5, 64, 1, 2);
    let phi = bump(&b, -0.2);
    let p: DMatrix<f64> = b.propagator(path.dt()).unwrap().to_dense();
    let h = DMatrix::from_diagonal(&b.sensor_values(0));
    let powers: Vec<DMatrix<f64>> = std::iter::successors(Some(DMatrix::identity(41, 41)), |m| Some(&p * m)).take(65).collect();
    let mut expected = DVector::zeros(41);
    for k in 0..64 {
        expected += &powers[k] * &h * &powers[64 - k] * &phi * path.dy(k, 0);
    }
    let r = r_operator_grid(&b, &path, &[0], 0, 64, &phi).unwrap();
    assert!((&r - &expected).amax() <= 1e-12 * expected.amax().max(1.0), "{}", (&r - &expected).amax());
}

#[test]
fn silent_sensor_expansion_is_heat_semigroup() {
    let b = backend(ScalarField::constant(1, 0.0), 81);
    let path = PathGrid::brownian(0.5, 50, 1, 4);
    let phi = bump(&b, 0.1);
    let heat = b.propagator(0.5 / 50.0).unwrap();
    let mut expected = phi.clone();
    for _ in 0..50 {
        expected = heat.apply(&expected);
    }
    let x = b.grid().nearest(&[0.0]);
    for m in 0..=4 {
        let res = truncated_expansion(&b, &[0.0], &path, &phi, m).unwrap();
        assert!((res.total() - expected[x]).abs() <= 1e-14);
    }
}

#[test]
fn expansion_matches_weighted_monte_carlo() {
    let model = SdeModel::ou(1.0, 1.0, linear_sensor(1.0), "linear");
    let b = GridBackend::new(model.clone(), SpatialGrid::line(161, 6.0).unwrap()).unwrap();
    let path = PathGrid::brownian(0.5, 100, 1, 77);
    let f = ScalarField::from_value(1, |x| (-(x[0] - 0.2).powi(2)).exp());
    let res = truncated_expansion(&b, &[0.0], &path, &b.grid().sample_field(&f), 6).unwrap();
    let mc = rho_mc(&model, &[0.0], &path, &f, McSettings { n_paths: 40_000, seed: 9 }).unwrap();
    let tol = (0.02 * mc.rho_phi.abs()).max(3.0 * mc.rho_phi_stderr.unwrap());
    assert!((res.total() - mc.rho_phi).abs() <= tol, "{} vs {}", res.total(), mc.rho_phi);
}

#[test]
fn level_contributions_eventually_decrease() {
    // Odd levels nearly vanish when Y_T is close to 0, so each level is compared with the
    // larger of the two before it.
    let b = backend(bounded_sensor(), 81);
    let phi = b.grid().sample(|x| (-(x[0] - 0.3).powi(2) / 0.5).exp());
    let decaying = (0..50)
        .filter(|&i| {
            let path = PathGrid::brownian(0.5, 64, 1, 300 + i);
            let l: Vec<f64> = truncated_expansion(&b, &[0.5], &path, &phi, 8).unwrap().levels.iter().map(|v| v.abs()).collect();
            (2..=8).all(|m| l[m] <= l[m - 1].max(l[m - 2]))
        })
        .count();
    assert!(decaying >= 45, "{decaying}/50");
}

#[test]
fn partial_sums_telescope() {
    let b = backend(linear_sensor(1.0), 61);
    let path = PathGrid::brownian(0.5, 40, 1, 8);
    let res = truncated_expansion(&b, &[0.3], &path, &bump(&b, 0.0), 5).unwrap();
    let mut acc = 0.0;
    for (level, partial) in res.levels.iter().zip(&res.partial_sums) {
        acc += level;
        assert!((acc - partial).abs() <= 1e-14);
    }
    let by_word: f64 = res.words.iter().filter(|(w, _)| w.len() == 3).map(|(_, v)| v).sum();
    assert!((by_word - res.levels[3]).abs() <= 1e-14 * (1.0 + by_word.abs()));
}

#[test]
fn remainder_bound_examples() {
    assert!((remainder_bound(1.0, 1.0, 2, 1.0) - std::f64::consts::E / 6.0).abs() <= 1e-12);
    assert!((remainder_bound(1.0, 1.0, 2, 1.0) - 0.4530).abs() <= 1e-4);
    for k in 0..6 {
        assert_eq!(remainder_bound(0.0, 0.7, k, 3.0), 0.0);
    }
}

#[test]
fn simplex_constant_examples() {
    assert!((simplex_volume_constant(2, 1.0).unwrap() - 8.0 * std::f64::consts::PI).abs() <= 1e-12);
    assert!((simplex_volume_constant(1, 1.0).unwrap() - 8.0).abs() <= 1e-12);
    for k in 1..6 {
        let a = simplex_volume_constant(k, 0.7).unwrap();
        assert!((simplex_volume_constant(k, 1.4).unwrap() - 2.0 * a).abs() <= 1e-12 * a);
    }
    assert!(simplex_volume_constant(0, 1.0).is_err());
    assert!(simplex_volume_constant(2, 0.0).is_err());
}

#[test]
fn silent_sensor_adjoint_is_adjoint_semigroup() {
    let b = backend(ScalarField::constant(1, 0.0), 81);
    let path = PathGrid::brownian(0.5, 50, 1, 4);
    let g = bump(&b, 0.4);
    let p = b.propagator(path.dt()).unwrap();
    let mut expected = g.clone();
    for _ in 0..50 {
        expected = p.apply_transpose(&expected);
    }
    let levels = adjoint_levels_grid(&b, &path, &g, 3, AdjointMode::Transpose).unwrap();
    assert!((&levels[0] - &expected).amax() <= 1e-14);
    assert!(levels[1..].iter().all(|l| l.amax() == 0.0));
    let res = adjoint_truncated_expansion(&b, &[0.4], &path, &g, 3, AdjointMode::Transpose).unwrap();
    assert!((res.total() - expected[b.grid().nearest(&[0.4])]).abs() <= 1e-14);
}

#[test]
fn duality_per_level() {
    let b = backend(linear_sensor(1.0), 81);
    let path = PathGrid::brownian(0.5, 50, 1, 15);
    let phi = bump(&b, -0.3);
    let g = bump(&b, 0.5);
    let forward = expansion_levels_grid(&b, &path, &phi, 4).unwrap();
    let backward = adjoint_levels_grid(&b, &path, &g, 4, AdjointMode::Transpose).unwrap();
    let (mut lhs_total, mut rhs_total) = (0.0, 0.0);
    for m in 0..=4 {
        let lhs = b.grid().inner(&forward[m], &g);
        let rhs = b.grid().inner(&phi, &backward[m]);
        assert!((lhs - rhs).abs() <= 1e-8, "level {m}: {lhs} vs {rhs}");
        lhs_total += lhs;
        rhs_total += rhs;
    }
    assert!((lhs_total - rhs_total).abs() <= 1e-8);
}

#[test]
fn duality_holds_for_two_channels() {
    let model = SdeModel::ou(1.0, 1.0, linear_sensor(1.0), "two")
        .with_sensors(vec![linear_sensor(0.5), bounded_sensor()])
        .unwrap();
    let b = GridBackend::new(model, SpatialGrid::line(61, 4.0).unwrap()).unwrap();
    let path = PathGrid::brownian(0.5, 30, 2, 6);
    let phi = bump(&b, 0.0);
    let g = bump(&b, 0.8);
    let forward = expansion_levels_grid(&b, &path, &phi, 3).unwrap();
    let backward = adjoint_levels_grid(&b, &path, &g, 3, AdjointMode::Transpose).unwrap();
    for m in 0..=3 {
        let gap = b.grid().inner(&forward[m], &g) - b.grid().inner(&phi, &backward[m]);
        assert!(gap.abs() <= 1e-8, "level {m}: {gap}");
    }
}

#[test]
fn invalid_requests_are_rejected() {
    let b = backend(linear_sensor(1.0), 41);
    let path = PathGrid::brownian(0.5, 16, 1, 1);
    let phi = bump(&b, 0.0);
    assert!(r_operator_grid(&b, &path, &[], 0, 16, &phi).is_err());
    assert!(r_operator_grid(&b, &path, &[1], 0, 16, &phi).is_err());
    assert!(r_operator_grid(&b, &path, &[0], 10, 5, &phi).is_err());
    assert!(truncated_expansion(&b, &[0.0], &path, &phi, 9).is_err());
    assert!(truncated_expansion(&b, &[0.0], &PathGrid::brownian(0.5, 16, 2, 1), &phi, 2).is_err());
}

#[test]
fn decay_fit_flags_flat_path() {
    let b = backend(linear_sensor(1.0), 41);
    let r = operator_norm_decay(&b, &[PathGrid::zeros(1.0, 256, 1)], 1, 0.4, 2..=6, 8).unwrap();
    assert!(r.trivial_path && r.pass);
    assert!(r.samples.iter().all(|s| s.1 == 0.0));
    assert!(operator_norm_decay(&b, &[PathGrid::zeros(1.0, 256, 1)], 1, 0.4, 2..=4, 8).is_err());
    assert!(operator_norm_decay(&b, &[], 1, 0.4, 2..=6, 8).is_err());
    assert!(operator_norm_decay(&b, &[PathGrid::zeros(1.0, 256, 1)], 5, 0.4, 2..=6, 8).is_err());
}

#[test]
fn decay_slopes_scale_with_word_length() {
    let b = backend(linear_sensor(1.0), 41);
    let paths: Vec<PathGrid> = (0..20).map(|i| PathGrid::brownian(1.0, 2048, 1, 900 + i)).collect();
    let single: Vec<f64> = paths
        .iter()
        .map(|p| operator_norm_decay(&b, std::slice::from_ref(p), 1, 0.4, 4..=9, 16).unwrap().slope)
        .collect();
    let good = single.iter().filter(|&&s| s >= 0.3).count();
    assert!(good >= 18, "slopes {single:?}");
    let one = operator_norm_decay(&b, &paths, 1, 0.4, 4..=9, 16).unwrap();
    let two = operator_norm_decay(&b, &paths, 2, 0.4, 4..=9, 16).unwrap();
    assert!((two.slope - 2.0 * one.slope).abs() <= 0.2, "{} vs {}", two.slope, one.slope);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn word_terms_are_linear(a in -3.0f64..3.0, c in -3.0f64..3.0, seed in 0u64..500) {
        let b = backend(linear_sensor(1.0), 41);
        let path = PathGrid::brownian(0.5, 20, 1, seed);
        let u = bump(&b, 0.2);
        let v = b.grid().sample(|x| x[0].sin());
        let combined = r_operator_grid(&b, &path, &[0, 0], 0, 20, &(&u * a + &v * c)).unwrap();
        let separate = r_operator_grid(&b, &path, &[0, 0], 0, 20, &u).unwrap() * a
            + r_operator_grid(&b, &path, &[0, 0], 0, 20, &v).unwrap() * c;
        prop_assert!((combined - separate).amax() <= 1e-12 * (1.0 + a.abs() + c.abs()));
    }

    #[test]
    fn remainder_bound_eventually_decreases(h in 0.0f64..3.0, t in 0.0f64..1.0) {
        for k in 0..12usize {
            if (k + 2) as f64 > h * h {
                prop_assert!(remainder_bound(h, t, k + 1, 1.0) <= remainder_bound(h, t, k, 1.0) * (1.0 + 1e-12));
            }
        }
    }
}
