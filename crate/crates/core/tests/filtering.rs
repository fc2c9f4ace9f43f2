use nalgebra::DVector;
use proptest::prelude::*;
use zakai_lab::filtering::{
    filter_grid, kalman_bucy_oracle, mass_lower_bound_check, particle_filter_oracle, rho_grid, rho_mc, rho_mc_many,
    LinearParams, McSettings,
};
use zakai_lab::grid::SpatialGrid;
use zakai_lab::model::{linear_sensor, tanh_cubic_sensor, SdeModel};
use zakai_lab::sde::{generate_observation, PathGrid};
use zakai_lab::semigroup::GridBackend;
use zakai_lab::ufg::ScalarField;

fn quiet() -> SdeModel {
    SdeModel::ou(1.0, 1.0, ScalarField::constant(1, 0.0), "quiet")
}

fn linear() -> SdeModel {
    SdeModel::ou(1.0, 1.0, linear_sensor(1.0), "linear")
}

fn identity() -> ScalarField {
    ScalarField::from_value(1, |x| x[0])
}

fn bump() -> ScalarField {
    ScalarField::from_value(1, |x| (-(x[0] - 0.2).powi(2)).exp())
}

const SETTINGS: McSettings = McSettings { n_paths: 20_000, seed: 3 };

#[test]
fn silent_sensor_reduces_to_heat_semigroup() {
    let b = GridBackend::new(quiet(), SpatialGrid::line(201, 6.0).unwrap()).unwrap();
    let path = PathGrid::brownian(0.5, 50, 1, 7);
    let phi = b.grid().sample_field(&bump());
    let rho = rho_grid(&b, &path, &phi).unwrap();
    let heat = b.heat(0.5, &phi.into()).unwrap();
    assert!((rho - heat).amax() <= 1e-8);
}

#[test]
fn silent_sensor_gives_unit_mass() {
    let path = PathGrid::brownian(1.0, 100, 1, 2);
    let est = rho_mc(&quiet(), &[0.4], &path, &ScalarField::constant(1, 1.0), SETTINGS).unwrap();
    assert_eq!(est.rho_one, 1.0);
    assert_eq!(est.rho_phi, 1.0);
    assert_eq!(est.pi_phi, 1.0);
}

#[test]
fn kalman_zero_observation_keeps_zero_mean() {
    let params = LinearParams { a: 1.0, sigma: 1.0, gain: 1.0 };
    let (m, p) = kalman_bucy_oracle(params, 0.0, 0.5, &PathGrid::zeros(1.0, 1000, 1));
    assert_eq!(m, 0.0);
    assert!(p > 0.0);
}

#[test]
fn kalman_without_noise_decays_deterministically() {
    let params = LinearParams { a: 0.8, sigma: 0.0, gain: 0.0 };
    let path = PathGrid::brownian(1.0, 10_000, 1, 1);
    let (m, p) = kalman_bucy_oracle(params, 1.5, 0.0, &path);
    assert!((m - 1.5 * (-0.8f64).exp()).abs() <= 1e-4);
    assert_eq!(p, 0.0);
}

#[test]
fn kalman_variance_reaches_riccati_fixed_point() {
    let params = LinearParams { a: 1.0, sigma: 2f64.sqrt(), gain: 1.0 };
    let (_, p) = kalman_bucy_oracle(params, 0.0, 0.0, &PathGrid::zeros(20.0, 20_000, 1));
    assert!((p - (3f64.sqrt() - 1.0)).abs() <= 1e-6, "{p}");
}

#[test]
fn particle_filter_without_sensor_matches_signal_mean() {
    let path = PathGrid::brownian(1.0, 200, 1, 5);
    let est = particle_filter_oracle(&quiet(), &[1.0], &path, &identity(), 20_000, 10, 9).unwrap();
    let exact = (1.0f64 - 1.0 / 200.0).powi(200);
    let se = est.pi_stderr.unwrap();
    assert!((est.pi_phi - exact).abs() <= 4.0 * se + 1e-3, "{} +- {se} vs {exact}", est.pi_phi);
}

#[test]
fn particle_filter_tracks_kalman_mean() {
    let model = linear();
    let (path, _) = generate_observation(&model, &[0.0], 1.0, 400, 17).unwrap();
    let (m, _) = kalman_bucy_oracle(LinearParams { a: 1.0, sigma: 1.0, gain: 1.0 }, 0.0, 0.0, &path);
    let est = particle_filter_oracle(&model, &[0.0], &path, &identity(), 40_000, 16, 4).unwrap();
    let se = est.pi_stderr.unwrap();
    assert!((est.pi_phi - m).abs() <= 4.0 * se + 2e-2, "{} +- {se} vs {m}", est.pi_phi);
}

#[test]
fn particle_filter_matches_weighted_monte_carlo_on_cubic_sensor() {
    let model = SdeModel::ou(1.0, 1.0, tanh_cubic_sensor(1.0), "cubic");
    let (path, _) = generate_observation(&model, &[0.3], 1.0, 200, 23).unwrap();
    let pf = particle_filter_oracle(&model, &[0.3], &path, &bump(), 40_000, 16, 8).unwrap();
    let mc = rho_mc(&model, &[0.3], &path, &bump(), McSettings { n_paths: 40_000, seed: 31 }).unwrap();
    let se = pf.pi_stderr.unwrap().hypot(mc.pi_stderr.unwrap());
    assert!((pf.pi_phi - mc.pi_phi).abs() <= 4.0 * se, "{} vs {} (se {se})", pf.pi_phi, mc.pi_phi);
}

#[test]
fn grid_filter_agrees_with_kalman() {
    let model = linear();
    let (path, _) = generate_observation(&model, &[0.0], 1.0, 400, 29).unwrap();
    let b = GridBackend::new(model, SpatialGrid::line(241, 6.0).unwrap()).unwrap();
    let grid = filter_grid(&b, &[0.0], &path, &identity()).unwrap();
    let (m, _) = kalman_bucy_oracle(LinearParams { a: 1.0, sigma: 1.0, gain: 1.0 }, 0.0, 0.0, &path);
    assert!((grid.pi_phi - m).abs() <= 2e-2, "{} vs {m}", grid.pi_phi);
}

#[test]
fn grid_and_weighted_monte_carlo_agree() {
    let model = linear();
    let path = PathGrid::brownian(0.5, 100, 1, 41);
    let b = GridBackend::new(model.clone(), SpatialGrid::line(241, 6.0).unwrap()).unwrap();
    let grid = filter_grid(&b, &[0.0], &path, &bump()).unwrap();
    let mc = rho_mc(&model, &[0.0], &path, &bump(), SETTINGS).unwrap();
    let se = mc.rho_phi_stderr.unwrap();
    assert!((grid.rho_phi - mc.rho_phi).abs() <= 4.0 * se + 5e-3 * grid.rho_phi.abs(), "{} vs {}", grid.rho_phi, mc.rho_phi);
}

#[test]
fn mass_bound_is_trivial_without_sensor() {
    let b = GridBackend::new(quiet(), SpatialGrid::line(101, 4.0).unwrap()).unwrap();
    let r = mass_lower_bound_check(&b, &[0.0], &PathGrid::brownian(1.0, 100, 1, 3)).unwrap();
    assert_eq!(r.constant, 0.0);
    assert_eq!(r.rhs, 1.0);
    assert!((r.lhs - 1.0).abs() <= 1e-6);
}

#[test]
fn mass_bound_holds_on_linear_model() {
    let model = linear();
    let b = GridBackend::new(model.clone(), SpatialGrid::line(161, 5.0).unwrap()).unwrap();
    for seed in 0..5 {
        let (path, _) = generate_observation(&model, &[0.0], 1.0, 200, 100 + seed).unwrap();
        let r = mass_lower_bound_check(&b, &[0.0], &path).unwrap();
        assert!(r.pass && r.pass_corrected, "{r:?}");
        assert!(r.rhs_corrected >= r.rhs);
    }
}

#[test]
fn normalised_filter_of_one_is_one() {
    let path = PathGrid::brownian(1.0, 100, 1, 8);
    let est = rho_mc(&linear(), &[0.2], &path, &ScalarField::constant(1, 1.0), SETTINGS).unwrap();
    assert!((est.pi_phi - 1.0).abs() <= 1e-12);
    assert!((est.rho_phi - est.rho_one).abs() <= 1e-12 * est.rho_one);
}

#[test]
fn mismatched_channels_are_rejected() {
    let path = PathGrid::brownian(1.0, 10, 2, 1);
    assert!(rho_mc(&linear(), &[0.0], &path, &identity(), SETTINGS).is_err());
    assert!(rho_mc(&linear(), &[0.0, 1.0], &PathGrid::brownian(1.0, 10, 1, 1), &identity(), SETTINGS).is_err());
}

#[test]
fn unconditional_expectation_of_unnormalised_mass_is_one() {
    // Averaged over observation paths drawn from the model, E[ρ_t(1)] = 1.
    let model = linear();
    let masses: Vec<f64> = (0..400)
        .map(|i| {
            let (path, _) = generate_observation(&model, &[0.0], 0.5, 50, 500 + i).unwrap();
            rho_mc(&model, &[0.0], &path, &ScalarField::constant(1, 1.0), McSettings { n_paths: 200, seed: i }).unwrap().rho_one
        })
        .collect();
    let (mean, se) = zakai_lab::semigroup::mean_stderr(&masses);
    assert!((mean - 1.0).abs() <= 4.0 * se, "{mean} +- {se}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn weighted_estimator_is_linear(a in -2.0f64..2.0, c in -2.0f64..2.0, seed in 0u64..1000) {
        let path = PathGrid::brownian(0.5, 50, 1, seed);
        let f = bump();
        let g = ScalarField::from_value(1, |x| x[0].cos());
        let combo = ScalarField::from_value(1, move |x| a * (-(x[0] - 0.2).powi(2)).exp() + c * x[0].cos());
        let est = rho_mc_many(&linear(), &[0.1], &path, &[f, g, combo], McSettings { n_paths: 2000, seed }).unwrap();
        let expected = a * est[0].rho_phi + c * est[1].rho_phi;
        prop_assert!((est[2].rho_phi - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
    }

    #[test]
    fn grid_filter_is_linear(a in -2.0f64..2.0, c in -2.0f64..2.0) {
        let b = GridBackend::new(linear(), SpatialGrid::line(81, 4.0).unwrap()).unwrap();
        let path = PathGrid::brownian(0.5, 20, 1, 6);
        let u = b.grid().sample_field(&bump());
        let v = b.grid().sample(|x| x[0].cos());
        let combined = rho_grid(&b, &path, &(&u * a + &v * c)).unwrap();
        let separate: DVector<f64> = rho_grid(&b, &path, &u).unwrap() * a + rho_grid(&b, &path, &v).unwrap() * c;
        prop_assert!((combined - separate).amax() <= 1e-11);
    }
}
