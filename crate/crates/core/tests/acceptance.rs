//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::time::{Duration, Instant};

use nalgebra::DVector;
use zakai_lab::error::Result;
use zakai_lab::experiments::*;
use zakai_lab::filtering::LinearParams;
use zakai_lab::gradient::{dyadic_times, gradient_exponent_fit, Target};
use zakai_lab::grid::SpatialGrid;
use zakai_lab::model::ModelSpec;
use zakai_lab::sde::PathGrid;
use zakai_lab::semigroup::{AdjointMode, GridBackend};
use zakai_lab::signature::Schedule;
use zakai_lab::ufg::{MultiIndex, ScalarField};

const SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

fn backend(spec: ModelSpec, n: usize, half_width: f64) -> GridBackend {
    GridBackend::new(spec.build().unwrap(), SpatialGrid::line(n, half_width).unwrap()).unwrap()
}

fn bump(backend: &GridBackend, width: f64) -> DVector<f64> {
    backend.grid().sample(|x| (-x[0] * x[0] / (2.0 * width * width)).exp())
}

fn chen() -> Result<Outcome> {
    let path = PathGrid::brownian(1.0, 1 << 12, 2, SEED);
    let s = chen_experiment(&path, 4, 50, SEED)?;
    Ok(Outcome { pass: s.pass, detail: format!("max violation {:.2e} over {} triples (tol 1e-12)", s.max_violation, s.triples) })
}

fn neoclassical() -> Result<Outcome> {
    let s = neoclassical_experiment(1000, SEED)?;
    Ok(Outcome {
        pass: s.pass,
        detail: format!("{} failures, min slack {:.3e}, gap at q=1 {:.2e}", s.failures, s.min_slack, s.equality_gap),
    })
}

fn oracle() -> Result<Outcome> {
    let params = LinearParams { a: 1.0, sigma: 1.0, gain: 1.0 };
    let mc = kalman_oracle_experiment(params, 0.0, 0.5, 500, 20, 18, FilterMethod::WeightedMc { n_paths: 100_000 }, SEED)?;
    let pf = kalman_oracle_experiment(params, 0.0, 0.5, 500, 20, 18, FilterMethod::Particle { n_particles: 10_000, islands: 20 }, SEED)?;
    Ok(Outcome {
        pass: mc.pass && pf.pass,
        detail: format!("weighted MC within 3 stderr on {}/20, particle filter on {}/20 (need 18)", mc.within, pf.within),
    })
}

fn expansion() -> Result<Outcome> {
    let b = backend(ModelSpec::LinearGaussian { a: 1.0, sigma: 1.0, gain: 0.25 }, 201, 4.0);
    let h_sup = b.sensor_values(0).amax();
    let phi = ScalarField::from_value(1, |x| (-x[0] * x[0] / 2.0).exp());
    let rows = expansion_vs_mc_experiment(&b, &[0.5], &phi, 0.5, 500, 6, 20, 20_000, SEED)?;
    let ok = rows.iter().filter(|r| r.pass).count();
    let worst = rows.iter().map(|r| (r.expansion - r.mc).abs() / r.tolerance).fold(0.0, f64::max);
    Ok(Outcome { pass: ok == rows.len() && h_sup <= 1.0 + 1e-12, detail: format!("{ok}/{} paths within max(2%, 3 stderr); worst error/tolerance {worst:.2}", rows.len()) })
}

fn remainder() -> Result<Outcome> {
    let b = backend(ModelSpec::LinearGaussian { a: 1.0, sigma: 1.0, gain: 0.25 }, 201, 4.0);
    let phi = bump(&b, 1.0);
    let rows = remainder_experiment(&b, &[0.5], &phi, 0.5, 500, 2..=6, 100, SEED)?;
    let detail = rows.iter().map(|r| format!("M={}: {:.2e} <= {:.2e}", r.truncation, r.l2, r.bound + 3.0 * r.stderr)).collect::<Vec<_>>().join(", ");
    Ok(Outcome { pass: rows.iter().all(|r| r.pass), detail })
}

fn ibp() -> Result<Outcome> {
    let b = backend(ModelSpec::LinearGaussian { a: 1.0, sigma: 1.0, gain: 1.0 }, 101, 4.0);
    let phi = bump(&b, 1.0);
    let fines: Vec<PathGrid> = (0..20).map(|i| observation_path(None, &[], 0.5, 1024, 1, SEED, i)).collect::<Result<_>>()?;
    let rows = ibp_convergence_experiment(&b, &fines, &phi, 1..=3, 3)?;
    let detail = rows.iter().map(|r| format!("level {} slope {:.3}", r.level, r.slope)).collect::<Vec<_>>().join(", ");
    Ok(Outcome { pass: rows.iter().all(|r| r.pass), detail })
}

fn gradients() -> Result<Outcome> {
    let times = dyadic_times(0.1, 7);
    let e = MultiIndex::empty();
    let one = MultiIndex::new(vec![1]);
    let heat = backend(ModelSpec::Bm1d { gain: 0.0 }, 401, 1.0);
    let phi = heat.grid().sample(|x| (x[0] / 0.003).tanh());
    let first = gradient_exponent_fit(&heat, Target::Heat, &one, &e, &phi, &times, None)?;
    let second = gradient_exponent_fit(&heat, Target::Heat, &one, &one, &phi, &times, None)?;
    let cubic = backend(ModelSpec::CubicSensor { a: 1.0, sigma: 1.0, gain: 1.0 }, 401, 1.0);
    let rho = gradient_path_experiment(&cubic, Target::Rho, &one, &e, &phi, &times, 10, SEED)?;
    let rho_ok = rho.iter().filter(|r| r.slope >= -0.6).count();
    let worst = rho.iter().map(|r| r.slope).fold(f64::INFINITY, f64::min);
    let pass = (first.slope + 0.5).abs() <= 0.05 && (second.slope + 1.0).abs() <= 0.1 && rho_ok == 10;
    Ok(Outcome {
        pass,
        detail: format!("heat (1): {:.3}, heat (1),(1): {:.3}, rho >= -0.6 on {rho_ok}/10 (worst {worst:.3})", first.slope, second.slope),
    })
}

fn duality() -> Result<Outcome> {
    let b = backend(ModelSpec::LinearGaussian { a: 1.0, sigma: 1.0, gain: 1.0 }, 101, 4.0);
    let phi = bump(&b, 0.7);
    let g = b.grid().sample(|x| (-(x[0] - 0.5).powi(2) / 0.5).exp());
    let path = PathGrid::brownian(0.5, 500, 1, SEED);
    let s = duality_experiment(&b, &path, &phi, &g, 4, AdjointMode::Transpose)?;
    Ok(Outcome { pass: s.pass, detail: format!("max residual {:.2e} over levels 0..4 and their sum (tol 1e-8)", s.max_residual) })
}

fn extension() -> Result<Outcome> {
    let path = PathGrid::brownian(1.0, 256, 2, SEED);
    let rows = extension_experiment(&path, 3, &[Schedule::Dyadic, Schedule::Greedy])?;
    let detail = rows.iter().map(|r| format!("{:?}: {:.2e}", r.schedule, r.max_difference)).collect::<Vec<_>>().join(", ");
    Ok(Outcome { pass: rows.iter().all(|r| r.pass), detail })
}

fn mass_bound() -> Result<Outcome> {
    let b = backend(ModelSpec::CubicSensor { a: 1.0, sigma: 1.0, gain: 1.0 }, 201, 4.0);
    let rows = mass_bound_experiment(&b, &[0.0], 0.5, 500, 100, SEED)?;
    let ok = rows.iter().filter(|r| r.pass).count();
    let ok_corrected = rows.iter().filter(|r| r.pass_corrected).count();
    Ok(Outcome { pass: ok == 100, detail: format!("holds on {ok}/100 paths ({ok_corrected}/100 with the quadratic-weight factor)") })
}

type Criterion = (&'static str, fn() -> Result<Outcome>, Duration);

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 multiplicative identity", chen, Duration::from_secs(10)),
        ("2 neo-classical inequality", neoclassical, Duration::from_secs(1)),
        ("3 Kalman-Bucy oracle agreement", oracle, Duration::from_secs(300)),
        ("4 expansion vs weighted Monte Carlo", expansion, Duration::from_secs(300)),
        ("5 remainder factorial decay", remainder, Duration::from_secs(600)),
        ("6 pathwise representation agreement", ibp, Duration::from_secs(300)),
        ("7 gradient exponents", gradients, Duration::from_secs(300)),
        ("8 duality", duality, Duration::from_secs(60)),
        ("9 extension", extension, Duration::from_secs(60)),
        ("10 mass lower bound", mass_bound, Duration::from_secs(120)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run, budget) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let timely = elapsed <= budget;
        let verdict = if pass && timely { "PASS" } else { "FAIL" };
        if !(pass && timely) {
            failed += 1;
        }
        let late = if timely { String::new() } else { format!(" [over budget {:.0}s]", budget.as_secs_f64()) };
        println!("criterion {name}: {verdict} ({:.1}s){late} {detail}", elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
