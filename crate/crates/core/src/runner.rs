//! Subcommand orchestration: runs an experiment from a configuration and writes a results
//! directory holding `manifest.json` plus CSV/JSON artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::chaos::{operator_norm_decay, r_operator_grid, remainder_bound, truncated_expansion};
use crate::config::{BackendChoice, ExperimentConfig, ObservationSource};
use crate::error::{LabError, Result};
use crate::experiments::*;
use crate::filtering::{filter_grid, kalman_bucy_oracle, particle_filter_oracle, rho_grid, rho_mc, FilterEstimate, LinearParams, McSettings};
use crate::gradient::{dyadic_times, gradient_exponent_fit, Target};
use crate::model::{ModelSpec, SdeModel};
use crate::robust::{evaluate_terms, ibp_terms, level2_terms, level3_fixture};
use crate::sde::{generate_observation, PathGrid};
use crate::semigroup::GridBackend;
use crate::signature::{holder_constant_fit, iterated_ito, signature_series, word_at};
use crate::ufg::ScalarField;

/// Environment variable naming the results root directory.
pub const RESULTS_ENV: &str = "ZAKAI_RESULTS";

/// Results root from the environment, `./results` by default.
pub fn results_root() -> PathBuf {
    std::env::var_os(RESULTS_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("results"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Oracle {
    Kalman,
    Particle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifyKind {
    Chen,
    Neoclassical,
    Remainder,
    Duality,
    Massbound,
    Extension,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase", tag = "name")]
pub enum Command {
    Simulate,
    Filter { oracle: Option<Oracle> },
    Expand,
    Robust,
    Signature,
    Gradient,
    Verify { kind: VerifyKind },
}

impl Command {
    pub fn label(&self) -> String {
        match self {
            Command::Simulate => "simulate".into(),
            Command::Filter { .. } => "filter".into(),
            Command::Expand => "expand".into(),
            Command::Robust => "robust".into(),
            Command::Signature => "signature".into(),
            Command::Gradient => "gradient".into(),
            Command::Verify { kind } => format!("verify-{}", serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub results_root: PathBuf,
    pub threads: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: Value,
    /// False when a verification ran to completion but its check failed.
    pub pass: bool,
}

/// Process exit code for a run result: 0 success, 1 failed check, 2 invalid input, 3 numerical guard.
pub fn exit_code(result: &Result<RunOutcome>) -> i32 {
    match result {
        Ok(o) if o.pass => 0,
        Ok(_) => 1,
        Err(e) if e.is_numerical() => 3,
        Err(_) => 2,
    }
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    fn csv<R: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = R>) -> Result<()> {
        let mut w = csv::Writer::from_path(self.dir.join(name))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        self.files.push(name.into());
        Ok(())
    }

    /// CSV with a header known only at run time.
    fn csv_records(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.dir.join(name))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        self.files.push(name.into());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        fs::write(self.dir.join(name), serde_json::to_string_pretty(value)?)?;
        self.files.push(name.into());
        Ok(())
    }
}

/// Runs one subcommand and writes its results directory.
pub fn run(command: &Command, config: &ExperimentConfig, options: &RunOptions) -> Result<RunOutcome> {
    config.validate()?;
    let hash = config.content_hash()?;
    let run_hash: String = Sha256::digest(format!("{}\n{hash}", command.label()).as_bytes()).iter().take(6).map(|b| format!("{b:02x}")).collect();
    let dir = options.results_root.join(format!("{}-{run_hash}", command.label()));
    fs::create_dir_all(&dir)?;
    let mut art = Artifacts { dir: dir.clone(), files: vec![] };
    let (summary, pass) = match command {
        Command::Simulate => simulate(config, &mut art)?,
        Command::Filter { oracle } => filter(config, *oracle, &mut art)?,
        Command::Expand => expand(config, &mut art)?,
        Command::Robust => robust(config, &mut art)?,
        Command::Signature => signature(config, &mut art)?,
        Command::Gradient => gradient(config, &mut art)?,
        Command::Verify { kind } => verify(config, *kind, &mut art)?,
    };
    let manifest = json!({
        "manifest_version": 1,
        "package_version": env!("CARGO_PKG_VERSION"),
        "subcommand": command,
        "config": config,
        "config_hash": hash,
        "seed": config.seed,
        "threads": options.threads,
        "outputs": art.files,
        "pass": pass,
        "summary": summary,
    });
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(RunOutcome { dir, summary, pass })
}

fn model_and_start(config: &ExperimentConfig) -> Result<(SdeModel, Vec<f64>)> {
    let model = config.build_model()?;
    let x0 = config.start(model.dim());
    Ok((model, x0))
}

/// Observation path `i` according to the configured source.
fn observation(config: &ExperimentConfig, model: &SdeModel, x0: &[f64], i: usize) -> Result<PathGrid> {
    let steps = config.grid.steps()?;
    let source = match config.knobs.observation {
        ObservationSource::Model => Some(model),
        ObservationSource::Brownian => None,
    };
    observation_path(source, x0, config.grid.horizon, steps, model.d2(), config.seed, i)
}

fn brownian_channels(config: &ExperimentConfig, default: usize) -> Result<PathGrid> {
    let d2 = config.knobs.channels.unwrap_or(default);
    Ok(PathGrid::brownian(config.grid.horizon, config.grid.steps()?, d2, derive_seed(config.seed, 1, 0)))
}

fn phi_field(config: &ExperimentConfig, dim: usize) -> ScalarField {
    config.knobs.test_function.field(dim)
}

fn grid_index(backend: &GridBackend, x0: &[f64]) -> usize {
    backend.grid().nearest(x0)
}

fn simulate(config: &ExperimentConfig, art: &mut Artifacts) -> Result<(Value, bool)> {
    let (model, x0) = model_and_start(config)?;
    let steps = config.grid.steps()?;
    let (path, signal) = generate_observation(&model, &x0, config.grid.horizon, steps, config.seed)?;
    let mut header = vec!["time".to_string()];
    header.extend((1..=model.dim()).map(|i| format!("X_{i}")));
    header.extend((1..=model.d2()).map(|i| format!("Y_{i}")));
    let rows: Vec<Vec<String>> = (0..=steps)
        .map(|k| {
            let mut r = vec![path.time(k).to_string()];
            r.extend(signal.at(k).iter().map(|v| v.to_string()));
            r.extend((0..model.d2()).map(|i| path.y(k, i).to_string()));
            r
        })
        .collect();
    art.csv_records("paths.csv", &header, &rows)?;
    let y_final: Vec<f64> = (0..model.d2()).map(|i| path.y(steps, i)).collect();
    Ok((json!({ "steps": steps, "dt": path.dt(), "final_state": signal.last(), "final_observation": y_final }), true))
}

fn estimate_json(e: &FilterEstimate) -> Value {
    serde_json::to_value(e).unwrap_or(Value::Null)
}

fn filter(config: &ExperimentConfig, oracle: Option<Oracle>, art: &mut Artifacts) -> Result<(Value, bool)> {
    let (model, x0) = model_and_start(config)?;
    let path = observation(config, &model, &x0, 0)?;
    let mc = McSettings { n_paths: config.knobs.n_paths, seed: derive_seed(config.seed, 2, 0) };
    let estimate_of = |phi: &ScalarField| -> Result<FilterEstimate> {
        match config.backend {
            BackendChoice::Grid => filter_grid(&config.grid_backend()?, &x0, &path, phi),
            BackendChoice::MonteCarlo => rho_mc(&model, &x0, &path, phi, mc),
        }
    };
    let phi = phi_field(config, model.dim());
    let estimate = estimate_of(&phi)?;
    let mut summary = json!({ "backend": config.backend, "estimate": estimate_json(&estimate) });
    match oracle {
        Some(Oracle::Kalman) => {
            let ModelSpec::LinearGaussian { a, sigma, gain } = config.model else {
                return Err(LabError::InvalidArgument("the Kalman oracle needs the linear-gaussian model".into()));
            };
            let (m, p) = kalman_bucy_oracle(LinearParams { a, sigma, gain }, x0[0], 0.0, &path);
            let identity = ScalarField::from_value(1, |x| x[0]);
            let mean = rho_mc(&model, &x0, &path, &identity, mc)?;
            let z = mean.pi_stderr.filter(|s| *s > 0.0).map(|s| (mean.pi_phi - m) / s);
            summary["oracle"] = json!({
                "kind": "kalman",
                "mean": m,
                "variance": p,
                "estimate_of_mean": estimate_json(&mean),
                "difference": mean.pi_phi - m,
                "z_score": z,
            });
            if config.backend == BackendChoice::Grid {
                summary["oracle"]["grid_mean"] = json!(filter_grid(&config.grid_backend()?, &x0, &path, &identity)?.pi_phi);
            }
        }
        Some(Oracle::Particle) => {
            let pf = particle_filter_oracle(&model, &x0, &path, &phi, config.knobs.n_particles, config.knobs.islands, derive_seed(config.seed, 3, 0))?;
            let se = (estimate.pi_stderr.unwrap_or(0.0).powi(2) + pf.pi_stderr.unwrap_or(0.0).powi(2)).sqrt();
            let z = if se > 0.0 { Some((estimate.pi_phi - pf.pi_phi) / se) } else { None };
            summary["oracle"] = json!({ "kind": "particle", "estimate": estimate_json(&pf), "difference": estimate.pi_phi - pf.pi_phi, "z_score": z });
        }
        None => {}
    }
    art.json("filter.json", &summary)?;
    Ok((summary, true))
}

#[derive(Serialize)]
struct LevelRecord {
    level: usize,
    contribution: f64,
    partial_sum: f64,
    remainder_bound: f64,
}

fn expand(config: &ExperimentConfig, art: &mut Artifacts) -> Result<(Value, bool)> {
    let backend = config.grid_backend()?;
    let (model, x0) = model_and_start(config)?;
    let path = observation(config, &model, &x0, 0)?;
    let phi = backend.grid().sample_field(&phi_field(config, model.dim()));
    let r = truncated_expansion(&backend, &x0, &path, &phi, config.knobs.levels)?;
    let rho = rho_grid(&backend, &path, &phi)?[grid_index(&backend, &x0)];
    let h_sup = (0..model.d2()).map(|i| backend.sensor_values(i).amax()).fold(0.0, f64::max);
    let records = r.levels.iter().zip(&r.partial_sums).enumerate().map(|(m, (&c, &p))| LevelRecord {
        level: m,
        contribution: c,
        partial_sum: p,
        remainder_bound: remainder_bound(h_sup, path.horizon(), m, phi.amax()),
    });
    art.csv("levels.csv", records)?;
    let words: Vec<Vec<String>> = r.words.iter().map(|(w, v)| vec![format!("{w:?}"), v.to_string()]).collect();
    art.csv_records("words.csv", &["word".into(), "contribution".into()], &words)?;
    let mut summary = json!({ "levels": r.levels, "partial_sums": r.partial_sums, "zakai_product": rho, "truncation_gap": r.total() - rho });
    if config.knobs.decay {
        let paths: Vec<PathGrid> = (0..config.knobs.y_paths)
            .map(|i| PathGrid::brownian(config.grid.horizon, 2048, model.d2(), derive_seed(config.seed, 1, 1000 + i as u64)))
            .collect();
        let report = operator_norm_decay(&backend, &paths, config.knobs.levels.clamp(1, 4), config.knobs.gamma, 4..=9, 16)?;
        art.json("decay.json", &report)?;
        summary["decay"] = serde_json::to_value(&report)?;
    }
    Ok((summary, true))
}

#[derive(Serialize)]
struct TermRecord {
    level: usize,
    term_id: usize,
    sign: i8,
    coefficient: String,
    coefficient_value: f64,
    operator_chain: String,
    contribution_at_x0: f64,
}

fn robust(config: &ExperimentConfig, art: &mut Artifacts) -> Result<(Value, bool)> {
    let backend = config.grid_backend()?;
    let (model, x0) = model_and_start(config)?;
    let path = observation(config, &model, &x0, 0)?;
    let phi = backend.grid().sample_field(&phi_field(config, model.dim()));
    let idx = grid_index(&backend, &x0);
    let top = config.knobs.levels.clamp(1, 3);
    let mut records = Vec::new();
    let mut per_level = Vec::new();
    for level in 1..=top {
        let terms = match level {
            1 => ibp_terms(1)?,
            2 => level2_terms(),
            _ => level3_fixture()?.terms,
        };
        let eval = evaluate_terms(&backend, &path, 0, path.steps(), &phi, &terms)?;
        let direct = r_operator_grid(&backend, &path, &vec![0; level], 0, path.steps(), &phi)?[idx];
        for (id, (term, v)) in eval.terms.iter().enumerate() {
            let coefficient_value = if term.endpoint == 0 { 1.0 } else { iterated_ito(&path, &vec![0; term.endpoint], 0, path.steps())? };
            records.push(TermRecord {
                level,
                term_id: id + 1,
                sign: term.sign,
                coefficient: term.coefficient_label(),
                coefficient_value,
                operator_chain: term.chain_label(),
                contribution_at_x0: v[idx],
            });
        }
        per_level.push(json!({ "level": level, "pathwise": eval.total[idx], "direct": direct, "difference": eval.total[idx] - direct, "terms": terms.len() }));
    }
    art.csv("terms.csv", records)?;
    Ok((json!({ "levels": per_level }), true))
}

fn signature(config: &ExperimentConfig, art: &mut Artifacts) -> Result<(Value, bool)> {
    let model = config.build_model()?;
    let path = brownian_channels(config, model.d2())?;
    let depth = config.knobs.depth;
    let q = signature_series(&path, depth, 0, path.steps())?;
    let mut rows = Vec::new();
    for len in 0..=depth {
        for (idx, v) in q.level(len).iter().enumerate() {
            rows.push(vec![format!("{:?}", word_at(idx, len, path.d2())), len.to_string(), v.to_string()]);
        }
    }
    art.csv_records("signature.csv", &["word".into(), "length".into(), "value".into()], &rows)?;
    let fit = holder_constant_fit(&path, config.knobs.gamma, depth.max(1))?;
    let summary = json!({ "channels": path.d2(), "depth": depth, "holder": fit });
    art.json("signature.json", &summary)?;
    Ok((summary, true))
}

#[derive(Serialize)]
struct NormRecord {
    path: usize,
    time: f64,
    norm: f64,
}

fn gradient(config: &ExperimentConfig, art: &mut Artifacts) -> Result<(Value, bool)> {
    let backend = config.grid_backend()?;
    let k = &config.knobs;
    let phi = backend.grid().sample_field(&phi_field(config, backend.model().dim()));
    let times = k.times.clone().unwrap_or_else(|| dyadic_times(0.1, 7));
    let reports = match k.target {
        Target::Heat => vec![gradient_exponent_fit(&backend, Target::Heat, &k.alpha, &k.beta, &phi, &times, None)?],
        target => gradient_path_experiment(&backend, target, &k.alpha, &k.beta, &phi, &times, k.y_paths, config.seed)?,
    };
    art.csv("gradient.csv", reports.iter().enumerate().flat_map(|(p, r)| r.times.iter().zip(&r.norms).map(move |(&time, &norm)| NormRecord { path: p, time, norm })))?;
    art.json("gradient.json", &reports)?;
    let pass = reports.iter().all(|r| r.pass);
    Ok((json!({ "slopes": reports.iter().map(|r| r.slope).collect::<Vec<_>>(), "theoretical": reports[0].theoretical, "pass": pass }), pass))
}

fn verify(config: &ExperimentConfig, kind: VerifyKind, art: &mut Artifacts) -> Result<(Value, bool)> {
    let k = &config.knobs;
    let (value, pass) = match kind {
        VerifyKind::Chen => {
            let path = brownian_channels(config, 2)?;
            let s = chen_experiment(&path, k.depth, k.triples, config.seed)?;
            (serde_json::to_value(&s)?, s.pass)
        }
        VerifyKind::Neoclassical => {
            let s = neoclassical_experiment(k.cases, config.seed)?;
            (serde_json::to_value(&s)?, s.pass)
        }
        VerifyKind::Remainder => {
            let backend = config.grid_backend()?;
            let x0 = config.start(backend.model().dim());
            let phi = backend.grid().sample_field(&phi_field(config, backend.model().dim()));
            let rows = remainder_experiment(&backend, &x0, &phi, config.grid.horizon, config.grid.steps()?, 2..=k.levels.max(2), k.y_paths, config.seed)?;
            let pass = rows.iter().all(|r| r.pass);
            art.csv("remainder.csv", rows.iter().cloned())?;
            (json!({ "rows": rows }), pass)
        }
        VerifyKind::Duality => {
            let backend = config.grid_backend()?;
            let dim = backend.model().dim();
            let path = brownian_channels(config, backend.model().d2())?;
            let phi = backend.grid().sample_field(&phi_field(config, dim));
            let g = backend.grid().sample(|x| (-(x[0] - 0.5).powi(2) / 0.5 - x[1..].iter().map(|v| v * v).sum::<f64>()).exp());
            let s = duality_experiment(&backend, &path, &phi, &g, k.levels, k.adjoint_mode)?;
            (serde_json::to_value(&s)?, s.pass)
        }
        VerifyKind::Massbound => {
            let backend = config.grid_backend()?;
            let x0 = config.start(backend.model().dim());
            let rows = mass_bound_experiment(&backend, &x0, config.grid.horizon, config.grid.steps()?, k.y_paths, config.seed)?;
            let held = rows.iter().filter(|r| r.pass).count();
            art.csv("massbound.csv", rows.iter().copied())?;
            (json!({ "paths": rows.len(), "held": held, "held_corrected": rows.iter().filter(|r| r.pass_corrected).count() }), held == rows.len())
        }
        VerifyKind::Extension => {
            let path = brownian_channels(config, 2)?;
            let rows = extension_experiment(&path, k.depth, &k.schedules)?;
            let pass = rows.iter().all(|r| r.pass);
            (json!({ "level": k.depth, "rows": rows }), pass)
        }
    };
    art.json("verify.json", &value)?;
    Ok((value, pass))
}

/// Reads a configuration file, or builds a preset configuration.
/// Preset used when neither a configuration file nor a preset is given.
pub const DEFAULT_PRESET: &str = "linear-gaussian";

pub fn load_config(config: Option<&Path>, preset: Option<&str>) -> Result<ExperimentConfig> {
    match (config, preset) {
        (Some(path), _) => ExperimentConfig::from_file(path),
        (None, Some(name)) => ExperimentConfig::preset(name),
        (None, None) => ExperimentConfig::preset(DEFAULT_PRESET),
    }
}
