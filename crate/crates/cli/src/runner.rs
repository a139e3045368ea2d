//! Dispatch from a validated config to the library, producing one [`Table`].

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use sddekit::catalog::{self, Params};
use sddekit::coupling::{
    approximation_study, contraction_estimate, run_batch, support_probe, weight_mean, ControlSpec, LedgerMode,
    MetricSpec,
};
use sddekit::diagnostics::{lem1_empirical_check, DeterministicDriver, SquaredOuDriver, TailBoundSpec, TailDriver};
use sddekit::ergodicity::{
    empirical_coupling_distance, fit_envelope, lyapunov_catalog, rate_bound, rate_functions, stationary_estimate,
    LyapunovParams, Phi,
};
use sddekit::rng::{derive_seed, stream};
use sddekit::sensitivity::{estimate_gradient, fd_oracle, PointValue, SegmentFunctional, TanhPoint};
use sddekit::stats::MeanEstimate;
use sddekit::{simulate_batch, SddeModel, Segment};

use crate::config::{DriverSection, ExperimentConfig, FunctionalKind, Kind};
use crate::error::{CliError, Result};
use crate::table::Table;

/// Command-line overrides of config values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

fn model_of(cfg: &ExperimentConfig) -> Result<(Arc<dyn SddeModel>, Params)> {
    let m = cfg
        .model
        .as_ref()
        .ok_or_else(|| CliError::Config {
            field: "model".into(),
            reason: "missing".into(),
        })?;
    let params: Params = m.params.clone();
    let built = catalog::build(&m.id, &params).map_err(|e| {
        if catalog::lookup(&m.id).is_none() {
            CliError::UnknownModel(m.id.clone())
        } else {
            CliError::Config {
                field: "model.params".into(),
                reason: e.to_string(),
            }
        }
    })?;
    Ok((built, params))
}

fn constant(cfg: &ExperimentConfig, v: Option<f64>, name: &str) -> Result<Segment> {
    let v = v.ok_or_else(|| CliError::Config {
        field: format!("init.{name}"),
        reason: "missing".into(),
    })?;
    Ok(Segment::constant(&cfg.time_grid()?, &[v]))
}

/// Runs the experiment described by `cfg` with master seed `seed`.
pub fn execute(cfg: &ExperimentConfig, seed: u64) -> Result<Table> {
    cfg.validate()?;
    match cfg.kind {
        Kind::Simulate => simulate(cfg, seed),
        Kind::Couple => couple(cfg, seed),
        Kind::ApproxStudy => approx(cfg, seed),
        Kind::SupportProbe => support(cfg, seed),
        Kind::Ergodic => ergodic(cfg, seed),
        Kind::Sensitivity => sensitivity(cfg, seed),
        Kind::Tailcheck => tailcheck(cfg, seed),
    }
}

fn simulate(cfg: &ExperimentConfig, seed: u64) -> Result<Table> {
    let (model, _) = model_of(cfg)?;
    let grid = cfg.time_grid()?;
    let x = constant(cfg, cfg.init.x, "x")?;
    let n = cfg.estimator.paths.unwrap_or(1);
    let paths = simulate_batch(model.as_ref(), &grid, &x, n, seed)?;
    let mut t = Table::new(&["path", "step", "t", "x"]);
    for (i, p) in paths.iter().enumerate() {
        for k in 0..=grid.horizon_steps() {
            t.push(vec![i.into(), k.into(), (k as f64 * grid.dt()).into(), p.state(k)[0].into()]);
        }
    }
    Ok(t)
}

fn couple(cfg: &ExperimentConfig, seed: u64) -> Result<Table> {
    let (model, _) = model_of(cfg)?;
    let grid = cfg.time_grid()?;
    let e = &cfg.estimator;
    let (x, y) = (constant(cfg, cfg.init.x, "x")?, constant(cfg, cfg.init.y, "y")?);
    let h_steps = cfg.steps("estimator.h", e.h.unwrap_or(grid.horizon()))?;
    let mode = if model.has_right_inverse() {
        LedgerMode::WithLedger
    } else {
        log::info!("model has no right inverse of sigma; running the control without a ledger");
        LedgerMode::ControlOnly
    };
    let spec = e.gamma.map(|gamma| ControlSpec {
        gamma,
        threshold_mult: e.threshold_mult.unwrap_or(2.0),
        mode,
    });
    let runs = run_batch(model.as_ref(), &grid, &x, &y, spec.as_ref(), e.paths.unwrap_or(1000), seed)?;
    let est = contraction_estimate(&runs, h_steps, e.theta.unwrap_or(0.5))?;
    let mut t = Table::new(&["pair", "tau_step", "gap_h", "ratio_h", "max_control", "kl", "log_weight"]);
    for (i, r) in runs.iter().enumerate() {
        let gap = r.segment_gap(h_steps)?;
        let ratio = (r.upsilon > 0.0).then(|| gap / r.upsilon);
        t.push(vec![
            i.into(),
            r.tau_step.into(),
            gap.into(),
            ratio.into(),
            r.max_control_norm().into(),
            r.ledger.kl().into(),
            r.ledger.log_exponent.into(),
        ]);
    }
    t.note("exceed_prob", est.exceed_prob);
    t.note("mean_ratio", est.mean_ratio);
    t.note("mean_kl", est.mean_kl);
    t.note("tv_bound", est.tv_bound);
    if spec.is_some() && mode == LedgerMode::WithLedger {
        let w = weight_mean(&runs)?;
        t.note("weight_mean", w.mean);
        t.note("weight_se", w.std_error);
    }
    Ok(t)
}

fn approx(cfg: &ExperimentConfig, seed: u64) -> Result<Table> {
    let (model, params) = model_of(cfg)?;
    let id = &cfg.model.as_ref().expect("checked by model_of").id;
    let entry = catalog::lookup(id).ok_or_else(|| CliError::UnknownModel(id.clone()))?;
    if !entry.has_mollifier() {
        return Err(CliError::Config {
            field: "model.id".into(),
            reason: format!("model `{id}` has no mollified family"),
        });
    }
    let grid = cfg.time_grid()?;
    let e = &cfg.estimator;
    let family = e
        .eps
        .as_deref()
        .unwrap_or_default()
        .iter()
        .map(|&eps| Ok((eps, entry.mollified(&params, eps)?)))
        .collect::<Result<Vec<_>>>()?;
    let probes: Vec<Segment> = e
        .probes
        .as_deref()
        .unwrap_or_default()
        .iter()
        .map(|&v| Segment::constant(&grid, &[v]))
        .collect();
    let x = constant(cfg, cfg.init.x, "x")?;
    let rows = approximation_study(
        model.as_ref(),
        &family,
        &grid,
        &x,
        e.gamma.unwrap_or(0.5),
        &probes,
        e.paths.unwrap_or(1000),
        seed,
    )?;
    let mut t = Table::new(&[
        "eps",
        "upsilon",
        "floored",
        "success",
        "kl_mean",
        "kl_max",
        "kl_bound",
        "kl_bound_violations",
    ]);
    for r in rows {
        t.push(vec![
            r.eps.into(),
            r.upsilon.into(),
            r.floored.into(),
            r.success.into(),
            r.kl_mean.into(),
            r.kl_max.into(),
            r.kl_bound.into(),
            r.kl_bound_violations.into(),
        ]);
    }
    Ok(t)
}

fn support(cfg: &ExperimentConfig, seed: u64) -> Result<Table> {
    let (model, _) = model_of(cfg)?;
    let grid = cfg.time_grid()?;
    let e = &cfg.estimator;
    let (x, z) = (constant(cfg, cfg.init.x, "x")?, constant(cfg, cfg.init.z, "z")?);
    let (h, delta, lambda) = (e.h.unwrap_or(0.0), e.delta.unwrap_or(0.0), e.lambda.unwrap_or(0.0));
    let p = support_probe(model.as_ref(), &grid, &x, &z, h, delta, lambda, e.paths.unwrap_or(1000), seed)?;
    let mut t = Table::new(&["h", "delta", "lambda", "success_prob", "kl_mean", "lower_bound", "best_ln_n"]);
    t.push(vec![
        h.into(),
        delta.into(),
        lambda.into(),
        p.success_prob.into(),
        p.kl_mean.into(),
        p.lower_bound.into(),
        p.best_ln_n.into(),
    ]);
    Ok(t)
}

/// Mean distance to the stationary sample per time, with one value per replicate.
pub fn decay_curve(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<(f64, MeanEstimate)>> {
    let (model, _) = model_of(cfg)?;
    let grid = cfg.time_grid()?;
    let e = &cfg.estimator;
    let times = e.times.clone().unwrap_or_default();
    let t_max = times.iter().copied().fold(0.0, f64::max);
    let g = grid.with_horizon_steps(cfg.steps("estimator.times", t_max)?)?;
    let spec = MetricSpec::new(e.n.unwrap_or(1.0), e.gamma.unwrap_or(1.0))?;
    let x = constant(cfg, cfg.init.x, "x")?;
    let samples = e.samples.unwrap_or(256);
    let reps = e.replicates.unwrap_or(1);
    let mut per_time = vec![Vec::with_capacity(reps); times.len()];
    for rep in 0..reps {
        let rep_seed = derive_seed(seed, rep as u64, stream::REPLICATE);
        let paths = simulate_batch(model.as_ref(), &g, &x, samples, rep_seed)?;
        let stationary = stationary_estimate(
            model.as_ref(),
            &grid,
            &x,
            e.burn_in.unwrap_or(0.0),
            e.spacing.unwrap_or(1.0),
            samples,
            rep_seed,
        )?;
        for (slot, &t) in per_time.iter_mut().zip(&times) {
            let k = cfg.steps("estimator.times", t)?;
            let segs = paths
                .iter()
                .map(|p| Ok(p.segment_at(k)?.to_segment()))
                .collect::<Result<Vec<_>>>()?;
            slot.push(empirical_coupling_distance(&segs, &stationary, &spec)?);
        }
    }
    Ok(times
        .into_iter()
        .zip(per_time)
        .map(|(t, d)| (t, MeanEstimate::from_samples(&d)))
        .collect())
}

fn ergodic(cfg: &ExperimentConfig, seed: u64) -> Result<Table> {
    let curve = decay_curve(cfg, seed)?;
    let mut t = Table::new(&["t", "distance_mean", "distance_se", "replicates", "envelope"]);
    let times: Vec<f64> = curve.iter().map(|c| c.0).collect();
    let means: Vec<f64> = curve.iter().map(|c| c.1.mean).collect();
    // rate_bound with phi(v) = v and V(x) = exp(|x(0)|), fitted to the curve
    let envelope = match fit_envelope(&times, &means) {
        Some(fit) if fit.rate > 0.0 => {
            let delta = 0.5;
            let x = constant(cfg, cfg.init.x, "x")?;
            let v_x = (lyapunov_catalog(1.0, &LyapunovParams::default())?.v)(x.view());
            let rates = rate_functions(Phi::Linear { c: 1.0 })?;
            let big_c = fit.scale / v_x.powf(delta);
            t.note("envelope_rate", fit.rate);
            t.note("envelope_scale", fit.scale);
            Some((v_x, delta, fit.rate / delta, big_c, rates))
        }
        _ => None,
    };
    for (time, est) in &curve {
        let env = match &envelope {
            Some((v_x, delta, c, big_c, rates)) => Some(rate_bound(*time, *v_x, rates, *delta, *c, *big_c)?),
            None => None,
        };
        t.push(vec![(*time).into(), est.mean.into(), est.std_error.into(), est.n.into(), env.into()]);
    }
    Ok(t)
}

fn sensitivity(cfg: &ExperimentConfig, seed: u64) -> Result<Table> {
    let (model, _) = model_of(cfg)?;
    let grid = cfg.time_grid()?;
    let e = &cfg.estimator;
    let (x, z) = (constant(cfg, cfg.init.x, "x")?, constant(cfg, cfg.init.z, "z")?);
    let f: Box<dyn SegmentFunctional> = match e.functional.unwrap_or_default() {
        FunctionalKind::Point => Box::new(PointValue(0)),
        FunctionalKind::Tanh => Box::new(TanhPoint(0)),
    };
    let n = e.paths.unwrap_or(1000);
    let fd_seed = derive_seed(seed, 0, stream::AUXILIARY);
    let mut t = Table::new(&["lambda", "t", "value", "std_error", "fd_value", "fd_std_error", "z_score"]);
    for &time in e.times.as_deref().unwrap_or_default() {
        let fd = match e.fd_eps {
            Some(eps) => Some(fd_oracle(model.as_ref(), &grid, &x, &z, f.as_ref(), time, eps, n, fd_seed)?),
            None => None,
        };
        for &lambda in e.lambdas.as_deref().unwrap_or_default() {
            let g = estimate_gradient(model.as_ref(), &grid, &x, &z, f.as_ref(), time, lambda, n, seed)?;
            t.push(vec![
                lambda.into(),
                time.into(),
                g.value.into(),
                g.std_error.into(),
                fd.map(|d| d.value).into(),
                fd.map(|d| d.std_error).into(),
                fd.map(|d| g.z_score(&d)).into(),
            ]);
        }
    }
    Ok(t)
}

fn tailcheck(cfg: &ExperimentConfig, seed: u64) -> Result<Table> {
    let tail = cfg.tail.as_ref().ok_or_else(|| CliError::Config {
        field: "tail".into(),
        reason: "missing".into(),
    })?;
    let spec = TailBoundSpec::new(tail.a, tail.b, tail.lambda, tail.delta, cfg.grid.horizon)?;
    let driver: Box<dyn TailDriver> = match tail.driver {
        DriverSection::Deterministic { v0, a, lambda, b } => Box::new(DeterministicDriver { v0, a, lambda, b }),
        DriverSection::SquaredOu { z0, theta, s, cap } => Box::new(SquaredOuDriver { z0, theta, s, cap }),
    };
    let rep = lem1_empirical_check(driver.as_ref(), &spec, &tail.r_grid, cfg.grid.dt, tail.paths, seed)?;
    let mut t = Table::new(&["R", "threshold", "frequency"]);
    for i in 0..rep.r_grid.len() {
        t.push(vec![rep.r_grid[i].into(), rep.thresholds[i].into(), rep.frequencies[i].into()]);
    }
    t.note("slope", rep.slope);
    t.note("slope_ci_low", rep.slope_ci.map(|c| c.0));
    t.note("slope_ci_high", rep.slope_ci.map(|c| c.1));
    t.note("used_paths", rep.used_paths);
    t.note("discarded", rep.discarded);
    Ok(t)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Renders the CSV for a config text; the seed override replaces `seeds.master`.
pub fn render(text: &str, seed: Option<u64>) -> Result<(ExperimentConfig, String)> {
    let cfg = crate::config::load(text)?;
    let seed = seed.unwrap_or(cfg.seeds.master);
    let table = execute(&cfg, seed)?;
    let mut meta = vec![
        ("sddekit-version", env!("CARGO_PKG_VERSION").to_string()),
        ("config-sha256", sha256_hex(text.as_bytes())),
        ("master-seed", seed.to_string()),
        ("kind", cfg.kind.name().to_string()),
    ];
    if let Some(m) = &cfg.model {
        meta.push(("model", m.id.clone()));
    }
    let mut buf = Vec::new();
    table.write_csv(&meta, &mut buf)?;
    Ok((cfg, String::from_utf8(buf).expect("csv output is UTF-8")))
}

/// Runs a config file and writes its CSV; returns the output path.
pub fn run_file(path: &Path, ov: &Overrides) -> Result<PathBuf> {
    let io = |p: &Path| {
        let p = p.display().to_string();
        move |source| CliError::Io { path: p, source }
    };
    let text = fs::read_to_string(path).map_err(io(path))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ov.workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config {
            field: "--workers".into(),
            reason: e.to_string(),
        })?;
    let (cfg, csv) = pool.install(|| render(&text, ov.seed))?;
    let dir = ov.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    fs::create_dir_all(&dir).map_err(io(&dir))?;
    let out = dir.join(cfg.output_file());
    fs::write(&out, csv).map_err(io(&out))?;
    Ok(out)
}

/// One line per catalog entry: id, declared exponents, description, defaults.
pub fn list_models() -> String {
    let mut s = String::new();
    for e in catalog::entries() {
        let defaults: Vec<String> = e.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        s.push_str(&format!(
            "{:<14} alpha={} beta={}  {}  [{}]\n",
            e.id,
            e.alpha,
            e.beta,
            e.description,
            defaults.join(", ")
        ));
    }
    s
}
