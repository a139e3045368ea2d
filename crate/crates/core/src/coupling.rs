//! Synchronous and controlled couplings of two solutions, the truncated
//! Hölder metric, and the experiments built on them.
//!
//! A controlled run drives `X` from `x` and `Y` from `y` with the same
//! Brownian increments and adds to `Y` the drift
//! `chi = upsilon^(gamma - 1) (X - Y)` while `|X - Y|` stays below
//! `threshold_mult * upsilon`, where `upsilon = ||x - y||`. The stopping test is
//! made at each grid time before the step, so the control applied at any
//! step has norm below `threshold_mult * upsilon^gamma`.
//!
//! With `eta = sigma(Y)^{-1} chi`, the ledger records `beta = -eta`. Its
//! exponential is then the density of the uncontrolled law from `y` with
//! respect to the law of `Y`, so `E[f(Y) w] = E f(X^y)` for the weight `w`.

use std::sync::Arc;

use log::warn;
use rayon::prelude::*;

use crate::error::{Result, SddeError};
use crate::girsanov::{best_diff_lower_bound, pinsker_tv_bound, GirsanovLedger};
use crate::grid::{norm2, sup_dist, PathGrid, SegView, Segment, TimeGrid};
use crate::integrator::{check_init, em_simulate};
use crate::model::{mat_vec, SddeModel};
use crate::rng::{GaussianNoise, NoiseSource, ReplayNoise};
use crate::stats::MeanEstimate;

/// The metric `d_{N,gamma}(x, y) = min(N ||x - y||^gamma, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSpec {
    pub n: f64,
    pub gamma: f64,
}

impl MetricSpec {
    pub fn new(n: f64, gamma: f64) -> Result<Self> {
        if !(n >= 1.0 && n.is_finite()) {
            return Err(SddeError::invalid("N", format!("must be a finite real >= 1, got {n}")));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(SddeError::invalid("gamma", format!("must lie in (0, 1], got {gamma}")));
        }
        Ok(MetricSpec { n, gamma })
    }

    /// The metric as a function of the sup distance.
    pub fn of_distance(&self, d: f64) -> f64 {
        (self.n * d.powf(self.gamma)).min(1.0)
    }

    pub fn dist<'a, 'b>(&self, x: impl Into<SegView<'a>>, y: impl Into<SegView<'b>>) -> Result<f64> {
        Ok(self.of_distance(sup_dist(x, y)?))
    }
}

pub fn d_metric<'a, 'b>(x: impl Into<SegView<'a>>, y: impl Into<SegView<'b>>, spec: &MetricSpec) -> Result<f64> {
    spec.dist(x, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LedgerMode {
    /// Apply the control only.
    ControlOnly,
    /// Apply the control and accumulate the Girsanov ledger (needs `sigma^{-1}`).
    #[default]
    WithLedger,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSpec {
    pub gamma: f64,
    pub threshold_mult: f64,
    pub mode: LedgerMode,
}

impl ControlSpec {
    pub fn new(gamma: f64) -> Self {
        ControlSpec {
            gamma,
            threshold_mult: 2.0,
            mode: LedgerMode::WithLedger,
        }
    }
}

/// A pair of paths driven by the same noise, with the control applied to `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRun {
    pub path_x: PathGrid,
    pub path_y: PathGrid,
    /// Control per step, `steps x n` row-major; zero from `tau_step` on.
    pub control_record: Vec<f64>,
    /// First step at which the stopping rule fired; `None` if never (or synchronous).
    pub tau_step: Option<usize>,
    pub upsilon: f64,
    pub ledger: GirsanovLedger,
}

impl CoupledRun {
    pub fn control(&self, k: usize) -> &[f64] {
        let n = self.path_x.dim();
        &self.control_record[k * n..(k + 1) * n]
    }

    /// `||X_t - Y_t||` for the segments ending at step `k`.
    pub fn segment_gap(&self, k: usize) -> Result<f64> {
        sup_dist(self.path_x.segment_at(k)?, self.path_y.segment_at(k)?)
    }

    /// Largest control norm over the run.
    pub fn max_control_norm(&self) -> f64 {
        let n = self.path_x.dim();
        self.control_record.chunks(n).map(norm2).fold(0.0, f64::max)
    }
}

/// Drives `x` and `y` with identical increments and no control.
pub fn run_synchronous(
    model: &dyn SddeModel,
    grid: &TimeGrid,
    x: &Segment,
    y: &Segment,
    noise: &mut dyn NoiseSource,
) -> Result<CoupledRun> {
    check_init(model, grid, y)?;
    let path_x = em_simulate(model, grid, x, noise, None)?;
    let path_y = em_simulate(model, grid, y, &mut ReplayNoise::new(path_x.noise()), None)?;
    let upsilon = sup_dist(x, y)?;
    Ok(CoupledRun {
        control_record: vec![0.0; grid.horizon_steps() * model.dim_state()],
        tau_step: None,
        upsilon,
        ledger: GirsanovLedger {
            t_elapsed: grid.horizon(),
            ..Default::default()
        },
        path_x,
        path_y,
    })
}

/// Girsanov increment `beta = -sigma(seg)^{-1} chi` accumulated into `ledger`.
#[allow(clippy::too_many_arguments)]
fn ledger_step(
    model: &dyn SddeModel,
    seg: SegView<'_>,
    chi: &[f64],
    dw: &[f64],
    dt: f64,
    inv: &mut [f64],
    beta: &mut [f64],
    ledger: &mut GirsanovLedger,
) -> Result<()> {
    let (n, m) = (model.dim_state(), model.dim_noise());
    model.diffusion_right_inverse(seg, inv)?;
    mat_vec(inv, m, n, chi, beta);
    beta.iter_mut().for_each(|b| *b = -*b);
    ledger.accumulate(beta, dw, dt)
}

/// Generic stopped feedback control of `Y` towards a reference path.
///
/// `gain` multiplies `(reference(k) - Y(k))` while the gap stays below
/// `threshold`; once it reaches the threshold the control is switched off for
/// good.
fn stopped_feedback(
    model: &dyn SddeModel,
    grid: &TimeGrid,
    reference: &PathGrid,
    y: &Segment,
    gain: f64,
    threshold: f64,
    mode: LedgerMode,
) -> Result<(PathGrid, Vec<f64>, Option<usize>, GirsanovLedger)> {
    let (n, m) = (model.dim_state(), model.dim_noise());
    let dt = grid.dt();
    let mut record = vec![0.0; grid.horizon_steps() * n];
    let mut tau: Option<usize> = None;
    let mut ledger = GirsanovLedger::new();
    let mut failure: Option<SddeError> = None;
    let (mut inv, mut beta) = (vec![0.0; m * n], vec![0.0; m]);
    let mut gap = vec![0.0; n];
    let mut control = |k: usize, seg: SegView<'_>, out: &mut [f64]| {
        if failure.is_some() {
            return;
        }
        if tau.is_none() {
            let xk = reference.state(k);
            for i in 0..n {
                gap[i] = xk[i] - seg.now()[i];
            }
            if norm2(&gap) >= threshold {
                tau = Some(k);
            }
        }
        if tau.is_some() {
            ledger.idle(dt);
            return;
        }
        for i in 0..n {
            out[i] = gain * gap[i];
        }
        record[k * n..(k + 1) * n].copy_from_slice(out);
        if mode == LedgerMode::WithLedger {
            if let Err(e) = ledger_step(model, seg, out, reference.increment(k), dt, &mut inv, &mut beta, &mut ledger) {
                failure = Some(e.at_step(k));
            }
        } else {
            ledger.idle(dt);
        }
    };
    let path_y = em_simulate(model, grid, y, &mut ReplayNoise::new(reference.noise()), Some(&mut control))?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((path_y, record, tau, ledger))
}

/// Controlled coupling; see the module documentation for the construction.
pub fn run_controlled(
    model: &dyn SddeModel,
    grid: &TimeGrid,
    x: &Segment,
    y: &Segment,
    spec: &ControlSpec,
    noise: &mut dyn NoiseSource,
) -> Result<CoupledRun> {
    if !(spec.gamma > 0.0 && spec.gamma <= 1.0) {
        return Err(SddeError::invalid("gamma", format!("must lie in (0, 1], got {}", spec.gamma)));
    }
    if !(spec.threshold_mult > 0.0) {
        return Err(SddeError::invalid("threshold_mult", "must be positive"));
    }
    if spec.mode == LedgerMode::WithLedger && !model.has_right_inverse() {
        return Err(SddeError::MissingCapability("diffusion_right_inverse"));
    }
    check_init(model, grid, x)?;
    check_init(model, grid, y)?;
    let limit = model.holder().gamma_limit();
    if spec.gamma >= limit {
        warn!("gamma = {} is not below alpha ^ (2 beta - 1) = {limit}", spec.gamma);
    }
    let upsilon = sup_dist(x, y)?;
    if upsilon == 0.0 {
        warn!("identical initial segments; falling back to the synchronous coupling");
        return run_synchronous(model, grid, x, y, noise);
    }
    let path_x = em_simulate(model, grid, x, noise, None)?;
    let gain = upsilon.powf(spec.gamma - 1.0);
    let (path_y, control_record, tau_step, ledger) = stopped_feedback(
        model,
        grid,
        &path_x,
        y,
        gain,
        spec.threshold_mult * upsilon,
        spec.mode,
    )?;
    Ok(CoupledRun {
        path_x,
        path_y,
        control_record,
        tau_step,
        upsilon,
        ledger,
    })
}

/// Runs `n_pairs` coupled runs in parallel; pair `i` uses base-noise stream `i`.
pub fn run_batch(
    model: &dyn SddeModel,
    grid: &TimeGrid,
    x: &Segment,
    y: &Segment,
    spec: Option<&ControlSpec>,
    n_pairs: usize,
    master_seed: u64,
) -> Result<Vec<CoupledRun>> {
    (0..n_pairs)
        .into_par_iter()
        .map(|i| {
            let mut noise = GaussianNoise::for_path(master_seed, i, grid.dt());
            match spec {
                Some(s) => run_controlled(model, grid, x, y, s, &mut noise),
                None => run_synchronous(model, grid, x, y, &mut noise),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionEstimate {
    /// Fraction of runs with `||X_h - Y_h|| >= theta ||x - y||`.
    pub exceed_prob: f64,
    /// Mean of `||X_h - Y_h|| / ||x - y||`; zero when `degenerate`.
    pub mean_ratio: f64,
    /// Pinsker bound from the mean ledger KL.
    pub tv_bound: f64,
    pub mean_kl: f64,
    /// Set when `x = y`, so that the ratio is undefined.
    pub degenerate: bool,
}

/// Contraction statistics at step `h_steps` over a batch sharing `(x, y)`.
pub fn contraction_estimate(runs: &[CoupledRun], h_steps: usize, theta: f64) -> Result<ContractionEstimate> {
    let first = runs.first().ok_or(SddeError::EmptyBatch)?;
    let upsilon = first.upsilon;
    let mut exceed = 0usize;
    let mut ratio_sum = 0.0;
    let mut kl_sum = 0.0;
    for run in runs {
        let gap = run.segment_gap(h_steps)?;
        if upsilon > 0.0 {
            if gap >= theta * upsilon {
                exceed += 1;
            }
            ratio_sum += gap / upsilon;
        } else if gap > 0.0 {
            exceed += 1;
        }
        kl_sum += run.ledger.kl();
    }
    let n = runs.len() as f64;
    let mean_kl = kl_sum / n;
    Ok(ContractionEstimate {
        exceed_prob: exceed as f64 / n,
        mean_ratio: if upsilon > 0.0 { ratio_sum / n } else { 0.0 },
        tv_bound: pinsker_tv_bound(mean_kl)?,
        mean_kl,
        degenerate: upsilon == 0.0,
    })
}

/// Threshold `N_0 = max(N_1, N_2)` after which the coupling contracts `d_{N,gamma}`.
///
/// `N_1 = upsilon0^(-gamma)` and `N_2 = (C_p + C_tv) / (theta1 - theta^gamma)`.
pub fn n0_bound(theta: f64, theta1: f64, gamma: f64, c_tv: f64, c_p: f64, upsilon0: f64) -> Result<f64> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(SddeError::invalid("theta", format!("must lie in (0, 1), got {theta}")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(SddeError::invalid("gamma", format!("must lie in (0, 1], got {gamma}")));
    }
    let tg = theta.powf(gamma);
    if !(theta1 > tg && theta1 < 1.0) {
        return Err(SddeError::invalid(
            "theta1",
            format!("must lie in (theta^gamma, 1) = ({tg}, 1), got {theta1}"),
        ));
    }
    if !(c_tv >= 0.0 && c_p >= 0.0) {
        return Err(SddeError::invalid("C_tv/C_p", "must be non-negative"));
    }
    if !(upsilon0 > 0.0) {
        return Err(SddeError::invalid("upsilon0", "must be positive"));
    }
    let n1 = upsilon0.powf(-gamma);
    let n2 = (c_p + c_tv) / (theta1 - tg);
    Ok(n1.max(n2))
}

/// Floor applied to the approximation scale.
pub const UPSILON_FLOOR: f64 = 1e-12;

/// One mollification level of an approximation study.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxRow {
    pub eps: f64,
    /// `max(sup |a_eps - a|^(1/alpha), sup ||sigma_eps - sigma||^(1/beta))` over the probes.
    pub upsilon: f64,
    pub floored: bool,
    /// Fraction of paths with `max_t |Y_eps - X| <= upsilon`.
    pub success: f64,
    pub kl_mean: f64,
    pub kl_max: f64,
    /// `T/2 * sup ||sigma^{-1}||^2 * upsilon^(2 gamma)`.
    pub kl_bound: f64,
    pub kl_bound_violations: usize,
}

/// `(sup |a_eps - a|, sup ||sigma_eps - sigma||_F)` over the probe segments.
pub fn coefficient_gap(model: &dyn SddeModel, approx: &dyn SddeModel, probes: &[Segment]) -> (f64, f64) {
    let (n, m) = (model.dim_state(), model.dim_noise());
    let (mut a1, mut a2) = (vec![0.0; n], vec![0.0; n]);
    let (mut s1, mut s2) = (vec![0.0; n * m], vec![0.0; n * m]);
    let (mut da, mut ds) = (0.0f64, 0.0f64);
    let mut diff = vec![0.0; n * m];
    for p in probes {
        model.drift(p.view(), &mut a1);
        approx.drift(p.view(), &mut a2);
        for i in 0..n {
            diff[i] = a1[i] - a2[i];
        }
        da = da.max(norm2(&diff[..n]));
        model.diffusion(p.view(), &mut s1);
        approx.diffusion(p.view(), &mut s2);
        for i in 0..n * m {
            diff[i] = s1[i] - s2[i];
        }
        ds = ds.max(norm2(&diff));
    }
    (da, ds)
}

/// Tracks `X` (the original model) by `Y_eps` (each mollified model) under the
/// control `upsilon_eps^(gamma - 1) (X - Y_eps)`, stopped once the gap reaches
/// `upsilon_eps`.
#[allow(clippy::too_many_arguments)]
pub fn approximation_study(
    model: &dyn SddeModel,
    family: &[(f64, Arc<dyn SddeModel>)],
    grid: &TimeGrid,
    x0: &Segment,
    gamma: f64,
    probes: &[Segment],
    n_paths: usize,
    master_seed: u64,
) -> Result<Vec<ApproxRow>> {
    if n_paths == 0 {
        return Err(SddeError::EmptyBatch);
    }
    if probes.is_empty() {
        return Err(SddeError::invalid("probes", "at least one probe segment is needed"));
    }
    check_init(model, grid, x0)?;
    let h = model.holder();
    let t = grid.horizon();
    let mut rows = Vec::with_capacity(family.len());
    for (eps, approx) in family {
        if !approx.has_right_inverse() {
            return Err(SddeError::MissingCapability("diffusion_right_inverse"));
        }
        let (da, ds) = coefficient_gap(model, approx.as_ref(), probes);
        let raw = da.powf(1.0 / h.alpha).max(ds.powf(1.0 / h.beta));
        let floored = raw < UPSILON_FLOOR;
        if floored {
            warn!("approximation scale {raw} at eps = {eps} is below the floor");
        }
        let upsilon = raw.max(UPSILON_FLOOR);
        let inv_bound = approx
            .holder()
            .inverse_bound
            .ok_or(SddeError::MissingCapability("a declared bound on sigma^{-1}"))?;
        let kl_bound = 0.5 * t * inv_bound * inv_bound * upsilon.powf(2.0 * gamma);
        let gain = upsilon.powf(gamma - 1.0);
        let per_path: Vec<(bool, f64)> = (0..n_paths)
            .into_par_iter()
            .map(|i| {
                let mut noise = GaussianNoise::for_path(master_seed, i, grid.dt());
                let px = em_simulate(model, grid, x0, &mut noise, None)?;
                let (py, _, _, ledger) = stopped_feedback(
                    approx.as_ref(),
                    grid,
                    &px,
                    x0,
                    gain,
                    upsilon,
                    LedgerMode::WithLedger,
                )?;
                let n = px.dim();
                let worst = px
                    .states()
                    .chunks(n)
                    .zip(py.states().chunks(n))
                    .map(|(a, b)| {
                        let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
                        norm2(&d)
                    })
                    .fold(0.0, f64::max);
                Ok((worst <= upsilon, ledger.kl()))
            })
            .collect::<Result<_>>()?;
        let success = per_path.iter().filter(|p| p.0).count() as f64 / n_paths as f64;
        let kls: Vec<f64> = per_path.iter().map(|p| p.1).collect();
        rows.push(ApproxRow {
            eps: *eps,
            upsilon,
            floored,
            success,
            kl_mean: kls.iter().sum::<f64>() / n_paths as f64,
            kl_max: kls.iter().copied().fold(0.0, f64::max),
            kl_bound,
            kl_bound_violations: kls.iter().filter(|&&k| k > kl_bound * (1.0 + 1e-12)).count(),
        });
    }
    Ok(rows)
}

/// The bridge target on `[0, h]`, sampled on the grid (`h_steps + 1` states).
///
/// It follows `z(t - h)` on `[h - r, h]` and rises linearly from `0` to `z(-r)`
/// on `[0, h - r]`.
pub fn bridge_target(grid: &TimeGrid, z: &Segment, h_steps: usize) -> Result<Vec<f64>> {
    let l = grid.delay_steps();
    if h_steps <= l {
        return Err(SddeError::invalid("h", "must exceed the delay r"));
    }
    if z.len() != grid.segment_len() {
        return Err(SddeError::GridMismatch("target segment length differs from the grid".into()));
    }
    let n = z.dim();
    let ramp = (h_steps - l) as f64;
    let mut out = Vec::with_capacity((h_steps + 1) * n);
    for k in 0..=h_steps {
        if k + l >= h_steps {
            out.extend_from_slice(z.point(k + l - h_steps));
        } else {
            let s = k as f64 / ramp;
            out.extend(z.point(0).iter().map(|v| v * s));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportProbe {
    /// Fraction of paths with `||X_h - z|| <= delta`.
    pub success_prob: f64,
    pub kl_mean: f64,
    /// Best value of the diffbound over `N`, unclamped.
    pub lower_bound: f64,
    pub best_ln_n: f64,
}

/// Pulls the solution from `x` towards `z` over `[0, h]` with the drift
/// `-lambda (X - z^h)` and converts the success rate into a lower bound for
/// the uncontrolled process.
#[allow(clippy::too_many_arguments)]
pub fn support_probe(
    model: &dyn SddeModel,
    grid: &TimeGrid,
    x: &Segment,
    z: &Segment,
    h: f64,
    delta: f64,
    lambda: f64,
    n_paths: usize,
    master_seed: u64,
) -> Result<SupportProbe> {
    if !(delta > 0.0) {
        return Err(SddeError::invalid("delta", format!("must be positive, got {delta}")));
    }
    if !(lambda >= 0.0) {
        return Err(SddeError::invalid("lambda", format!("must be non-negative, got {lambda}")));
    }
    if n_paths == 0 {
        return Err(SddeError::EmptyBatch);
    }
    if !model.has_right_inverse() {
        return Err(SddeError::MissingCapability("diffusion_right_inverse"));
    }
    check_init(model, grid, x)?;
    let h_steps = grid.steps_for(h)?;
    let g = grid.with_horizon_steps(h_steps)?;
    let target = bridge_target(&g, z, h_steps)?;
    let (n, m) = (model.dim_state(), model.dim_noise());
    let dt = g.dt();
    let per_path: Vec<(bool, f64)> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut noise = GaussianNoise::for_path(master_seed, i, dt);
            let mut pull = |k: usize, seg: SegView<'_>, out: &mut [f64]| {
                for j in 0..n {
                    out[j] = -lambda * (seg.now()[j] - target[k * n + j]);
                }
            };
            let path = em_simulate(model, &g, x, &mut noise, Some(&mut pull))?;
            // the control is a function of the stored path, so the ledger can
            // be replayed afterwards
            let mut ledger = GirsanovLedger::new();
            let (mut inv, mut beta, mut chi) = (vec![0.0; m * n], vec![0.0; m], vec![0.0; n]);
            for k in 0..h_steps {
                let seg = path.segment_at(k)?;
                pull(k, seg, &mut chi);
                ledger_step(model, seg, &chi, path.increment(k), dt, &mut inv, &mut beta, &mut ledger)
                    .map_err(|e| e.at_step(k))?;
            }
            let gap = sup_dist(path.segment_at(h_steps)?, z)?;
            Ok((gap <= delta, ledger.kl()))
        })
        .collect::<Result<_>>()?;
    let success_prob = per_path.iter().filter(|p| p.0).count() as f64 / n_paths as f64;
    let kl_mean = per_path.iter().map(|p| p.1).sum::<f64>() / n_paths as f64;
    let (lower_bound, best_ln_n) = best_diff_lower_bound(success_prob, kl_mean)?;
    Ok(SupportProbe {
        success_prob,
        kl_mean,
        lower_bound,
        best_ln_n,
    })
}

/// Mean and standard error of the importance weights of a batch.
pub fn weight_mean(runs: &[CoupledRun]) -> Result<MeanEstimate> {
    if runs.is_empty() {
        return Err(SddeError::EmptyBatch);
    }
    let w: Vec<f64> = runs
        .iter()
        .map(|r| crate::girsanov::importance_weight(&r.ledger))
        .collect::<Result<_>>()?;
    Ok(MeanEstimate::from_samples(&w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{self, params};
    use proptest::prelude::*;

    fn grid() -> TimeGrid {
        TimeGrid::new(0.01, 0.5, 1.0).unwrap()
    }

    #[test]
    fn metric_examples() {
        let g = grid();
        let x = Segment::constant(&g, &[0.09]);
        let y = Segment::zeros(&g, 1);
        let spec = MetricSpec::new(2.0, 0.5).unwrap();
        assert!((d_metric(&x, &y, &spec).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(d_metric(&x, &x, &spec).unwrap(), 0.0);
        let half = Segment::constant(&g, &[0.5]);
        assert_eq!(d_metric(&half, &y, &MetricSpec::new(10.0, 1.0).unwrap()).unwrap(), 1.0);
        assert!(MetricSpec::new(0.5, 1.0).is_err());
        assert!(MetricSpec::new(1.0, 0.0).is_err());
    }

    #[test]
    fn synchronous_identical_starts_give_identical_paths() {
        let g = grid();
        let m = catalog::build("tanh-smooth", &params(&[])).unwrap();
        let x = Segment::from_scalar_fn(&g, |t| t.cos());
        let run = run_synchronous(m.as_ref(), &g, &x, &x, &mut GaussianNoise::new(4, g.dt())).unwrap();
        assert_eq!(run.path_x, run.path_y);
        assert_eq!(run.ledger.kl(), 0.0);
        assert!(run.tau_step.is_none());
    }

    #[test]
    fn controlled_equal_starts_need_no_control() {
        let g = grid();
        let m = catalog::build("linear-delay", &params(&[])).unwrap();
        let x = Segment::constant(&g, &[1.0]);
        let run = run_controlled(m.as_ref(), &g, &x, &x, &ControlSpec::new(0.5), &mut GaussianNoise::new(1, g.dt()))
            .unwrap();
        assert_eq!(run.max_control_norm(), 0.0);
        assert_eq!(run.ledger.kl(), 0.0);
    }

    #[test]
    fn control_stays_within_its_bound() {
        let g = grid();
        let m = catalog::build("linear-delay", &params(&[])).unwrap();
        let x = Segment::constant(&g, &[1.0]);
        let y = Segment::constant(&g, &[1.01]);
        let spec = ControlSpec::new(0.5);
        for seed in 0..20 {
            let run = run_controlled(m.as_ref(), &g, &x, &y, &spec, &mut GaussianNoise::new(seed, g.dt())).unwrap();
            assert!((run.upsilon - 0.01).abs() < 1e-15);
            // the gap of this linear model only shrinks, so |chi| <= upsilon^gamma
            assert!(run.max_control_norm() <= 0.1 * (1.0 + 1e-9));
            assert!(run.max_control_norm() < spec.threshold_mult * 0.1);
            let bound = 0.5 * g.horizon() * 1.0 * (spec.threshold_mult * 0.1f64).powi(2);
            assert!(run.ledger.kl() <= bound);
            assert!((run.ledger.t_elapsed - g.horizon()).abs() < 1e-9);
        }
    }

    #[test]
    fn stopping_switches_the_control_off() {
        // an expanding model separates the pair quickly
        let g = TimeGrid::new(0.01, 0.5, 3.0).unwrap();
        let m = catalog::build("linear-delay", &params(&[("kappa0", -3.0)])).unwrap();
        let x = Segment::constant(&g, &[0.0]);
        let y = Segment::constant(&g, &[0.3]);
        let spec = ControlSpec {
            gamma: 1.0,
            threshold_mult: 1.5,
            mode: LedgerMode::WithLedger,
        };
        let run = run_controlled(m.as_ref(), &g, &x, &y, &spec, &mut GaussianNoise::new(3, g.dt())).unwrap();
        let tau = run.tau_step.expect("the pair must separate");
        for k in tau..g.horizon_steps() {
            assert_eq!(run.control(k), &[0.0]);
        }
        assert!(run.max_control_norm() < 1.5 * 0.3);
    }

    #[test]
    fn ledger_mode_requires_an_inverse() {
        let g = grid();
        let m = catalog::build("linear-delay", &params(&[("sigma", 0.0)])).unwrap();
        let x = Segment::constant(&g, &[1.0]);
        let y = Segment::constant(&g, &[1.1]);
        let mut noise = GaussianNoise::new(0, g.dt());
        let err = run_controlled(m.as_ref(), &g, &x, &y, &ControlSpec::new(0.5), &mut noise).unwrap_err();
        assert!(matches!(err, SddeError::MissingCapability(_)));
        let spec = ControlSpec {
            mode: LedgerMode::ControlOnly,
            ..ControlSpec::new(0.5)
        };
        assert!(run_controlled(m.as_ref(), &g, &x, &y, &spec, &mut noise).is_ok());
    }

    #[test]
    fn n0_examples() {
        assert_eq!(n0_bound(0.5, 0.75, 1.0, 1.0, 1.0, 0.1).unwrap(), 10.0);
        let n2 = (1.0 + 1.0) / (0.75 - 0.5);
        assert_eq!(n2, 8.0);
        assert!((n0_bound(0.5, 0.75, 1.0, 0.0, 0.0, 0.1).unwrap() - 10.0).abs() < 1e-12);
        assert!(n0_bound(0.5, 0.5, 1.0, 1.0, 1.0, 0.1).is_err());
        let near = n0_bound(0.5, 0.5 + 1e-9, 1.0, 1.0, 1.0, 0.1).unwrap();
        assert!(near > 1e9);
    }

    #[test]
    fn contraction_estimate_edge_cases() {
        assert!(matches!(contraction_estimate(&[], 1, 0.5), Err(SddeError::EmptyBatch)));
        let g = grid();
        let m = catalog::build("ou-nodelay", &params(&[])).unwrap();
        let x = Segment::constant(&g, &[0.2]);
        let runs = run_batch(m.as_ref(), &g, &x, &x, None, 4, 1).unwrap();
        let est = contraction_estimate(&runs, g.horizon_steps(), 0.5).unwrap();
        assert!(est.degenerate);
        assert_eq!((est.mean_ratio, est.exceed_prob), (0.0, 0.0));
    }

    #[test]
    fn bridge_target_shape() {
        let g = TimeGrid::new(0.25, 1.0, 1.0).unwrap();
        let z = Segment::from_scalar_fn(&g, |t| 2.0 + t);
        let b = bridge_target(&g, &z, 8).unwrap();
        assert_eq!(b.len(), 9);
        assert_eq!(b[0], 0.0);
        // ramp reaches z(-r) = 1 at t = h - r = 1
        assert_eq!(b[2], 0.5);
        assert_eq!(&b[4..], z.values());
        assert!(bridge_target(&g, &z, 4).is_err());
    }

    #[test]
    fn support_probe_without_pull_follows_the_flow() {
        // sigma tiny, z the noiseless flow from x: success without any pull
        let g = TimeGrid::new(0.01, 0.5, 1.0).unwrap();
        let m = catalog::build("ou-nodelay", &params(&[("sigma", 1e-3)])).unwrap();
        let x = Segment::constant(&g, &[1.0]);
        let z = Segment::from_scalar_fn(&g, |t| (1.0f64 - g.dt()).powf((1.0 + t) / g.dt()));
        let res = support_probe(m.as_ref(), &g, &x, &z, 1.0, 0.05, 0.0, 200, 7).unwrap();
        assert_eq!(res.success_prob, 1.0);
        assert_eq!(res.kl_mean, 0.0);
        assert!(res.lower_bound > 0.0);
        assert!(support_probe(m.as_ref(), &g, &x, &z, 1.0, 0.0, 0.0, 10, 7).is_err());
    }

    #[test]
    fn identical_family_floors_upsilon() {
        let g = TimeGrid::new(0.01, 0.5, 1.0).unwrap();
        let m = catalog::build("holder-drift", &params(&[])).unwrap();
        let probes = vec![Segment::constant(&g, &[0.3])];
        let rows = approximation_study(
            m.as_ref(),
            &[(0.0, m.clone())],
            &g,
            &Segment::constant(&g, &[0.5]),
            0.4,
            &probes,
            50,
            1,
        )
        .unwrap();
        assert!(rows[0].floored);
        assert_eq!(rows[0].upsilon, UPSILON_FLOOR);
        assert_eq!(rows[0].success, 1.0);
        assert_eq!(rows[0].kl_bound_violations, 0);
    }

    proptest! {
        #[test]
        fn metric_axioms(a in prop::collection::vec(-2.0f64..2.0, 6),
                         b in prop::collection::vec(-2.0f64..2.0, 6),
                         c in prop::collection::vec(-2.0f64..2.0, 6),
                         n in 1.0f64..20.0, gamma in 0.05f64..1.0) {
            let spec = MetricSpec::new(n, gamma).unwrap();
            let (x, y, z) = (
                Segment::from_values(1, a).unwrap(),
                Segment::from_values(1, b).unwrap(),
                Segment::from_values(1, c).unwrap(),
            );
            let dxy = spec.dist(&x, &y).unwrap();
            prop_assert_eq!(dxy, spec.dist(&y, &x).unwrap());
            prop_assert_eq!(spec.dist(&x, &x).unwrap(), 0.0);
            prop_assert!((0.0..=1.0).contains(&dxy));
            let tri = spec.dist(&x, &z).unwrap() + spec.dist(&z, &y).unwrap();
            prop_assert!(dxy <= tri + 1e-12);
            let raw = n * sup_dist(&x, &y).unwrap().powf(gamma);
            prop_assert_eq!(dxy == 1.0, raw >= 1.0);
        }
    }
}
