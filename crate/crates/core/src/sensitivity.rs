//! First-order sensitivities `d/de E f(X_t^{x + e z})` through the damped
//! derivative process
//!
//! ```text
//! dU = <grad a(X_t), U_t> dt + <grad sigma(X_t), U_t> dW - lambda U dt,   U_0 = z
//! ```
//!
//! and the representation
//! `E[<grad f(X_t), U_t> + lambda f(X_t) int sigma(X_s)^{-1} U(s) dW(s)]`.
//!
//! `U` is stepped with the Euler scheme on the increments stored with the base
//! path, which makes it the exact derivative of the discrete scheme with
//! respect to the initial segment (for `lambda = 0`), and the weighted form
//! an exact discrete Girsanov identity (for `lambda > 0`).

use rayon::prelude::*;

use crate::error::{Result, SddeError};
use crate::grid::{norm2, PathGrid, SegView, Segment, TimeGrid};
use crate::integrator::{check_init, em_simulate};
use crate::model::{mat_vec, SddeModel};
use crate::rng::{GaussianNoise, ReplayNoise};
use crate::stats::{LinearFit, MeanEstimate};

/// A real functional of a segment together with its directional derivative.
pub trait SegmentFunctional: Send + Sync {
    fn value(&self, x: SegView<'_>) -> f64;
    /// `<grad f(x), dir>`.
    fn gradient(&self, x: SegView<'_>, dir: SegView<'_>) -> f64;
}

/// `f(x) = x(0)_i`.
#[derive(Debug, Clone, Copy)]
pub struct PointValue(pub usize);

impl SegmentFunctional for PointValue {
    fn value(&self, x: SegView<'_>) -> f64 {
        x.now()[self.0]
    }

    fn gradient(&self, _x: SegView<'_>, dir: SegView<'_>) -> f64 {
        dir.now()[self.0]
    }
}

/// `f(x) = tanh(x(0)_i)`, a bounded smooth observable.
#[derive(Debug, Clone, Copy)]
pub struct TanhPoint(pub usize);

impl SegmentFunctional for TanhPoint {
    fn value(&self, x: SegView<'_>) -> f64 {
        x.now()[self.0].tanh()
    }

    fn gradient(&self, x: SegView<'_>, dir: SegView<'_>) -> f64 {
        let c = x.now()[self.0].cosh();
        dir.now()[self.0] / (c * c)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantFunctional(pub f64);

impl SegmentFunctional for ConstantFunctional {
    fn value(&self, _x: SegView<'_>) -> f64 {
        self.0
    }

    fn gradient(&self, _x: SegView<'_>, _dir: SegView<'_>) -> f64 {
        0.0
    }
}

/// The derivative process along one base path.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRun {
    /// `U` from `-r` to the horizon, row-major like [`PathGrid::states`].
    pub u_states: Vec<f64>,
    pub dim: usize,
    pub delay_steps: usize,
    pub dt: f64,
    pub lambda: f64,
    pub direction: Segment,
    /// `sum_k sigma(X_k)^{-1} U_k . dW_k`; `None` when skipped.
    pub weight_integral: Option<f64>,
}

impl SensitivityRun {
    pub fn steps(&self) -> usize {
        self.u_states.len() / self.dim - self.delay_steps - 1
    }

    /// `U(t_k)`.
    pub fn u(&self, k: usize) -> &[f64] {
        let i = k + self.delay_steps;
        &self.u_states[i * self.dim..(i + 1) * self.dim]
    }

    /// The segment of `U` ending at step `k`.
    pub fn segment_at(&self, k: usize) -> Result<SegView<'_>> {
        if k > self.steps() {
            return Err(SddeError::StepOutOfRange {
                index: k,
                max: self.steps(),
            });
        }
        let len = (self.delay_steps + 1) * self.dim;
        Ok(SegView::new(self.dim, &self.u_states[k * self.dim..k * self.dim + len]))
    }
}

/// Steps `U` along `x_path`, reusing its stored increments.
pub fn solve_u(model: &dyn SddeModel, x_path: &PathGrid, lambda: f64, z: &Segment) -> Result<SensitivityRun> {
    if !model.has_gradients() {
        return Err(SddeError::MissingCapability("drift_gradient and diffusion_gradient"));
    }
    if !(lambda >= 0.0) {
        return Err(SddeError::invalid("lambda", format!("must be non-negative, got {lambda}")));
    }
    let grid = x_path.grid();
    check_init(model, grid, z)?;
    let (n, m) = (model.dim_state(), model.dim_noise());
    let dt = grid.dt();
    let steps = x_path.steps();
    let mut u = Vec::with_capacity((grid.segment_len() + steps) * n);
    u.extend_from_slice(z.values());
    let (mut ga, mut gs, mut noise_term) = (vec![0.0; n], vec![0.0; n * m], vec![0.0; n]);
    let seg_len = grid.segment_len() * n;
    for k in 0..steps {
        let xs = x_path.segment_at(k)?;
        let us = SegView::new(n, &u[k * n..k * n + seg_len]);
        model.drift_gradient(xs, us, &mut ga).map_err(|e| e.at_step(k))?;
        model.diffusion_gradient(xs, us, &mut gs).map_err(|e| e.at_step(k))?;
        mat_vec(&gs, n, m, x_path.increment(k), &mut noise_term);
        let now = us.now();
        let next: Vec<f64> = (0..n)
            .map(|i| now[i] + (ga[i] - lambda * now[i]) * dt + noise_term[i])
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(SddeError::NonFinite {
                what: "derivative process",
                segment_tail: now.to_vec(),
            }
            .at_step(k));
        }
        u.extend_from_slice(&next);
    }
    Ok(SensitivityRun {
        u_states: u,
        dim: n,
        delay_steps: grid.delay_steps(),
        dt,
        lambda,
        direction: z.clone(),
        weight_integral: None,
    })
}

/// Left-endpoint Itô sum `sum_k sigma(X_k)^{-1} U_k . dW_k` over the horizon.
pub fn weight_integral(model: &dyn SddeModel, x_path: &PathGrid, run: &SensitivityRun) -> Result<f64> {
    if !model.has_right_inverse() {
        return Err(SddeError::MissingCapability("diffusion_right_inverse"));
    }
    let (n, m) = (model.dim_state(), model.dim_noise());
    if run.steps() != x_path.steps() {
        return Err(SddeError::GridMismatch("derivative run and base path differ in length".into()));
    }
    let (mut inv, mut v) = (vec![0.0; m * n], vec![0.0; m]);
    let mut total = 0.0;
    for k in 0..x_path.steps() {
        model.diffusion_right_inverse(x_path.segment_at(k)?, &mut inv).map_err(|e| e.at_step(k))?;
        mat_vec(&inv, m, n, run.u(k), &mut v);
        total += v.iter().zip(x_path.increment(k)).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub lambda: f64,
    pub t: f64,
}

impl GradientEstimate {
    fn from_samples(samples: &[f64], lambda: f64, t: f64) -> Self {
        let m = MeanEstimate::from_samples(samples);
        GradientEstimate {
            value: m.mean,
            std_error: m.std_error,
            n_paths: m.n,
            lambda,
            t,
        }
    }

    /// `|a - b| / sqrt(se_a^2 + se_b^2)`; infinite if both errors vanish and the values differ.
    pub fn z_score(&self, other: &GradientEstimate) -> f64 {
        let diff = (self.value - other.value).abs();
        let se = self.std_error.hypot(other.std_error);
        if se == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / se
        }
    }
}

/// Per-path samples of the representation formula; path `i` uses base-noise stream `i`.
#[allow(clippy::too_many_arguments)]
pub fn gradient_samples(
    model: &dyn SddeModel,
    grid: &TimeGrid,
    x: &Segment,
    z: &Segment,
    f: &dyn SegmentFunctional,
    t: f64,
    lambda: f64,
    n_paths: usize,
    master_seed: u64,
) -> Result<Vec<f64>> {
    if lambda > 0.0 && !model.has_right_inverse() {
        return Err(SddeError::MissingCapability("diffusion_right_inverse"));
    }
    if n_paths == 0 {
        return Err(SddeError::EmptyBatch);
    }
    let steps = grid.steps_for(t)?;
    let g = grid.with_horizon_steps(steps)?;
    check_init(model, &g, x)?;
    let f_center = f.value(Segment::zeros(&g, model.dim_state()).view());
    (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut noise = GaussianNoise::for_path(master_seed, i, g.dt());
            let path = em_simulate(model, &g, x, &mut noise, None)?;
            let mut run = solve_u(model, &path, lambda, z)?;
            if lambda > 0.0 {
                run.weight_integral = Some(weight_integral(model, &path, &run)?);
            }
            let xt = path.segment_at(steps)?;
            let mut s = f.gradient(xt, run.segment_at(steps)?);
            if let Some(w) = run.weight_integral {
                s += lambda * (f.value(xt) - f_center) * w;
            }
            Ok(s)
        })
        .collect()
}

/// Monte Carlo estimate of `d/de E f(X_t^{x + e z})` at `e = 0`.
///
/// `f` is centred at its value on the zero segment, which leaves the mean
/// unchanged because the weight integral has mean zero.
#[allow(clippy::too_many_arguments)]
pub fn estimate_gradient(
    model: &dyn SddeModel,
    grid: &TimeGrid,
    x: &Segment,
    z: &Segment,
    f: &dyn SegmentFunctional,
    t: f64,
    lambda: f64,
    n_paths: usize,
    master_seed: u64,
) -> Result<GradientEstimate> {
    let samples = gradient_samples(model, grid, x, z, f, t, lambda, n_paths, master_seed)?;
    Ok(GradientEstimate::from_samples(&samples, lambda, t))
}

/// Finite differences `(f(X_t^{x + eps z}) - f(X_t^x)) / eps` under common noise.
#[allow(clippy::too_many_arguments)]
pub fn fd_oracle(
    model: &dyn SddeModel,
    grid: &TimeGrid,
    x: &Segment,
    z: &Segment,
    f: &dyn SegmentFunctional,
    t: f64,
    eps: f64,
    n_paths: usize,
    master_seed: u64,
) -> Result<GradientEstimate> {
    if eps == 0.0 || !eps.is_finite() {
        return Err(SddeError::invalid("eps", format!("must be finite and non-zero, got {eps}")));
    }
    if n_paths == 0 {
        return Err(SddeError::EmptyBatch);
    }
    let steps = grid.steps_for(t)?;
    let g = grid.with_horizon_steps(steps)?;
    let shifted = x.add_scaled(eps, z)?;
    let samples: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut noise = GaussianNoise::for_path(master_seed, i, g.dt());
            let base = em_simulate(model, &g, x, &mut noise, None)?;
            let moved = em_simulate(model, &g, &shifted, &mut ReplayNoise::new(base.noise()), None)?;
            Ok((f.value(moved.segment_at(steps)?) - f.value(base.segment_at(steps)?)) / eps)
        })
        .collect::<Result<_>>()?;
    Ok(GradientEstimate::from_samples(&samples, 0.0, t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// Slope of `ln E ||U_t||^2` against `t`; NaN when degenerate.
    pub rate: f64,
    pub ci: (f64, f64),
    /// All derivative processes vanish at some requested time.
    pub degenerate: bool,
}

/// Least-squares exponential rate of `E ||U_t||^2` (sup norm over the segment).
pub fn decay_diagnostic(runs: &[SensitivityRun], times: &[f64]) -> Result<DecayFit> {
    if runs.is_empty() {
        return Err(SddeError::EmptyBatch);
    }
    if times.len() < 2 {
        return Err(SddeError::invalid("times", "need at least two time points"));
    }
    let dt = runs[0].dt;
    let mut ts = Vec::with_capacity(times.len());
    let mut logs = Vec::with_capacity(times.len());
    for &t in times {
        let k = (t / dt).round();
        if !((k * dt - t).abs() <= 1e-9 * t.abs().max(1.0)) || k < 0.0 {
            return Err(SddeError::TimeNotOnGrid { t, dt });
        }
        let k = k as usize;
        let mut sum = 0.0;
        for run in runs {
            let s = run.segment_at(k)?;
            let norm = s.points().map(norm2).fold(0.0, f64::max);
            sum += norm * norm;
        }
        let mean = sum / runs.len() as f64;
        if mean == 0.0 {
            return Ok(DecayFit {
                rate: f64::NAN,
                ci: (f64::NAN, f64::NAN),
                degenerate: true,
            });
        }
        ts.push(t);
        logs.push(mean.ln());
    }
    let fit = LinearFit::fit(&ts, &logs).ok_or_else(|| SddeError::invalid("times", "must not all coincide"))?;
    Ok(DecayFit {
        rate: fit.slope,
        ci: fit.slope_ci(0.95),
        degenerate: false,
    })
}
