//! Time grids, delay segments and stored paths.
//!
//! A segment is the restriction of a path to a delay window `[t - r, t]`,
//! sampled at the `L + 1` grid points `t - r, t - r + dt, ..., t`. Points are
//! stored oldest first, so index `L` is the current value `x(0)`.

use crate::error::{Result, SddeError};

const GRID_TOL: f64 = 1e-9;

/// Uniform time grid with an integer number of steps per delay window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    dt: f64,
    delay_steps: usize,
    horizon_steps: usize,
}

impl TimeGrid {
    /// Builds a grid from a step size, the delay length `r` and a horizon in time units.
    ///
    /// Both `r` and `horizon` must be exact multiples of `dt`; nothing is rounded.
    pub fn new(dt: f64, r: f64, horizon: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(SddeError::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        let delay_steps = steps_exact(r, dt).map_err(|_| SddeError::DelayNotOnGrid { r, dt })?;
        let horizon_steps = steps_exact(horizon, dt)?;
        Self::from_steps(dt, delay_steps, horizon_steps)
    }

    pub fn from_steps(dt: f64, delay_steps: usize, horizon_steps: usize) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(SddeError::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        if delay_steps == 0 {
            return Err(SddeError::InvalidGrid("delay must span at least one step".into()));
        }
        if horizon_steps == 0 {
            return Err(SddeError::InvalidGrid("horizon must be at least one step".into()));
        }
        Ok(TimeGrid {
            dt,
            delay_steps,
            horizon_steps,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of steps `L` in one delay window.
    pub fn delay_steps(&self) -> usize {
        self.delay_steps
    }

    pub fn horizon_steps(&self) -> usize {
        self.horizon_steps
    }

    /// Delay length `r = L * dt`.
    pub fn r(&self) -> f64 {
        self.delay_steps as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon_steps as f64 * self.dt
    }

    /// Points per segment, `L + 1`.
    pub fn segment_len(&self) -> usize {
        self.delay_steps + 1
    }

    pub fn with_horizon_steps(&self, horizon_steps: usize) -> Result<Self> {
        Self::from_steps(self.dt, self.delay_steps, horizon_steps)
    }

    /// Converts a time to a step count, rejecting times off the grid.
    pub fn steps_for(&self, t: f64) -> Result<usize> {
        steps_exact(t, self.dt)
    }

    /// Grid offsets of the segment points relative to the current time: `-r, ..., 0`.
    pub fn segment_offsets(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.delay_steps).map(move |i| (i as f64 - self.delay_steps as f64) * self.dt)
    }
}

fn steps_exact(t: f64, dt: f64) -> Result<usize> {
    if !t.is_finite() || t < 0.0 {
        return Err(SddeError::TimeNotOnGrid { t, dt });
    }
    let k = (t / dt).round();
    if (k * dt - t).abs() > GRID_TOL * t.abs().max(1.0) || k > usize::MAX as f64 / 2.0 {
        return Err(SddeError::TimeNotOnGrid { t, dt });
    }
    Ok(k as usize)
}

/// Borrowed view of a segment: `len` points of dimension `dim`, oldest first.
#[derive(Debug, Clone, Copy)]
pub struct SegView<'a> {
    dim: usize,
    values: &'a [f64],
}

impl<'a> SegView<'a> {
    pub fn new(dim: usize, values: &'a [f64]) -> Self {
        debug_assert!(dim > 0 && values.len().is_multiple_of(dim));
        SegView { dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, i: usize) -> &'a [f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Current value `x(0)`.
    pub fn now(&self) -> &'a [f64] {
        self.point(self.len() - 1)
    }

    /// Oldest value `x(-r)`.
    pub fn earliest(&self) -> &'a [f64] {
        self.point(0)
    }

    pub fn values(&self) -> &'a [f64] {
        self.values
    }

    pub fn points(&self) -> impl Iterator<Item = &'a [f64]> {
        self.values.chunks_exact(self.dim)
    }

    /// Grid-max of the Euclidean norm.
    pub fn sup_norm(&self) -> f64 {
        self.points().map(norm2).fold(0.0, f64::max)
    }

    pub fn to_segment(&self) -> Segment {
        Segment {
            dim: self.dim,
            values: self.values.to_vec(),
        }
    }
}

/// Owned segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    dim: usize,
    values: Vec<f64>,
}

impl Segment {
    /// Builds a segment from flat point data (oldest first).
    pub fn from_values(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.is_empty() || !values.len().is_multiple_of(dim) {
            return Err(SddeError::GridMismatch(format!(
                "{} values cannot form points of dimension {dim}",
                values.len()
            )));
        }
        Ok(Segment { dim, values })
    }

    pub fn constant(grid: &TimeGrid, value: &[f64]) -> Self {
        let values = value
            .iter()
            .copied()
            .cycle()
            .take(value.len() * grid.segment_len())
            .collect();
        Segment {
            dim: value.len(),
            values,
        }
    }

    pub fn zeros(grid: &TimeGrid, dim: usize) -> Self {
        Segment {
            dim,
            values: vec![0.0; dim * grid.segment_len()],
        }
    }

    /// Scalar segment sampled from `f` at offsets `-r, ..., 0`.
    pub fn from_scalar_fn(grid: &TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        Segment {
            dim: 1,
            values: grid.segment_offsets().map(f).collect(),
        }
    }

    pub fn view(&self) -> SegView<'_> {
        SegView {
            dim: self.dim,
            values: &self.values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.view().point(i)
    }

    pub fn now(&self) -> &[f64] {
        self.view().now()
    }

    pub fn sup_norm(&self) -> f64 {
        self.view().sup_norm()
    }

    /// `self + scale * other`, pointwise.
    pub fn add_scaled(&self, scale: f64, other: &Segment) -> Result<Segment> {
        check_compatible(self.view(), other.view())?;
        Ok(Segment {
            dim: self.dim,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + scale * b)
                .collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl<'a> From<&'a Segment> for SegView<'a> {
    fn from(s: &'a Segment) -> Self {
        s.view()
    }
}

fn check_compatible(x: SegView<'_>, y: SegView<'_>) -> Result<()> {
    if x.dim != y.dim || x.values.len() != y.values.len() {
        return Err(SddeError::GridMismatch(format!(
            "{} points of dim {} vs {} points of dim {}",
            x.len(),
            x.dim,
            y.len(),
            y.dim
        )));
    }
    Ok(())
}

/// Grid sup-distance `max_i |x(t_i) - y(t_i)|` between two segments on the same grid.
pub fn sup_dist<'a, 'b>(x: impl Into<SegView<'a>>, y: impl Into<SegView<'b>>) -> Result<f64> {
    let (x, y) = (x.into(), y.into());
    check_compatible(x, y)?;
    Ok(x.points()
        .zip(y.points())
        .map(|(p, q)| {
            p.iter()
                .zip(q)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max))
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// A simulated path from `-r` to the horizon together with the noise that drove it.
#[derive(Debug, Clone, PartialEq)]
pub struct PathGrid {
    grid: TimeGrid,
    dim: usize,
    noise_dim: usize,
    states: Vec<f64>,
    noise: Vec<f64>,
}

impl PathGrid {
    pub(crate) fn with_initial(grid: TimeGrid, init: &Segment, noise_dim: usize) -> Self {
        let steps = grid.horizon_steps();
        let mut states = Vec::with_capacity((grid.segment_len() + steps) * init.dim());
        states.extend_from_slice(init.values());
        PathGrid {
            grid,
            dim: init.dim(),
            noise_dim,
            states,
            noise: Vec::with_capacity(steps * noise_dim),
        }
    }

    pub(crate) fn push(&mut self, state: &[f64], dw: &[f64]) {
        self.states.extend_from_slice(state);
        self.noise.extend_from_slice(dw);
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    /// Number of integration steps stored.
    pub fn steps(&self) -> usize {
        self.noise.len() / self.noise_dim
    }

    /// Flat states, oldest first, starting at time `-r`.
    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// Flat noise increments, one `m`-vector per step.
    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    /// State at step `k >= 0` (time `k * dt`).
    pub fn state(&self, k: usize) -> &[f64] {
        let i = (self.grid.delay_steps() + k) * self.dim;
        &self.states[i..i + self.dim]
    }

    /// Noise increment consumed by step `k`, moving from time `k dt` to `(k+1) dt`.
    pub fn increment(&self, k: usize) -> &[f64] {
        &self.noise[k * self.noise_dim..(k + 1) * self.noise_dim]
    }

    /// The segment ending at step `k`.
    pub fn segment_at(&self, k: usize) -> Result<SegView<'_>> {
        let max = self.steps();
        if k > max {
            return Err(SddeError::StepOutOfRange { index: k, max });
        }
        Ok(self.segment_unchecked(k))
    }

    pub(crate) fn segment_unchecked(&self, k: usize) -> SegView<'_> {
        let start = k * self.dim;
        let end = start + self.grid.segment_len() * self.dim;
        SegView {
            dim: self.dim,
            values: &self.states[start..end],
        }
    }

    /// Scalar path values for `n = 1` models, from `-r` to the last step.
    pub fn scalar_states(&self) -> Option<&[f64]> {
        (self.dim == 1).then_some(&self.states[..])
    }
}
