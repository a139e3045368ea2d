//! Empirical harness for the exponential tail bound on
//! `sup_{t <= tau} (V(t) - e^{-lambda t} V(0))` for a non-negative Itô process
//!
//! ```text
//! dV = D dt + M dB,    D <= -lambda V + A,    |M|^2 <= B   up to tau <= T,
//! ```
//!
//! whose exceedance threshold at level `R` is `A / lambda + sqrt(B) lambda^(-delta) R`.
//! Paths on which a driver breaks its declared caps are discarded and counted.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Result, SddeError};
use crate::rng::{derive_seed, stream};
use crate::stats::LinearFit;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailBoundSpec {
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
    pub delta: f64,
    pub t: f64,
}

impl TailBoundSpec {
    pub fn new(a: f64, b: f64, lambda: f64, delta: f64, t: f64) -> Result<Self> {
        if !(a >= 0.0) {
            return Err(SddeError::invalid("A", format!("must be non-negative, got {a}")));
        }
        if !(b > 0.0) {
            return Err(SddeError::invalid("B", format!("must be positive, got {b}")));
        }
        if !(lambda > 0.0) {
            return Err(SddeError::invalid("lambda", format!("must be positive, got {lambda}")));
        }
        if !(delta > 0.0 && delta < 0.5) {
            return Err(SddeError::invalid("delta", format!("must lie in (0, 1/2), got {delta}")));
        }
        if !(t > 0.0) {
            return Err(SddeError::invalid("T", format!("must be positive, got {t}")));
        }
        Ok(TailBoundSpec { a, b, lambda, delta, t })
    }
}

/// `A / lambda + sqrt(B) lambda^(-delta) R`.
pub fn lem1_threshold(spec: &TailBoundSpec, r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(SddeError::invalid("R", format!("must be non-negative, got {r}")));
    }
    Ok(spec.a / spec.lambda + spec.b.sqrt() * spec.lambda.powf(-spec.delta) * r)
}

/// One simulated path: `V` on the grid with the drift and squared volatility
/// in force over each step. The path ends at the driver's stopping time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TailPath {
    pub v: Vec<f64>,
    pub drift: Vec<f64>,
    pub vol_sq: Vec<f64>,
}

/// A process generator together with the constants it claims to satisfy.
pub trait TailDriver: Send + Sync {
    fn declared(&self) -> (f64, f64, f64);
    fn sample(&self, seed: u64, dt: f64, steps: usize) -> TailPath;
}

/// `dV = (-lambda V + A) dt` from `v0`; no martingale part.
#[derive(Debug, Clone, Copy)]
pub struct DeterministicDriver {
    pub v0: f64,
    pub a: f64,
    pub lambda: f64,
    pub b: f64,
}

impl TailDriver for DeterministicDriver {
    fn declared(&self) -> (f64, f64, f64) {
        (self.a, self.b, self.lambda)
    }

    fn sample(&self, _seed: u64, dt: f64, steps: usize) -> TailPath {
        let mut p = TailPath::default();
        let mut v = self.v0;
        for _ in 0..steps {
            let d = -self.lambda * v + self.a;
            p.v.push(v);
            p.drift.push(d);
            p.vol_sq.push(0.0);
            v += d * dt;
        }
        p.v.push(v);
        p
    }
}

/// `V = Z^2` for the Ornstein–Uhlenbeck process `dZ = -theta Z dt + s dW`,
/// stopped when `V` first exceeds `cap`.
///
/// By Itô's formula `dV = (-2 theta V + s^2) dt + 2 s Z dW`, so the declared
/// constants are `A = s^2`, `B = 4 s^2 cap`, `lambda = 2 theta`.
#[derive(Debug, Clone, Copy)]
pub struct SquaredOuDriver {
    pub z0: f64,
    pub theta: f64,
    pub s: f64,
    pub cap: f64,
}

impl TailDriver for SquaredOuDriver {
    fn declared(&self) -> (f64, f64, f64) {
        (self.s * self.s, 4.0 * self.s * self.s * self.cap, 2.0 * self.theta)
    }

    fn sample(&self, seed: u64, dt: f64, steps: usize) -> TailPath {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = dt.sqrt();
        let mut p = TailPath::default();
        let mut z = self.z0;
        for _ in 0..steps {
            let v = z * z;
            if v > self.cap {
                break;
            }
            p.v.push(v);
            p.drift.push(-2.0 * self.theta * v + self.s * self.s);
            p.vol_sq.push(4.0 * self.s * self.s * v);
            let w: f64 = StandardNormal.sample(&mut rng);
            z += -self.theta * z * dt + self.s * sd * w;
        }
        p.v.push(z * z);
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailReport {
    pub r_grid: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub frequencies: Vec<f64>,
    /// Slope of `ln frequency` against `R^2` over levels with a positive frequency.
    pub slope: Option<f64>,
    pub slope_ci: Option<(f64, f64)>,
    pub used_paths: usize,
    pub discarded: usize,
}

/// `sup_k (V_k - e^{-lambda t_k} V_0)` of one path.
pub fn tail_statistic(path: &TailPath, lambda: f64, dt: f64) -> f64 {
    let v0 = path.v[0];
    path.v
        .iter()
        .enumerate()
        .map(|(k, v)| v - (-lambda * k as f64 * dt).exp() * v0)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn conforms(path: &TailPath, a: f64, b: f64, lambda: f64) -> bool {
    let slack = |x: f64| 1e-12 * x.abs().max(1.0);
    path.v.iter().all(|v| *v >= 0.0)
        && path.drift.iter().zip(&path.v).all(|(d, v)| {
            let cap = -lambda * v + a;
            *d <= cap + slack(cap)
        })
        && path.vol_sq.iter().all(|q| *q <= b + slack(b))
}

/// Exceedance frequencies of the tail statistic over a grid of `R`.
///
/// Thresholds use `(A, B, lambda)` from `spec`; the driver's declared constants
/// are what each path is checked against.
pub fn lem1_empirical_check(
    driver: &dyn TailDriver,
    spec: &TailBoundSpec,
    r_grid: &[f64],
    dt: f64,
    n_paths: usize,
    master_seed: u64,
) -> Result<TailReport> {
    if !(dt > 0.0) {
        return Err(SddeError::invalid("dt", format!("must be positive, got {dt}")));
    }
    let steps = (spec.t / dt).round() as usize;
    let (a, b, lambda) = driver.declared();
    let stats: Vec<Option<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let path = driver.sample(derive_seed(master_seed, i as u64, stream::AUXILIARY), dt, steps);
            conforms(&path, a, b, lambda).then(|| tail_statistic(&path, spec.lambda, dt))
        })
        .collect();
    let kept: Vec<f64> = stats.iter().flatten().copied().collect();
    let discarded = n_paths - kept.len();
    if kept.is_empty() {
        return Err(SddeError::AllPathsDiscarded(n_paths));
    }
    let thresholds: Vec<f64> = r_grid.iter().map(|&r| lem1_threshold(spec, r)).collect::<Result<_>>()?;
    let frequencies: Vec<f64> = thresholds
        .iter()
        .map(|&th| kept.iter().filter(|&&s| s > th).count() as f64 / kept.len() as f64)
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = r_grid
        .iter()
        .zip(&frequencies)
        .filter(|(_, f)| **f > 0.0)
        .map(|(r, f)| (r * r, f.ln()))
        .unzip();
    let fit = LinearFit::fit(&xs, &ys);
    Ok(TailReport {
        r_grid: r_grid.to_vec(),
        thresholds,
        frequencies,
        slope: fit.map(|f| f.slope),
        slope_ci: fit.map(|f| f.slope_ci(0.95)),
        used_paths: kept.len(),
        discarded,
    })
}
