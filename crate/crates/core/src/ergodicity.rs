//! Skeleton chains, empirical Kantorovich distances, Lyapunov drift checks and
//! the rate functions derived from a concave `phi`:
//!
//! ```text
//! Phi(v) = int_1^v dw / phi(w),    r(t) = phi(Phi^{-1}(t))
//! ```

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::coupling::MetricSpec;
use crate::error::{Result, SddeError};
use crate::grid::{PathGrid, SegView, Segment, TimeGrid};
use crate::integrator::{check_init, em_simulate};
use crate::model::SddeModel;
use crate::ot::transport;
use crate::rng::{derive_seed, stream, GaussianNoise};
use crate::stats::{LinearFit, MeanEstimate};

/// Segments of `path` at times `h, 2h, ...` up to the horizon.
pub fn skeleton(path: &PathGrid, h: f64) -> Result<Vec<Segment>> {
    let k = path.grid().steps_for(h)?;
    if k == 0 {
        return Err(SddeError::invalid("h", "must be positive"));
    }
    (1..=path.steps() / k)
        .map(|i| path.segment_at(i * k).map(|s| s.to_segment()))
        .collect()
}

/// Exact optimal-transport distance between the uniform empirical measures
/// of two samples, with cost `d_{N,gamma}`.
pub fn empirical_coupling_distance(a: &[Segment], b: &[Segment], spec: &MetricSpec) -> Result<f64> {
    let (na, nb) = (a.len(), b.len());
    if na == 0 || nb == 0 {
        return Err(SddeError::EmptyBatch);
    }
    for size in [na, nb] {
        if size > crate::ot::MAX_SAMPLE {
            return Err(SddeError::SampleTooLarge {
                size,
                cap: crate::ot::MAX_SAMPLE,
            });
        }
    }
    let mut cost = Vec::with_capacity(na * nb);
    for x in a {
        for y in b {
            cost.push(spec.dist(x, y)?);
        }
    }
    transport(&cost, na, nb)
}

/// `|mean f(a) - mean f(b)|` for a test function `f` that must be 1-Lipschitz
/// with respect to `d_{N,gamma}`; checked on every pair of the pooled sample.
///
/// Pair indices in a [`SddeError::LipschitzViolation`] refer to the
/// concatenation `a ++ b`.
pub fn kr_dual_value(
    f: &dyn Fn(SegView<'_>) -> f64,
    a: &[Segment],
    b: &[Segment],
    spec: &MetricSpec,
) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(SddeError::EmptyBatch);
    }
    let pooled: Vec<&Segment> = a.iter().chain(b).collect();
    let values: Vec<f64> = pooled.iter().map(|s| f(s.view())).collect();
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            let dist = spec.dist(pooled[i], pooled[j])?;
            let gap = (values[i] - values[j]).abs();
            if gap > dist + 1e-12 {
                return Err(SddeError::LipschitzViolation { i, j, gap, dist });
            }
        }
    }
    let ma = values[..a.len()].iter().sum::<f64>() / a.len() as f64;
    let mb = values[a.len()..].iter().sum::<f64>() / b.len() as f64;
    Ok((ma - mb).abs())
}

/// Concave increasing rate `phi` on `[1, inf)`.
#[derive(Clone)]
pub enum Phi {
    /// `c v`
    Linear { c: f64 },
    /// `a v^rho` with `0 <= rho < 1`
    Power { a: f64, rho: f64 },
    /// `c v (ln v + b)^q` with `b > 0`, `q < 1`; increasing only when `b >= -q`
    LogPower { c: f64, b: f64, q: f64 },
    /// Anything else; `Phi` is then computed by quadrature.
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Phi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phi::Linear { c } => write!(f, "Linear {{ c: {c} }}"),
            Phi::Power { a, rho } => write!(f, "Power {{ a: {a}, rho: {rho} }}"),
            Phi::LogPower { c, b, q } => write!(f, "LogPower {{ c: {c}, b: {b}, q: {q} }}"),
            Phi::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Phi {
    pub fn eval(&self, v: f64) -> f64 {
        match self {
            Phi::Linear { c } => c * v,
            Phi::Power { a, rho } => a * v.powf(*rho),
            Phi::LogPower { c, b, q } => c * v * (v.ln() + b).powf(*q),
            Phi::Custom(f) => f(v),
        }
    }
}

const QUAD_TOL: f64 = 1e-10;
const MAX_LOG_V: f64 = 700.0;

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + adaptive(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// `Phi`, its inverse and `r` for one `phi`.
#[derive(Debug, Clone)]
pub struct RateFunctions {
    phi: Phi,
}

/// Validates `phi` and builds its rate functions.
pub fn rate_functions(phi: Phi) -> Result<RateFunctions> {
    let bad = |msg: String| Err(SddeError::RateFunction(msg));
    match phi {
        Phi::Linear { c } if !(c > 0.0) => return bad(format!("linear phi needs c > 0, got {c}")),
        Phi::Power { a, rho } if !(a > 0.0 && (0.0..1.0).contains(&rho)) => {
            return bad(format!("power phi needs a > 0 and 0 <= rho < 1, got a = {a}, rho = {rho}"))
        }
        Phi::LogPower { c, b, q } if !(c > 0.0 && b > 0.0 && q < 1.0) => {
            return bad(format!("log-power phi needs c, b > 0 and q < 1, got c = {c}, b = {b}, q = {q}"))
        }
        _ => {}
    }
    let mut prev = 0.0;
    for i in 0..=60 {
        let v = 10f64.powf(i as f64 / 10.0);
        let p = phi.eval(v);
        if !(p > 0.0) || !p.is_finite() {
            return bad(format!("phi({v}) = {p} is not positive"));
        }
        if p < prev {
            return bad(format!("phi decreases near v = {v}"));
        }
        prev = p;
    }
    Ok(RateFunctions { phi })
}

impl RateFunctions {
    pub fn phi(&self, v: f64) -> f64 {
        self.phi.eval(v)
    }

    pub fn kind(&self) -> &Phi {
        &self.phi
    }

    /// `Phi(v) = int_1^v dw / phi(w)` for `v >= 1`.
    pub fn big_phi(&self, v: f64) -> Result<f64> {
        if !(v >= 1.0) {
            return Err(SddeError::RateFunction(format!("Phi is defined for v >= 1, got {v}")));
        }
        Ok(match &self.phi {
            Phi::Linear { c } => v.ln() / c,
            Phi::Power { a, rho } => (v.powf(1.0 - rho) - 1.0) / (a * (1.0 - rho)),
            Phi::LogPower { c, b, q } => {
                let e = 1.0 - q;
                ((v.ln() + b).powf(e) - b.powf(e)) / (c * e)
            }
            Phi::Custom(f) => {
                // w = e^s keeps the integrand tame over many decades
                let g = |s: f64| {
                    let w = s.exp();
                    w / f(w)
                };
                integrate(&g, 0.0, v.ln(), QUAD_TOL)
            }
        })
    }

    /// Inverse of [`Self::big_phi`] on `t >= 0`.
    pub fn big_phi_inv(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(SddeError::RateFunction(format!("Phi^-1 is defined for t >= 0, got {t}")));
        }
        Ok(match &self.phi {
            Phi::Linear { c } => (c * t).exp(),
            Phi::Power { a, rho } => (1.0 + a * (1.0 - rho) * t).powf(1.0 / (1.0 - rho)),
            Phi::LogPower { c, b, q } => {
                let e = 1.0 - q;
                ((b.powf(e) + c * e * t).powf(1.0 / e) - b).exp()
            }
            Phi::Custom(_) => return self.bisect_inverse(t),
        })
    }

    fn bisect_inverse(&self, t: f64) -> Result<f64> {
        let at = |s: f64| self.big_phi(s.exp());
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while at(hi)? < t {
            lo = hi;
            hi *= 2.0;
            if hi > MAX_LOG_V {
                return Err(SddeError::RateFunction(format!(
                    "Phi stays below {t} for all v up to e^{MAX_LOG_V}"
                )));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if at(mid)? < t {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi.max(1.0) {
                break;
            }
        }
        Ok((0.5 * (lo + hi)).exp())
    }

    /// `r(t) = phi(Phi^{-1}(t))`.
    pub fn r(&self, t: f64) -> Result<f64> {
        Ok(self.phi(self.big_phi_inv(t)?))
    }
}

/// The envelope `C phi(V(x))^delta / r(c t)^delta`.
pub fn rate_bound(t: f64, v_x: f64, rates: &RateFunctions, delta: f64, c: f64, big_c: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(SddeError::invalid("delta", format!("must lie in (0, 1), got {delta}")));
    }
    if !(c > 0.0 && big_c > 0.0) {
        return Err(SddeError::invalid("c/C", "must be positive"));
    }
    if !(t >= 0.0 && v_x >= 1.0) {
        return Err(SddeError::invalid("t/V(x)", "need t >= 0 and V(x) >= 1"));
    }
    Ok(big_c * (rates.phi(v_x) / rates.r(c * t)?).powf(delta))
}

/// Exponential envelope `scale * exp(-rate t)` of a decay curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeFit {
    pub rate: f64,
    pub scale: f64,
}

/// `rate` is minus the least-squares slope of `ln value` against `t` over the
/// positive values; `scale` is the smallest constant for which the envelope
/// dominates every point. `None` with fewer than two positive values.
pub fn fit_envelope(times: &[f64], values: &[f64]) -> Option<EnvelopeFit> {
    let (ts, logs): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > 0.0)
        .map(|(t, v)| (*t, v.ln()))
        .unzip();
    let rate = -LinearFit::fit(&ts, &logs)?.slope;
    let scale = times
        .iter()
        .zip(values)
        .map(|(t, v)| v * (rate * t).exp())
        .fold(0.0, f64::max);
    Some(EnvelopeFit { rate, scale })
}

/// A functional of a segment.
pub type SegmentFn = Arc<dyn Fn(SegView<'_>) -> f64 + Send + Sync>;

/// Lyapunov data for `E_x V(X_h) - V(x) <= -phi(V(x)) + C_V`.
#[derive(Clone)]
pub struct LyapunovSpec {
    pub v: SegmentFn,
    pub phi: Phi,
    pub c_v: f64,
    pub h: f64,
}

impl fmt::Debug for LyapunovSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LyapunovSpec")
            .field("phi", &self.phi)
            .field("c_v", &self.c_v)
            .field("h", &self.h)
            .finish_non_exhaustive()
    }
}

/// Constants of the Lyapunov catalog. Unused fields are ignored by a given case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovParams {
    /// Exponent scale in `V` (cases with exponential `V`).
    pub alpha: f64,
    /// Rate constant of `phi` (`c`, or `a` in the power case).
    pub c: f64,
    /// Logarithmic offset `b` in the sub-linear exponential case.
    pub b: f64,
    /// Power `p` of the polynomial case.
    pub p: f64,
    /// Dissipation constant `A` of the drift for `kappa = -1`.
    pub a_minus1: f64,
    /// `sup ||sigma||^2`.
    pub sigma_sup_sq: f64,
    pub c_v: f64,
    pub h: f64,
}

impl Default for LyapunovParams {
    fn default() -> Self {
        LyapunovParams {
            alpha: 1.0,
            c: 0.5,
            b: 2.0,
            p: 3.0,
            a_minus1: 2.0,
            sigma_sup_sq: 1.0,
            c_v: 5.0,
            h: 1.0,
        }
    }
}

/// `(V, phi)` for a drift with `(a(x), x(0)) <= -A |x(0)|^(kappa+1)` at infinity.
///
/// * `kappa >= 0`: `V = exp(alpha |x(0)|)`, `phi(v) = c v`
/// * `-1 < kappa < 0`: `V = exp(alpha |x(0)|^(kappa+1))`, `phi(v) = c v (ln v + b)^(2 kappa / (kappa + 1))`
/// * `kappa = -1`: `V = 1 + |x(0)|^p`, `phi(v) = c v^(1 - 2/p)`, for
///   `2 < p < 2 + (2A - sup ||sigma||^2) / sup ||sigma||^2`
///
/// In the last case `V` is shifted by one so that it stays `>= 1` near the origin.
pub fn lyapunov_catalog(kappa: f64, params: &LyapunovParams) -> Result<LyapunovSpec> {
    let p = *params;
    if !(kappa >= -1.0) {
        return Err(SddeError::invalid("kappa", format!("must be >= -1, got {kappa}")));
    }
    if !(p.c > 0.0 && p.h > 0.0) {
        return Err(SddeError::invalid("c/h", "must be positive"));
    }
    let norm0 = |s: SegView<'_>| s.now().iter().map(|v| v * v).sum::<f64>().sqrt();
    let (v, phi): (SegmentFn, Phi) = if kappa >= 0.0 {
        let alpha = p.alpha;
        (Arc::new(move |s| (alpha * norm0(s)).exp()), Phi::Linear { c: p.c })
    } else if kappa > -1.0 {
        let (alpha, e) = (p.alpha, kappa + 1.0);
        let q = 2.0 * kappa / (kappa + 1.0);
        if !(p.b >= -q) {
            // phi'(v) has the sign of ln v + b + q
            return Err(SddeError::invalid("b", format!("must be >= {} for phi to increase, got {}", -q, p.b)));
        }
        (
            Arc::new(move |s| (alpha * norm0(s).powf(e)).exp()),
            Phi::LogPower { c: p.c, b: p.b, q },
        )
    } else {
        let lam = p.sigma_sup_sq;
        if !(lam > 0.0 && 2.0 * p.a_minus1 > lam) {
            return Err(SddeError::invalid(
                "a_minus1",
                format!("need 2A > sup ||sigma||^2, got A = {}, sup ||sigma||^2 = {lam}", p.a_minus1),
            ));
        }
        let p_max = 2.0 + (2.0 * p.a_minus1 - lam) / lam;
        if !(p.p > 2.0 && p.p < p_max) {
            return Err(SddeError::invalid("p", format!("must lie in (2, {p_max}), got {}", p.p)));
        }
        let pp = p.p;
        (
            Arc::new(move |s| 1.0 + norm0(s).powf(pp)),
            Phi::Power {
                a: p.c,
                rho: 1.0 - 2.0 / pp,
            },
        )
    };
    Ok(LyapunovSpec {
        v,
        phi,
        c_v: p.c_v,
        h: p.h,
    })
}

/// Outcome of the drift check at one probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovProbe {
    pub v_x: f64,
    /// Monte Carlo estimate of `E_x V(X_h) - V(x)`.
    pub drift: f64,
    /// Half-width of the 95% confidence interval.
    pub half_width: f64,
    /// `-phi(V(x)) + C_V`.
    pub rhs: f64,
    pub pass: bool,
}

/// Checks the Lyapunov drift inequality at each probe with `n_paths` paths.
pub fn lyapunov_drift_check(
    model: &dyn SddeModel,
    grid: &TimeGrid,
    spec: &LyapunovSpec,
    probes: &[Segment],
    n_paths: usize,
    master_seed: u64,
) -> Result<Vec<LyapunovProbe>> {
    if n_paths == 0 {
        return Err(SddeError::EmptyBatch);
    }
    let h_steps = grid.steps_for(spec.h)?;
    let g = grid.with_horizon_steps(h_steps)?;
    probes
        .iter()
        .enumerate()
        .map(|(pi, x)| {
            check_init(model, &g, x)?;
            let v_x = (spec.v)(x.view());
            if !(v_x >= 1.0) {
                return Err(SddeError::LyapunovBelowOne { value: v_x });
            }
            let seed = derive_seed(master_seed, pi as u64, stream::REPLICATE);
            let values: Vec<f64> = (0..n_paths)
                .into_par_iter()
                .map(|i| {
                    let mut noise = GaussianNoise::for_path(seed, i, g.dt());
                    let path = em_simulate(model, &g, x, &mut noise, None)?;
                    let v = (spec.v)(path.segment_at(h_steps)?);
                    if !(v >= 1.0) {
                        return Err(SddeError::LyapunovBelowOne { value: v });
                    }
                    Ok(v - v_x)
                })
                .collect::<Result<_>>()?;
            let est = MeanEstimate::from_samples(&values);
            let half_width = est.half_width(0.95);
            let rhs = -spec.phi.eval(v_x) + spec.c_v;
            Ok(LyapunovProbe {
                v_x,
                drift: est.mean,
                half_width,
                rhs,
                pass: est.mean + half_width <= rhs,
            })
        })
        .collect()
}

/// Thinned skeleton of one long trajectory after `burn_in`: the segments at
/// `burn_in + i h` for `i < n_samples`.
///
/// Successive samples are correlated; this is a proxy for the invariant law,
/// not an independent sample from it.
pub fn stationary_estimate(
    model: &dyn SddeModel,
    grid: &TimeGrid,
    x0: &Segment,
    burn_in: f64,
    h: f64,
    n_samples: usize,
    master_seed: u64,
) -> Result<Vec<Segment>> {
    let burn = grid.steps_for(burn_in)?;
    let hk = grid.steps_for(h)?;
    if hk == 0 {
        return Err(SddeError::invalid("h", "must be positive"));
    }
    if n_samples == 0 {
        return Ok(Vec::new());
    }
    let total = hk
        .checked_mul(n_samples - 1)
        .and_then(|v| v.checked_add(burn))
        .ok_or(SddeError::HorizonOverflow)?;
    let g = grid.with_horizon_steps(total.max(1))?;
    let mut noise = GaussianNoise::new(derive_seed(master_seed, 0, stream::STATIONARY), g.dt());
    let path = em_simulate(model, &g, x0, &mut noise, None)?;
    (0..n_samples)
        .map(|i| path.segment_at(burn + i * hk).map(|s| s.to_segment()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{self, params};
    use crate::rng::ReplayNoise;
    use proptest::prelude::*;

    #[test]
    fn skeleton_examples() {
        let g = TimeGrid::new(0.1, 0.5, 2.0).unwrap();
        let m = catalog::build("linear-delay", &params(&[("sigma", 0.0)])).unwrap();
        let init = Segment::constant(&g, &[1.0]);
        let p = em_simulate(m.as_ref(), &g, &init, &mut ReplayNoise::new(&[0.0; 20]), None).unwrap();
        let one = skeleton(&p, 2.0).unwrap();
        assert_eq!(one.len(), 1);
        let sk = skeleton(&p, 0.5).unwrap();
        assert_eq!(sk.len(), 4);
        // mean of the noiseless linear flow decays by (1 - dt)^5 per skeleton step
        for w in sk.windows(2) {
            assert!((w[1].now()[0] / w[0].now()[0] - 0.9f64.powi(5)).abs() < 1e-12);
        }
        assert!(skeleton(&p, 0.25).is_err());

        let flat = catalog::build("linear-delay", &params(&[("kappa0", 0.0), ("sigma", 0.0)])).unwrap();
        let p = em_simulate(flat.as_ref(), &g, &init, &mut ReplayNoise::new(&[0.0; 20]), None).unwrap();
        assert!(skeleton(&p, 0.5).unwrap().iter().all(|s| *s == init));
    }

    fn seg(v: &[f64]) -> Segment {
        Segment::from_values(1, v.to_vec()).unwrap()
    }

    #[test]
    fn ot_distance_examples() {
        let spec = MetricSpec::new(1.0, 1.0).unwrap();
        let a = vec![seg(&[0.0, 0.1]), seg(&[0.3, 0.2])];
        assert_eq!(empirical_coupling_distance(&a, &a, &spec).unwrap(), 0.0);
        let x = seg(&[0.0, 0.25]);
        let y = seg(&[0.1, 0.0]);
        let d = spec.dist(&x, &y).unwrap();
        assert_eq!(empirical_coupling_distance(std::slice::from_ref(&x), std::slice::from_ref(&y), &spec).unwrap(), d);
        // the distance to y is 1-Lipschitz and tight on two points
        let f = |s: SegView<'_>| spec.dist(s, &y).unwrap();
        assert_eq!(kr_dual_value(&f, &[x], std::slice::from_ref(&y), &spec).unwrap(), d);
        let big = vec![seg(&[0.0]); 513];
        assert!(matches!(
            empirical_coupling_distance(&big, &a, &spec),
            Err(SddeError::SampleTooLarge { .. })
        ));
    }

    #[test]
    fn kr_rejects_non_lipschitz_functions() {
        let spec = MetricSpec::new(1.0, 1.0).unwrap();
        let a = vec![seg(&[0.0])];
        let b = vec![seg(&[0.1])];
        let f = |s: SegView<'_>| 5.0 * s.now()[0];
        assert!(matches!(
            kr_dual_value(&f, &a, &b, &spec),
            Err(SddeError::LipschitzViolation { i: 0, j: 1, .. })
        ));
        let c = |_: SegView<'_>| 3.0;
        assert_eq!(kr_dual_value(&c, &a, &b, &spec).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_rates() {
        let lin = rate_functions(Phi::Linear { c: 1.0 }).unwrap();
        assert_eq!(lin.big_phi(1.0).unwrap(), 0.0);
        assert_eq!(lin.r(0.0).unwrap(), 1.0);
        assert!((lin.r(1.5).unwrap() - 1.5f64.exp()).abs() < 1e-12);
        let two = rate_functions(Phi::Linear { c: 2.0 }).unwrap();
        assert!((two.r(1.0).unwrap() - 14.778_112_197_861_3).abs() < 1e-9);
        let sqrt = rate_functions(Phi::Power { a: 1.0, rho: 0.5 }).unwrap();
        assert!((sqrt.big_phi(9.0).unwrap() - 4.0).abs() < 1e-12);
        assert!((sqrt.big_phi_inv(2.0).unwrap() - 4.0).abs() < 1e-12);
        assert!((sqrt.r(2.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(rate_functions(Phi::Linear { c: 0.0 }).is_err());
        assert!(rate_functions(Phi::Custom(Arc::new(|v| 1.0 - v))).is_err());
    }

    #[test]
    fn quadrature_agrees_with_closed_forms() {
        let cases = [
            Phi::Linear { c: 0.7 },
            Phi::Power { a: 2.0, rho: 0.25 },
            Phi::LogPower { c: 1.5, b: 2.0, q: -2.0 },
        ];
        for phi in cases {
            let closed = rate_functions(phi.clone()).unwrap();
            let p2 = phi.clone();
            let numeric = rate_functions(Phi::Custom(Arc::new(move |v| p2.eval(v)))).unwrap();
            for v in [1.0, 2.0, 10.0, 1e3, 1e6] {
                let (a, b) = (closed.big_phi(v).unwrap(), numeric.big_phi(v).unwrap());
                assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0), "{phi:?} at {v}: {a} vs {b}");
            }
            for t in [0.0, 0.5, 3.0] {
                let (a, b) = (closed.big_phi_inv(t).unwrap(), numeric.big_phi_inv(t).unwrap());
                assert!((a - b).abs() <= 1e-7 * a, "{phi:?} at {t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn rate_bound_examples() {
        let lin = rate_functions(Phi::Linear { c: 1.0 }).unwrap();
        assert!((rate_bound(0.0, 4.0, &lin, 0.5, 1.0, 1.0).unwrap() - 2.0).abs() < 1e-12);
        for t in [0.5, 1.0, 3.0] {
            let env = rate_bound(t, 9.0, &lin, 0.5, 1.0, 2.0).unwrap();
            assert!((env - 2.0 * 3.0 * (-t / 2.0f64).exp()).abs() < 1e-12);
        }
        // larger delta, faster decay once r(ct) > phi(V)
        let a = rate_bound(10.0, 4.0, &lin, 0.3, 1.0, 1.0).unwrap();
        let b = rate_bound(10.0, 4.0, &lin, 0.9, 1.0, 1.0).unwrap();
        assert!(b < a);
        assert!(rate_bound(1.0, 4.0, &lin, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn catalog_shapes() {
        let pr = LyapunovParams::default();
        let s = lyapunov_catalog(1.0, &pr).unwrap();
        assert!(matches!(s.phi, Phi::Linear { .. }));
        let g = TimeGrid::new(0.5, 1.0, 1.0).unwrap();
        let x = Segment::constant(&g, &[-2.0]);
        assert!(((s.v)(x.view()) - 2f64.exp()).abs() < 1e-12);
        match lyapunov_catalog(-0.5, &pr).unwrap().phi {
            Phi::LogPower { q, .. } => assert_eq!(q, -2.0),
            other => panic!("{other:?}"),
        }
        let three = LyapunovParams {
            a_minus1: 2.0,
            sigma_sup_sq: 1.0,
            p: 4.9,
            ..pr
        };
        assert!(lyapunov_catalog(-1.0, &three).is_ok());
        assert!(lyapunov_catalog(-1.0, &LyapunovParams { p: 5.0, ..three }).is_err());
        assert!(lyapunov_catalog(-1.0, &LyapunovParams { a_minus1: 0.4, ..three }).is_err());
        assert!(lyapunov_catalog(-1.5, &pr).is_err());
    }

    #[test]
    fn vacuous_lyapunov_condition_passes() {
        let g = TimeGrid::new(0.05, 0.5, 1.0).unwrap();
        let m = catalog::build("ou-nodelay", &params(&[])).unwrap();
        let spec = LyapunovSpec {
            v: Arc::new(|s| 1.0 + s.now()[0].powi(2)),
            phi: Phi::Linear { c: 0.0 },
            c_v: 1e6,
            h: 0.5,
        };
        let probes = vec![Segment::constant(&g, &[3.0])];
        let out = lyapunov_drift_check(m.as_ref(), &g, &spec, &probes, 200, 1).unwrap();
        assert!(out[0].pass);
    }

    #[test]
    fn deterministic_lyapunov_drift() {
        // sigma = 0: E V(X_h) - V(x) is the flow value exactly
        let g = TimeGrid::new(0.1, 0.5, 1.0).unwrap();
        let m = catalog::build("linear-delay", &params(&[("sigma", 0.0)])).unwrap();
        let spec = LyapunovSpec {
            v: Arc::new(|s| 1.0 + s.now()[0].powi(2)),
            phi: Phi::Linear { c: 0.5 },
            c_v: 1.0,
            h: 1.0,
        };
        let out = lyapunov_drift_check(m.as_ref(), &g, &spec, &[Segment::constant(&g, &[2.0])], 5, 3).unwrap();
        let x_h = 2.0 * 0.9f64.powi(10);
        assert!((out[0].drift - (x_h * x_h - 4.0)).abs() < 1e-12);
        assert_eq!(out[0].half_width, 0.0);
        assert!(out[0].pass);

        let below = LyapunovSpec {
            v: Arc::new(|s| s.now()[0]),
            ..spec
        };
        assert!(matches!(
            lyapunov_drift_check(m.as_ref(), &g, &below, &[Segment::constant(&g, &[0.5])], 5, 3),
            Err(SddeError::LyapunovBelowOne { .. })
        ));
    }

    #[test]
    fn stationary_estimate_examples() {
        let g = TimeGrid::new(0.05, 0.5, 1.0).unwrap();
        let m = catalog::build("linear-delay", &params(&[("sigma", 0.0)])).unwrap();
        let x0 = Segment::constant(&g, &[1.0]);
        let s = stationary_estimate(m.as_ref(), &g, &x0, 40.0, 1.0, 10, 1).unwrap();
        assert_eq!(s.len(), 10);
        assert!(s.iter().all(|seg| seg.sup_norm() < 1e-15));
        assert!(stationary_estimate(m.as_ref(), &g, &x0, 1.0, 1.0, 0, 1).unwrap().is_empty());
        assert!(stationary_estimate(m.as_ref(), &g, &x0, 0.0, 1e300, 4, 1).is_err());
    }

    proptest! {
        #[test]
        fn closed_form_roundtrip(t in 0.0f64..8.0, log_v in 0.0f64..13.8) {
            let v = log_v.exp();
            for phi in [
                Phi::Linear { c: 1.3 },
                Phi::Power { a: 0.8, rho: 1.0 / 3.0 },
                Phi::LogPower { c: 0.9, b: 2.0, q: -2.0 },
                Phi::LogPower { c: 1.0, b: 0.5, q: -0.5 },
            ] {
                let rf = rate_functions(phi).unwrap();
                let back = rf.big_phi(rf.big_phi_inv(t).unwrap()).unwrap();
                prop_assert!((back - t).abs() <= 1e-8 * t.max(1.0));
                let fwd = rf.big_phi_inv(rf.big_phi(v).unwrap()).unwrap();
                prop_assert!((fwd - v).abs() <= 1e-8 * v);
                prop_assert!(rf.r(t + 0.1).unwrap() >= rf.r(t).unwrap());
            }
        }
    }

    #[test]
    fn envelope_of_exact_exponential() {
        let ts = [1.0f64, 2.0, 4.0];
        let vs: Vec<f64> = ts.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        let fit = fit_envelope(&ts, &vs).unwrap();
        assert!((fit.rate - 0.7).abs() < 1e-12);
        assert!((fit.scale - 3.0).abs() < 1e-12);
        let noisy = [1.0, 0.2, 0.3, 0.0];
        let fit = fit_envelope(&[1.0, 2.0, 3.0, 4.0], &noisy).unwrap();
        for (t, v) in [1.0, 2.0, 3.0, 4.0].iter().zip(noisy) {
            assert!(fit.scale * (-fit.rate * t).exp() >= v * (1.0 - 1e-12));
        }
        assert!(fit_envelope(&[1.0], &[1.0]).is_none());
    }
}
