//! Change-of-measure bookkeeping along a controlled path.
//!
//! The ledger tracks, for a Girsanov drift `beta` applied on the simulation
//! grid, the KL integral `½ ∫ |beta|² ds` (left-endpoint sums, exact for
//! piecewise-constant `beta`) and the stochastic exponent
//! `∫ beta · dW - ½ ∫ |beta|² ds`.

use crate::error::{Result, SddeError};

/// Largest log exponent accepted by [`importance_weight`].
const MAX_LOG_WEIGHT: f64 = 700.0;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GirsanovLedger {
    pub kl_half_integral: f64,
    pub log_exponent: f64,
    pub t_elapsed: f64,
}

impl GirsanovLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one grid step with drift `beta` and Brownian increment `dw`.
    pub fn accumulate(&mut self, beta: &[f64], dw: &[f64], dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(SddeError::invalid("dt", format!("must be positive, got {dt}")));
        }
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(SddeError::NonFinite {
                what: "Girsanov drift",
                segment_tail: beta.to_vec(),
            });
        }
        let sq: f64 = beta.iter().map(|b| b * b).sum();
        let stoch: f64 = beta.iter().zip(dw).map(|(b, w)| b * w).sum();
        self.kl_half_integral += 0.5 * sq * dt;
        self.log_exponent += stoch - 0.5 * sq * dt;
        self.t_elapsed += dt;
        Ok(())
    }

    /// Advances time without any drift.
    pub fn idle(&mut self, dt: f64) {
        self.t_elapsed += dt;
    }

    pub fn kl(&self) -> f64 {
        self.kl_half_integral
    }

    pub fn tv_bound(&self) -> f64 {
        // kl_half_integral is non-negative by construction
        (self.kl_half_integral / 2.0).sqrt()
    }
}

/// Functional form of [`GirsanovLedger::accumulate`].
pub fn accumulate(ledger: GirsanovLedger, beta: &[f64], dw: &[f64], dt: f64) -> Result<GirsanovLedger> {
    let mut l = ledger;
    l.accumulate(beta, dw, dt)?;
    Ok(l)
}

/// Pinsker bound on total variation, `sqrt(kl / 2)`.
pub fn pinsker_tv_bound(kl: f64) -> Result<f64> {
    if !(kl >= 0.0) {
        return Err(SddeError::invalid("kl", format!("must be non-negative, got {kl}")));
    }
    Ok((kl / 2.0).sqrt())
}

/// Lower bound `mu(A)/N - (KL + ln 2)/(N ln N)` on the probability of `A` under
/// the reference measure. The raw value is returned, possibly negative.
pub fn diff_lower_bound(mu_a: f64, kl: f64, n: f64) -> Result<f64> {
    if !(n > 1.0) {
        return Err(SddeError::invalid("N", format!("must exceed 1, got {n}")));
    }
    if !(0.0..=1.0).contains(&mu_a) {
        return Err(SddeError::invalid("mu_A", format!("must be a probability, got {mu_a}")));
    }
    if !(kl >= 0.0) {
        return Err(SddeError::invalid("kl", format!("must be non-negative, got {kl}")));
    }
    Ok(mu_a / n - (kl + std::f64::consts::LN_2) / (n * n.ln()))
}

/// The best [`diff_lower_bound`] over a log-spaced grid of `N`, together with
/// the maximising `ln N`.
///
/// The grid spans `ln N` in `[1e-3, 1e5]`; the value is clamped at zero only by
/// the caller.
pub fn best_diff_lower_bound(mu_a: f64, kl: f64) -> Result<(f64, f64)> {
    const POINTS: usize = 4000;
    if !((0.0..=1.0).contains(&mu_a) && kl >= 0.0) {
        return Err(SddeError::invalid("mu_A/kl", format!("need a probability and kl >= 0, got {mu_a}, {kl}")));
    }
    let (lo, hi) = (1e-3f64.ln(), 1e5f64.ln());
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    for i in 0..POINTS {
        let ln_n = (lo + (hi - lo) * i as f64 / (POINTS - 1) as f64).exp();
        // evaluate in log space so that huge N does not overflow
        let value = (-ln_n).exp() * (mu_a - (kl + std::f64::consts::LN_2) / ln_n);
        if value > best.0 {
            best = (value, ln_n);
        }
    }
    Ok(best)
}

/// `exp(log_exponent)`, the density of the uncontrolled law w.r.t. the controlled one.
pub fn importance_weight(ledger: &GirsanovLedger) -> Result<f64> {
    if !(ledger.log_exponent <= MAX_LOG_WEIGHT) {
        return Err(SddeError::WeightOverflow(ledger.log_exponent));
    }
    Ok(ledger.log_exponent.exp())
}
