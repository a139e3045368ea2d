//! Built-in scalar models.
//!
//! | id             | drift `a(x)`                                               | diffusion              |
//! |----------------|------------------------------------------------------------|------------------------|
//! | `linear-delay` | `-kappa0 x(0) - kappa1 x(-r)`                              | `sigma`                |
//! | `holder-drift` | `-sign(x(0)) sqrt(abs(x(0))) + c_delay tanh(x(-r))`        | `sigma`                |
//! | `tanh-smooth`  | `-kappa0 x(0) - kappa2 tanh(x(0)) + kappa1 tanh(x(-r))`    | `sigma (1 + rho tanh(x(0)))` |
//! | `prop-kappa`   | `-a x(0) (1 + x(0)^2)^((kappa-1)/2) + b tanh(x(-r))`       | `sigma`                |
//! | `ou-nodelay`   | `-theta x(0)`                                              | `sigma`                |
//!
//! `prop-kappa` behaves like `-a sign(x(0)) |x(0)|^kappa` for large `|x(0)|`,
//! so `(a(x), x(0)) <= -A |x(0)|^(kappa+1)` outside a ball.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Result, SddeError};
use crate::grid::SegView;
use crate::model::{CallbackModel, HolderSpec, SddeModel};

/// Named real parameters of a catalog model.
pub type Params = BTreeMap<String, f64>;

/// One built-in model family.
#[derive(Debug, Clone, Copy)]
pub struct CatalogEntry {
    pub id: &'static str,
    pub description: &'static str,
    /// Parameter names with their defaults.
    pub params: &'static [(&'static str, f64)],
    pub alpha: f64,
    pub beta: f64,
    build: fn(&Resolved) -> Result<CallbackModel>,
    mollify: Option<fn(&Resolved, f64) -> Result<CallbackModel>>,
}

/// Parameters with defaults filled in.
struct Resolved(BTreeMap<&'static str, f64>);

impl Resolved {
    fn get(&self, name: &str) -> f64 {
        self.0[name]
    }
}

impl CatalogEntry {
    fn resolve(&self, params: &Params) -> Result<Resolved> {
        for (k, v) in params {
            if !self.params.iter().any(|(name, _)| name == k) {
                return Err(SddeError::InvalidParameter {
                    name: "model.params",
                    reason: format!("unknown parameter `{k}` for model `{}`", self.id),
                });
            }
            if !v.is_finite() {
                return Err(SddeError::InvalidParameter {
                    name: "model.params",
                    reason: format!("parameter `{k}` must be finite"),
                });
            }
        }
        Ok(Resolved(
            self.params
                .iter()
                .map(|(name, default)| (*name, params.get(*name).copied().unwrap_or(*default)))
                .collect(),
        ))
    }

    pub fn build(&self, params: &Params) -> Result<Arc<dyn SddeModel>> {
        let r = self.resolve(params)?;
        Ok(Arc::new((self.build)(&r)?))
    }

    /// Lipschitz approximation at scale `eps`, for families that have one.
    pub fn mollified(&self, params: &Params, eps: f64) -> Result<Arc<dyn SddeModel>> {
        let f = self
            .mollify
            .ok_or(SddeError::MissingCapability("a mollified family"))?;
        if !(eps > 0.0) {
            return Err(SddeError::invalid("eps", format!("must be positive, got {eps}")));
        }
        let r = self.resolve(params)?;
        Ok(Arc::new(f(&r, eps)?))
    }

    pub fn has_mollifier(&self) -> bool {
        self.mollify.is_some()
    }
}

fn x0(s: SegView<'_>) -> f64 {
    s.now()[0]
}

fn xr(s: SegView<'_>) -> f64 {
    s.earliest()[0]
}

fn sech2(v: f64) -> f64 {
    let c = v.cosh();
    1.0 / (c * c)
}

fn nonzero_sigma(sigma: f64) -> Option<f64> {
    (sigma != 0.0).then(|| 1.0 / sigma.abs())
}

fn constant_noise(model: CallbackModel, sigma: f64) -> CallbackModel {
    if sigma != 0.0 {
        model.with_scalar_inverse()
    } else {
        model
    }
}

fn build_linear(p: &Resolved) -> Result<CallbackModel> {
    let (k0, k1, s) = (p.get("kappa0"), p.get("kappa1"), p.get("sigma"));
    let c = 1.0 + (-k0).max(0.0) + k1.abs();
    let h = HolderSpec::new(1.0, 1.0, c, nonzero_sigma(s))?;
    let m = CallbackModel::scalar(move |x| -k0 * x0(x) - k1 * xr(x), move |_| s, h).with_gradients(
        move |_, u, out| out[0] = -k0 * u.now()[0] - k1 * u.earliest()[0],
        |_, _, out| out[0] = 0.0,
    );
    Ok(constant_noise(m, s))
}

fn holder_local(v: f64) -> f64 {
    -v.signum() * v.abs().sqrt()
}

fn build_holder(p: &Resolved) -> Result<CallbackModel> {
    let (c, s) = (p.get("c_delay"), p.get("sigma"));
    let h = HolderSpec::new(0.5, 1.0, 1.0 + c.abs(), nonzero_sigma(s))?;
    let m = CallbackModel::scalar(move |x| holder_local(x0(x)) + c * xr(x).tanh(), move |_| s, h);
    Ok(constant_noise(m, s))
}

/// Replaces the square root on `[-eps, eps]` by the chord through `(±eps, ∓sqrt(eps))`.
fn mollify_holder(p: &Resolved, eps: f64) -> Result<CallbackModel> {
    let (c, s) = (p.get("c_delay"), p.get("sigma"));
    let slope = 1.0 / eps.sqrt();
    let local = move |v: f64| {
        if v.abs() < eps {
            -slope * v
        } else {
            holder_local(v)
        }
    };
    let h = HolderSpec::new(1.0, 1.0, 1.0 + c.abs(), nonzero_sigma(s))?;
    let m = CallbackModel::scalar(move |x| local(x0(x)) + c * xr(x).tanh(), move |_| s, h);
    Ok(constant_noise(m, s))
}

fn build_tanh(p: &Resolved) -> Result<CallbackModel> {
    let (k0, k1, k2) = (p.get("kappa0"), p.get("kappa1"), p.get("kappa2"));
    let (s, rho) = (p.get("sigma"), p.get("rho"));
    if !(rho.abs() < 1.0) {
        return Err(SddeError::invalid("rho", format!("must satisfy |rho| < 1, got {rho}")));
    }
    if s == 0.0 {
        return Err(SddeError::invalid("sigma", "tanh-smooth needs a non-degenerate diffusion"));
    }
    let c = 1.0 + (-k0).max(0.0) + (-k2).max(0.0) + k1.abs() + (s * rho).abs();
    let inv_bound = 1.0 / (s.abs() * (1.0 - rho.abs()));
    let h = HolderSpec::new(1.0, 1.0, c, Some(inv_bound))?;
    let m = CallbackModel::scalar(
        move |x| -k0 * x0(x) - k2 * x0(x).tanh() + k1 * xr(x).tanh(),
        move |x| s * (1.0 + rho * x0(x).tanh()),
        h,
    )
    .with_scalar_inverse()
    .with_gradients(
        move |x, u, out| {
            out[0] = -(k0 + k2 * sech2(x0(x))) * u.now()[0] + k1 * sech2(xr(x)) * u.earliest()[0]
        },
        move |x, u, out| out[0] = s * rho * sech2(x0(x)) * u.now()[0],
    );
    Ok(m)
}

fn build_prop_kappa(p: &Resolved) -> Result<CallbackModel> {
    let (kappa, a, b, s) = (p.get("kappa"), p.get("a"), p.get("b"), p.get("sigma"));
    if kappa < -1.0 {
        return Err(SddeError::invalid("kappa", format!("must be >= -1, got {kappa}")));
    }
    if !(a > 0.0) {
        return Err(SddeError::invalid("a", format!("must be positive, got {a}")));
    }
    let e = (kappa - 1.0) / 2.0;
    let h = HolderSpec::new(1.0, 1.0, 1.0 + a + b.abs(), nonzero_sigma(s))?;
    let m = CallbackModel::scalar(
        move |x| {
            let v = x0(x);
            -a * v * (1.0 + v * v).powf(e) + b * xr(x).tanh()
        },
        move |_| s,
        h,
    )
    .with_gradients(
        move |x, u, out| {
            let v = x0(x);
            let dv = (1.0 + v * v).powf(e - 1.0) * (1.0 + kappa * v * v);
            out[0] = -a * dv * u.now()[0] + b * sech2(xr(x)) * u.earliest()[0];
        },
        |_, _, out| out[0] = 0.0,
    );
    Ok(constant_noise(m, s))
}

fn build_ou(p: &Resolved) -> Result<CallbackModel> {
    let (theta, s) = (p.get("theta"), p.get("sigma"));
    let h = HolderSpec::new(1.0, 1.0, 1.0 + (-theta).max(0.0), nonzero_sigma(s))?;
    let m = CallbackModel::scalar(move |x| -theta * x0(x), move |_| s, h).with_gradients(
        move |_, u, out| out[0] = -theta * u.now()[0],
        |_, _, out| out[0] = 0.0,
    );
    Ok(constant_noise(m, s))
}

static ENTRIES: &[CatalogEntry] = &[
    CatalogEntry {
        id: "linear-delay",
        description: "linear delay drift -kappa0 x(0) - kappa1 x(-r), constant noise",
        params: &[("kappa0", 1.0), ("kappa1", 0.0), ("sigma", 1.0)],
        alpha: 1.0,
        beta: 1.0,
        build: build_linear,
        mollify: None,
    },
    CatalogEntry {
        id: "holder-drift",
        description: "one-sided 1/2-Hoelder drift -sign(v)|v|^(1/2) + c_delay tanh(x(-r)), constant noise",
        params: &[("c_delay", 0.5), ("sigma", 0.5)],
        alpha: 0.5,
        beta: 1.0,
        build: build_holder,
        mollify: Some(mollify_holder),
    },
    CatalogEntry {
        id: "tanh-smooth",
        description: "smooth tanh-saturated drift with bounded state-dependent noise (C1 coefficients)",
        params: &[
            ("kappa0", 1.0),
            ("kappa1", 0.5),
            ("kappa2", 0.5),
            ("sigma", 0.5),
            ("rho", 0.25),
        ],
        alpha: 1.0,
        beta: 1.0,
        build: build_tanh,
        mollify: None,
    },
    CatalogEntry {
        id: "prop-kappa",
        description: "drift ~ -a sign(x(0))|x(0)|^kappa at infinity plus b tanh(x(-r)), constant noise",
        params: &[("kappa", 1.0), ("a", 1.0), ("b", 0.25), ("sigma", 0.5)],
        alpha: 1.0,
        beta: 1.0,
        build: build_prop_kappa,
        mollify: None,
    },
    CatalogEntry {
        id: "ou-nodelay",
        description: "Ornstein-Uhlenbeck process -theta x(0) embedded as a delay equation",
        params: &[("theta", 1.0), ("sigma", 1.0)],
        alpha: 1.0,
        beta: 1.0,
        build: build_ou,
        mollify: None,
    },
];

/// All built-in model families.
pub fn entries() -> &'static [CatalogEntry] {
    ENTRIES
}

pub fn lookup(id: &str) -> Option<&'static CatalogEntry> {
    ENTRIES.iter().find(|e| e.id == id)
}

/// Builds a catalog model from an id and (possibly partial) parameters.
pub fn build(id: &str, params: &Params) -> Result<Arc<dyn SddeModel>> {
    lookup(id)
        .ok_or_else(|| SddeError::InvalidParameter {
            name: "model.id",
            reason: format!("unknown model `{id}`"),
        })?
        .build(params)
}

/// Convenience for tests and examples: `params(&[("sigma", 0.0)])`.
pub fn params(pairs: &[(&str, f64)]) -> Params {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assumptions::{standard_probe_cloud, verify_assumptions};
    use crate::grid::{Segment, TimeGrid};

    #[test]
    fn every_entry_builds_and_passes_its_declared_assumptions() {
        let g = TimeGrid::new(0.05, 1.0, 1.0).unwrap();
        let cloud = standard_probe_cloud(&g, 1, 2024);
        for e in entries() {
            let m = e.build(&Params::new()).unwrap();
            assert_eq!(m.holder().alpha, e.alpha);
            assert_eq!(m.holder().beta, e.beta);
            let rep = verify_assumptions(m.as_ref(), &cloud);
            assert!(rep.is_clean(), "{}: {rep:?}", e.id);
        }
    }

    #[test]
    fn holder_drift_declares_half() {
        let e = lookup("holder-drift").unwrap();
        assert_eq!((e.alpha, e.beta), (0.5, 1.0));
        assert!(e.has_mollifier());
        assert!(lookup("ou-nodelay").is_some());
    }

    #[test]
    fn unknown_ids_and_params_are_rejected() {
        match build("nope", &Params::new()) {
            Err(SddeError::InvalidParameter { reason, .. }) => assert!(reason.contains("nope")),
            _ => panic!("expected an error"),
        }
        match build("linear-delay", &params(&[("kapa0", 1.0)])) {
            Err(SddeError::InvalidParameter { reason, .. }) => assert!(reason.contains("kapa0")),
            _ => panic!("expected an error"),
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = TimeGrid::new(0.1, 1.0, 1.0).unwrap();
        let x = Segment::from_scalar_fn(&g, |t| 0.7 + 0.4 * (3.0 * t).sin());
        let z = Segment::from_scalar_fn(&g, |t| 1.0 - 0.5 * t * t);
        for id in ["linear-delay", "tanh-smooth", "prop-kappa", "ou-nodelay"] {
            for kappa in [1.0, -0.5, 2.0] {
                let p = if id == "prop-kappa" {
                    params(&[("kappa", kappa)])
                } else {
                    Params::new()
                };
                let m = build(id, &p).unwrap();
                assert!(m.has_gradients());
                let eps = 1e-6;
                let xp = x.add_scaled(eps, &z).unwrap();
                let xm = x.add_scaled(-eps, &z).unwrap();
                let (mut ap, mut am, mut ga) = ([0.0], [0.0], [0.0]);
                m.drift(xp.view(), &mut ap);
                m.drift(xm.view(), &mut am);
                m.drift_gradient(x.view(), z.view(), &mut ga).unwrap();
                assert!(((ap[0] - am[0]) / (2.0 * eps) - ga[0]).abs() < 1e-7, "{id}");
                let (mut sp, mut sm, mut gs) = ([0.0], [0.0], [0.0]);
                m.diffusion(xp.view(), &mut sp);
                m.diffusion(xm.view(), &mut sm);
                m.diffusion_gradient(x.view(), z.view(), &mut gs).unwrap();
                assert!(((sp[0] - sm[0]) / (2.0 * eps) - gs[0]).abs() < 1e-7, "{id}");
            }
        }
    }

    #[test]
    fn mollified_holder_is_close_and_lipschitz() {
        let e = lookup("holder-drift").unwrap();
        let base = e.build(&Params::new()).unwrap();
        let g = TimeGrid::new(0.1, 1.0, 1.0).unwrap();
        for eps in [0.1, 0.01] {
            let m = e.mollified(&Params::new(), eps).unwrap();
            let mut worst: f64 = 0.0;
            for i in -2000..=2000 {
                let v = i as f64 * 1e-3 * eps;
                let s = Segment::constant(&g, &[v]);
                let (mut a, mut b) = ([0.0], [0.0]);
                base.drift(s.view(), &mut a);
                m.drift(s.view(), &mut b);
                worst = worst.max((a[0] - b[0]).abs());
            }
            // max of sqrt(v) - v / sqrt(eps) is sqrt(eps)/4 at v = eps/4
            assert!((worst - eps.sqrt() / 4.0).abs() < 1e-9, "{worst}");
        }
        assert!(lookup("linear-delay").unwrap().mollified(&Params::new(), 0.1).is_err());
    }
}
