use sddekit::catalog::{self, params};
use sddekit::ergodicity::{rate_bound, rate_functions, stationary_estimate, Phi};
use sddekit::stats::{ks_critical, ks_statistic};
use sddekit::{Segment, TimeGrid};
use statrs::distribution::{ContinuousCDF, Normal};

#[test]
fn ou_stationary_sample_is_gaussian() {
    let model = catalog::build("ou-nodelay", &params(&[])).unwrap();
    let grid = TimeGrid::new(0.01, 0.1, 1.0).unwrap();
    let x0 = Segment::constant(&grid, &[4.0]);
    let samples = stationary_estimate(model.as_ref(), &grid, &x0, 10.0, 4.0, 500, 21).unwrap();
    let xs: Vec<f64> = samples.iter().map(|s| s.now()[0]).collect();
    let law = Normal::new(0.0, 0.5f64.sqrt()).unwrap();
    let d = ks_statistic(&xs, |x| law.cdf(x));
    assert!(d < ks_critical(xs.len(), 0.01), "KS {d}");
}

#[test]
fn linear_rate_has_closed_forms() {
    let rates = rate_functions(Phi::Linear { c: 0.5 }).unwrap();
    let v = 3f64.exp();
    assert!((rates.big_phi(v).unwrap() - 6.0).abs() < 1e-12);
    assert!((rates.big_phi_inv(6.0).unwrap() - v).abs() < 1e-9 * v);
    // r(t) = phi(Phi^{-1}(t)) = c e^{ct}
    assert!((rates.r(2.0).unwrap() - 0.5 * 1f64.exp()).abs() < 1e-12);
    let b1 = rate_bound(1.0, 10.0, &rates, 0.5, 1.0, 1.0).unwrap();
    let b2 = rate_bound(4.0, 10.0, &rates, 0.5, 1.0, 1.0).unwrap();
    assert!(b2 < b1);
}

#[test]
fn custom_phi_agrees_with_power_closed_form() {
    let closed = rate_functions(Phi::Power { a: 0.7, rho: 0.4 }).unwrap();
    let custom = rate_functions(Phi::Custom(std::sync::Arc::new(|v: f64| 0.7 * v.powf(0.4)))).unwrap();
    for v in [1.5, 10.0, 1e3] {
        let (a, b) = (closed.big_phi(v).unwrap(), custom.big_phi(v).unwrap());
        assert!((a - b).abs() < 1e-8 * a.max(1.0), "{a} vs {b}");
    }
    for t in [0.1, 1.0, 5.0] {
        let (a, b) = (closed.big_phi_inv(t).unwrap(), custom.big_phi_inv(t).unwrap());
        assert!((a - b).abs() < 1e-7 * a, "{a} vs {b}");
    }
}
