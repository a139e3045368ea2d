use sddekit::catalog::{self, params};
use sddekit::coupling::{
    approximation_study, contraction_estimate, run_batch, support_probe, ControlSpec,
};
use sddekit::{Segment, TimeGrid};

#[test]
fn controlled_coupling_contracts_where_synchronous_does_not() {
    let grid = TimeGrid::new(0.01, 1.0, 2.0).unwrap();
    let h = grid.horizon_steps();
    let holder = catalog::build("holder-drift", &params(&[])).unwrap();
    let x = Segment::constant(&grid, &[0.5]);
    let y = Segment::constant(&grid, &[0.51]);
    let spec = ControlSpec::new(0.4);
    let runs = run_batch(holder.as_ref(), &grid, &x, &y, Some(&spec), 200, 3).unwrap();
    let est = contraction_estimate(&runs, h, 0.5).unwrap();
    assert!(est.exceed_prob <= 0.05, "{est:?}");
    let cap = spec.threshold_mult * 0.01f64.powf(0.4);
    for r in &runs {
        assert!(r.max_control_norm() < cap);
    }

    let expanding = catalog::build("linear-delay", &params(&[("kappa0", -1.0)])).unwrap();
    let sync = run_batch(expanding.as_ref(), &grid, &x, &y, None, 200, 3).unwrap();
    assert_eq!(contraction_estimate(&sync, h, 0.5).unwrap().exceed_prob, 1.0);
}

#[test]
fn approximation_study_on_holder_family() {
    let entry = catalog::lookup("holder-drift").unwrap();
    let p = params(&[]);
    let model = entry.build(&p).unwrap();
    let grid = TimeGrid::new(0.01, 1.0, 2.0).unwrap();
    let eps = [0.1, 0.03, 0.01];
    let family: Vec<_> = eps.iter().map(|&e| (e, entry.mollified(&p, e).unwrap())).collect();
    let probes: Vec<Segment> = (-40..=40)
        .map(|i| Segment::constant(&grid, &[i as f64 * 0.0025]))
        .collect();
    let x0 = Segment::constant(&grid, &[0.5]);
    let rows = approximation_study(model.as_ref(), &family, &grid, &x0, 0.4, &probes, 300, 8).unwrap();
    for (row, &e) in rows.iter().zip(&eps) {
        // the chord deviates from sqrt by at most sqrt(eps)/4, so upsilon = eps/16
        assert!((row.upsilon - e / 16.0).abs() < 1e-3 * e, "{row:?}");
        assert_eq!(row.kl_bound_violations, 0);
        assert!(row.kl_max <= row.kl_bound * (1.0 + 1e-12));
    }
    assert!(rows.windows(2).all(|w| w[1].success >= w[0].success), "{rows:?}");
}

#[test]
fn support_probe_reaches_target_with_positive_bound() {
    let model = catalog::build("tanh-smooth", &params(&[])).unwrap();
    let grid = TimeGrid::new(0.01, 1.0, 2.0).unwrap();
    let x = Segment::constant(&grid, &[0.0]);
    let z = Segment::constant(&grid, &[0.5]);
    let p = support_probe(model.as_ref(), &grid, &x, &z, 2.0, 0.25, 50.0, 200, 4).unwrap();
    assert!(p.success_prob >= 0.5, "{p:?}");
    assert!(p.lower_bound > 0.0);
    // without a pull the path rarely lands in a small ball around a distant target
    let far = Segment::constant(&grid, &[2.0]);
    let free = support_probe(model.as_ref(), &grid, &x, &far, 2.0, 0.1, 0.0, 200, 4).unwrap();
    assert!(free.success_prob < 0.05, "{free:?}");
    assert_eq!(free.kl_mean, 0.0);
}
