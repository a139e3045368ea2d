//! Empirical probes of the regularity assumptions a model declares.
//!
//! The checks are advisory: they count violations on a finite probe set and
//! never fail.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{norm2, sup_dist, SegView, Segment, TimeGrid};
use crate::model::SddeModel;
use crate::rng::{derive_seed, stream};

const REL_SLACK: f64 = 1e-9;
const ABS_SLACK: f64 = 1e-12;
const IDENTITY_TOL: f64 = 1e-10;

/// Violation counts per assumption.
///
/// * `h1`: one-sided Hölder drift, `(a(x) - a(y), x(0) - y(0)) <= C ||x - y||^(alpha+1)`
/// * `h2`: Hölder diffusion, `||sigma(x) - sigma(y)||_F <= C ||x - y||^beta`
/// * `h3`: `sigma(x) sigma(x)^{-1} = I` and `||sigma(x)^{-1}||_F` within the declared bound
/// * `h4`: one-sided growth, `(a(x), x(0)) <= C (1 + ||x||^2)`
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssumptionReport {
    pub pairs_checked: usize,
    pub points_checked: usize,
    pub h1_violations: usize,
    pub h2_violations: usize,
    pub h3_violations: usize,
    pub h4_violations: usize,
    /// False when the model has no right inverse, in which case H3 is not probed.
    pub h3_probed: bool,
    /// Largest observed `lhs / rhs` for H1, useful for calibrating `C`.
    pub worst_h1_ratio: f64,
    pub worst_h2_ratio: f64,
}

impl AssumptionReport {
    pub fn total_violations(&self) -> usize {
        self.h1_violations + self.h2_violations + self.h3_violations + self.h4_violations
    }

    pub fn is_clean(&self) -> bool {
        self.total_violations() == 0
    }
}

fn exceeds(lhs: f64, rhs: f64) -> bool {
    lhs > rhs * (1.0 + REL_SLACK) + ABS_SLACK
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Counts violations of the declared assumptions on the given probe pairs.
///
/// Pairs further apart than 1 in sup norm only contribute point checks.
pub fn verify_assumptions(model: &dyn SddeModel, probes: &[(Segment, Segment)]) -> AssumptionReport {
    let h = model.holder();
    let (n, m) = (model.dim_state(), model.dim_noise());
    let c = h.constant;
    let mut rep = AssumptionReport {
        h3_probed: model.has_right_inverse(),
        ..Default::default()
    };
    let (mut ax, mut ay) = (vec![0.0; n], vec![0.0; n]);
    let (mut sx, mut sy) = (vec![0.0; n * m], vec![0.0; n * m]);
    let mut inv = vec![0.0; m * n];

    let mut check_point = |seg: SegView<'_>, rep: &mut AssumptionReport, a: &mut [f64]| {
        rep.points_checked += 1;
        model.drift(seg, a);
        let norm = seg.sup_norm();
        if exceeds(dot(a, seg.now()), c * (1.0 + norm * norm)) {
            rep.h4_violations += 1;
        }
        if rep.h3_probed {
            let mut s = vec![0.0; n * m];
            model.diffusion(seg, &mut s);
            if model.diffusion_right_inverse(seg, &mut inv).is_err() {
                rep.h3_violations += 1;
                return;
            }
            let mut bad = false;
            for i in 0..n {
                for j in 0..n {
                    let prod: f64 = (0..m).map(|k| s[i * m + k] * inv[k * n + j]).sum();
                    let target = if i == j { 1.0 } else { 0.0 };
                    if (prod - target).abs() > IDENTITY_TOL {
                        bad = true;
                    }
                }
            }
            if let Some(bound) = h.inverse_bound {
                if exceeds(norm2(&inv), bound) {
                    bad = true;
                }
            }
            if bad {
                rep.h3_violations += 1;
            }
        }
    };

    for (x, y) in probes {
        let (xv, yv) = (x.view(), y.view());
        check_point(xv, &mut rep, &mut ax);
        check_point(yv, &mut rep, &mut ay);
        let Ok(d) = sup_dist(xv, yv) else { continue };
        if d > 1.0 || d == 0.0 {
            continue;
        }
        rep.pairs_checked += 1;
        let diff0: Vec<f64> = xv.now().iter().zip(yv.now()).map(|(p, q)| p - q).collect();
        let da: Vec<f64> = ax.iter().zip(&ay).map(|(p, q)| p - q).collect();
        let lhs1 = dot(&da, &diff0);
        let rhs1 = c * d.powf(h.alpha + 1.0);
        rep.worst_h1_ratio = rep.worst_h1_ratio.max(lhs1 / rhs1);
        if exceeds(lhs1, rhs1) {
            rep.h1_violations += 1;
        }
        model.diffusion(xv, &mut sx);
        model.diffusion(yv, &mut sy);
        let ds: Vec<f64> = sx.iter().zip(&sy).map(|(p, q)| p - q).collect();
        let lhs2 = norm2(&ds);
        let rhs2 = c * d.powf(h.beta);
        rep.worst_h2_ratio = rep.worst_h2_ratio.max(lhs2 / rhs2);
        if exceeds(lhs2, rhs2) {
            rep.h2_violations += 1;
        }
    }
    rep
}

/// A reproducible cloud of segment pairs covering large amplitudes, the
/// neighbourhood of the origin, and separations from `1e-6` to `1`.
pub fn standard_probe_cloud(grid: &TimeGrid, dim: usize, seed: u64) -> Vec<(Segment, Segment)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, stream::AUXILIARY));
    let len = grid.segment_len();
    let r = grid.r();
    let mut bases: Vec<Segment> = Vec::new();
    for &amp in &[0.0, 1e-4, 1e-3, 0.01, 0.1, 0.5, 1.0, 2.0, 5.0, -1e-3, -0.1, -1.0, -5.0] {
        bases.push(Segment::constant(grid, &vec![amp; dim]));
    }
    for _ in 0..24 {
        let amp = 5.0 * rng.random::<f64>();
        let freq = 0.5 + 3.0 * rng.random::<f64>();
        let phase = std::f64::consts::TAU * rng.random::<f64>();
        let mut values = Vec::with_capacity(len * dim);
        for off in grid.segment_offsets() {
            for d in 0..dim {
                values.push(amp * (freq * off / r.max(1e-12) + phase + d as f64).sin());
            }
        }
        bases.push(Segment::from_values(dim, values).expect("non-empty"));
    }

    let mut pairs = Vec::new();
    for base in &bases {
        for exp in -6..=0 {
            let sep = 10f64.powi(exp);
            // uniform shift
            let shift = Segment::constant(grid, &vec![sep / (dim as f64).sqrt(); dim]);
            pairs.push((base.clone(), base.add_scaled(1.0, &shift).expect("same grid")));
            // random shape, normalised to the target separation
            let mut pert = Segment::from_values(
                dim,
                (0..len * dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
            )
            .expect("non-empty");
            let norm = pert.sup_norm().max(1e-300);
            pert.values_mut().iter_mut().for_each(|v| *v *= sep / norm);
            pairs.push((base.clone(), base.add_scaled(1.0, &pert).expect("same grid")));
        }
    }
    // far-apart pairs exercise the growth bound only
    for w in bases.windows(2) {
        pairs.push((w[0].clone(), w[1].clone()));
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CallbackModel, HolderSpec};

    fn grid() -> TimeGrid {
        TimeGrid::new(0.1, 1.0, 1.0).unwrap()
    }

    #[test]
    fn linear_model_has_no_violations() {
        let h = HolderSpec::new(1.0, 1.0, 1.0, Some(1.0)).unwrap();
        let m = CallbackModel::scalar(|s| -s.now()[0], |_| 1.0, h).with_scalar_inverse();
        let rep = verify_assumptions(&m, &standard_probe_cloud(&grid(), 1, 3));
        assert!(rep.pairs_checked > 100);
        assert!(rep.h3_probed);
        assert!(rep.is_clean(), "{rep:?}");
    }

    #[test]
    fn square_root_drift_breaks_lipschitz_near_origin() {
        // expanding ½-Hölder drift declared as Lipschitz
        let h = HolderSpec::new(1.0, 1.0, 1.0, None).unwrap();
        let m = CallbackModel::scalar(
            |s| {
                let v = s.now()[0];
                v.signum() * v.abs().sqrt()
            },
            |_| 1.0,
            h,
        );
        let rep = verify_assumptions(&m, &standard_probe_cloud(&grid(), 1, 3));
        assert!(rep.h1_violations > 0);
        assert!(!rep.h3_probed);
    }

    #[test]
    fn bad_inverse_is_reported() {
        let h = HolderSpec::new(1.0, 1.0, 1.0, Some(1.0)).unwrap();
        let m = CallbackModel::scalar(|_| 0.0, |_| 2.0, h).with_right_inverse(|_, out| out[0] = 0.4);
        let rep = verify_assumptions(&m, &standard_probe_cloud(&grid(), 1, 3));
        assert!(rep.h3_violations > 0);
        assert_eq!(rep.h1_violations + rep.h2_violations + rep.h4_violations, 0);
    }

    #[test]
    fn unit_diffusion_satisfies_h3() {
        let h = HolderSpec::new(1.0, 1.0, 1.0, Some(1.0)).unwrap();
        let m = CallbackModel::scalar(|_| 0.0, |_| 1.0, h).with_scalar_inverse();
        let rep = verify_assumptions(&m, &standard_probe_cloud(&grid(), 1, 9));
        assert_eq!(rep.h3_violations, 0);
    }
}
