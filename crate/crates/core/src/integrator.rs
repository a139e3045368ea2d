//! Euler–Maruyama integration of the segment process.

use rayon::prelude::*;

use crate::error::{Result, SddeError};
use crate::grid::{PathGrid, SegView, Segment, TimeGrid};
use crate::model::{mat_vec, SddeModel};
use crate::rng::{GaussianNoise, NoiseSource};

/// Per-step extra drift: `(step, current segment, out)`.
pub type ControlFn<'a> = dyn FnMut(usize, SegView<'_>, &mut [f64]) + 'a;

/// Scratch buffers reused across steps.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    drift: Vec<f64>,
    diffusion: Vec<f64>,
    noise_term: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(n: usize, m: usize) -> Self {
        Workspace {
            drift: vec![0.0; n],
            diffusion: vec![0.0; n * m],
            noise_term: vec![0.0; n],
        }
    }
}

fn tail(seg: SegView<'_>) -> Vec<f64> {
    seg.now().to_vec()
}

pub(crate) fn em_step_into(
    model: &dyn SddeModel,
    seg: SegView<'_>,
    dw: &[f64],
    dt: f64,
    extra_drift: Option<&[f64]>,
    ws: &mut Workspace,
    out: &mut [f64],
) -> Result<()> {
    let (n, m) = (model.dim_state(), model.dim_noise());
    model.drift(seg, &mut ws.drift);
    if ws.drift.iter().any(|v| !v.is_finite()) {
        return Err(SddeError::NonFinite {
            what: "drift",
            segment_tail: tail(seg),
        });
    }
    model.diffusion(seg, &mut ws.diffusion);
    if ws.diffusion.iter().any(|v| !v.is_finite()) {
        return Err(SddeError::NonFinite {
            what: "diffusion",
            segment_tail: tail(seg),
        });
    }
    mat_vec(&ws.diffusion, n, m, dw, &mut ws.noise_term);
    let x0 = seg.now();
    for i in 0..n {
        let extra = extra_drift.map_or(0.0, |e| e[i]);
        out[i] = x0[i] + (ws.drift[i] + extra) * dt + ws.noise_term[i];
    }
    Ok(())
}

/// One Euler–Maruyama step: `x(0) + (a(x) + extra) dt + sigma(x) dW`.
pub fn em_step(
    model: &dyn SddeModel,
    seg: SegView<'_>,
    dw: &[f64],
    dt: f64,
    extra_drift: &[f64],
) -> Result<Vec<f64>> {
    let (n, m) = (model.dim_state(), model.dim_noise());
    check_dim("segment", n, seg.dim())?;
    check_dim("noise increment", m, dw.len())?;
    check_dim("extra drift", n, extra_drift.len())?;
    let mut ws = Workspace::new(n, m);
    let mut out = vec![0.0; n];
    em_step_into(model, seg, dw, dt, Some(extra_drift), &mut ws, &mut out)?;
    Ok(out)
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(SddeError::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

pub(crate) fn check_init(model: &dyn SddeModel, grid: &TimeGrid, init: &Segment) -> Result<()> {
    check_dim("initial segment", model.dim_state(), init.dim())?;
    if init.len() != grid.segment_len() {
        return Err(SddeError::GridMismatch(format!(
            "initial segment has {} points, grid needs {}",
            init.len(),
            grid.segment_len()
        )));
    }
    Ok(())
}

/// Integrates `grid.horizon_steps()` steps from `init`, recording every increment.
///
/// `control`, when given, is called before each step and returns an extra drift.
pub fn em_simulate(
    model: &dyn SddeModel,
    grid: &TimeGrid,
    init: &Segment,
    noise: &mut dyn NoiseSource,
    mut control: Option<&mut ControlFn<'_>>,
) -> Result<PathGrid> {
    check_init(model, grid, init)?;
    let (n, m) = (model.dim_state(), model.dim_noise());
    let dt = grid.dt();
    let mut path = PathGrid::with_initial(*grid, init, m);
    let mut ws = Workspace::new(n, m);
    let mut dw = vec![0.0; m];
    let mut extra = vec![0.0; n];
    let mut next = vec![0.0; n];
    for k in 0..grid.horizon_steps() {
        noise.next_increment(&mut dw).map_err(|e| e.at_step(k))?;
        let seg = path.segment_unchecked(k);
        let extra_ref = match control.as_mut() {
            Some(c) => {
                extra.iter_mut().for_each(|v| *v = 0.0);
                c(k, seg, &mut extra);
                Some(&extra[..])
            }
            None => None,
        };
        em_step_into(model, seg, &dw, dt, extra_ref, &mut ws, &mut next).map_err(|e| e.at_step(k))?;
        path.push(&next, &dw);
    }
    Ok(path)
}

/// Simulates `n_paths` independent uncontrolled paths from `init`, in parallel.
///
/// Path `i` uses the base-noise stream derived from `(master_seed, i)`, so the
/// output is independent of the worker count.
pub fn simulate_batch(
    model: &dyn SddeModel,
    grid: &TimeGrid,
    init: &Segment,
    n_paths: usize,
    master_seed: u64,
) -> Result<Vec<PathGrid>> {
    check_init(model, grid, init)?;
    (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut noise = GaussianNoise::for_path(master_seed, i, grid.dt());
            em_simulate(model, grid, init, &mut noise, None)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CallbackModel, HolderSpec};
    use crate::rng::ReplayNoise;

    fn holder() -> HolderSpec {
        HolderSpec::new(1.0, 1.0, 1.0, Some(1.0)).unwrap()
    }

    fn grid() -> TimeGrid {
        TimeGrid::new(0.1, 1.0, 1.0).unwrap()
    }

    #[test]
    fn em_step_examples() {
        let g = grid();
        let zero_model = CallbackModel::scalar(|_| 0.0, |_| 0.0, holder());
        let seg = Segment::constant(&g, &[0.3]);
        assert_eq!(em_step(&zero_model, seg.view(), &[0.7], 0.1, &[0.0]).unwrap(), vec![0.3]);

        let decay = CallbackModel::scalar(|s| -s.now()[0], |_| 0.0, holder());
        let one = Segment::constant(&g, &[1.0]);
        let x = em_step(&decay, one.view(), &[0.0], 0.1, &[0.0]).unwrap();
        assert!((x[0] - 0.9).abs() < 1e-15);

        let zero = Segment::zeros(&g, 1);
        let x = em_step(&zero_model, zero.view(), &[0.0], 0.1, &[0.5]).unwrap();
        assert!((x[0] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn em_step_reports_non_finite_drift() {
        let g = grid();
        let bad = CallbackModel::scalar(|s| 1.0 / s.now()[0], |_| 0.0, holder());
        let zero = Segment::zeros(&g, 1);
        match em_step(&bad, zero.view(), &[0.0], 0.1, &[0.0]) {
            Err(SddeError::NonFinite { what, segment_tail }) => {
                assert_eq!(what, "drift");
                assert_eq!(segment_tail, vec![0.0]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut noise = ReplayNoise::new(&[0.0; 10]);
        let err = em_simulate(&bad, &g, &zero, &mut noise, None).unwrap_err();
        assert!(matches!(err, SddeError::AtStep { step: 0, .. }));
    }

    #[test]
    fn zero_coefficients_give_constant_path() {
        let g = grid();
        let m = CallbackModel::scalar(|_| 0.0, |_| 0.0, holder());
        let init = Segment::constant(&g, &[1.5]);
        let mut noise = GaussianNoise::new(1, g.dt());
        let p = em_simulate(&m, &g, &init, &mut noise, None).unwrap();
        assert!(p.states().iter().all(|&v| v == 1.5));
        for k in 0..=g.horizon_steps() {
            assert_eq!(p.segment_at(k).unwrap().to_segment(), init);
        }
    }

    #[test]
    fn replay_is_bit_exact() {
        let g = TimeGrid::new(0.01, 0.5, 2.0).unwrap();
        let m = CallbackModel::scalar(
            |s| -s.now()[0] + 0.5 * s.earliest()[0].sin(),
            |s| 1.0 + 0.1 * s.now()[0].cos(),
            holder(),
        );
        let init = Segment::from_scalar_fn(&g, |t| 1.0 + t);
        let mut noise = GaussianNoise::new(99, g.dt());
        let p = em_simulate(&m, &g, &init, &mut noise, None).unwrap();
        let mut replay = ReplayNoise::new(p.noise());
        let q = em_simulate(&m, &g, &init, &mut replay, None).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn control_is_added_to_drift() {
        let g = grid();
        let m = CallbackModel::scalar(|_| 0.0, |_| 0.0, holder());
        let init = Segment::zeros(&g, 1);
        let mut noise = ReplayNoise::new(&[0.0; 10]);
        let mut ctl = |_k: usize, _s: SegView<'_>, out: &mut [f64]| out[0] = 1.0;
        let p = em_simulate(&m, &g, &init, &mut noise, Some(&mut ctl)).unwrap();
        assert!((p.state(10)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overlapping_segments_agree() {
        let g = TimeGrid::new(0.1, 0.5, 2.0).unwrap();
        let m = CallbackModel::scalar(|s| -s.earliest()[0], |_| 1.0, holder());
        let init = Segment::constant(&g, &[1.0]);
        let mut noise = GaussianNoise::new(5, g.dt());
        let p = em_simulate(&m, &g, &init, &mut noise, None).unwrap();
        let l = g.delay_steps();
        for k in 0..p.steps() {
            let a = p.segment_at(k).unwrap();
            let b = p.segment_at(k + 1).unwrap();
            for i in 1..=l {
                assert_eq!(a.point(i), b.point(i - 1));
            }
        }
    }
}
