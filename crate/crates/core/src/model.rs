//! The SDDE model contract and a closure-backed implementation.

use crate::error::{Result, SddeError};
use crate::grid::SegView;

/// Declared regularity of a model's coefficients.
///
/// `alpha` is the one-sided Hölder index of the drift, `beta` the Hölder index
/// of the diffusion, `constant` the shared constant `C` of both conditions and
/// of the one-sided growth bound. `inverse_bound` is the declared
/// `sup ||sigma^{-1}||_F` when the diffusion has a right inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderSpec {
    pub alpha: f64,
    pub beta: f64,
    pub constant: f64,
    pub inverse_bound: Option<f64>,
}

impl HolderSpec {
    pub fn new(alpha: f64, beta: f64, constant: f64, inverse_bound: Option<f64>) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(SddeError::invalid("alpha", format!("must lie in (0, 1], got {alpha}")));
        }
        if !(beta > 0.5 && beta <= 1.0) {
            return Err(SddeError::invalid("beta", format!("must lie in (1/2, 1], got {beta}")));
        }
        if !(constant > 0.0 && constant.is_finite()) {
            return Err(SddeError::invalid("constant", format!("must be positive, got {constant}")));
        }
        if let Some(b) = inverse_bound {
            if !(b > 0.0 && b.is_finite()) {
                return Err(SddeError::invalid("inverse_bound", format!("must be positive, got {b}")));
            }
        }
        Ok(HolderSpec {
            alpha,
            beta,
            constant,
            inverse_bound,
        })
    }

    /// Upper end of the admissible coupling exponent range, `alpha ∧ (2 beta - 1)`.
    pub fn gamma_limit(&self) -> f64 {
        self.alpha.min(2.0 * self.beta - 1.0)
    }
}

/// Coefficients of `dX = a(X_t) dt + sigma(X_t) dW` on segments.
///
/// Implementations must be callable concurrently from several workers.
/// Matrices are written row-major: the diffusion is `n x m`, its right
/// inverse `m x n`.
pub trait SddeModel: Send + Sync {
    fn dim_state(&self) -> usize;

    fn dim_noise(&self) -> usize;

    fn drift(&self, seg: SegView<'_>, out: &mut [f64]);

    fn diffusion(&self, seg: SegView<'_>, out: &mut [f64]);

    fn holder(&self) -> HolderSpec;

    fn has_right_inverse(&self) -> bool {
        false
    }

    fn diffusion_right_inverse(&self, _seg: SegView<'_>, _out: &mut [f64]) -> Result<()> {
        Err(SddeError::MissingCapability("a diffusion right inverse"))
    }

    fn has_gradients(&self) -> bool {
        false
    }

    /// Directional derivative `<grad a(seg), dir>`.
    fn drift_gradient(&self, _seg: SegView<'_>, _dir: SegView<'_>, _out: &mut [f64]) -> Result<()> {
        Err(SddeError::MissingCapability("drift gradients"))
    }

    /// Directional derivative `<grad sigma(seg), dir>`, an `n x m` matrix.
    fn diffusion_gradient(
        &self,
        _seg: SegView<'_>,
        _dir: SegView<'_>,
        _out: &mut [f64],
    ) -> Result<()> {
        Err(SddeError::MissingCapability("diffusion gradients"))
    }
}

type PointFn = Box<dyn Fn(SegView<'_>, &mut [f64]) + Send + Sync>;
type DirFn = Box<dyn Fn(SegView<'_>, SegView<'_>, &mut [f64]) + Send + Sync>;

enum Inverse {
    None,
    /// `1 / sigma` for `n = m = 1`.
    ScalarReciprocal,
    Callback(PointFn),
}

/// A model assembled from user callbacks.
pub struct CallbackModel {
    n: usize,
    m: usize,
    drift: PointFn,
    diffusion: PointFn,
    inverse: Inverse,
    gradients: Option<(DirFn, DirFn)>,
    holder: HolderSpec,
}

impl std::fmt::Debug for CallbackModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CallbackModel")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("holder", &self.holder)
            .finish_non_exhaustive()
    }
}

impl CallbackModel {
    pub fn new(
        n: usize,
        m: usize,
        drift: impl Fn(SegView<'_>, &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(SegView<'_>, &mut [f64]) + Send + Sync + 'static,
        holder: HolderSpec,
    ) -> Self {
        CallbackModel {
            n,
            m,
            drift: Box::new(drift),
            diffusion: Box::new(diffusion),
            inverse: Inverse::None,
            gradients: None,
            holder,
        }
    }

    /// One-dimensional model from scalar drift and diffusion functions.
    pub fn scalar(
        drift: impl Fn(SegView<'_>) -> f64 + Send + Sync + 'static,
        diffusion: impl Fn(SegView<'_>) -> f64 + Send + Sync + 'static,
        holder: HolderSpec,
    ) -> Self {
        Self::new(
            1,
            1,
            move |s, out| out[0] = drift(s),
            move |s, out| out[0] = diffusion(s),
            holder,
        )
    }

    pub fn with_right_inverse(
        mut self,
        inverse: impl Fn(SegView<'_>, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.inverse = Inverse::Callback(Box::new(inverse));
        self
    }

    /// Uses `1 / sigma` as the right inverse; only meaningful for scalar models.
    pub fn with_scalar_inverse(mut self) -> Self {
        assert!(self.n == 1 && self.m == 1, "scalar inverse needs n = m = 1");
        self.inverse = Inverse::ScalarReciprocal;
        self
    }

    pub fn with_gradients(
        mut self,
        drift_gradient: impl Fn(SegView<'_>, SegView<'_>, &mut [f64]) + Send + Sync + 'static,
        diffusion_gradient: impl Fn(SegView<'_>, SegView<'_>, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.gradients = Some((Box::new(drift_gradient), Box::new(diffusion_gradient)));
        self
    }
}

impl SddeModel for CallbackModel {
    fn dim_state(&self) -> usize {
        self.n
    }

    fn dim_noise(&self) -> usize {
        self.m
    }

    fn drift(&self, seg: SegView<'_>, out: &mut [f64]) {
        (self.drift)(seg, out)
    }

    fn diffusion(&self, seg: SegView<'_>, out: &mut [f64]) {
        (self.diffusion)(seg, out)
    }

    fn holder(&self) -> HolderSpec {
        self.holder
    }

    fn has_right_inverse(&self) -> bool {
        !matches!(self.inverse, Inverse::None)
    }

    fn diffusion_right_inverse(&self, seg: SegView<'_>, out: &mut [f64]) -> Result<()> {
        match &self.inverse {
            Inverse::None => Err(SddeError::MissingCapability("a diffusion right inverse")),
            Inverse::ScalarReciprocal => {
                let mut s = [0.0];
                (self.diffusion)(seg, &mut s);
                out[0] = 1.0 / s[0];
                Ok(())
            }
            Inverse::Callback(f) => {
                f(seg, out);
                Ok(())
            }
        }
    }

    fn has_gradients(&self) -> bool {
        self.gradients.is_some()
    }

    fn drift_gradient(&self, seg: SegView<'_>, dir: SegView<'_>, out: &mut [f64]) -> Result<()> {
        let (da, _) = self
            .gradients
            .as_ref()
            .ok_or(SddeError::MissingCapability("drift gradients"))?;
        da(seg, dir, out);
        Ok(())
    }

    fn diffusion_gradient(&self, seg: SegView<'_>, dir: SegView<'_>, out: &mut [f64]) -> Result<()> {
        let (_, ds) = self
            .gradients
            .as_ref()
            .ok_or(SddeError::MissingCapability("diffusion gradients"))?;
        ds(seg, dir, out);
        Ok(())
    }
}

/// Multiplies the row-major `rows x cols` matrix `a` by `v`, writing into `out`.
pub(crate) fn mat_vec(a: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    for i in 0..rows {
        out[i] = a[i * cols..(i + 1) * cols]
            .iter()
            .zip(v)
            .map(|(x, y)| x * y)
            .sum();
    }
}
