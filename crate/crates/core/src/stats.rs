//! Small statistical helpers shared by the estimators.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return MeanEstimate {
                mean: f64::NAN,
                std_error: f64::NAN,
                n,
            };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        MeanEstimate { mean, std_error, n }
    }

    /// Half-width of the two-sided normal confidence interval at `level`.
    pub fn half_width(&self, level: f64) -> f64 {
        normal_quantile(0.5 + level / 2.0) * self.std_error
    }
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Ordinary least squares fit `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; zero for exact fits or two points.
    pub slope_se: f64,
    pub n: usize,
}

impl LinearFit {
    pub fn fit(x: &[f64], y: &[f64]) -> Option<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return None;
        }
        let mx = x.iter().sum::<f64>() / n as f64;
        let my = y.iter().sum::<f64>() / n as f64;
        let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
        if sxx <= 0.0 {
            return None;
        }
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let slope_se = if n > 2 {
            let rss: f64 = x
                .iter()
                .zip(y)
                .map(|(a, b)| {
                    let r = b - intercept - slope * a;
                    r * r
                })
                .sum();
            (rss / (n - 2) as f64 / sxx).sqrt()
        } else {
            0.0
        };
        Some(LinearFit {
            slope,
            intercept,
            slope_se,
            n,
        })
    }

    /// Two-sided confidence interval for the slope using Student's t.
    pub fn slope_ci(&self, level: f64) -> (f64, f64) {
        let hw = if self.n > 2 {
            let t = StudentsT::new(0.0, 1.0, (self.n - 2) as f64)
                .map(|d| d.inverse_cdf(0.5 + level / 2.0))
                .unwrap_or(f64::INFINITY);
            t * self.slope_se
        } else {
            0.0
        };
        (self.slope - hw, self.slope + hw)
    }
}

/// One-sample Kolmogorov–Smirnov statistic against a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value `c(alpha) / sqrt(n)`.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_se() {
        let m = MeanEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        let var: f64 = 5.0 / 3.0;
        assert!((m.std_error - (var / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanEstimate::from_samples(&[7.0]).std_error, 0.0);
    }

    #[test]
    fn exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 1.0 - 2.0 * v).collect();
        let f = LinearFit::fit(&x, &y).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-14);
        assert!((f.intercept - 1.0).abs() < 1e-14);
        assert!(f.slope_se < 1e-12);
        assert!(LinearFit::fit(&[1.0, 1.0], &[0.0, 1.0]).is_none());
    }

    #[test]
    fn ks_critical_value() {
        // c(0.05) = 1.358
        assert!((ks_critical(1, 0.05) - 1.3581).abs() < 1e-3);
        let uniform: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_statistic(&uniform, |x| x.clamp(0.0, 1.0)) <= 0.0005 + 1e-12);
    }
}
