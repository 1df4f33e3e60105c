use crate::densities::{Curve1d, GaussianMixtureDensity};
use crate::error::{Error, Result};

/// Points of the quantile grid used by [`wasserstein1`].
pub const QUANTILE_POINTS: usize = 10_000;

/// A univariate distribution with a quantile function.
pub trait Quantile1d {
    fn quantile(&self, u: f64) -> f64;
}

impl Quantile1d for GaussianMixtureDensity {
    fn quantile(&self, u: f64) -> f64 {
        self.quantile_1d(u)
    }
}

impl Quantile1d for Curve1d {
    fn quantile(&self, u: f64) -> f64 {
        Curve1d::quantile(self, u)
    }
}

/// Empirical distribution of a sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Empirical(Vec<f64>);

impl Empirical {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty sample".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDetected("sample".into()));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self(samples))
    }
}

impl Quantile1d for Empirical {
    fn quantile(&self, u: f64) -> f64 {
        let n = self.0.len();
        self.0[((u * n as f64) as usize).min(n - 1)]
    }
}

/// `W1 = int_0^1 |F^-1(u) - G^-1(u)| du` between the empirical distribution
/// of `samples` and `target`, by the midpoint rule on a uniform grid in `u`.
pub fn wasserstein1(samples: &[f64], target: &dyn Quantile1d) -> Result<f64> {
    let emp = Empirical::new(samples.to_vec())?;
    let k = QUANTILE_POINTS as f64;
    Ok((0..QUANTILE_POINTS)
        .map(|i| {
            let u = (i as f64 + 0.5) / k;
            (emp.quantile(u) - target.quantile(u)).abs()
        })
        .sum::<f64>()
        / k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_point_masses_are_at_distance_zero() {
        let e = Empirical::new(vec![2.0; 10]).unwrap();
        assert_eq!(wasserstein1(&[2.0; 7], &e).unwrap(), 0.0);
    }

    #[test]
    fn shift_of_a_gaussian() {
        // Quantiles of N(0.3, 1) via the mixture's own quantile function.
        let target = GaussianMixtureDensity::univariate(0.0, 1.0).unwrap();
        let shifted = GaussianMixtureDensity::univariate(0.3, 1.0).unwrap();
        let xs: Vec<f64> = (0..QUANTILE_POINTS).map(|i| shifted.quantile_1d((i as f64 + 0.5) / 1e4)).collect();
        assert!((wasserstein1(&xs, &target).unwrap() - 0.3).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_samples() {
        let t = GaussianMixtureDensity::univariate(0.0, 1.0).unwrap();
        assert!(wasserstein1(&[], &t).is_err());
        assert!(wasserstein1(&[f64::NAN], &t).is_err());
    }
}
