//! Univariate compositions of Gaussian mixtures evaluated on a fixed grid.
//!
//! Compositions of continuous densities have no closed-form normalizer, so
//! they are tabulated on a uniform grid and normalized by composite Simpson.

use super::gaussian::{log_sum_exp, GaussianMixtureDensity};
use super::ops::check_alpha;
use crate::error::{Error, Result};

/// Grid size for tabulated curves. Odd, as Simpson's rule requires.
pub const SIMPSON_POINTS: usize = 4001;
/// Half-width of the tabulation window in component standard deviations.
pub const WINDOW_SDS: f64 = 12.0;

/// Composite Simpson integral of equally spaced samples (odd length).
pub fn simpson(y: &[f64], h: f64) -> f64 {
    assert!(y.len() >= 3 && y.len() % 2 == 1, "simpson needs an odd number of samples");
    let last = y.len() - 1;
    let mut s = y[0] + y[last];
    for (i, v) in y.iter().enumerate().take(last).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * h / 3.0
}

/// A normalized density tabulated on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve1d {
    x: Vec<f64>,
    pdf: Vec<f64>,
    cdf: Vec<f64>,
    log_norm: f64,
}

impl Curve1d {
    /// Tabulates `exp(log_f)` on `n` points over `[lo, hi]` and normalizes it.
    pub fn from_log_fn(lo: f64, hi: f64, n: usize, log_f: impl Fn(f64) -> f64) -> Result<Self> {
        if !(hi > lo) || n < 3 || n % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "bad grid [{lo}, {hi}] with {n} points"
            )));
        }
        let h = (hi - lo) / (n - 1) as f64;
        let x: Vec<f64> = (0..n).map(|i| lo + h * i as f64).collect();
        let logs: Vec<f64> = x.iter().map(|&v| log_f(v)).collect();
        if logs.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(Error::NonFiniteDetected("tabulated log-density".into()));
        }
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::DisjointSupport);
        }
        let raw: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let z = simpson(&raw, h);
        let pdf: Vec<f64> = raw.iter().map(|v| v / z).collect();
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        cdf.push(0.0);
        for i in 1..n {
            acc += 0.5 * h * (pdf[i - 1] + pdf[i]);
            cdf.push(acc);
        }
        for c in &mut cdf {
            *c /= acc;
        }
        Ok(Self { x, pdf, cdf, log_norm: max + z.ln() })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn pdf(&self) -> &[f64] {
        &self.pdf
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    /// Log of the integral of the unnormalized function over the window.
    pub fn log_normalizer(&self) -> f64 {
        self.log_norm
    }

    pub fn step(&self) -> f64 {
        self.x[1] - self.x[0]
    }

    pub fn mean(&self) -> f64 {
        let y: Vec<f64> = self.x.iter().zip(&self.pdf).map(|(x, p)| x * p).collect();
        simpson(&y, self.step())
    }

    /// Linear interpolation of the density; zero outside the window.
    pub fn density_at(&self, x: f64) -> f64 {
        let (lo, hi) = (self.x[0], self.x[self.x.len() - 1]);
        if x < lo || x > hi {
            return 0.0;
        }
        let f = (x - lo) / self.step();
        let i = (f.floor() as usize).min(self.x.len() - 2);
        let w = f - i as f64;
        self.pdf[i] * (1.0 - w) + self.pdf[i + 1] * w
    }

    /// Inverse of the piecewise-linear CDF.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let i = self.cdf.partition_point(|&c| c < u);
        if i == 0 {
            return self.x[0];
        }
        if i >= self.cdf.len() {
            return self.x[self.x.len() - 1];
        }
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let w = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        self.x[i - 1] + w * self.step()
    }

    /// L1 distance to another curve on the same grid.
    pub fn l1_distance(&self, other: &Curve1d) -> Result<f64> {
        if self.x != other.x {
            return Err(Error::InvalidArgument("curves live on different grids".into()));
        }
        let d: Vec<f64> = self.pdf.iter().zip(&other.pdf).map(|(a, b)| (a - b).abs()).collect();
        Ok(simpson(&d, self.step()))
    }
}

fn ensure_univariate(dists: &[&GaussianMixtureDensity]) -> Result<()> {
    if dists.iter().any(|d| d.dim() != 1) {
        return Err(Error::InvalidArgument("curves need univariate mixtures".into()));
    }
    Ok(())
}

fn window(dists: &[&GaussianMixtureDensity]) -> (f64, f64) {
    dists.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
        let (a, b) = d.support_window_1d(WINDOW_SDS);
        (lo.min(a), hi.max(b))
    })
}

fn tabulate(
    dists: &[&GaussianMixtureDensity],
    log_f: impl Fn(&[f64]) -> f64,
) -> Result<Curve1d> {
    ensure_univariate(dists)?;
    let (lo, hi) = window(dists);
    Curve1d::from_log_fn(lo, hi, SIMPSON_POINTS, |x| {
        let logs: Vec<f64> = dists.iter().map(|d| d.log_pdf(&[x])).collect();
        log_f(&logs)
    })
}

/// `p q / (alpha p + (1 - alpha) q)` on the joint window.
pub fn harmonic_mean_curve(
    p: &GaussianMixtureDensity,
    q: &GaussianMixtureDensity,
    alpha: f64,
) -> Result<Curve1d> {
    check_alpha(alpha)?;
    tabulate(&[p, q], |l| {
        l[0] + l[1] - log_sum_exp(&[alpha.ln() + l[0], (1.0 - alpha).ln() + l[1]])
    })
}

/// `p^2 / (alpha p + (1 - alpha) q)` on the joint window.
pub fn contrast_curve(
    p: &GaussianMixtureDensity,
    q: &GaussianMixtureDensity,
    alpha: f64,
) -> Result<Curve1d> {
    check_alpha(alpha)?;
    tabulate(&[p, q], |l| {
        2.0 * l[0] - log_sum_exp(&[alpha.ln() + l[0], (1.0 - alpha).ln() + l[1]])
    })
}

pub fn product_curve(p: &GaussianMixtureDensity, q: &GaussianMixtureDensity) -> Result<Curve1d> {
    tabulate(&[p, q], |l| l[0] + l[1])
}

/// `p / q^gamma` restricted to the window. When the negation is improper the
/// curve is only the truncated shape; check properness separately.
pub fn negation_curve(
    p: &GaussianMixtureDensity,
    q: &GaussianMixtureDensity,
    gamma: f64,
) -> Result<Curve1d> {
    tabulate(&[p, q], |l| l[0] - gamma * l[1])
}

/// Posterior of the uniform mixture given zero-based label observations.
pub fn posterior_curve(dists: &[GaussianMixtureDensity], observations: &[usize]) -> Result<Curve1d> {
    if observations.is_empty() {
        return Err(Error::EmptyObservations);
    }
    let m = dists.len();
    if let Some(&label) = observations.iter().find(|&&l| l >= m) {
        return Err(Error::LabelOutOfRange { label, num_bases: m });
    }
    let refs: Vec<&GaussianMixtureDensity> = dists.iter().collect();
    let exponent = (observations.len() - 1) as f64;
    tabulate(&refs, |l| {
        observations.iter().map(|&k| l[k]).sum::<f64>() - exponent * log_sum_exp(l)
    })
}
