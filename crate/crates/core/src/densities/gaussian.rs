use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A multivariate normal with a dense, symmetric positive-definite covariance
/// stored row-major. Dimensions are small (1 or 2 in practice).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ComponentRepr", into = "ComponentRepr")]
pub struct GaussianComponent {
    mean: Vec<f64>,
    covariance: Vec<f64>,
    chol: Vec<f64>,
    log_det: f64,
}

#[derive(Serialize, Deserialize)]
struct ComponentRepr {
    mean: Vec<f64>,
    covariance: Vec<f64>,
}

impl TryFrom<ComponentRepr> for GaussianComponent {
    type Error = Error;
    fn try_from(r: ComponentRepr) -> Result<Self> {
        GaussianComponent::new_full(r.mean, r.covariance)
    }
}

impl From<GaussianComponent> for ComponentRepr {
    fn from(c: GaussianComponent) -> Self {
        ComponentRepr { mean: c.mean, covariance: c.covariance }
    }
}

impl GaussianComponent {
    pub fn univariate(mean: f64, variance: f64) -> Result<Self> {
        Self::new_full(vec![mean], vec![variance])
    }

    pub fn new_diagonal(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if variances.len() != d {
            return Err(Error::InvalidArgument("mean and variance lengths differ".into()));
        }
        let mut cov = vec![0.0; d * d];
        for (i, v) in variances.into_iter().enumerate() {
            cov[i * d + i] = v;
        }
        Self::new_full(mean, cov)
    }

    pub fn new_full(mean: Vec<f64>, covariance: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || covariance.len() != d * d {
            return Err(Error::InvalidArgument(format!(
                "covariance of length {} does not match dimension {d}",
                covariance.len()
            )));
        }
        if mean.iter().chain(&covariance).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDetected("gaussian parameters".into()));
        }
        for i in 0..d {
            for j in 0..i {
                if (covariance[i * d + j] - covariance[j * d + i]).abs() > 1e-12 {
                    return Err(Error::InvalidArgument("covariance is not symmetric".into()));
                }
            }
        }
        let chol = cholesky(&covariance, d)
            .ok_or_else(|| Error::InvalidArgument("covariance must be positive definite".into()))?;
        let log_det = 2.0 * (0..d).map(|i| chol[i * d + i].ln()).sum::<f64>();
        Ok(Self { mean, covariance, chol, log_det })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    /// Diagonal of the covariance.
    pub fn variances(&self) -> Vec<f64> {
        let d = self.dim();
        (0..d).map(|i| self.covariance[i * d + i]).collect()
    }

    /// Lower Cholesky factor, row-major.
    pub fn cholesky_factor(&self) -> &[f64] {
        &self.chol
    }

    /// `Sigma^{-1} (x - mean)`.
    fn precision_times_residual(&self, x: &[f64]) -> Vec<f64> {
        let r: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        chol_solve(&self.chol, self.dim(), &r)
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let r: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let z = forward_sub(&self.chol, d, &r);
        let maha: f64 = z.iter().map(|v| v * v).sum();
        -0.5 * (d as f64 * LN_2PI + self.log_det + maha)
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.log_pdf(x).exp()
    }

    /// `grad_x log N(x; mean, Sigma) = -Sigma^{-1}(x - mean)`.
    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        self.precision_times_residual(x).into_iter().map(|v| -v).collect()
    }

    /// Same mean with `extra` added to every diagonal entry of the covariance.
    pub fn inflated(&self, extra: f64) -> Result<Self> {
        let d = self.dim();
        let mut cov = self.covariance.clone();
        for i in 0..d {
            cov[i * d + i] += extra;
        }
        Self::new_full(self.mean.clone(), cov)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        (0..d)
            .map(|i| self.mean[i] + (0..=i).map(|j| self.chol[i * d + j] * z[j]).sum::<f64>())
            .collect()
    }
}

/// Weighted Gaussian mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureRepr", into = "MixtureRepr")]
pub struct GaussianMixtureDensity {
    weights: Vec<f64>,
    components: Vec<GaussianComponent>,
}

#[derive(Serialize, Deserialize)]
struct MixtureRepr {
    weights: Vec<f64>,
    components: Vec<GaussianComponent>,
}

impl TryFrom<MixtureRepr> for GaussianMixtureDensity {
    type Error = Error;
    fn try_from(r: MixtureRepr) -> Result<Self> {
        GaussianMixtureDensity::new(r.weights, r.components)
    }
}

impl From<GaussianMixtureDensity> for MixtureRepr {
    fn from(m: GaussianMixtureDensity) -> Self {
        MixtureRepr { weights: m.weights, components: m.components }
    }
}

impl GaussianMixtureDensity {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("mixture needs at least one component".into()));
        }
        if weights.len() != components.len() {
            return Err(Error::BadWeights(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        super::ops::validate_simplex(&weights)?;
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::InvalidArgument("components differ in dimension".into()));
        }
        Ok(Self { weights, components })
    }

    pub fn single(component: GaussianComponent) -> Self {
        Self { weights: vec![1.0], components: vec![component] }
    }

    pub fn univariate(mean: f64, variance: f64) -> Result<Self> {
        Ok(Self::single(GaussianComponent::univariate(mean, variance)?))
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    /// Per-component `log w_c + log N_c(x)`.
    pub fn component_log_terms(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| if *w > 0.0 { w.ln() + c.log_pdf(x) } else { f64::NEG_INFINITY })
            .collect()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.component_log_terms(x))
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.log_pdf(x).exp()
    }

    /// Closed-form score: responsibility-weighted component scores.
    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        let terms = self.component_log_terms(x);
        let lse = log_sum_exp(&terms);
        let mut out = vec![0.0; self.dim()];
        for (t, c) in terms.iter().zip(&self.components) {
            if *t == f64::NEG_INFINITY {
                continue;
            }
            let r = (t - lse).exp();
            for (o, s) in out.iter_mut().zip(c.score(x)) {
                *o += r * s;
            }
        }
        out
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (w, c) in self.weights.iter().zip(&self.components) {
            for (o, m) in out.iter_mut().zip(c.mean()) {
                *o += w * m;
            }
        }
        out
    }

    /// Adds `extra` to the covariance diagonal of every component.
    pub fn inflated(&self, extra: f64) -> Result<Self> {
        let components = self
            .components
            .iter()
            .map(|c| c.inflated(extra))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { weights: self.weights.clone(), components })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = self.components.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = i;
                break;
            }
        }
        self.components[pick].sample(rng)
    }

    /// CDF of a univariate mixture.
    pub fn cdf_1d(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| {
                let sd = c.covariance()[0].sqrt();
                w * 0.5 * libm::erfc(-(x - c.mean()[0]) / (sd * std::f64::consts::SQRT_2))
            })
            .sum()
    }

    /// Quantile of a univariate mixture by bisection on the CDF.
    pub fn quantile_1d(&self, u: f64) -> f64 {
        let (mut lo, mut hi) = self.support_window_1d(40.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf_1d(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 * (1.0 + mid.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// `[min(mu_c - k sd_c), max(mu_c + k sd_c)]` over components.
    pub fn support_window_1d(&self, k: f64) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for c in &self.components {
            let sd = c.covariance()[0].sqrt();
            lo = lo.min(c.mean()[0] - k * sd);
            hi = hi.max(c.mean()[0] + k * sd);
        }
        (lo, hi)
    }
}

pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

fn forward_sub(l: &[f64], d: usize, b: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; d];
    for i in 0..d {
        let s: f64 = (0..i).map(|k| l[i * d + k] * z[k]).sum();
        z[i] = (b[i] - s) / l[i * d + i];
    }
    z
}

fn chol_solve(l: &[f64], d: usize, b: &[f64]) -> Vec<f64> {
    let z = forward_sub(l, d, b);
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let s: f64 = (i + 1..d).map(|k| l[k * d + i] * x[k]).sum();
        x[i] = (z[i] - s) / l[i * d + i];
    }
    x
}

/// Outcome of the energy-negation properness check for two univariate normals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegationDiagnostic {
    pub proper: bool,
    /// Coefficient of `x^2` in `log p1(x) - gamma log p2(x)`.
    pub quadratic: f64,
    /// Coefficient of `x` in the same exponent.
    pub linear: f64,
}

/// Decides whether `N(mu1, s1^2) / N(mu2, s2^2)^gamma` is normalizable.
///
/// The exponent is a quadratic in `x`; the function is integrable iff its
/// leading coefficient is negative. A zero leading coefficient leaves an
/// exponential or a constant, neither of which integrates over the real line.
pub fn gaussian_negation_is_proper(
    c1: &GaussianComponent,
    c2: &GaussianComponent,
    gamma: f64,
) -> Result<NegationDiagnostic> {
    if c1.dim() != 1 || c2.dim() != 1 {
        return Err(Error::InvalidArgument("negation check needs univariate components".into()));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    let (m1, v1) = (c1.mean()[0], c1.covariance()[0]);
    let (m2, v2) = (c2.mean()[0], c2.covariance()[0]);
    let quadratic = (gamma * v1 - v2) / (2.0 * v1 * v2);
    let linear = m1 / v1 - gamma * m2 / v2;
    let proper = quadratic < 0.0;
    Ok(NegationDiagnostic { proper, quadratic, linear })
}
