use serde::{Deserialize, Serialize};

use crate::densities::{log_sum_exp, validate_simplex, GaussianMixtureDensity};
use crate::error::{Error, Result};

/// Variance-exploding SDE on `[0, 1]`: zero drift and
/// `sigma(t) = sigma_min (sigma_max / sigma_min)^t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VeSde {
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for VeSde {
    fn default() -> Self {
        Self { sigma_min: 0.01, sigma_max: 10.0 }
    }
}

impl VeSde {
    pub const HORIZON: f64 = 1.0;

    pub fn new(sigma_min: f64, sigma_max: f64) -> Result<Self> {
        if !(sigma_min > 0.0 && sigma_max > sigma_min && sigma_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < sigma_min < sigma_max, got {sigma_min} and {sigma_max}"
            )));
        }
        Ok(Self { sigma_min, sigma_max })
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if (0.0..=Self::HORIZON).contains(&t) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("time {t} outside [0, {}]", Self::HORIZON)))
        }
    }

    pub fn sigma(&self, t: f64) -> f64 {
        self.sigma_min * (self.sigma_max / self.sigma_min).powf(t)
    }

    /// `g(t)^2 = d sigma(t)^2 / dt`.
    pub fn g2(&self, t: f64) -> f64 {
        let s = self.sigma(t);
        2.0 * s * s * (self.sigma_max / self.sigma_min).ln()
    }

    /// Variance added between time 0 and `t`: `sigma(t)^2 - sigma(0)^2`.
    pub fn added_variance(&self, t: f64) -> f64 {
        let s = self.sigma(t);
        (s * s - self.sigma_min * self.sigma_min).max(0.0)
    }
}

/// A base density together with the forward SDE that diffuses it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusedMixture {
    pub base: GaussianMixtureDensity,
    pub sde: VeSde,
}

impl DiffusedMixture {
    pub fn new(base: GaussianMixtureDensity, sde: VeSde) -> Self {
        Self { base, sde }
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn marginal(&self, t: f64) -> Result<GaussianMixtureDensity> {
        self.sde.check_time(t)?;
        self.base.inflated(self.sde.added_variance(t))
    }
}

pub fn diffused_marginal(dm: &DiffusedMixture, t: f64) -> Result<GaussianMixtureDensity> {
    dm.marginal(t)
}

pub fn analytic_score(dm: &DiffusedMixture, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    check_point(dm.dim(), x)?;
    Ok(dm.marginal(t)?.score(x))
}

fn check_point(d: usize, x: &[f64]) -> Result<()> {
    if x.len() != d {
        return Err(Error::ShapeMismatch { left: vec![d], right: vec![x.len()] });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteDetected("query point".into()));
    }
    Ok(())
}

/// Validates a family of bases and returns their shared SDE.
pub(crate) fn shared_sde(dms: &[DiffusedMixture], weights: &[f64]) -> Result<VeSde> {
    check_family(dms, weights)?;
    let sde = dms[0].sde;
    if dms.iter().any(|d| d.sde != sde) {
        return Err(Error::InvalidArgument("bases must share one forward SDE".into()));
    }
    Ok(sde)
}

pub(crate) fn check_family(dms: &[DiffusedMixture], weights: &[f64]) -> Result<()> {
    if dms.is_empty() {
        return Err(Error::InvalidArgument("no bases".into()));
    }
    if weights.len() != dms.len() {
        return Err(Error::BadWeights(format!("{} weights for {} bases", weights.len(), dms.len())));
    }
    validate_simplex(weights)?;
    let d = dms[0].dim();
    if dms.iter().any(|m| m.dim() != d) {
        return Err(Error::InvalidArgument("bases have different dimensions".into()));
    }
    Ok(())
}

/// `w_i p_{i,t}(x) / sum_j w_j p_{j,t}(x)`, each base under its own SDE.
pub fn label_posterior(dms: &[DiffusedMixture], weights: &[f64], t: f64, x: &[f64]) -> Result<Vec<f64>> {
    check_family(dms, weights)?;
    check_point(dms[0].dim(), x)?;
    let logs = dms
        .iter()
        .zip(weights)
        .map(|(d, w)| {
            Ok(if *w > 0.0 { w.ln() + d.marginal(t)?.log_pdf(x) } else { f64::NEG_INFINITY })
        })
        .collect::<Result<Vec<f64>>>()?;
    normalize_logs(&logs)
}

pub(crate) fn normalize_logs(logs: &[f64]) -> Result<Vec<f64>> {
    let lse = log_sum_exp(logs);
    if !lse.is_finite() {
        return Err(Error::AllZeroDensity);
    }
    Ok(logs.iter().map(|l| (l - lse).exp()).collect())
}

/// Reverse-time coefficients `(drift, diffusion)` of `dx = drift dt + g dw`
/// integrated from `t = 1` down to 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ReverseCoefficients {
    pub drift: Vec<f64>,
    pub diffusion: f64,
}

/// Reverse drift of the mixture SDE for bases sharing one SDE:
/// `-g^2 sum_i p(y = i | x_t) s_{i,t}(x)` with diffusion `g`.
pub fn mixture_backward_drift(
    dms: &[DiffusedMixture],
    weights: &[f64],
    t: f64,
    x: &[f64],
) -> Result<ReverseCoefficients> {
    let sde = shared_sde(dms, weights)?;
    let probs = label_posterior(dms, weights, t, x)?;
    let g2 = sde.g2(t);
    let mut drift = vec![0.0; x.len()];
    for (d, p) in dms.iter().zip(&probs) {
        if *p == 0.0 {
            continue;
        }
        for (o, s) in drift.iter_mut().zip(analytic_score(d, t, x)?) {
            *o -= g2 * p * s;
        }
    }
    Ok(ReverseCoefficients { drift, diffusion: g2.sqrt() })
}

/// Reverse coefficients of the mixture SDE when every base has its own VE
/// SDE: forward diffusion `g_M^2 = sum_i p(y = i | x) g_i^2` and reverse drift
/// `-sum_i p(y = i | x) g_i^2 s_{i,t}(x)`.
pub fn mixture_backward_drift_general(
    dms: &[DiffusedMixture],
    weights: &[f64],
    t: f64,
    x: &[f64],
) -> Result<ReverseCoefficients> {
    let probs = label_posterior(dms, weights, t, x)?;
    let mut drift = vec![0.0; x.len()];
    let mut gm2 = 0.0;
    for (d, p) in dms.iter().zip(&probs) {
        if *p == 0.0 {
            continue;
        }
        let g2 = d.sde.g2(t);
        gm2 += p * g2;
        for (o, s) in drift.iter_mut().zip(analytic_score(d, t, x)?) {
            *o -= g2 * p * s;
        }
    }
    Ok(ReverseCoefficients { drift, diffusion: gm2.sqrt() })
}
