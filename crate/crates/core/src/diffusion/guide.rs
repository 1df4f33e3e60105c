use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use super::sampler::ReverseDynamics;
use super::sde::{check_family, DiffusedMixture, ReverseCoefficients, VeSde};
use crate::densities::GaussianMixtureDensity;
use crate::error::{Error, Result};

/// Time-conditioned label model `p~(y_1..y_n | x_t)` used to guide a reverse SDE.
pub trait LabelGuide: Sync {
    fn num_bases(&self) -> usize;

    fn dim(&self) -> usize;

    fn sde(&self) -> VeSde;

    /// `p~(y = i | x_t)`, the mixture weights of the base scores.
    fn label_probs(&self, t: f64, x: &[f64]) -> Result<Vec<f64>>;

    /// `log p~(obs | x_t)`.
    fn log_obs(&self, t: f64, x: &[f64], obs: &[usize]) -> Result<f64>;

    /// `grad_x log p~(obs | x_t)`; central differences with step `1e-4 sigma(t)` by default.
    fn grad_log_obs(&self, t: f64, x: &[f64], obs: &[usize]) -> Result<Vec<f64>> {
        let h = 1e-4 * self.sde().sigma(t);
        let mut probe = x.to_vec();
        let mut grad = vec![0.0; x.len()];
        for k in 0..x.len() {
            probe[k] = x[k] + h;
            let up = self.log_obs(t, &probe, obs)?;
            probe[k] = x[k] - h;
            let down = self.log_obs(t, &probe, obs)?;
            probe[k] = x[k];
            if !(up.is_finite() && down.is_finite()) {
                return Err(Error::AllZeroDensity);
            }
            grad[k] = (up - down) / (2.0 * h);
        }
        Ok(grad)
    }

    /// Label probabilities and guidance gradients for a batch of points.
    fn guidance_batch(&self, t: f64, xs: ArrayView2<f64>, obs: &[usize]) -> Result<(Array2<f64>, Array2<f64>)> {
        let rows: Vec<(Vec<f64>, Vec<f64>)> = xs
            .axis_iter(Axis(0))
            .into_par_iter()
            .map(|row| {
                let x = row.to_vec();
                let grad = if obs.is_empty() { vec![0.0; x.len()] } else { self.grad_log_obs(t, &x, obs)? };
                Ok((self.label_probs(t, &x)?, grad))
            })
            .collect::<Result<_>>()?;
        let m = self.num_bases();
        let mut probs = Array2::zeros((rows.len(), m));
        let mut grads = Array2::zeros((rows.len(), xs.ncols()));
        for (i, (p, g)) in rows.into_iter().enumerate() {
            probs.row_mut(i).assign(&ndarray::ArrayView1::from(p.as_slice()));
            grads.row_mut(i).assign(&ndarray::ArrayView1::from(g.as_slice()));
        }
        Ok((probs, grads))
    }
}

/// Classifier-guided reverse SDE of the composite `p~(x | obs)`:
/// drift `-g^2 (sum_i p~(y = i | x) s_{i,t}(x) + scale grad log p~(obs | x))`.
/// An empty observation list gives the plain mixture SDE.
pub struct ComposedDynamics<'a> {
    dms: &'a [DiffusedMixture],
    guide: &'a dyn LabelGuide,
    obs: Vec<usize>,
    scale: f64,
    sde: VeSde,
}

impl<'a> ComposedDynamics<'a> {
    pub fn new(
        dms: &'a [DiffusedMixture],
        guide: &'a dyn LabelGuide,
        obs: &[usize],
        guidance_scale: f64,
    ) -> Result<Self> {
        if dms.len() != guide.num_bases() {
            return Err(Error::InvalidArgument(format!(
                "guide covers {} bases, got {}",
                guide.num_bases(),
                dms.len()
            )));
        }
        let sde = guide.sde();
        if dms.iter().any(|d| d.sde != sde) {
            return Err(Error::InvalidArgument("bases must share the guide's forward SDE".into()));
        }
        if dms.iter().any(|d| d.dim() != guide.dim()) {
            return Err(Error::InvalidArgument("bases and guide differ in dimension".into()));
        }
        if let Some(&label) = obs.iter().find(|&&l| l >= dms.len()) {
            return Err(Error::LabelOutOfRange { label, num_bases: dms.len() });
        }
        if !guidance_scale.is_finite() {
            return Err(Error::InvalidArgument("guidance scale must be finite".into()));
        }
        Ok(Self { dms, guide, obs: obs.to_vec(), scale: guidance_scale, sde })
    }

    fn marginals(&self, t: f64) -> Result<Vec<GaussianMixtureDensity>> {
        self.dms.iter().map(|d| d.marginal(t)).collect()
    }

    fn drift_row(&self, marginals: &[GaussianMixtureDensity], g2: f64, x: &[f64], probs: &[f64], grad: &[f64]) -> Vec<f64> {
        let mut drift: Vec<f64> = grad.iter().map(|g| -g2 * self.scale * g).collect();
        for (m, p) in marginals.iter().zip(probs) {
            if *p == 0.0 {
                continue;
            }
            for (o, s) in drift.iter_mut().zip(m.score(x)) {
                *o -= g2 * p * s;
            }
        }
        drift
    }
}

impl ReverseDynamics for ComposedDynamics<'_> {
    fn dim(&self) -> usize {
        self.guide.dim()
    }

    fn coefficients(&self, t: f64, xs: ArrayView2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
        let marginals = self.marginals(t)?;
        let g2 = self.sde.g2(t);
        let obs: &[usize] = if self.scale == 0.0 { &[] } else { &self.obs };
        let (probs, grads) = self.guide.guidance_batch(t, xs, obs)?;
        let mut drift = Array2::zeros(xs.dim());
        drift
            .axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(xs.axis_iter(Axis(0)).into_par_iter())
            .zip(probs.axis_iter(Axis(0)).into_par_iter().zip(grads.axis_iter(Axis(0)).into_par_iter()))
            .for_each(|((mut out, x), (p, g))| {
                let row = self.drift_row(&marginals, g2, &x.to_vec(), &p.to_vec(), &g.to_vec());
                out.assign(&ndarray::ArrayView1::from(row.as_slice()));
            });
        Ok((drift, vec![g2.sqrt(); xs.nrows()]))
    }
}

/// Pointwise form of [`ComposedDynamics`]. `weights` must match the guide's
/// label prior where the guide exposes one through `label_probs`.
pub fn composed_backward_drift(
    dms: &[DiffusedMixture],
    weights: &[f64],
    guide: &dyn LabelGuide,
    observations: &[usize],
    t: f64,
    x: &[f64],
    guidance_scale: f64,
) -> Result<ReverseCoefficients> {
    check_family(dms, weights)?;
    let dynamics = ComposedDynamics::new(dms, guide, observations, guidance_scale)?;
    let xs = ndarray::ArrayView2::from_shape((1, x.len()), x)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let (drift, g) = dynamics.coefficients(t, xs)?;
    Ok(ReverseCoefficients { drift: drift.row(0).to_vec(), diffusion: g[0] })
}
