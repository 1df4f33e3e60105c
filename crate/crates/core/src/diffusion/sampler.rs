use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::guide::LabelGuide;
use super::sde::{check_family, DiffusedMixture, ReverseCoefficients, VeSde};
use crate::error::{Error, Result};

/// Coefficients of a reverse-time SDE `dx = drift dt + g dw`, evaluated for
/// a batch of states (one per row).
pub trait ReverseDynamics: Sync {
    fn dim(&self) -> usize;

    /// Drift rows and one diffusion coefficient per row.
    fn coefficients(&self, t: f64, xs: ArrayView2<f64>) -> Result<(Array2<f64>, Vec<f64>)>;
}

/// Reverse dynamics from a per-point function, evaluated in parallel.
pub struct PointwiseDynamics<F> {
    dim: usize,
    f: F,
}

impl<F> PointwiseDynamics<F>
where
    F: Fn(f64, &[f64]) -> Result<ReverseCoefficients> + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> ReverseDynamics for PointwiseDynamics<F>
where
    F: Fn(f64, &[f64]) -> Result<ReverseCoefficients> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn coefficients(&self, t: f64, xs: ArrayView2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
        let rows: Vec<ReverseCoefficients> = xs
            .axis_iter(Axis(0))
            .into_par_iter()
            .map(|row| (self.f)(t, &row.to_vec()))
            .collect::<Result<_>>()?;
        let mut drift = Array2::zeros(xs.dim());
        let mut g = Vec::with_capacity(rows.len());
        for (i, r) in rows.into_iter().enumerate() {
            drift.row_mut(i).assign(&ndarray::ArrayView1::from(r.drift.as_slice()));
            g.push(r.diffusion);
        }
        Ok((drift, g))
    }
}

/// Integrates the reverse SDE from `t = 1` down to 0 with `steps` fixed
/// Euler-Maruyama steps, starting from the rows of `initial`:
/// `x <- x - drift(t, x) dt + g(t, x) sqrt(dt) z`.
///
/// Path `i` draws its noise from its own ChaCha stream, so results do not
/// depend on the thread count.
pub fn euler_maruyama(
    dynamics: &dyn ReverseDynamics,
    initial: Array2<f64>,
    steps: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("need at least one step".into()));
    }
    if initial.ncols() != dynamics.dim() {
        return Err(Error::ShapeMismatch { left: vec![dynamics.dim()], right: vec![initial.ncols()] });
    }
    let mut rngs: Vec<ChaCha8Rng> = (0..initial.nrows())
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64);
            r
        })
        .collect();
    let dt = VeSde::HORIZON / steps as f64;
    let sq = dt.sqrt();
    let mut x = initial;
    for k in 0..steps {
        let t = VeSde::HORIZON - k as f64 * dt;
        let (drift, g) = dynamics.coefficients(t, x.view())?;
        x.axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(drift.axis_iter(Axis(0)).into_par_iter())
            .zip(rngs.par_iter_mut().zip(g.par_iter()))
            .for_each(|((mut row, d), (rng, g))| {
                for (v, dv) in row.iter_mut().zip(d.iter()) {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += -dv * dt + g * sq * z;
                }
            });
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDetected(format!("sampler state at t = {t}")));
        }
    }
    Ok(x)
}

/// `n` draws from the weighted mixture of the bases diffused to `t = 1`.
pub fn prior_samples(dms: &[DiffusedMixture], weights: &[f64], n: usize, seed: u64) -> Result<Array2<f64>> {
    check_family(dms, weights)?;
    let marginals = dms.iter().map(|d| d.marginal(VeSde::HORIZON)).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = dms[0].dim();
    let mut out = Array2::zeros((n, d));
    for mut row in out.axis_iter_mut(Axis(0)) {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc && *w > 0.0 {
                pick = i;
                break;
            }
        }
        row.assign(&ndarray::ArrayView1::from(marginals[pick].sample(&mut rng).as_slice()));
    }
    Ok(out)
}

/// Draws from `p_M,1(x) p~(obs | x)` by resampling `oversample * n` prior
/// draws with weights `p~(obs | x)`.
pub fn guided_prior_samples(
    dms: &[DiffusedMixture],
    weights: &[f64],
    guide: &dyn LabelGuide,
    obs: &[usize],
    n: usize,
    oversample: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    let pool = prior_samples(dms, weights, n * oversample.max(1), seed)?;
    if obs.is_empty() {
        return Ok(pool.slice(ndarray::s![..n, ..]).to_owned());
    }
    let logs: Vec<f64> = pool
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|row| guide.log_obs(VeSde::HORIZON, &row.to_vec(), obs))
        .collect::<Result<_>>()?;
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllZeroDensity);
    }
    let mut cum = Vec::with_capacity(logs.len());
    let mut acc = 0.0;
    for l in &logs {
        acc += (l - max).exp();
        cum.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut out = Array2::zeros((n, pool.ncols()));
    for mut row in out.axis_iter_mut(Axis(0)) {
        let u = rng.gen::<f64>() * acc;
        let idx = cum.partition_point(|c| *c <= u).min(cum.len() - 1);
        row.assign(&pool.row(idx));
    }
    Ok(out)
}
