//! Label models and scale-tracking compositions.
//!
//! A composite used as the input of a further composition is an unnormalized
//! function. Its normalized shape is not enough to chain operators: the
//! harmonic mean `f g / (f + g)` is associative only when each intermediate
//! keeps its own scale. [`ScaledTable`] carries that scale next to the
//! normalized table, and [`LabelModel`] turns input scales into the mixture
//! and likelihood weights under which classifier guidance realizes the same
//! composite.

use super::ops::{check_alpha, validate_simplex};
use super::table::DensityTable;
use super::gaussian::log_sum_exp;
use crate::error::{Error, Result};

/// A normalized table plus the log of the total mass of the function it
/// represents.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledTable {
    pub table: DensityTable,
    pub log_mass: f64,
}

impl ScaledTable {
    /// A proper distribution: scale one.
    pub fn unit(table: DensityTable) -> Self {
        Self { table, log_mass: 0.0 }
    }

    /// `log f(x)`, `-inf` off the support.
    pub fn log_value(&self, x: usize) -> f64 {
        let v = self.table.get(x);
        if v > 0.0 {
            self.log_mass + v.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    fn from_log_values(shape: Vec<usize>, logs: &[f64]) -> Result<Self> {
        let log_mass = log_sum_exp(logs);
        let table = DensityTable::from_log_weights(shape, logs)?;
        Ok(Self { table, log_mass })
    }
}

fn same_shape(inputs: &[&ScaledTable]) -> Result<()> {
    if let Some((first, rest)) = inputs.split_first() {
        for t in rest {
            first.table.ensure_same_shape(&t.table)?;
        }
    }
    Ok(())
}

/// `(1 - alpha) f g / (alpha f + (1 - alpha) g)`; at `alpha = 0.5` this is
/// `f g / (f + g)`, i.e. `1 / (1/f + 1/g)`.
pub fn scaled_harmonic_mean(f: &ScaledTable, g: &ScaledTable, alpha: f64) -> Result<ScaledTable> {
    check_alpha(alpha)?;
    same_shape(&[f, g])?;
    let logs: Vec<f64> = (0..f.table.len())
        .map(|x| {
            let (a, b) = (f.log_value(x), g.log_value(x));
            if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            (1.0 - alpha).ln() + a + b - log_sum_exp(&[alpha.ln() + a, (1.0 - alpha).ln() + b])
        })
        .collect();
    ScaledTable::from_log_values(f.table.shape().to_vec(), &logs)
}

/// `alpha f^2 / (alpha f + (1 - alpha) g)`; at `alpha = 0.5`, `f^2 / (f + g)`.
pub fn scaled_contrast(f: &ScaledTable, g: &ScaledTable, alpha: f64) -> Result<ScaledTable> {
    check_alpha(alpha)?;
    same_shape(&[f, g])?;
    let logs: Vec<f64> = (0..f.table.len())
        .map(|x| {
            let (a, b) = (f.log_value(x), g.log_value(x));
            if a == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            alpha.ln() + 2.0 * a - log_sum_exp(&[alpha.ln() + a, (1.0 - alpha).ln() + b])
        })
        .collect();
    ScaledTable::from_log_values(f.table.shape().to_vec(), &logs)
}

/// `prod_k f_{i_k} / (sum_j f_j)^(n-1)` with zero-based labels.
pub fn scaled_posterior(inputs: &[ScaledTable], observations: &[usize]) -> Result<ScaledTable> {
    if observations.is_empty() {
        return Err(Error::EmptyObservations);
    }
    let m = inputs.len();
    if m == 0 {
        return Err(Error::InvalidArgument("no inputs".into()));
    }
    if let Some(&label) = observations.iter().find(|&&l| l >= m) {
        return Err(Error::LabelOutOfRange { label, num_bases: m });
    }
    let refs: Vec<&ScaledTable> = inputs.iter().collect();
    same_shape(&refs)?;
    let exponent = (observations.len() - 1) as f64;
    let logs: Vec<f64> = (0..inputs[0].table.len())
        .map(|x| {
            let mut num = 0.0;
            for &k in observations {
                let v = inputs[k].log_value(x);
                if v == f64::NEG_INFINITY {
                    return f64::NEG_INFINITY;
                }
                num += v;
            }
            let all: Vec<f64> = inputs.iter().map(|t| t.log_value(x)).collect();
            num - exponent * log_sum_exp(&all)
        })
        .collect();
    ScaledTable::from_log_values(inputs[0].table.shape().to_vec(), &logs)
}

/// Augmented model over `m` inputs and `n` observations:
/// prior `sum_i w_i p_i(x)` and per-observation likelihoods
/// `p(y_k = i | x) = v_{k,i} p_i(x) / sum_j v_{k,j} p_j(x)`.
///
/// The plain model has uniform `w` and `v_k = w`. The
/// parameterized binary operations reweight the second observation by
/// `(alpha, 1 - alpha)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelModel {
    prior: Vec<f64>,
    likelihood: Vec<Vec<f64>>,
}

impl LabelModel {
    /// Uniform prior over `m` bases, `n` exchangeable observations.
    pub fn uniform(m: usize, n: usize) -> Self {
        let w = vec![1.0 / m as f64; m];
        Self { prior: w.clone(), likelihood: vec![w; n] }
    }

    /// Prior `weights`, all observations Bayes-consistent with it.
    pub fn iid(weights: Vec<f64>, n: usize) -> Result<Self> {
        validate_simplex(&weights)?;
        Ok(Self { likelihood: vec![weights.clone(); n], prior: weights })
    }

    /// Two inputs, two observations; the second is reweighted by
    /// `(alpha, 1 - alpha)`.
    pub fn alpha(weights: Vec<f64>, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        validate_simplex(&weights)?;
        if weights.len() != 2 {
            return Err(Error::InvalidArgument("the alpha model needs exactly two inputs".into()));
        }
        let second = normalize(vec![alpha * weights[0], (1.0 - alpha) * weights[1]]);
        Ok(Self { likelihood: vec![weights.clone(), second], prior: weights })
    }

    /// Weights that make guidance realize the scale-tracking composite of
    /// inputs with the given log-masses.
    pub fn from_log_scales(log_scales: &[f64], n: usize, alpha: Option<f64>) -> Result<Self> {
        if log_scales.is_empty() {
            return Err(Error::InvalidArgument("no inputs".into()));
        }
        let lse = log_sum_exp(log_scales);
        let w: Vec<f64> = log_scales.iter().map(|s| (s - lse).exp()).collect();
        match alpha {
            None => Self::iid(w, n),
            Some(a) => {
                if n != 2 {
                    return Err(Error::InvalidArgument(
                        "a parameterized operation takes exactly two observations".into(),
                    ));
                }
                Self::alpha(w, a)
            }
        }
    }

    pub fn num_bases(&self) -> usize {
        self.prior.len()
    }

    pub fn num_observations(&self) -> usize {
        self.likelihood.len()
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn likelihood_weights(&self, k: usize) -> &[f64] {
        &self.likelihood[k]
    }

    /// True when the prior is uniform and every observation is Bayes-consistent
    /// with it.
    pub fn is_uniform_iid(&self) -> bool {
        let m = self.prior.len() as f64;
        let flat = |w: &[f64]| w.iter().all(|v| (v - 1.0 / m).abs() < 1e-15);
        flat(&self.prior) && self.likelihood.iter().all(|w| flat(w))
    }

    pub fn check_observations(&self, observations: &[usize]) -> Result<()> {
        if observations.is_empty() {
            return Err(Error::EmptyObservations);
        }
        if observations.len() != self.likelihood.len() {
            return Err(Error::InvalidArgument(format!(
                "model has {} observations, got {}",
                self.likelihood.len(),
                observations.len()
            )));
        }
        let m = self.prior.len();
        if let Some(&label) = observations.iter().find(|&&l| l >= m) {
            return Err(Error::LabelOutOfRange { label, num_bases: m });
        }
        Ok(())
    }

    /// `p(y_k = . | x)` given the base densities `probs[i] = p_i(x)`.
    /// Returns `None` where every weighted density vanishes.
    pub fn label_likelihood(&self, k: usize, probs: &[f64]) -> Option<Vec<f64>> {
        let v = &self.likelihood[k];
        let total: f64 = v.iter().zip(probs).map(|(a, b)| a * b).sum();
        if total <= 0.0 {
            return None;
        }
        Some(v.iter().zip(probs).map(|(a, b)| a * b / total).collect())
    }

    /// `p(y_k = . | x)` from the base-identity posterior `q` (which is the
    /// likelihood of the first observation): `q` reweighted by `v_k / w`.
    pub fn observation_weights(&self, k: usize, q: &[f64]) -> Vec<f64> {
        let v = &self.likelihood[k];
        let raw: Vec<f64> = (0..q.len())
            .map(|i| if self.prior[i] > 0.0 { v[i] / self.prior[i] * q[i] } else { 0.0 })
            .collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            raw.into_iter().map(|w| w / total).collect()
        } else {
            v.to_vec()
        }
    }

    /// Log of `prod_k p(y_k = i_k | x)` from log base densities.
    pub fn log_joint_likelihood(&self, observations: &[usize], log_probs: &[f64]) -> f64 {
        let mut out = 0.0;
        for (k, &i) in observations.iter().enumerate() {
            let v = &self.likelihood[k];
            if v[i] <= 0.0 || log_probs[i] == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            let terms: Vec<f64> = v
                .iter()
                .zip(log_probs)
                .map(|(w, l)| if *w > 0.0 { w.ln() + l } else { f64::NEG_INFINITY })
                .collect();
            out += v[i].ln() + log_probs[i] - log_sum_exp(&terms);
        }
        out
    }

    /// Log prior mixture density from log base densities.
    pub fn log_prior_density(&self, log_probs: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .prior
            .iter()
            .zip(log_probs)
            .map(|(w, l)| if *w > 0.0 { w.ln() + l } else { f64::NEG_INFINITY })
            .collect();
        log_sum_exp(&terms)
    }

    /// Posterior over `x` given the observations, with `p(obs)` in log form.
    pub fn posterior(
        &self,
        dists: &[DensityTable],
        observations: &[usize],
    ) -> Result<(DensityTable, f64)> {
        self.check_observations(observations)?;
        if dists.len() != self.prior.len() {
            return Err(Error::InvalidArgument(format!(
                "model has {} bases, got {} tables",
                self.prior.len(),
                dists.len()
            )));
        }
        for d in &dists[1..] {
            dists[0].ensure_same_shape(d)?;
        }
        let logs: Vec<f64> = (0..dists[0].len())
            .map(|x| {
                let lp: Vec<f64> = dists
                    .iter()
                    .map(|d| if d.get(x) > 0.0 { d.get(x).ln() } else { f64::NEG_INFINITY })
                    .collect();
                let prior = self.log_prior_density(&lp);
                if prior == f64::NEG_INFINITY {
                    return f64::NEG_INFINITY;
                }
                prior + self.log_joint_likelihood(observations, &lp)
            })
            .collect();
        let log_evidence = log_sum_exp(&logs);
        Ok((DensityTable::from_log_weights(dists[0].shape().to_vec(), &logs)?, log_evidence))
    }
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// One composition stage over scaled inputs: the posterior of the label model
/// implied by the input scales, carried with its own scale
/// `sum_i s_i * p(obs)`.
pub fn sculpt_stage(
    inputs: &[ScaledTable],
    observations: &[usize],
    alpha: Option<f64>,
) -> Result<ScaledTable> {
    let scales: Vec<f64> = inputs.iter().map(|t| t.log_mass).collect();
    let model = LabelModel::from_log_scales(&scales, observations.len(), alpha)?;
    let tables: Vec<DensityTable> = inputs.iter().map(|t| t.table.clone()).collect();
    let (table, log_evidence) = model.posterior(&tables, observations)?;
    Ok(ScaledTable { table, log_mass: log_sum_exp(&scales) + log_evidence })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::{contrast, harmonic_mean, nary_posterior};

    fn t(v: &[f64]) -> ScaledTable {
        ScaledTable::unit(DensityTable::from_unnormalized(vec![v.len()], v.to_vec()).unwrap())
    }

    #[test]
    fn scaled_ops_normalize_to_plain_ops() {
        let (p, q) = (t(&[0.5, 0.3, 0.2]), t(&[0.1, 0.6, 0.3]));
        for a in [0.05, 0.5, 0.95] {
            let h = scaled_harmonic_mean(&p, &q, a).unwrap();
            assert!(h.table.l1_distance(&harmonic_mean(&p.table, &q.table, a).unwrap()).unwrap() < 1e-14);
            let c = scaled_contrast(&p, &q, a).unwrap();
            assert!(c.table.l1_distance(&contrast(&p.table, &q.table, a).unwrap()).unwrap() < 1e-14);
        }
        // Scale of f g / (f + g) on proper inputs.
        let h = scaled_harmonic_mean(&p, &q, 0.5).unwrap();
        let z: f64 = (0..3).map(|x| p.table.get(x) * q.table.get(x) / (p.table.get(x) + q.table.get(x))).sum();
        assert!((h.log_mass - z.ln()).abs() < 1e-14);
    }

    #[test]
    fn stage_matches_scaled_operators() {
        let p = t(&[0.5, 0.3, 0.2]);
        let mut q = t(&[0.1, 0.6, 0.3]);
        q.log_mass = -0.7;
        for a in [0.05, 0.5, 0.95] {
            let s = sculpt_stage(&[p.clone(), q.clone()], &[0, 1], Some(a)).unwrap();
            let h = scaled_harmonic_mean(&p, &q, a).unwrap();
            assert!(s.table.l1_distance(&h.table).unwrap() < 1e-14);
            assert!((s.log_mass - h.log_mass).abs() < 1e-12);
            let s = sculpt_stage(&[p.clone(), q.clone()], &[0, 0], Some(a)).unwrap();
            let c = scaled_contrast(&p, &q, a).unwrap();
            assert!(s.table.l1_distance(&c.table).unwrap() < 1e-14);
            assert!((s.log_mass - c.log_mass).abs() < 1e-12);
        }
        let s = sculpt_stage(&[p.clone(), q.clone()], &[1, 0, 1], None).unwrap();
        let d = scaled_posterior(&[p, q], &[1, 0, 1]).unwrap();
        assert!(s.table.l1_distance(&d.table).unwrap() < 1e-14);
        assert!((s.log_mass - d.log_mass).abs() < 1e-12);
    }

    #[test]
    fn uniform_model_is_the_plain_posterior() {
        let d = vec![t(&[0.5, 0.3, 0.2]).table, t(&[0.1, 0.6, 0.3]).table, t(&[0.2, 0.2, 0.6]).table];
        let model = LabelModel::uniform(3, 3);
        let (post, _) = model.posterior(&d, &[2, 0, 2]).unwrap();
        assert!(post.l1_distance(&nary_posterior(&d, &[2, 0, 2]).unwrap()).unwrap() < 1e-14);
        assert!(model.is_uniform_iid());
    }

    #[test]
    fn three_way_harmonic_mean_chains_associatively() {
        let (a, b, c) = (t(&[0.5, 0.3, 0.2]), t(&[0.1, 0.6, 0.3]), t(&[0.25, 0.25, 0.5]));
        let left = scaled_harmonic_mean(&scaled_harmonic_mean(&a, &b, 0.5).unwrap(), &c, 0.5).unwrap();
        let right = scaled_harmonic_mean(&a, &scaled_harmonic_mean(&b, &c, 0.5).unwrap(), 0.5).unwrap();
        assert!(left.table.l1_distance(&right.table).unwrap() < 1e-12);
        let frozen = [0.231_151_615_575_807_88, 0.410_936_205_468_102_8, 0.357_912_178_956_089_5];
        for (x, v) in frozen.iter().enumerate() {
            assert!((left.table.get(x) - v).abs() < 1e-12);
        }
    }
}
