use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::GaussLegendre;

use super::guide::LabelGuide;
use super::sde::{label_posterior, shared_sde, DiffusedMixture, VeSde};
use crate::densities::{log_sum_exp, GaussianMixtureDensity, LabelModel};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Integration window half-width in posterior standard deviations.
const WINDOW: f64 = 10.0;
/// Inner panel half-width. The two outer panels carry standard-normal mass
/// below 1.3e-12 and get a fixed low-order rule.
const CORE: f64 = 7.0;
const TAIL_ORDER: usize = 16;
const FIRST_ORDER: usize = 16;
const RULES: usize = 7;

fn legendre_on(n: usize, lo: f64, hi: f64) -> impl Iterator<Item = (f64, f64)> {
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    GaussLegendre::new(NonZeroUsize::new(n).expect("nonzero order"))
        .into_node_weight_pairs()
        .into_vec()
        .into_iter()
        .map(move |(z, w)| (mid + half * z, w * half))
}

struct Rules {
    /// Fixed rule on the two outer panels.
    tails: Vec<(f64, f64)>,
    /// Inner-panel rules with `16 * 2^k` nodes.
    cores: Vec<Vec<(f64, f64)>>,
}

/// Composite Gauss-Legendre rules on `[-WINDOW, WINDOW]` with the standard
/// normal density folded into the weights.
fn rules() -> &'static Rules {
    static RULES_CACHE: OnceLock<Rules> = OnceLock::new();
    let fold = |(z, w): (f64, f64)| (z, w * (-0.5 * z * z - 0.5 * LN_2PI).exp());
    RULES_CACHE.get_or_init(|| Rules {
        tails: legendre_on(TAIL_ORDER, -WINDOW, -CORE).chain(legendre_on(TAIL_ORDER, CORE, WINDOW)).map(fold).collect(),
        cores: (0..RULES).map(|k| legendre_on(FIRST_ORDER << k, -CORE, CORE).map(fold).collect()).collect(),
    })
}

/// A Gaussian component in at most two dimensions, stored densely.
#[derive(Clone, Copy, Debug)]
struct Comp {
    base: usize,
    log_weight: f64,
    mean: [f64; 2],
    cov: [f64; 4],
}

/// Allocation-free log-density of a mixture in one or two dimensions.
#[derive(Clone, Debug)]
struct FastMixture {
    d: usize,
    // (log weight + normalizer, mean, precision)
    comps: Vec<(f64, [f64; 2], [f64; 4])>,
}

impl FastMixture {
    fn new(g: &GaussianMixtureDensity) -> Self {
        let d = g.dim();
        let comps = unpack(g, 0)
            .into_iter()
            .map(|c| {
                let (prec, log_det) = inverse(d, &c.cov);
                (c.log_weight - 0.5 * (log_det + d as f64 * LN_2PI), c.mean, prec)
            })
            .collect();
        Self { d, comps }
    }

    fn log_pdf(&self, x: &[f64; 2]) -> f64 {
        let term = |(c, m, p): &(f64, [f64; 2], [f64; 4])| c - 0.5 * quad_form(self.d, p, &[x[0] - m[0], x[1] - m[1]]);
        if self.comps.len() == 1 {
            return term(&self.comps[0]);
        }
        let max = self.comps.iter().map(term).fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + self.comps.iter().map(|c| (term(c) - max).exp()).sum::<f64>().ln()
    }
}

fn unpack(g: &GaussianMixtureDensity, base: usize) -> Vec<Comp> {
    let d = g.dim();
    g.weights()
        .iter()
        .zip(g.components())
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, c)| {
            let mut mean = [0.0; 2];
            mean[..d].copy_from_slice(c.mean());
            let mut cov = [0.0; 4];
            for i in 0..d {
                for j in 0..d {
                    cov[i * 2 + j] = c.covariance()[i * d + j];
                }
            }
            Comp { base, log_weight: w.ln(), mean, cov }
        })
        .collect()
}

/// Inverse and log-determinant of a 1x1 or 2x2 matrix stored with row stride 2.
fn inverse(d: usize, a: &[f64; 4]) -> ([f64; 4], f64) {
    if d == 1 {
        ([1.0 / a[0], 0.0, 0.0, 0.0], a[0].ln())
    } else {
        let det = a[0] * a[3] - a[1] * a[2];
        ([a[3] / det, -a[1] / det, -a[2] / det, a[0] / det], det.ln())
    }
}

fn quad_form(d: usize, p: &[f64; 4], r: &[f64; 2]) -> f64 {
    if d == 1 {
        p[0] * r[0] * r[0]
    } else {
        p[0] * r[0] * r[0] + (p[1] + p[2]) * r[0] * r[1] + p[3] * r[1] * r[1]
    }
}

fn mat_mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

/// Posterior of one prior component given `x_t`: log marginal weight, mean
/// and lower Cholesky factor `[l11, l21, l22]`.
struct Posterior {
    base: usize,
    log_weight: f64,
    mean: [f64; 2],
    chol: [f64; 3],
}

/// Integral of `f` and `x_0 f` against one component posterior.
#[derive(Clone, Copy, Default)]
struct Moments {
    mass: f64,
    first: [f64; 2],
}

/// Exact `p~(y_1..y_n | x_t)` for Gaussian-mixture bases under a shared VE
/// SDE. The clean point given `x_t` is a Gaussian mixture whose components
/// are the closed-form posteriors of the prior components under the
/// forward kernel; each is integrated against `prod_k p(y_k | x_0)` by
/// adaptive Gauss-Legendre over +-10 posterior standard deviations.
///
/// The guidance gradient comes from the same integrals:
/// `grad log p~(obs | x_t) = (E[x_0 | x_t, obs] - E[x_0 | x_t]) / v(t)`.
#[derive(Clone, Debug)]
pub struct QuadratureOracle {
    dms: Vec<DiffusedMixture>,
    model: LabelModel,
    sde: VeSde,
    d: usize,
    prior: Vec<Comp>,
    bases: Vec<FastMixture>,
    rtol: f64,
    max_order: usize,
}

impl QuadratureOracle {
    pub fn new(dms: Vec<DiffusedMixture>, model: LabelModel) -> Result<Self> {
        let sde = shared_sde(&dms, model.prior())?;
        let d = dms[0].dim();
        if d > 2 {
            return Err(Error::InvalidArgument(format!("quadrature supports 1 or 2 dimensions, got {d}")));
        }
        let mut prior = Vec::new();
        for (i, (dm, w)) in dms.iter().zip(model.prior()).enumerate() {
            if *w > 0.0 {
                prior.extend(unpack(&dm.base, i).into_iter().map(|mut c| {
                    c.log_weight += w.ln();
                    c
                }));
            }
        }
        let bases = dms.iter().map(|dm| FastMixture::new(&dm.base)).collect();
        let max_order = if d == 1 { FIRST_ORDER << (RULES - 1) } else { FIRST_ORDER << 3 };
        Ok(Self { dms, model, sde, d, prior, bases, rtol: 1e-8, max_order })
    }

    /// Uniform-iid model with the given mixture weights.
    pub fn iid(dms: Vec<DiffusedMixture>, weights: Vec<f64>, n: usize) -> Result<Self> {
        Self::new(dms, LabelModel::iid(weights, n)?)
    }

    /// Caps the quadrature order per dimension.
    pub fn with_max_order(mut self, order: usize) -> Self {
        self.max_order = order;
        self
    }

    pub fn with_rtol(mut self, rtol: f64) -> Self {
        self.rtol = rtol;
        self
    }

    pub fn model(&self) -> &LabelModel {
        &self.model
    }

    pub fn bases(&self) -> &[DiffusedMixture] {
        &self.dms
    }

    /// `prod_k p(y_k = obs_k | x_0)`.
    fn terminal(&self, x0: &[f64; 2], obs: &[usize], scratch: &mut [f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for (s, b) in scratch.iter_mut().zip(&self.bases) {
            *s = b.log_pdf(x0);
            max = max.max(*s);
        }
        if max == f64::NEG_INFINITY {
            return 0.0;
        }
        for s in scratch.iter_mut() {
            *s = (*s - max).exp();
        }
        let mut out = 1.0;
        for (k, &o) in obs.iter().enumerate() {
            let v = self.model.likelihood_weights(k);
            let den: f64 = v.iter().zip(scratch.iter()).map(|(a, b)| a * b).sum();
            if den <= 0.0 {
                return 0.0;
            }
            out *= v[o] * scratch[o] / den;
        }
        out
    }

    fn check(&self, t: f64, x: &[f64], obs: Option<&[usize]>) -> Result<[f64; 2]> {
        self.sde.check_time(t)?;
        if let Some(obs) = obs {
            self.model.check_observations(obs)?;
        }
        if x.len() != self.d {
            return Err(Error::ShapeMismatch { left: vec![self.d], right: vec![x.len()] });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDetected("query point".into()));
        }
        let mut xt = [0.0; 2];
        xt[..self.d].copy_from_slice(x);
        Ok(xt)
    }

    fn posteriors(&self, v: f64, xt: &[f64; 2]) -> Vec<Posterior> {
        self.prior
            .iter()
            .map(|c| {
                let mut s = c.cov;
                s[0] += v;
                if self.d == 2 {
                    s[3] += v;
                }
                let (s_inv, log_det) = inverse(self.d, &s);
                let r = [xt[0] - c.mean[0], xt[1] - c.mean[1]];
                let log_weight =
                    c.log_weight - 0.5 * (log_det + self.d as f64 * LN_2PI + quad_form(self.d, &s_inv, &r));
                let k = mat_mul(&c.cov, &s_inv);
                let mean = [c.mean[0] + k[0] * r[0] + k[1] * r[1], c.mean[1] + k[2] * r[0] + k[3] * r[1]];
                let kc = mat_mul(&k, &c.cov);
                let cov = [c.cov[0] - kc[0], c.cov[1] - kc[1], c.cov[2] - kc[2], c.cov[3] - kc[3]];
                let l11 = cov[0].max(0.0).sqrt();
                let chol = if self.d == 1 {
                    [l11, 0.0, 0.0]
                } else if l11 > 0.0 {
                    let l21 = 0.5 * (cov[1] + cov[2]) / l11;
                    [l11, l21, (cov[3] - l21 * l21).max(0.0).sqrt()]
                } else {
                    [0.0, 0.0, cov[3].max(0.0).sqrt()]
                };
                Posterior { base: c.base, log_weight, mean, chol }
            })
            .collect()
    }

    /// Normalized component weights given `x_t`.
    fn responsibilities(posts: &[Posterior]) -> Result<Vec<f64>> {
        let logs: Vec<f64> = posts.iter().map(|p| p.log_weight).collect();
        let lse = log_sum_exp(&logs);
        if !lse.is_finite() {
            return Err(Error::AllZeroDensity);
        }
        Ok(logs.iter().map(|l| (l - lse).exp()).collect())
    }

    /// `log p~(obs | x_t)` and, when asked, its gradient in `x_t`.
    fn evaluate(&self, t: f64, x: &[f64], obs: &[usize], want_grad: bool) -> Result<(f64, Vec<f64>)> {
        let xt = self.check(t, x, Some(obs))?;
        let mut scratch = vec![0.0; self.bases.len()];
        let v = self.sde.added_variance(t);
        if v == 0.0 {
            let value = self.terminal(&xt, obs, &mut scratch).ln();
            let grad = if want_grad { self.default_grad(t, x, obs)? } else { Vec::new() };
            return Ok((value, grad));
        }
        if obs.len() == 1 && self.model.likelihood_weights(0) == self.model.prior() {
            // A single Bayes-consistent label: the posterior at x_t is exact.
            let p = label_posterior(&self.dms, self.model.prior(), t, x)?;
            let mut grad = Vec::new();
            if want_grad {
                let scores = self.dms.iter().map(|d| d.marginal(t).map(|m| m.score(x))).collect::<Result<Vec<_>>>()?;
                grad = (0..self.d)
                    .map(|k| scores[obs[0]][k] - p.iter().zip(&scores).map(|(pi, s)| pi * s[k]).sum::<f64>())
                    .collect();
            }
            return Ok((p[obs[0]].ln(), grad));
        }

        let posts = self.posteriors(v, &xt);
        let pis = Self::responsibilities(&posts)?;
        let mut mass = 0.0;
        let mut first = [0.0; 2];
        let mut mean = [0.0; 2];
        for (pi, post) in pis.iter().zip(&posts) {
            if *pi == 0.0 {
                continue;
            }
            let m = self.integrate(post, obs, &mut scratch)?;
            mass += pi * m.mass;
            for k in 0..2 {
                first[k] += pi * m.first[k];
                mean[k] += pi * post.mean[k];
            }
        }
        let grad = if want_grad && mass > 0.0 {
            (0..self.d).map(|k| (first[k] / mass - mean[k]) / v).collect()
        } else {
            Vec::new()
        };
        Ok((mass.ln(), grad))
    }

    fn default_grad(&self, t: f64, x: &[f64], obs: &[usize]) -> Result<Vec<f64>> {
        let h = 1e-4 * self.sde.sigma(t);
        let mut probe = x.to_vec();
        let mut grad = vec![0.0; x.len()];
        for k in 0..x.len() {
            probe[k] = x[k] + h;
            let up = self.evaluate(t, &probe, obs, false)?.0;
            probe[k] = x[k] - h;
            let down = self.evaluate(t, &probe, obs, false)?.0;
            probe[k] = x[k];
            if !(up.is_finite() && down.is_finite()) {
                return Err(Error::AllZeroDensity);
            }
            grad[k] = (up - down) / (2.0 * h);
        }
        Ok(grad)
    }

    fn integrate(&self, post: &Posterior, obs: &[usize], scratch: &mut [f64]) -> Result<Moments> {
        let (mean, l) = (post.mean, post.chol);
        let mut previous: Option<Moments> = None;
        let mut last_diff: Option<f64> = None;
        // Spread of x_0 over the window, for the convergence test on the first moment.
        let spread = WINDOW * (l[0] + l[1].abs() + l[2]) + mean[0].abs() + mean[1].abs();
        let rules = rules();
        let mut add = |m: &mut Moments, w: f64, x0: [f64; 2]| {
            let f = w * self.terminal(&x0, obs, scratch);
            m.mass += f;
            m.first[0] += f * x0[0];
            m.first[1] += f * x0[1];
        };
        // In one dimension the outer panels do not change with the order.
        let mut tails = Moments::default();
        if self.d == 1 {
            for &(z, w) in &rules.tails {
                add(&mut tails, w, [mean[0] + l[0] * z, 0.0]);
            }
        }
        for core in &rules.cores {
            if core.len() > self.max_order {
                break;
            }
            let mut m = tails;
            if self.d == 1 {
                for &(z, w) in core {
                    add(&mut m, w, [mean[0] + l[0] * z, 0.0]);
                }
            } else {
                for &(z1, w1) in core.iter().chain(&rules.tails) {
                    let a = mean[0] + l[0] * z1;
                    let b0 = mean[1] + l[1] * z1;
                    for &(z2, w2) in core.iter().chain(&rules.tails) {
                        add(&mut m, w1 * w2, [a, b0 + l[2] * z2]);
                    }
                }
            }
            if let Some(p) = previous {
                // Differences between successive orders shrink geometrically
                // once the rule resolves the integrand, so the next one is
                // predicted as d_k^2 / d_{k-1}.
                let d = (m.mass - p.mass).abs() / m.mass.abs().max(f64::MIN_POSITIVE)
                    + (0..2).map(|k| (m.first[k] - p.first[k]).abs()).sum::<f64>()
                        / (m.mass.abs() * spread.max(1.0)).max(f64::MIN_POSITIVE);
                let predicted = last_diff.map_or(f64::INFINITY, |l: f64| d * d / l.max(d));
                if (m.mass == 0.0 && p.mass == 0.0) || d <= self.rtol || predicted <= self.rtol {
                    return Ok(m);
                }
                last_diff = Some(d);
            }
            previous = Some(m);
        }
        Err(Error::QuadratureNonConvergence { nodes: self.max_order })
    }

    /// `log p~(obs | x_t)`.
    pub fn log_joint(&self, t: f64, x: &[f64], obs: &[usize]) -> Result<f64> {
        Ok(self.evaluate(t, x, obs, false)?.0)
    }

    /// `grad_x log p~(obs | x_t)`.
    pub fn grad_log_joint(&self, t: f64, x: &[f64], obs: &[usize]) -> Result<Vec<f64>> {
        let (value, grad) = self.evaluate(t, x, obs, true)?;
        if !value.is_finite() {
            return Err(Error::AllZeroDensity);
        }
        Ok(grad)
    }

    /// `w_i p_{i,t}(x) / sum_j w_j p_{j,t}(x)` from the component posteriors.
    pub fn label_probs_at(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let xt = self.check(t, x, None)?;
        let posts = self.posteriors(self.sde.added_variance(t), &xt);
        let pis = Self::responsibilities(&posts)?;
        let mut out = vec![0.0; self.dms.len()];
        for (pi, post) in pis.iter().zip(&posts) {
            out[post.base] += pi;
        }
        Ok(out)
    }
}

impl LabelGuide for QuadratureOracle {
    fn num_bases(&self) -> usize {
        self.model.num_bases()
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn sde(&self) -> VeSde {
        self.sde
    }

    fn label_probs(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.label_probs_at(t, x)
    }

    fn log_obs(&self, t: f64, x: &[f64], obs: &[usize]) -> Result<f64> {
        self.log_joint(t, x, obs)
    }

    fn grad_log_obs(&self, t: f64, x: &[f64], obs: &[usize]) -> Result<Vec<f64>> {
        self.grad_log_joint(t, x, obs)
    }
}

/// `p~(y_1..y_n = observations | x_t)` under the plain model with prior
/// `weights` and `n` observations.
pub fn quadrature_label_joint(
    dms: &[DiffusedMixture],
    weights: &[f64],
    n: usize,
    observations: &[usize],
    t: f64,
    x: &[f64],
) -> Result<f64> {
    let oracle = QuadratureOracle::iid(dms.to_vec(), weights.to_vec(), n)?;
    Ok(oracle.log_joint(t, x, observations)?.exp())
}
