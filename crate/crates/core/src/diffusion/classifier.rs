use ndarray::{s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::guide::LabelGuide;
use super::sde::{check_family, shared_sde, DiffusedMixture, VeSde};
use crate::densities::{validate_simplex, LabelModel};
use crate::error::{Error, Result};
use crate::nn::{log_softmax_rows, place_columns, softmax_cross_entropy, Activation, Adam, Checkpoint, EmaShadow, Mlp};

/// Sinusoidal features of the diffusion time.
pub const TIME_FEATURES: usize = 64;

fn embed_time(t: f64, out: &mut [f64]) {
    let half = TIME_FEATURES / 2;
    for j in 0..half {
        // Frequencies log-spaced from 1 to 200 radians per unit time.
        let w = (j as f64 / (half - 1) as f64 * 200f64.ln()).exp();
        out[2 * j] = (w * t).sin();
        out[2 * j + 1] = (w * t).cos();
    }
}

/// Time-conditioned label classifier: a terminal head `Q(y_1 | x_0)` (first
/// `m` outputs, used at `t = 0`) and a joint head `Q(y_1..y_n | x_t)` (next
/// `m^n` outputs, `y_1` most significant). The input is `x / sqrt(1 + v(t))`
/// followed by the time features, where `v(t)` is the variance added by the
/// forward SDE.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeClassifier {
    sde: VeSde,
    dim: usize,
    prior: Vec<f64>,
    n: usize,
    net: Mlp,
    target: EmaShadow,
}

impl TimeClassifier {
    pub fn new<R: Rng + ?Sized>(
        sde: VeSde,
        dim: usize,
        prior: Vec<f64>,
        n: usize,
        hidden: &[usize],
        ema: f64,
        rng: &mut R,
    ) -> Result<Self> {
        validate_simplex(&prior)?;
        if n == 0 {
            return Err(Error::EmptyObservations);
        }
        let m = prior.len();
        let mut sizes = vec![dim + TIME_FEATURES];
        sizes.extend(hidden);
        sizes.push(m + m.pow(n as u32));
        let net = Mlp::new(sizes, Activation::Tanh, rng)?;
        let target = EmaShadow::new(net.params(), ema)?;
        Ok(Self { sde, dim, prior, n, net, target })
    }

    pub fn num_observations(&self) -> usize {
        self.n
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn model(&self) -> Result<LabelModel> {
        LabelModel::iid(self.prior.clone(), self.n)
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    fn encode(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let c = self.input_scale(t);
        for (o, v) in out.iter_mut().zip(x) {
            *o = v * c;
        }
        embed_time(t, &mut out[self.dim..]);
    }

    fn input_scale(&self, t: f64) -> f64 {
        1.0 / (1.0 + self.sde.added_variance(t)).sqrt()
    }

    fn encode_batch(&self, t: f64, xs: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((xs.nrows(), self.net.input_dim()));
        for (mut o, x) in out.axis_iter_mut(Axis(0)).zip(xs.axis_iter(Axis(0))) {
            self.encode(t, &x.to_vec(), o.as_slice_mut().expect("contiguous row"));
        }
        out
    }

    /// A guide evaluating the EMA (`use_target`) or the live parameters.
    pub fn guide(&self, use_target: bool) -> Result<TimeClassifierGuide<'_>> {
        let params = if use_target { self.target.params() } else { self.net.params() };
        let net = Mlp::from_params(self.net.sizes().to_vec(), self.net.activation(), params.to_vec())?;
        Ok(TimeClassifierGuide { clf: self, net, model: self.model()? })
    }

    pub fn to_checkpoint(&self, step: u64) -> Checkpoint {
        let target = Mlp::from_params(self.net.sizes().to_vec(), self.net.activation(), self.target.params().to_vec())
            .expect("target mirrors the live network");
        Checkpoint::new(
            step,
            serde_json::json!({
                "kind": "time-classifier",
                "sde": self.sde,
                "dim": self.dim,
                "prior": self.prior,
                "observations": self.n,
                "ema": self.target.beta,
            }),
        )
        .with_net("live", self.net.clone())
        .with_net("target", target)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        #[derive(Deserialize)]
        struct Meta {
            kind: String,
            sde: VeSde,
            dim: usize,
            prior: Vec<f64>,
            observations: usize,
            ema: f64,
        }
        let meta: Meta = serde_json::from_value(ck.meta.clone()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if meta.kind != "time-classifier" {
            return Err(Error::Checkpoint(format!("expected a time classifier, found `{}`", meta.kind)));
        }
        let net = ck.net("live")?.clone();
        let m = meta.prior.len();
        if net.input_dim() != meta.dim + TIME_FEATURES || net.output_dim() != m + m.pow(meta.observations as u32) {
            return Err(Error::Checkpoint("classifier network does not match its metadata".into()));
        }
        let target = EmaShadow::new(ck.net("target")?.params(), meta.ema)?;
        Ok(Self { sde: meta.sde, dim: meta.dim, prior: meta.prior, n: meta.observations, net, target })
    }
}

/// [`LabelGuide`] view of a [`TimeClassifier`] with fixed parameters.
pub struct TimeClassifierGuide<'a> {
    clf: &'a TimeClassifier,
    net: Mlp,
    model: LabelModel,
}

impl TimeClassifierGuide<'_> {
    fn joint_index(&self, obs: &[usize]) -> Result<usize> {
        self.model.check_observations(obs)?;
        let m = self.clf.prior.len();
        Ok(obs.iter().fold(0, |acc, &o| acc * m + o))
    }

    fn outputs(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.clf.dim {
            return Err(Error::ShapeMismatch { left: vec![self.clf.dim], right: vec![x.len()] });
        }
        let mut input = vec![0.0; self.net.input_dim()];
        self.clf.encode(t, x, &mut input);
        self.net.forward(&input)
    }

    /// Terminal-head probabilities `Q(y_1 | x_0)`.
    pub fn terminal_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let out = self.outputs(0.0, x)?;
        Ok(crate::nn::softmax(&out[..self.clf.prior.len()]))
    }

    /// Joint-head probabilities over all label tuples.
    pub fn joint_probs(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let out = self.outputs(t, x)?;
        Ok(crate::nn::softmax(&out[self.clf.prior.len()..]))
    }
}

impl LabelGuide for TimeClassifierGuide<'_> {
    fn num_bases(&self) -> usize {
        self.clf.prior.len()
    }

    fn dim(&self) -> usize {
        self.clf.dim
    }

    fn sde(&self) -> VeSde {
        self.clf.sde
    }

    fn label_probs(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        if t == 0.0 {
            return self.terminal_probs(x);
        }
        let joint = self.joint_probs(t, x)?;
        let tail = joint.len() / self.num_bases();
        Ok(joint.chunks(tail).map(|c| c.iter().sum()).collect())
    }

    fn log_obs(&self, t: f64, x: &[f64], obs: &[usize]) -> Result<f64> {
        let idx = self.joint_index(obs)?;
        if t == 0.0 {
            let q = self.terminal_probs(x)?;
            return Ok(obs.iter().enumerate().map(|(k, &o)| self.model.observation_weights(k, &q)[o].ln()).sum());
        }
        let out = self.outputs(t, x)?;
        let logp = log_softmax_rows(ndarray::ArrayView2::from_shape((1, out.len() - self.num_bases()), &out[self.num_bases()..]).expect("row"));
        Ok(logp[[0, idx]])
    }

    /// Backpropagates `log Q(obs | x_t)` to the input for the whole batch.
    fn guidance_batch(&self, t: f64, xs: ArrayView2<f64>, obs: &[usize]) -> Result<(Array2<f64>, Array2<f64>)> {
        let m = self.num_bases();
        if t == 0.0 {
            let rows: Vec<Vec<f64>> = xs.axis_iter(Axis(0)).map(|r| self.terminal_probs(&r.to_vec())).collect::<Result<_>>()?;
            let mut probs = Array2::zeros((xs.nrows(), m));
            for (i, p) in rows.iter().enumerate() {
                probs.row_mut(i).assign(&ndarray::ArrayView1::from(p.as_slice()));
            }
            let mut grads = Array2::zeros(xs.dim());
            if !obs.is_empty() {
                for (i, r) in xs.axis_iter(Axis(0)).enumerate() {
                    let g = self.grad_log_obs(t, &r.to_vec(), obs)?;
                    grads.row_mut(i).assign(&ndarray::ArrayView1::from(g.as_slice()));
                }
            }
            return Ok((probs, grads));
        }
        let input = self.clf.encode_batch(t, xs);
        let cache = self.net.forward_train(input.view())?;
        let logp = log_softmax_rows(cache.output().slice(s![.., m..]));
        let width = logp.ncols();
        let tail = width / m;
        let mut probs = Array2::zeros((xs.nrows(), m));
        for (mut p, row) in probs.axis_iter_mut(Axis(0)).zip(logp.axis_iter(Axis(0))) {
            for (i, c) in row.to_vec().chunks(tail).enumerate() {
                p[i] = c.iter().map(|v| v.exp()).sum();
            }
        }
        let mut grads = Array2::zeros(xs.dim());
        if !obs.is_empty() {
            let idx = self.joint_index(obs)?;
            let mut up = logp.mapv(|v| -v.exp());
            up.column_mut(idx).mapv_inplace(|v| v + 1.0);
            let (_, dx) = self.net.backward(&cache, place_columns(&up, m, m + width).view())?;
            let c = self.clf.input_scale(t);
            grads.assign(&(&dx.slice(s![.., ..self.clf.dim]) * c));
        }
        if probs.iter().chain(grads.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDetected("classifier guidance".into()));
        }
        Ok((probs, grads))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeClassifierConfig {
    pub observations: usize,
    /// Mixture weights of the bases; uniform when absent.
    pub prior: Option<Vec<f64>>,
    pub steps: usize,
    pub batch_per_base: usize,
    /// Noisy states drawn per clean sample.
    pub times_per_sample: usize,
    pub lr: f64,
    pub ema: f64,
    /// Fraction of the steps trained on terminal states only.
    pub terminal_only_fraction: f64,
    pub hidden: Vec<usize>,
    pub completion_cap: usize,
    pub completion_samples: usize,
    pub seed: u64,
}

impl Default for TimeClassifierConfig {
    fn default() -> Self {
        Self {
            observations: 2,
            prior: None,
            steps: 4000,
            batch_per_base: 256,
            times_per_sample: 1,
            lr: 1e-3,
            ema: 0.995,
            terminal_only_fraction: 0.25,
            hidden: vec![128, 128],
            completion_cap: 64,
            completion_samples: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeClassifierMetrics {
    pub step: usize,
    pub terminal_loss: f64,
    pub nonterminal_loss: f64,
    pub gamma: f64,
}

/// Trains a [`TimeClassifier`] on noised samples of the bases.
///
/// Each clean sample `x_0 ~ p_i` contributes a terminal row labelled `i` and
/// noisy rows `x_t ~ N(x_0, v(t))` at uniform times, whose joint targets are
/// `i` followed by label completions drawn from the target network's
/// terminal head at `x_0`. The pair `(x_0, x_t)` has the law of the end
/// points of a reverse-SDE trajectory of an exact base model.
pub fn train_time_classifier(
    dms: &[DiffusedMixture],
    config: &TimeClassifierConfig,
) -> Result<(TimeClassifier, Vec<TimeClassifierMetrics>)> {
    let m = dms.len();
    let prior = config.prior.clone().unwrap_or_else(|| vec![1.0 / m.max(1) as f64; m]);
    check_family(dms, &prior)?;
    let sde = shared_sde(dms, &prior)?;
    if config.batch_per_base == 0 || config.times_per_sample == 0 {
        return Err(Error::InvalidArgument("batch sizes must be positive".into()));
    }
    let d = dms[0].dim();
    let n = config.observations;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut clf = TimeClassifier::new(sde, d, prior.clone(), n, &config.hidden, config.ema, &mut rng)?;
    let model = clf.model()?;
    let width = m.pow(n as u32);
    let tail = width / m;
    let exact_completions = tail <= config.completion_cap;
    let b = config.batch_per_base;
    let k = config.times_per_sample;
    let base_weight: Vec<f64> = prior.iter().map(|w| m as f64 * w / b as f64).collect();
    let warm = (config.terminal_only_fraction * config.steps as f64).round() as usize;
    let mut opt = Adam::new(clf.net.num_params(), config.lr);
    let dim_in = clf.net.input_dim();
    let mut metrics = Vec::with_capacity(config.steps);

    let active: Vec<usize> = (0..m).filter(|&i| prior[i] > 0.0).collect();
    let rows_term = active.len() * b;
    for step in 0..config.steps {
        let gamma = if step < warm { 0.0 } else { 1.0 };
        let mut x0 = Array2::zeros((rows_term, d));
        let mut labels = Vec::with_capacity(rows_term);
        for (r, &i) in active.iter().flat_map(|i| std::iter::repeat(i).take(b)).enumerate() {
            x0.row_mut(r).assign(&ndarray::ArrayView1::from(dms[i].base.sample(&mut rng).as_slice()));
            labels.push(i);
        }
        let mut t_term = Array2::zeros((rows_term, m));
        for (r, &i) in labels.iter().enumerate() {
            t_term[[r, i]] = base_weight[i];
        }
        let rows_noisy = if gamma > 0.0 { rows_term * k } else { 0 };
        let mut x = Array2::zeros((rows_term + rows_noisy, dim_in));
        for (r, row) in x0.axis_iter(Axis(0)).enumerate() {
            clf.encode(0.0, &row.to_vec(), x.row_mut(r).as_slice_mut().expect("contiguous row"));
        }
        let mut t_joint = Array2::zeros((rows_noisy, width));
        if rows_noisy > 0 {
            let target_out = clf.net.forward_batch_with(clf.target.params(), x.slice(s![..rows_term, ..]))?;
            let q = log_softmax_rows(target_out.slice(s![.., ..m])).mapv(f64::exp);
            let mut completion = vec![0.0; tail];
            for r in 0..rows_term {
                let i = labels[r];
                let qr = q.row(r).to_vec();
                let w: Vec<Vec<f64>> = (1..n).map(|k| model.observation_weights(k, &qr)).collect();
                completion.iter_mut().for_each(|v| *v = 0.0);
                if exact_completions {
                    for (idx, c) in completion.iter_mut().enumerate() {
                        let mut rest = idx;
                        let mut p = 1.0;
                        for kk in (0..n - 1).rev() {
                            p *= w[kk][rest % m];
                            rest /= m;
                        }
                        *c = p;
                    }
                } else {
                    let each = 1.0 / config.completion_samples as f64;
                    for _ in 0..config.completion_samples {
                        let mut idx = 0;
                        for wk in &w {
                            idx = idx * m + sample_index(wk, rng.gen());
                        }
                        completion[idx] += each;
                    }
                }
                for j in 0..k {
                    let row = rows_term + r * k + j;
                    let t: f64 = rng.gen_range(1e-3..=VeSde::HORIZON);
                    let sd = sde.added_variance(t).sqrt();
                    let xt: Vec<f64> = x0.row(r).iter().map(|v| v + sd * rng.sample::<f64, _>(StandardNormal)).collect();
                    clf.encode(t, &xt, x.row_mut(row).as_slice_mut().expect("contiguous row"));
                    let mut target = t_joint.row_mut(r * k + j);
                    for (c, v) in completion.iter().enumerate() {
                        target[i * tail + c] = base_weight[i] / k as f64 * v;
                    }
                }
            }
        }

        let cache = clf.net.forward_train(x.view())?;
        let out = cache.output();
        let (lt, g_term) = softmax_cross_entropy(out.slice(s![..rows_term, ..m]), t_term.view());
        let (ln, g_joint) = softmax_cross_entropy(out.slice(s![rows_term.., m..]), t_joint.view());
        if !(lt.is_finite() && ln.is_finite()) {
            return Err(Error::NonFiniteDetected(format!("classifier loss at step {step}")));
        }
        let mut upstream = Array2::zeros(out.dim());
        upstream.slice_mut(s![..rows_term, ..]).assign(&place_columns(&g_term, 0, m + width));
        if rows_noisy > 0 {
            upstream.slice_mut(s![rows_term.., ..]).assign(&(place_columns(&g_joint, m, m + width) * gamma));
        }
        let (grads, _) = clf.net.backward(&cache, upstream.view())?;
        opt.step(clf.net.params_mut(), &grads)?;
        clf.target.update(clf.net.params())?;
        metrics.push(TimeClassifierMetrics { step: step + 1, terminal_loss: lt, nonterminal_loss: ln, gamma });
    }
    Ok((clf, metrics))
}

fn sample_index(w: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in w.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    w.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::GaussianMixtureDensity;
    use crate::diffusion::{label_posterior, QuadratureOracle};

    fn fig2() -> Vec<DiffusedMixture> {
        let sde = VeSde::default();
        vec![
            DiffusedMixture::new(GaussianMixtureDensity::univariate(-1.25, 1.0).unwrap(), sde),
            DiffusedMixture::new(GaussianMixtureDensity::univariate(1.25, 0.5).unwrap(), sde),
        ]
    }

    fn quick() -> TimeClassifierConfig {
        TimeClassifierConfig { steps: 1500, batch_per_base: 128, hidden: vec![64, 64], seed: 4, ..Default::default() }
    }

    #[test]
    fn identical_bases_give_uniform_outputs() {
        let dms = vec![fig2()[0].clone(), fig2()[0].clone()];
        let (clf, _) = train_time_classifier(&dms, &TimeClassifierConfig { steps: 600, ..quick() }).unwrap();
        let g = clf.guide(true).unwrap();
        for (t, x) in [(0.0, -1.0), (0.3, 0.5), (0.8, 2.0)] {
            let p = if t == 0.0 { g.terminal_probs(&[x]).unwrap() } else { g.joint_probs(t, &[x]).unwrap() };
            let u = 1.0 / p.len() as f64;
            let kl: f64 = p.iter().map(|q| q * (q / u).ln()).sum();
            assert!(kl <= 1e-3, "KL {kl} at t {t}");
        }
    }

    #[test]
    fn learns_the_terminal_ratio_and_the_joint() {
        let dms = fig2();
        let (clf, metrics) = train_time_classifier(&dms, &quick()).unwrap();
        assert_eq!(metrics[0].gamma, 0.0);
        assert_eq!(metrics.last().unwrap().gamma, 1.0);
        let g = clf.guide(true).unwrap();
        let grid: Vec<f64> = (0..41).map(|i| -3.0 + 0.15 * i as f64).collect();
        let mae = grid
            .iter()
            .map(|&x| (g.terminal_probs(&[x]).unwrap()[0] - label_posterior(&dms, &[0.5, 0.5], 0.0, &[x]).unwrap()[0]).abs())
            .sum::<f64>()
            / grid.len() as f64;
        assert!(mae <= 0.02, "terminal MAE {mae}");

        let oracle = QuadratureOracle::iid(dms.clone(), vec![0.5, 0.5], 2).unwrap();
        let mut err = 0.0;
        let mut count = 0.0;
        for t in [0.1, 0.3, 0.5] {
            for &x in grid.iter().step_by(4) {
                let p = g.joint_probs(t, &[x]).unwrap();
                for (idx, obs) in [[0, 0], [0, 1], [1, 0], [1, 1]].iter().enumerate() {
                    err += (p[idx] - oracle.log_joint(t, &[x], obs).unwrap().exp()).abs();
                    count += 1.0;
                }
            }
        }
        assert!(err / count <= 0.05, "joint MAE {}", err / count);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let dms = fig2();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let clf = TimeClassifier::new(dms[0].sde, 1, vec![0.5, 0.5], 2, &[16], 0.9, &mut rng).unwrap();
        let g = clf.guide(false).unwrap();
        let xs = Array2::from_shape_vec((3, 1), vec![-1.0, 0.2, 1.4]).unwrap();
        let (_, grads) = g.guidance_batch(0.4, xs.view(), &[0, 1]).unwrap();
        for (i, x) in xs.column(0).iter().enumerate() {
            let h = 1e-5;
            let fd = (g.log_obs(0.4, &[x + h], &[0, 1]).unwrap() - g.log_obs(0.4, &[x - h], &[0, 1]).unwrap()) / (2.0 * h);
            assert!((fd - grads[[i, 0]]).abs() < 1e-7, "{fd} vs {}", grads[[i, 0]]);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dms = fig2();
        let (clf, _) = train_time_classifier(&dms, &TimeClassifierConfig { steps: 5, ..quick() }).unwrap();
        let back = TimeClassifier::from_checkpoint(&Checkpoint::from_bytes(&clf.to_checkpoint(5).to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back.net(), clf.net());
        assert_eq!(back.guide(true).unwrap().joint_probs(0.3, &[0.1]).unwrap(), clf.guide(true).unwrap().joint_probs(0.3, &[0.1]).unwrap());
    }
}
