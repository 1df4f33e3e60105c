use std::collections::BTreeMap;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::GridDag;
use super::oracle::{observation_weights, ClassifierTable};
use super::policy::{ForwardPolicy, TrajectorySampler};
use crate::densities::{validate_simplex, LabelModel};
use crate::error::{Error, Result};
use crate::nn::{log_softmax_rows, place_columns, softmax_cross_entropy, Activation, Adam, Checkpoint, EmaShadow, Mlp};

/// Learned label classifier over grid states with a terminal head
/// `Q(y_1 | x)` (first `m` outputs) and a joint head `Q(y_1..y_n | s)` for
/// non-terminal states (next `m^n` outputs). Inputs are the one-hot cell,
/// a terminal flag and, for the parameterized model, `log(alpha / (1 - alpha))`.
#[derive(Clone, Debug, PartialEq)]
pub struct SculptClassifier {
    dag: GridDag,
    prior: Vec<f64>,
    n: usize,
    parameterized: bool,
    net: Mlp,
    target: EmaShadow,
}

impl SculptClassifier {
    pub fn new<R: Rng + ?Sized>(
        dag: GridDag,
        prior: Vec<f64>,
        n: usize,
        parameterized: bool,
        hidden: &[usize],
        ema: f64,
        rng: &mut R,
    ) -> Result<Self> {
        validate_simplex(&prior)?;
        let m = prior.len();
        if n == 0 {
            return Err(Error::EmptyObservations);
        }
        if parameterized && (m != 2 || n != 2) {
            return Err(Error::InvalidArgument("the parameterized classifier needs two bases and two observations".into()));
        }
        let mut sizes = vec![input_dim(dag, parameterized)];
        sizes.extend(hidden);
        sizes.push(m + m.pow(n as u32));
        let net = Mlp::new(sizes, Activation::Tanh, rng)?;
        let target = EmaShadow::new(net.params(), ema)?;
        Ok(Self { dag, prior, n, parameterized, net, target })
    }

    pub fn dag(&self) -> GridDag {
        self.dag
    }

    pub fn num_bases(&self) -> usize {
        self.prior.len()
    }

    pub fn num_observations(&self) -> usize {
        self.n
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn is_parameterized(&self) -> bool {
        self.parameterized
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn target_params(&self) -> &[f64] {
        self.target.params()
    }

    /// Label model the classifier is trained for.
    pub fn model(&self, alpha: Option<f64>) -> Result<LabelModel> {
        match (self.parameterized, alpha) {
            (true, Some(a)) => LabelModel::alpha(self.prior.clone(), a),
            (false, None) => LabelModel::iid(self.prior.clone(), self.n),
            (true, None) => Err(Error::InvalidArgument("parameterized classifier needs an alpha".into())),
            (false, Some(_)) => Err(Error::InvalidArgument("classifier was not trained with alpha".into())),
        }
    }

    fn encode(&self, s: usize, alpha_feature: f64, out: &mut [f64]) {
        let h = self.dag.height();
        let (r, c) = self.dag.cell(s);
        out.iter_mut().for_each(|v| *v = 0.0);
        out[r] = 1.0;
        out[h + c] = 1.0;
        out[2 * h] = if self.dag.is_terminal(s) { 1.0 } else { 0.0 };
        if self.parameterized {
            out[2 * h + 1] = alpha_feature;
        }
    }

    /// Evaluates every state with either the live or the target parameters.
    pub fn tabulate(&self, alpha: Option<f64>, use_target: bool) -> Result<ClassifierTable> {
        let model = self.model(alpha)?;
        let feature = alpha.map_or(0.0, |a| (a / (1.0 - a)).ln());
        let cells = self.dag.num_cells();
        let mut x = Array2::zeros((2 * cells, self.net.input_dim()));
        for (s, mut row) in x.rows_mut().into_iter().enumerate() {
            let f = if self.dag.is_terminal(s) { 0.0 } else { feature };
            self.encode(s, f, row.as_slice_mut().expect("contiguous row"));
        }
        let params = if use_target { self.target.params() } else { self.net.params() };
        let out = self.net.forward_batch_with(params, x.view())?;
        let m = self.num_bases();
        let joint = log_softmax_rows(out.slice(s![..cells, m..]));
        let term = log_softmax_rows(out.slice(s![cells.., ..m]));
        let rows = |a: Array2<f64>| a.rows().into_iter().map(|r| r.iter().map(|v| v.exp()).collect()).collect();
        ClassifierTable::new(self.dag, model, rows(term), rows(joint))
    }

    pub fn to_checkpoint(&self, step: u64) -> Checkpoint {
        let target = Mlp::from_params(self.net.sizes().to_vec(), self.net.activation(), self.target.params().to_vec())
            .expect("target mirrors the live network");
        Checkpoint::new(
            step,
            serde_json::json!({
                "kind": "grid-classifier",
                "height": self.dag.height(),
                "prior": self.prior,
                "observations": self.n,
                "parameterized": self.parameterized,
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
            height: usize,
            prior: Vec<f64>,
            observations: usize,
            parameterized: bool,
            ema: f64,
        }
        let meta: Meta = serde_json::from_value(ck.meta.clone()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if meta.kind != "grid-classifier" {
            return Err(Error::Checkpoint(format!("expected a grid classifier, found `{}`", meta.kind)));
        }
        let dag = GridDag::new(meta.height)?;
        let net = ck.net("live")?.clone();
        let m = meta.prior.len();
        if net.input_dim() != input_dim(dag, meta.parameterized) || net.output_dim() != m + m.pow(meta.observations as u32) {
            return Err(Error::Checkpoint("classifier network does not match its metadata".into()));
        }
        let target = EmaShadow::new(ck.net("target")?.params(), meta.ema)?;
        Ok(Self { dag, prior: meta.prior, n: meta.observations, parameterized: meta.parameterized, net, target })
    }
}

fn input_dim(dag: GridDag, parameterized: bool) -> usize {
    2 * dag.height() + 1 + usize::from(parameterized)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub observations: usize,
    /// Mixture weights of the bases; uniform when absent.
    pub prior: Option<Vec<f64>>,
    pub parameterized: bool,
    pub steps: usize,
    pub batch_per_base: usize,
    pub lr: f64,
    pub ema: f64,
    /// Fraction of the steps over which the non-terminal loss weight ramps from 0 to 1.
    pub warmup_fraction: f64,
    pub hidden: Vec<usize>,
    /// Sum over all label completions when there are at most this many.
    pub completion_cap: usize,
    pub completion_samples: usize,
    /// Distinct alpha values drawn per step for the parameterized model.
    pub alpha_groups: usize,
    pub alpha_logit_range: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            observations: 2,
            prior: None,
            parameterized: false,
            steps: 15_000,
            batch_per_base: 64,
            lr: 1e-3,
            ema: 0.995,
            warmup_fraction: 0.2,
            hidden: vec![256, 256],
            completion_cap: 64,
            completion_samples: 16,
            alpha_groups: 8,
            alpha_logit_range: 3.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub step: usize,
    pub terminal_loss: f64,
    pub nonterminal_loss: f64,
    pub gamma: f64,
}

/// Trains a classifier on trajectories of the base policies.
pub fn train_classifier(
    bases: &[ForwardPolicy],
    config: &ClassifierConfig,
) -> Result<(SculptClassifier, Vec<ClassifierMetrics>)> {
    train_classifier_with(bases, config, |_, _| Ok(()))
}

/// As [`train_classifier`], calling `monitor(step, classifier)` after every update.
pub fn train_classifier_with<F>(
    bases: &[ForwardPolicy],
    config: &ClassifierConfig,
    mut monitor: F,
) -> Result<(SculptClassifier, Vec<ClassifierMetrics>)>
where
    F: FnMut(usize, &SculptClassifier) -> Result<()>,
{
    let m = bases.len();
    if m == 0 {
        return Err(Error::InvalidArgument("no base policies".into()));
    }
    let dag = bases[0].dag();
    if bases.iter().any(|b| b.dag() != dag) {
        return Err(Error::InvalidArgument("policies live on different grids".into()));
    }
    if config.batch_per_base == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let prior = config.prior.clone().unwrap_or_else(|| vec![1.0 / m as f64; m]);
    if prior.len() != m {
        return Err(Error::BadWeights(format!("{} prior weights for {m} bases", prior.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut clf = SculptClassifier::new(
        dag,
        prior.clone(),
        config.observations,
        config.parameterized,
        &config.hidden,
        config.ema,
        &mut rng,
    )?;
    let samplers = bases.iter().map(|b| TrajectorySampler::new(b, 0.0)).collect::<Result<Vec<_>>>()?;
    let n = config.observations;
    let width = m.pow(n as u32);
    let tail = width / m;
    let groups = if config.parameterized { config.alpha_groups.max(1) } else { 1 };
    let exact_completions = tail <= config.completion_cap;
    let base_weight: Vec<f64> = prior.iter().map(|w| m as f64 * w / config.batch_per_base as f64).collect();
    let warmup = (config.warmup_fraction * config.steps as f64).round();
    let mut opt = Adam::new(clf.net.num_params(), config.lr);
    let dim = clf.net.input_dim();
    let mut metrics = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let (models, features): (Vec<LabelModel>, Vec<f64>) = if config.parameterized {
            (0..groups)
                .map(|_| {
                    let z = rng.gen_range(-config.alpha_logit_range..=config.alpha_logit_range);
                    let a = 1.0 / (1.0 + (-z as f64).exp());
                    LabelModel::alpha(prior.clone(), a).map(|md| (md, z))
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip()
        } else {
            (vec![LabelModel::iid(prior.clone(), n)?], vec![0.0])
        };

        // One batch of trajectories per base, each tagged with an alpha group.
        let mut trajectories = Vec::with_capacity(m * config.batch_per_base);
        for (i, sampler) in samplers.iter().enumerate() {
            if prior[i] == 0.0 {
                continue;
            }
            for b in 0..config.batch_per_base {
                trajectories.push((i, b % groups, sampler.sample(&mut rng)));
            }
        }

        // Terminal rows, deduplicated by cell.
        let mut terminal: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (i, _, tau) in &trajectories {
            terminal.entry(tau.terminal()).or_insert_with(|| vec![0.0; m])[*i] += base_weight[*i];
        }
        let terminal_states: Vec<usize> = terminal.keys().copied().collect();
        let mut x_term = Array2::zeros((terminal_states.len(), dim));
        for (row, &s) in terminal_states.iter().enumerate() {
            clf.encode(s, 0.0, x_term.row_mut(row).as_slice_mut().expect("contiguous row"));
        }
        let target_out = clf.net.forward_batch_with(clf.target.params(), x_term.view())?;
        let target_q = log_softmax_rows(target_out.slice(s![.., ..m])).mapv(f64::exp);
        let q_of: BTreeMap<usize, Vec<f64>> = terminal_states
            .iter()
            .enumerate()
            .map(|(row, &s)| (s, target_q.row(row).to_vec()))
            .collect();

        // Non-terminal rows, deduplicated by (state, alpha group).
        let mut nonterminal: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        let mut completion = vec![0.0; tail];
        for (i, g, tau) in &trajectories {
            let q = &q_of[&tau.terminal()];
            let w: Vec<Vec<f64>> = (1..n).map(|k| observation_weights(&models[*g], k, q)).collect();
            completion.iter_mut().for_each(|v| *v = 0.0);
            if exact_completions {
                for (idx, c) in completion.iter_mut().enumerate() {
                    let mut rest = idx;
                    let mut p = 1.0;
                    for k in (0..n - 1).rev() {
                        p *= w[k][rest % m];
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
            for &s in tau.non_terminal_states() {
                let row = nonterminal.entry((s, *g)).or_insert_with(|| vec![0.0; width]);
                for (r, c) in row[i * tail..(i + 1) * tail].iter_mut().zip(&completion) {
                    *r += base_weight[*i] * c;
                }
            }
        }

        let nt = terminal_states.len();
        let mut x = Array2::zeros((nt + nonterminal.len(), dim));
        x.slice_mut(s![..nt, ..]).assign(&x_term);
        let mut t_term = Array2::zeros((nt, m));
        for (row, counts) in terminal.values().enumerate() {
            t_term.row_mut(row).assign(&ndarray::ArrayView1::from(counts.as_slice()));
        }
        let mut t_joint = Array2::zeros((nonterminal.len(), width));
        for (row, ((s, g), target)) in nonterminal.iter().enumerate() {
            clf.encode(*s, features[*g], x.row_mut(nt + row).as_slice_mut().expect("contiguous row"));
            t_joint.row_mut(row).assign(&ndarray::ArrayView1::from(target.as_slice()));
        }

        let gamma = if warmup > 0.0 { (step as f64 / warmup).min(1.0) } else { 1.0 };
        let cache = clf.net.forward_train(x.view())?;
        let out = cache.output();
        let (lt, g_term) = softmax_cross_entropy(out.slice(s![..nt, ..m]), t_term.view());
        let (ln, g_joint) = softmax_cross_entropy(out.slice(s![nt.., m..]), t_joint.view());
        if !(lt.is_finite() && ln.is_finite()) {
            return Err(Error::NonFiniteDetected(format!("classifier loss at step {step}")));
        }
        let mut upstream = Array2::zeros(out.dim());
        upstream.slice_mut(s![..nt, ..]).assign(&place_columns(&g_term, 0, m + width));
        upstream.slice_mut(s![nt.., ..]).assign(&(place_columns(&g_joint, m, m + width) * gamma));
        let (grads, _) = clf.net.backward(&cache, upstream.view())?;
        opt.step(clf.net.params_mut(), &grads)?;
        clf.target.update(clf.net.params())?;
        metrics.push(ClassifierMetrics { step: step + 1, terminal_loss: lt, nonterminal_loss: ln, gamma });
        monitor(step + 1, &clf)?;
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
    use crate::gflownet::{enumerate_distribution, Action};

    fn small(steps: usize) -> ClassifierConfig {
        ClassifierConfig {
            steps,
            batch_per_base: 16,
            hidden: vec![32, 32],
            lr: 3e-3,
            ema: 0.9,
            seed: 11,
            ..ClassifierConfig::default()
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dag = GridDag::new(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = SculptClassifier::new(dag, vec![0.5, 0.5], 2, true, &[4], 0.9, &mut rng).unwrap();
        let back = SculptClassifier::from_checkpoint(&Checkpoint::from_bytes(&c.to_checkpoint(3).to_bytes().unwrap()).unwrap())
            .unwrap();
        assert_eq!(back, c);
        assert!(c.tabulate(None, false).is_err());
        assert!(c.tabulate(Some(0.3), true).is_ok());
    }

    #[test]
    fn monte_carlo_completions_run() {
        let dag = GridDag::new(3).unwrap();
        let bases = vec![ForwardPolicy::uniform(dag); 3];
        let cfg = ClassifierConfig { observations: 3, completion_cap: 2, ..small(5) };
        let (c, m) = train_classifier(&bases, &cfg).unwrap();
        assert_eq!(m.len(), 5);
        assert_eq!(c.tabulate(None, false).unwrap().joint(0).len(), 27);
    }

    #[test]
    fn learns_the_terminal_ratio() {
        let dag = GridDag::new(3).unwrap();
        let a = ForwardPolicy::uniform(dag);
        let b = ForwardPolicy::deterministic(dag, &[Action::Down, Action::Right]).unwrap();
        let (c, metrics) = train_classifier(&[a.clone(), b.clone()], &small(600)).unwrap();
        assert!(metrics.last().unwrap().gamma == 1.0);
        let t = c.tabulate(None, false).unwrap();
        let (pa, pb) = (enumerate_distribution(&a).unwrap(), enumerate_distribution(&b).unwrap());
        let cells = dag.num_cells();
        let x = dag.state(1, 1, true) - cells;
        let exact = pa.get(x) / (pa.get(x) + pb.get(x));
        assert!((t.label_probs(cells + x)[0] - exact).abs() < 0.05);
        let only_a = dag.state(0, 0, true);
        assert!(t.label_probs(only_a)[0] > 0.9);
    }
}
