use super::grid::{Action, GridDag};
use super::policy::{enumerate_distribution, state_visit_probs, ForwardPolicy};
use crate::densities::{DensityTable, LabelModel};
use crate::error::{Error, Result};

/// Label probabilities at every state of a grid DAG: the joint
/// `Q(y_1..y_n | s)` over `m^n` label tuples (first label most significant)
/// used for guidance, and the base-identity weights `p(y = i | s)` used to
/// mix the base policies.
///
/// For an exact table the two differ at non-terminal states: the mixture
/// weights are `w_i p_i(s) / sum_j w_j p_j(s)` from visit probabilities,
/// while the guidance joint is defined by the Markov chain of the mixture
/// policy. A learned classifier approximates both with one joint head.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierTable {
    dag: GridDag,
    model: LabelModel,
    joint: Vec<Vec<f64>>,
    mixture: Vec<Vec<f64>>,
}

/// `p(y_k = . | x)` from the first-label posterior `q` at a terminal state.
pub(crate) fn observation_weights(model: &LabelModel, k: usize, q: &[f64]) -> Vec<f64> {
    model.observation_weights(k, q)
}

/// `prod_k p(y_k | x)` over every label tuple.
pub(crate) fn terminal_joint(model: &LabelModel, q: &[f64]) -> Vec<f64> {
    let m = model.num_bases();
    let mut joint = vec![1.0];
    for k in 0..model.num_observations() {
        let w = observation_weights(model, k, q);
        joint = joint.iter().flat_map(|j| w.iter().map(move |v| j * v)).collect();
        debug_assert_eq!(joint.len() % m, 0);
    }
    joint
}

impl ClassifierTable {
    /// `terminal_q` holds `Q(y_1 | x)` per cell; `nonterminal_joint` holds the
    /// joint per non-terminal state. Terminal joints follow from the model.
    pub fn new(
        dag: GridDag,
        model: LabelModel,
        terminal_q: Vec<Vec<f64>>,
        nonterminal_joint: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let m = model.num_bases();
        let width = m.pow(model.num_observations() as u32);
        if terminal_q.len() != dag.num_cells() || nonterminal_joint.len() != dag.num_cells() {
            return Err(Error::InvalidTable(format!("classifier table must cover {} cells", dag.num_cells())));
        }
        if terminal_q.iter().any(|q| q.len() != m) || nonterminal_joint.iter().any(|j| j.len() != width) {
            return Err(Error::InvalidTable("classifier rows have the wrong number of labels".into()));
        }
        let mut joint = nonterminal_joint;
        joint.extend(terminal_q.iter().map(|q| terminal_joint(&model, q)));
        if joint.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::NonFiniteDetected("classifier probabilities".into()));
        }
        let block = width / m;
        let mixture = joint[..dag.num_cells()]
            .iter()
            .map(|j| (0..m).map(|i| j[i * block..(i + 1) * block].iter().sum()).collect())
            .collect();
        Ok(Self { dag, model, joint, mixture })
    }

    /// Replaces the mixture weights of the non-terminal states.
    pub fn with_mixture_weights(mut self, weights: Vec<Vec<f64>>) -> Result<Self> {
        if weights.len() != self.dag.num_cells() || weights.iter().any(|w| w.len() != self.num_bases()) {
            return Err(Error::InvalidTable("mixture weights must give every base at every cell".into()));
        }
        self.mixture = weights;
        Ok(self)
    }

    pub fn dag(&self) -> GridDag {
        self.dag
    }

    pub fn model(&self) -> &LabelModel {
        &self.model
    }

    pub fn num_bases(&self) -> usize {
        self.model.num_bases()
    }

    pub fn num_observations(&self) -> usize {
        self.model.num_observations()
    }

    /// `p(y = . | s)` for mixing the bases at a non-terminal state.
    pub fn mixture_weights(&self, s: usize) -> &[f64] {
        &self.mixture[s]
    }

    /// First-label marginal of the guidance joint.
    pub fn label_probs(&self, s: usize) -> Vec<f64> {
        let m = self.num_bases();
        let block = self.joint[s].len() / m;
        (0..m).map(|i| self.joint[s][i * block..(i + 1) * block].iter().sum()).collect()
    }

    /// `Q(y_1..y_n | s)` over all label tuples.
    pub fn joint(&self, s: usize) -> &[f64] {
        &self.joint[s]
    }

    pub fn check_observations(&self, observations: &[usize]) -> Result<()> {
        if observations.is_empty() {
            return Err(Error::EmptyObservations);
        }
        if observations.len() > self.num_observations() {
            return Err(Error::InvalidArgument(format!(
                "classifier covers {} observations, got {}",
                self.num_observations(),
                observations.len()
            )));
        }
        let m = self.num_bases();
        if let Some(&label) = observations.iter().find(|&&l| l >= m) {
            return Err(Error::LabelOutOfRange { label, num_bases: m });
        }
        Ok(())
    }

    /// `Q(y_1 = o_1, .., y_k = o_k | s)`, summing out the remaining labels.
    /// Observations must already be checked.
    pub fn obs_prob(&self, s: usize, observations: &[usize]) -> f64 {
        let m = self.num_bases();
        let rest = m.pow((self.num_observations() - observations.len()) as u32);
        let start = observations.iter().fold(0, |acc, &o| acc * m + o) * rest;
        self.joint[s][start..start + rest].iter().sum()
    }

    /// Largest violation of `Q(y | s) = sum_s' p_M(s' | s) Q(y | s')` over
    /// non-terminal states, with the mixture policy weighted by the table's
    /// mixture weights.
    pub fn recursion_residual(&self, bases: &[ForwardPolicy]) -> Result<f64> {
        let tables = log_tables(bases, self.dag)?;
        let mut worst: f64 = 0.0;
        for s in 0..self.dag.num_cells() {
            let pm = mixture_action_probs(&tables, self.mixture_weights(s), s);
            for (y, &q) in self.joint[s].iter().enumerate() {
                let rhs: f64 = Action::ALL
                    .iter()
                    .filter_map(|&a| self.dag.successor(s, a).map(|t| pm[a.index()] * self.joint[t][y]))
                    .sum();
                worst = worst.max((q - rhs).abs());
            }
        }
        Ok(worst)
    }
}

pub(crate) fn log_tables(bases: &[ForwardPolicy], dag: GridDag) -> Result<Vec<Vec<[f64; 3]>>> {
    if bases.iter().any(|b| b.dag() != dag) {
        return Err(Error::InvalidArgument("policies live on different grids".into()));
    }
    bases.iter().map(|b| b.log_prob_table()).collect()
}

/// `sum_i w_i p_{i,F}(a | s)`.
pub(crate) fn mixture_action_probs(tables: &[Vec<[f64; 3]>], w: &[f64], s: usize) -> [f64; 3] {
    let mut p = [0.0; 3];
    for (t, wi) in tables.iter().zip(w) {
        for a in 0..3 {
            p[a] += wi * t[s][a].exp();
        }
    }
    p
}

/// Exact classifier for the label model over base policies: state labels
/// from visit probabilities, terminal joints from the model, non-terminal
/// joints by the backward recursion through the mixture policy.
pub fn exact_classifier(
    bases: &[ForwardPolicy],
    base_dists: &[DensityTable],
    model: &LabelModel,
) -> Result<ClassifierTable> {
    let m = model.num_bases();
    if bases.len() != m || base_dists.len() != m {
        return Err(Error::InvalidArgument(format!(
            "model has {m} bases, got {} policies and {} tables",
            bases.len(),
            base_dists.len()
        )));
    }
    let dag = bases[0].dag();
    let tables = log_tables(bases, dag)?;
    for (b, d) in bases.iter().zip(base_dists) {
        let l1 = enumerate_distribution(b)?.l1_distance(d)?;
        if l1 > 1e-6 {
            return Err(Error::InconsistentBases { l1 });
        }
    }
    let visits: Vec<Vec<f64>> = tables.iter().map(|t| state_visit_probs(&dag, t)).collect();
    let prior = model.prior();
    let label_at = |s: usize| -> Vec<f64> {
        let raw: Vec<f64> = (0..m).map(|i| prior[i] * visits[i][s]).collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            raw.into_iter().map(|v| v / total).collect()
        } else {
            prior.to_vec()
        }
    };
    let n_cells = dag.num_cells();
    let mut joint: Vec<Vec<f64>> = vec![Vec::new(); dag.num_states()];
    for x in 0..n_cells {
        joint[n_cells + x] = terminal_joint(model, &label_at(n_cells + x));
    }
    for s in (0..n_cells).rev() {
        let pm = mixture_action_probs(&tables, &label_at(s), s);
        let mut row = vec![0.0; joint[n_cells].len()];
        for a in Action::ALL {
            if let Some(t) = dag.successor(s, a) {
                for (r, q) in row.iter_mut().zip(&joint[t]) {
                    *r += pm[a.index()] * q;
                }
            }
        }
        joint[s] = row;
    }
    let terminal_q = (0..n_cells).map(|x| label_at(n_cells + x)).collect();
    joint.truncate(n_cells);
    ClassifierTable::new(dag, model.clone(), terminal_q, joint)?
        .with_mixture_weights((0..n_cells).map(label_at).collect())
}
