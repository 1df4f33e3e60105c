use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::{Action, GridDag, NUM_ACTIONS};
use crate::densities::DensityTable;
use crate::error::{Error, Result};
use crate::nn::Mlp;

/// Forward policy over a grid DAG. Illegal actions are masked before the
/// softmax, so any logit may be given for them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ForwardPolicy {
    /// One logit triple per non-terminal state; `-inf` disables an action.
    Tabular { dag: GridDag, logits: Vec<[f64; NUM_ACTIONS]> },
    /// Network over the one-hot `(row, col)` encoding with three outputs.
    Neural { dag: GridDag, net: Mlp },
}

/// One-hot row followed by one-hot column.
pub fn encode_cell(dag: &GridDag, s: usize, out: &mut [f64]) {
    let h = dag.height();
    let (r, c) = dag.cell(s);
    out[..2 * h].iter_mut().for_each(|v| *v = 0.0);
    out[r] = 1.0;
    out[h + c] = 1.0;
}

/// Log-softmax over legal actions; illegal entries are `-inf`.
pub fn masked_log_softmax(logits: &[f64; NUM_ACTIONS], mask: [bool; NUM_ACTIONS]) -> Result<[f64; NUM_ACTIONS]> {
    let max = (0..NUM_ACTIONS)
        .filter(|&a| mask[a])
        .map(|a| logits[a])
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument("no legal action has a finite logit".into()));
    }
    if logits.iter().zip(mask).any(|(l, m)| m && (l.is_nan() || *l == f64::INFINITY)) {
        return Err(Error::NonFiniteDetected("policy logits".into()));
    }
    let lse = max
        + (0..NUM_ACTIONS)
            .filter(|&a| mask[a])
            .map(|a| (logits[a] - max).exp())
            .sum::<f64>()
            .ln();
    let mut out = [f64::NEG_INFINITY; NUM_ACTIONS];
    for a in 0..NUM_ACTIONS {
        if mask[a] {
            out[a] = logits[a] - lse;
        }
    }
    Ok(out)
}

impl ForwardPolicy {
    pub fn uniform(dag: GridDag) -> Self {
        ForwardPolicy::Tabular { dag, logits: vec![[0.0; NUM_ACTIONS]; dag.num_cells()] }
    }

    pub fn from_logits(dag: GridDag, logits: Vec<[f64; NUM_ACTIONS]>) -> Result<Self> {
        if logits.len() != dag.num_cells() {
            return Err(Error::InvalidArgument(format!(
                "{} logit rows for {} non-terminal states",
                logits.len(),
                dag.num_cells()
            )));
        }
        for (s, l) in logits.iter().enumerate() {
            masked_log_softmax(l, dag.legal_mask(s))?;
        }
        Ok(ForwardPolicy::Tabular { dag, logits })
    }

    pub fn neural(dag: GridDag, net: Mlp) -> Result<Self> {
        if net.input_dim() != 2 * dag.height() || net.output_dim() != NUM_ACTIONS {
            return Err(Error::InvalidArgument(format!(
                "policy network must map {} inputs to {NUM_ACTIONS} logits",
                2 * dag.height()
            )));
        }
        Ok(ForwardPolicy::Neural { dag, net })
    }

    /// A policy that always takes the given actions in sequence and then
    /// stops: every other action gets `-inf`.
    pub fn deterministic(dag: GridDag, moves: &[Action]) -> Result<Self> {
        let mut logits = vec![[f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0]; dag.num_cells()];
        let mut s = dag.initial_state();
        for &a in moves {
            logits[s] = [f64::NEG_INFINITY; NUM_ACTIONS];
            logits[s][a.index()] = 0.0;
            s = dag
                .successor(s, a)
                .filter(|t| !dag.is_terminal(*t))
                .ok_or_else(|| Error::InvalidArgument(format!("move {a:?} leaves the grid")))?;
        }
        Self::from_logits(dag, logits)
    }

    pub fn dag(&self) -> GridDag {
        match self {
            ForwardPolicy::Tabular { dag, .. } | ForwardPolicy::Neural { dag, .. } => *dag,
        }
    }

    /// Masked log-probabilities for every non-terminal state.
    pub fn log_prob_table(&self) -> Result<Vec<[f64; NUM_ACTIONS]>> {
        let dag = self.dag();
        let raw: Vec<[f64; NUM_ACTIONS]> = match self {
            ForwardPolicy::Tabular { logits, .. } => logits.clone(),
            ForwardPolicy::Neural { net, .. } => {
                let h = dag.height();
                let mut x = Array2::zeros((dag.num_cells(), 2 * h));
                for (s, mut row) in x.rows_mut().into_iter().enumerate() {
                    encode_cell(&dag, s, row.as_slice_mut().expect("contiguous row"));
                }
                let out = net.forward_batch(x.view())?;
                out.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect()
            }
        };
        raw.iter()
            .enumerate()
            .map(|(s, l)| masked_log_softmax(l, dag.legal_mask(s)))
            .collect()
    }

    /// Equivalent tabular policy whose logits are normalized log-probabilities.
    pub fn tabulate(&self) -> Result<ForwardPolicy> {
        Ok(ForwardPolicy::Tabular { dag: self.dag(), logits: self.log_prob_table()? })
    }
}

/// A complete trajectory from the initial state to a terminal state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<Action>,
}

impl Trajectory {
    pub fn terminal(&self) -> usize {
        *self.states.last().expect("trajectory is never empty")
    }

    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Every state except the terminal one.
    pub fn non_terminal_states(&self) -> &[usize] {
        &self.states[..self.states.len() - 1]
    }
}

/// Sampler over a precomputed log-probability table. `epsilon` mixes in
/// uniformly random legal actions (exploration during training).
pub struct TrajectorySampler {
    dag: GridDag,
    probs: Vec<[f64; NUM_ACTIONS]>,
}

impl TrajectorySampler {
    pub fn new(policy: &ForwardPolicy, epsilon: f64) -> Result<Self> {
        Self::from_log_probs(policy.dag(), &policy.log_prob_table()?, epsilon)
    }

    pub fn from_log_probs(dag: GridDag, table: &[[f64; NUM_ACTIONS]], epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidArgument(format!("exploration rate {epsilon} outside [0, 1]")));
        }
        let probs = table
            .iter()
            .enumerate()
            .map(|(s, lp)| {
                let mask = dag.legal_mask(s);
                let legal = mask.iter().filter(|m| **m).count() as f64;
                let mut p = [0.0; NUM_ACTIONS];
                for a in 0..NUM_ACTIONS {
                    if mask[a] {
                        p[a] = (1.0 - epsilon) * lp[a].exp() + epsilon / legal;
                    }
                }
                p
            })
            .collect();
        Ok(Self { dag, probs })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Trajectory {
        let mut s = self.dag.initial_state();
        let mut states = vec![s];
        let mut actions = Vec::new();
        while !self.dag.is_terminal(s) {
            let p = &self.probs[s];
            let u: f64 = rng.gen::<f64>() * (p[0] + p[1] + p[2]);
            let a = if u < p[0] && p[0] > 0.0 {
                Action::Down
            } else if u < p[0] + p[1] && p[1] > 0.0 {
                Action::Right
            } else {
                Action::Stop
            };
            s = self.dag.successor(s, a).expect("sampled actions are legal");
            states.push(s);
            actions.push(a);
        }
        Trajectory { states, actions }
    }
}

/// Samples one trajectory from the policy.
pub fn sample_trajectory<R: Rng + ?Sized>(policy: &ForwardPolicy, rng: &mut R) -> Result<Trajectory> {
    Ok(TrajectorySampler::new(policy, 0.0)?.sample(rng))
}

/// Probability of visiting each state, by forward dynamic programming in
/// topological (index) order.
pub fn state_visit_probs(dag: &GridDag, table: &[[f64; NUM_ACTIONS]]) -> Vec<f64> {
    let mut visit = vec![0.0; dag.num_states()];
    visit[dag.initial_state()] = 1.0;
    for s in 0..dag.num_cells() {
        let v = visit[s];
        if v == 0.0 {
            continue;
        }
        for a in Action::ALL {
            if let Some(t) = dag.successor(s, a) {
                visit[t] += v * table[s][a.index()].exp();
            }
        }
    }
    visit
}

/// Exact terminal distribution of a policy as an `h x h` table.
pub fn enumerate_distribution(policy: &ForwardPolicy) -> Result<DensityTable> {
    let dag = policy.dag();
    let visit = state_visit_probs(&dag, &policy.log_prob_table()?);
    let h = dag.height();
    DensityTable::from_unnormalized(vec![h, h], visit[dag.num_cells()..].to_vec())
}
