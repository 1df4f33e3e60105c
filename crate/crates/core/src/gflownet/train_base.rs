use std::collections::BTreeMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::{GridDag, RewardField, NUM_ACTIONS};
use super::policy::{encode_cell, enumerate_distribution, ForwardPolicy, TrajectorySampler};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Mlp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PolicyBacking {
    Tabular,
    Mlp { hidden: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainBaseConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub log_z_lr: f64,
    pub epsilon: f64,
    pub backing: PolicyBacking,
    pub seed: u64,
    /// Record the exact L1 to the target every this many steps (0 disables).
    pub eval_every: usize,
}

impl Default for TrainBaseConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 16,
            lr: 1e-3,
            log_z_lr: 0.1,
            epsilon: 0.05,
            backing: PolicyBacking::Mlp { hidden: vec![256, 256] },
            seed: 0,
            eval_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseMetrics {
    pub step: usize,
    pub loss: f64,
    pub log_z: f64,
    pub l1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedBase {
    pub policy: ForwardPolicy,
    pub log_z: f64,
    pub metrics: Vec<BaseMetrics>,
}

/// Trains a forward policy with trajectory balance against `R^beta` under
/// the uniform backward policy.
pub fn train_base(reward: &RewardField, beta: f64, config: &TrainBaseConfig) -> Result<TrainedBase> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidArgument(format!("inverse temperature {beta} must be positive")));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let dag = GridDag::new(reward.height())?;
    let h = dag.height();
    let n = dag.num_cells();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let target = if config.eval_every > 0 { Some(reward.target(beta)?) } else { None };

    let mut net = match &config.backing {
        PolicyBacking::Tabular => None,
        PolicyBacking::Mlp { hidden } => {
            let mut sizes = vec![2 * h];
            sizes.extend(hidden);
            sizes.push(NUM_ACTIONS);
            Some(Mlp::new(sizes, Activation::Tanh, &mut rng)?)
        }
    };
    let mut logits = vec![0.0; n * NUM_ACTIONS];
    let num_params = net.as_ref().map_or(logits.len(), |m| m.num_params());
    let mut opt = Adam::new(num_params, config.lr);
    let mut log_z = 0.0;
    let mut z_opt = Adam::new(1, config.log_z_lr);

    let mut inputs = Array2::zeros((n, 2 * h));
    for (s, mut row) in inputs.rows_mut().into_iter().enumerate() {
        encode_cell(&dag, s, row.as_slice_mut().expect("contiguous row"));
    }
    let current = |net: &Option<Mlp>, logits: &[f64]| -> Result<ForwardPolicy> {
        match net {
            Some(m) => ForwardPolicy::neural(dag, m.clone()),
            None => ForwardPolicy::from_logits(
                dag,
                logits.chunks_exact(NUM_ACTIONS).map(|c| [c[0], c[1], c[2]]).collect(),
            ),
        }
    };

    let mut metrics = Vec::with_capacity(config.steps);
    let b = config.batch_size as f64;
    for step in 0..config.steps {
        let table = match &net {
            Some(m) => {
                let out = m.forward_batch(inputs.view())?;
                let rows: Vec<[f64; NUM_ACTIONS]> =
                    out.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect();
                rows.iter()
                    .enumerate()
                    .map(|(s, l)| super::policy::masked_log_softmax(l, dag.legal_mask(s)))
                    .collect::<Result<Vec<_>>>()?
            }
            None => current(&net, &logits)?.log_prob_table()?,
        };
        let sampler = TrajectorySampler::from_log_probs(dag, &table, config.epsilon)?;

        // Per-state upstream on the masked logits, deduplicated across the batch.
        let mut upstream: BTreeMap<usize, [f64; NUM_ACTIONS]> = BTreeMap::new();
        let mut loss = 0.0;
        let mut z_grad = 0.0;
        for _ in 0..config.batch_size {
            let tau = sampler.sample(&mut rng);
            let mut log_pf = 0.0;
            let mut log_pb = 0.0;
            for (t, &a) in tau.actions.iter().enumerate() {
                log_pf += table[tau.states[t]][a.index()];
                log_pb -= (dag.num_parents(tau.states[t + 1]) as f64).ln();
            }
            let x = tau.terminal() - n;
            let delta = log_z + log_pf - beta * reward.log_reward(x) - log_pb;
            loss += delta * delta / b;
            z_grad += 2.0 * delta / b;
            for (t, &a) in tau.actions.iter().enumerate() {
                let s = tau.states[t];
                let u = upstream.entry(s).or_insert([0.0; NUM_ACTIONS]);
                let mask = dag.legal_mask(s);
                for k in 0..NUM_ACTIONS {
                    if mask[k] {
                        let onehot = if k == a.index() { 1.0 } else { 0.0 };
                        u[k] += 2.0 * delta / b * (onehot - table[s][k].exp());
                    }
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteDetected(format!("trajectory balance loss at step {step}")));
        }

        match &mut net {
            Some(m) => {
                let states: Vec<usize> = upstream.keys().copied().collect();
                let mut x = Array2::zeros((states.len(), 2 * h));
                let mut up = Array2::zeros((states.len(), NUM_ACTIONS));
                for (row, s) in states.iter().enumerate() {
                    x.row_mut(row).assign(&inputs.row(*s));
                    for k in 0..NUM_ACTIONS {
                        up[[row, k]] = upstream[s][k];
                    }
                }
                let cache = m.forward_train(x.view())?;
                let (grads, _) = m.backward(&cache, up.view())?;
                opt.step(m.params_mut(), &grads)?;
            }
            None => {
                let mut grads = vec![0.0; logits.len()];
                for (s, u) in &upstream {
                    grads[s * NUM_ACTIONS..(s + 1) * NUM_ACTIONS].copy_from_slice(u);
                }
                opt.step(&mut logits, &grads)?;
            }
        }
        let mut z = [log_z];
        z_opt.step(&mut z, &[z_grad])?;
        log_z = z[0];

        let l1 = match &target {
            Some(t) if (step + 1) % config.eval_every == 0 || step + 1 == config.steps => {
                Some(enumerate_distribution(&current(&net, &logits)?)?.l1_distance(t)?)
            }
            _ => None,
        };
        metrics.push(BaseMetrics { step: step + 1, loss, log_z, l1 });
    }

    Ok(TrainedBase { policy: current(&net, &logits)?, log_z, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gflownet::Bump;

    fn tabular(steps: usize) -> TrainBaseConfig {
        TrainBaseConfig {
            steps,
            batch_size: 16,
            lr: 0.05,
            backing: PolicyBacking::Tabular,
            seed: 3,
            ..TrainBaseConfig::default()
        }
    }

    #[test]
    fn tabular_single_bump() {
        let r = RewardField::bumps(4, &[Bump { row: 2.0, col: 1.0, sigma: 1.0 }], 0.01).unwrap();
        let out = train_base(&r, 1.0, &tabular(3000)).unwrap();
        let l1 = enumerate_distribution(&out.policy).unwrap().l1_distance(&r.target(1.0).unwrap()).unwrap();
        assert!(l1 <= 0.02, "L1 {l1}");
        let z: f64 = r.values().iter().sum();
        assert!((out.log_z - z.ln()).abs() < 0.05);
    }

    #[test]
    fn uniform_reward_gives_uniform_terminals() {
        let r = RewardField::uniform(3);
        let out = train_base(&r, 4.0, &tabular(3000)).unwrap();
        let d = enumerate_distribution(&out.policy).unwrap();
        assert!(d.l1_distance(&crate::densities::DensityTable::uniform(vec![3, 3])).unwrap() < 0.02);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let r = RewardField::uniform(3);
        let cfg = TrainBaseConfig { steps: 20, backing: PolicyBacking::Mlp { hidden: vec![8] }, ..tabular(20) };
        let a = train_base(&r, 1.0, &cfg).unwrap();
        let b = train_base(&r, 1.0, &cfg).unwrap();
        assert_eq!(a.metrics, b.metrics);
    }
}
