use std::collections::HashMap;

use super::grid::{Action, NUM_ACTIONS};
use super::oracle::{exact_classifier, log_tables, mixture_action_probs, ClassifierTable};
use super::policy::{enumerate_distribution, masked_log_softmax, ForwardPolicy};
use crate::densities::{log_sum_exp, DensityTable, LabelModel};
use crate::dsl::{ObservationPlan, StageInput};
use crate::error::{Error, Result};

/// Second-label weights of the parameterized two-base model:
/// `w_1 = alpha q_1 / (alpha q_1 + (1 - alpha) q_2)`.
pub fn parameterized_label_weights(alpha: f64, q: [f64; 2]) -> Result<[f64; 2]> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let a = alpha * q[0];
    let b = (1.0 - alpha) * q[1];
    if !(a + b > 0.0) {
        return Err(Error::BadWeights(format!("label marginals {q:?} have no mass")));
    }
    Ok([a / (a + b), b / (a + b)])
}

/// `p_M(s' | s) = sum_i p(y = i | s) p_{i,F}(s' | s)`. With `weights` the
/// classifier's labels are reweighted from its prior to the given mixture
/// weights.
pub fn mixture_policy(
    bases: &[ForwardPolicy],
    classifier: &ClassifierTable,
    weights: Option<&[f64]>,
) -> Result<ForwardPolicy> {
    let m = classifier.num_bases();
    if bases.len() != m {
        return Err(Error::InvalidArgument(format!("classifier has {m} labels, got {} bases", bases.len())));
    }
    let dag = classifier.dag();
    let tables = log_tables(bases, dag)?;
    let ratio: Vec<f64> = match weights {
        None => vec![1.0; m],
        Some(w) => {
            crate::densities::validate_simplex(w)?;
            if w.len() != m {
                return Err(Error::BadWeights(format!("{} weights for {m} bases", w.len())));
            }
            let prior = classifier.model().prior();
            (0..m)
                .map(|i| match (w[i] > 0.0, prior[i] > 0.0) {
                    (false, _) => Ok(0.0),
                    (true, true) => Ok(w[i] / prior[i]),
                    (true, false) => Err(Error::BadWeights(format!("base {i} has zero prior weight"))),
                })
                .collect::<Result<_>>()?
        }
    };
    let logits = (0..dag.num_cells())
        .map(|s| {
            let raw: Vec<f64> = classifier.mixture_weights(s).iter().zip(&ratio).map(|(p, r)| p * r).collect();
            let total: f64 = raw.iter().sum();
            let w: Vec<f64> = if total > 0.0 {
                raw.iter().map(|v| v / total).collect()
            } else {
                let r: f64 = ratio.iter().sum();
                ratio.iter().map(|v| v / r).collect()
            };
            let p = mixture_action_probs(&tables, &w, s);
            let total: f64 = p.iter().sum();
            p.map(|v| if v > 0.0 { (v / total).ln() } else { f64::NEG_INFINITY })
        })
        .collect();
    ForwardPolicy::from_logits(dag, logits)
}

/// Softmax-stabilized guidance:
/// `p(s' | s, obs) ∝ p_F(s' | s) Q(obs | s')` over legal successors.
///
/// States where no successor is consistent with the observations are
/// unreachable under the guided policy and keep the input policy.
pub fn guided_policy(
    policy: &ForwardPolicy,
    classifier: &ClassifierTable,
    observations: &[usize],
) -> Result<ForwardPolicy> {
    classifier.check_observations(observations)?;
    let dag = policy.dag();
    if dag != classifier.dag() {
        return Err(Error::InvalidArgument("policy and classifier live on different grids".into()));
    }
    if !(classifier.obs_prob(dag.initial_state(), observations) > 0.0) {
        return Err(Error::ZeroObservationProbability { state: dag.initial_state() });
    }
    let table = policy.log_prob_table()?;
    let logits = (0..dag.num_cells())
        .map(|s| {
            let mut l = [f64::NEG_INFINITY; NUM_ACTIONS];
            for a in Action::ALL {
                if let Some(t) = dag.successor(s, a) {
                    let q = classifier.obs_prob(t, observations);
                    if q > 0.0 && table[s][a.index()] > f64::NEG_INFINITY {
                        l[a.index()] = table[s][a.index()] + q.ln();
                    }
                }
            }
            match masked_log_softmax(&l, dag.legal_mask(s)) {
                Ok(lp) => Ok(lp),
                Err(Error::InvalidArgument(_)) => Ok(table[s]),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    ForwardPolicy::from_logits(dag, logits)
}

/// Mixture of the bases followed by guidance on the observations.
pub fn composed_policy(
    bases: &[ForwardPolicy],
    classifier: &ClassifierTable,
    observations: &[usize],
) -> Result<ForwardPolicy> {
    guided_policy(&mixture_policy(bases, classifier, None)?, classifier, observations)
}

/// A composite policy with the log-mass of the unnormalized composite it
/// realizes (see [`crate::densities::ScaledTable`]).
#[derive(Clone, Debug, PartialEq)]
pub struct RealizedStage {
    pub policy: ForwardPolicy,
    pub log_mass: f64,
}

/// Realizes an observation plan over base policies with exact classifiers,
/// one guidance stage at a time.
pub fn realize_plan_exact(
    plan: &ObservationPlan,
    bindings: &HashMap<String, ForwardPolicy>,
) -> Result<RealizedStage> {
    let mut outputs: Vec<RealizedStage> = Vec::with_capacity(plan.stages.len());
    let resolve = |input: &StageInput, outputs: &[RealizedStage]| -> Result<RealizedStage> {
        match input {
            StageInput::Base(n) => bindings
                .get(n)
                .map(|p| RealizedStage { policy: p.clone(), log_mass: 0.0 })
                .ok_or_else(|| Error::UnknownIdentifier(n.clone())),
            StageInput::Stage(k) => outputs
                .get(*k)
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("stage {k} used before it is computed"))),
        }
    };
    for (k, stage) in plan.stages.iter().enumerate() {
        let step = || -> Result<RealizedStage> {
            let inputs = stage.inputs.iter().map(|i| resolve(i, &outputs)).collect::<Result<Vec<_>>>()?;
            let scales: Vec<f64> = inputs.iter().map(|r| r.log_mass).collect();
            let model = LabelModel::from_log_scales(&scales, stage.observations.len(), stage.alpha)?;
            let policies: Vec<ForwardPolicy> = inputs.into_iter().map(|r| r.policy).collect();
            let dists = policies.iter().map(enumerate_distribution).collect::<Result<Vec<DensityTable>>>()?;
            let classifier = exact_classifier(&policies, &dists, &model)?;
            realize_stage(&policies, &scales, &classifier, &stage.observations)
        };
        outputs.push(step().map_err(|e| e.at_path(&format!("stage {k}")))?);
    }
    resolve(&plan.output, &outputs)
}

/// One guidance stage given its classifier. The composite's log-mass is
/// `log sum_i s_i + log Q(obs | s_0)`.
pub fn realize_stage(
    inputs: &[ForwardPolicy],
    log_masses: &[f64],
    classifier: &ClassifierTable,
    observations: &[usize],
) -> Result<RealizedStage> {
    let policy = composed_policy(inputs, classifier, observations)?;
    let evidence = classifier.obs_prob(classifier.dag().initial_state(), observations);
    Ok(RealizedStage { policy, log_mass: log_sum_exp(log_masses) + evidence.ln() })
}
