use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ast::{alpha_of, Expr};
use crate::densities::{sculpt_stage, DensityTable, ScaledTable};
use crate::error::{Error, Result};

/// Where a stage reads one of its inputs from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StageInput {
    Base(String),
    /// Output of an earlier stage.
    Stage(usize),
}

/// How the stage classifier is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassifierRequirement {
    /// Computed from enumerated or analytic input densities.
    Exact,
    /// Trained on samples from the stage inputs.
    Learned,
}

/// One guidance stage: condition the mixture of `inputs` on `observations`
/// (zero-based indices into `inputs`). `alpha` selects the parameterized
/// two-observation model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub inputs: Vec<StageInput>,
    pub observations: Vec<usize>,
    pub alpha: Option<f64>,
    pub requirement: ClassifierRequirement,
}

/// A sequence of guidance stages; `output` names the final composite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationPlan {
    pub stages: Vec<Stage>,
    pub output: StageInput,
}

impl ObservationPlan {
    /// Marks every stage with the same classifier requirement.
    pub fn with_requirement(mut self, requirement: ClassifierRequirement) -> Self {
        for s in &mut self.stages {
            s.requirement = requirement;
        }
        self
    }

    /// Applies each stage exactly to bound tables, carrying composite scales.
    pub fn execute_exact(&self, bindings: &HashMap<String, DensityTable>) -> Result<ScaledTable> {
        let mut outputs: Vec<ScaledTable> = Vec::with_capacity(self.stages.len());
        let resolve = |input: &StageInput, outputs: &[ScaledTable]| -> Result<ScaledTable> {
            match input {
                StageInput::Base(n) => bindings
                    .get(n)
                    .cloned()
                    .map(ScaledTable::unit)
                    .ok_or_else(|| Error::UnknownIdentifier(n.clone())),
                StageInput::Stage(k) => outputs.get(*k).cloned().ok_or_else(|| {
                    Error::InvalidArgument(format!("stage {k} used before it is computed"))
                }),
            }
        };
        for (k, stage) in self.stages.iter().enumerate() {
            let inputs = stage
                .inputs
                .iter()
                .map(|i| resolve(i, &outputs))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.at_path(&format!("stage {k}")))?;
            let out = sculpt_stage(&inputs, &stage.observations, stage.alpha)
                .map_err(|e| e.at_path(&format!("stage {k}")))?;
            outputs.push(out);
        }
        resolve(&self.output, &outputs)
    }
}

/// Lowers an expression to guidance stages, innermost operators first.
///
/// Every stage is marked [`ClassifierRequirement::Learned`]; executors that
/// have exact densities may switch with [`ObservationPlan::with_requirement`].
pub fn lower(expr: &Expr) -> ObservationPlan {
    let mut stages = Vec::new();
    let output = lower_into(expr, &mut stages);
    ObservationPlan { stages, output }
}

fn lower_into(expr: &Expr, stages: &mut Vec<Stage>) -> StageInput {
    let (inputs, observations, alpha) = match expr {
        Expr::Base(name) => return StageInput::Base(name.clone()),
        Expr::Post { observations, bases } => (
            bases.iter().cloned().map(StageInput::Base).collect(),
            observations.clone(),
            None,
        ),
        Expr::Hm { left, right, bracket } | Expr::Con { left, right, bracket } => {
            let l = lower_into(left, stages);
            let r = lower_into(right, stages);
            let obs = if matches!(expr, Expr::Hm { .. }) { vec![0, 1] } else { vec![0, 0] };
            (vec![l, r], obs, bracket.map(|b| alpha_of(Some(b))))
        }
    };
    stages.push(Stage { inputs, observations, alpha, requirement: ClassifierRequirement::Learned });
    StageInput::Stage(stages.len() - 1)
}
