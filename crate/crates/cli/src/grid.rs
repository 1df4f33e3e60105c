//! Grid-domain pipeline: trajectory-balance bases, per-stage classifiers,
//! exact and learned composites, L1 metrics and heatmaps.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use sculpt::densities::{sculpt_stage, DensityTable, LabelModel, ScaledTable};
use sculpt::dsl::{lower, parse, ObservationPlan, Stage, StageInput};
use sculpt::gflownet::{
    enumerate_distribution, exact_classifier, realize_stage, train_base, train_classifier, ClassifierTable,
    ForwardPolicy, GridDag, RealizedStage, SculptClassifier, NUM_ACTIONS,
};
use sculpt::io::{read_f64s, write_f64s, write_table_csv};
use sculpt::nn::Checkpoint;

use crate::config::{Backing, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::image;
use crate::layout::{require, write_csv, ClassifierManifest, Layout};

/// Largest L1 between the exact-oracle composite and the ground truth
/// before the pipeline is considered broken.
const ORACLE_TOLERANCE: f64 = 1e-6;

#[derive(Serialize, Deserialize)]
struct BaseMeta {
    height: usize,
    log_z: f64,
    backing: String,
    target_l1: f64,
}

pub fn train_bases(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<()> {
    let grid = cfg.grid()?;
    for (i, base) in grid.bases.iter().enumerate() {
        let reward = base.reward(grid.height)?;
        let trained = train_base(&reward, grid.beta, &cfg.train_base_config(cfg.seed + i as u64))?;
        let table = trained.policy.log_prob_table()?;
        let dist = enumerate_distribution(&trained.policy)?;
        let target_l1 = dist.l1_distance(&reward.target(grid.beta)?)?;
        write_f64s(&layout.base_policy(&base.name), &table.concat())?;
        let backing = match cfg.train_base.backing {
            Backing::Tabular => "tabular",
            Backing::Mlp => "mlp",
        };
        let meta = BaseMeta { height: grid.height, log_z: trained.log_z, backing: backing.into(), target_l1 };
        layout.write_json(&layout.base_meta(&base.name), &meta)?;
        let rows = trained.metrics.iter().map(|m| {
            vec![
                m.step.to_string(),
                format!("{:e}", m.loss),
                format!("{:e}", m.log_z),
                m.l1.map(|v| format!("{v:e}")).unwrap_or_default(),
            ]
        });
        write_csv(&layout.base_file(&base.name, "_metrics.csv"), &["step", "loss", "log_z", "l1"], rows)?;
        write_table_csv(&layout.base_file(&base.name, "_dist.csv"), &dist)?;
    }
    Ok(())
}

/// Trained bases in declaration order.
fn load_bases(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<Vec<(String, ForwardPolicy)>> {
    let grid = cfg.grid()?;
    let dag = GridDag::new(grid.height)?;
    grid.bases
        .iter()
        .map(|b| {
            let path = layout.base_policy(&b.name);
            require(&path, &format!("base `{}`", b.name))?;
            let flat = read_f64s(&path)?;
            if flat.len() != dag.num_cells() * NUM_ACTIONS {
                return Err(CliError::MissingCheckpoint(format!(
                    "base `{}` at {} was trained on a different grid",
                    b.name,
                    path.display()
                )));
            }
            let logits = flat.chunks_exact(NUM_ACTIONS).map(|c| [c[0], c[1], c[2]]).collect();
            Ok((b.name.clone(), ForwardPolicy::from_logits(dag, logits)?))
        })
        .collect()
}

fn resolve<T: Clone>(input: &StageInput, bases: &HashMap<String, T>, done: &[T]) -> CliResult<T> {
    match input {
        StageInput::Base(n) => bases.get(n).cloned().ok_or_else(|| sculpt::Error::UnknownIdentifier(n.clone()).into()),
        StageInput::Stage(k) => Ok(done[*k].clone()),
    }
}

/// Runs the plan one guidance stage at a time, obtaining each stage's
/// classifier from `classify(stage index, stage, input policies, model)`.
fn realize<F>(
    plan: &ObservationPlan,
    bases: &HashMap<String, ForwardPolicy>,
    mut classify: F,
) -> CliResult<(Vec<RealizedStage>, RealizedStage)>
where
    F: FnMut(usize, &Stage, &[ForwardPolicy], &LabelModel) -> CliResult<ClassifierTable>,
{
    let units: HashMap<String, RealizedStage> =
        bases.iter().map(|(n, p)| (n.clone(), RealizedStage { policy: p.clone(), log_mass: 0.0 })).collect();
    let mut done: Vec<RealizedStage> = Vec::with_capacity(plan.stages.len());
    for (k, stage) in plan.stages.iter().enumerate() {
        let inputs = stage.inputs.iter().map(|i| resolve(i, &units, &done)).collect::<CliResult<Vec<_>>>()?;
        let scales: Vec<f64> = inputs.iter().map(|r| r.log_mass).collect();
        let policies: Vec<ForwardPolicy> = inputs.into_iter().map(|r| r.policy).collect();
        let model = LabelModel::from_log_scales(&scales, stage.observations.len(), stage.alpha)?;
        let table = classify(k, stage, &policies, &model)?;
        done.push(realize_stage(&policies, &scales, &table, &stage.observations)?);
    }
    let out = resolve(&plan.output, &units, &done)?;
    Ok((done, out))
}

fn exact_classify(_: usize, _: &Stage, policies: &[ForwardPolicy], model: &LabelModel) -> CliResult<ClassifierTable> {
    let dists = policies.iter().map(enumerate_distribution).collect::<Result<Vec<_>, _>>()?;
    Ok(exact_classifier(policies, &dists, model)?)
}

/// Ground-truth composite of every stage from the enumerated bases.
fn truth(plan: &ObservationPlan, dists: &HashMap<String, DensityTable>) -> CliResult<(Vec<ScaledTable>, ScaledTable)> {
    let units: HashMap<String, ScaledTable> = dists.iter().map(|(n, d)| (n.clone(), ScaledTable::unit(d.clone()))).collect();
    let mut done = Vec::with_capacity(plan.stages.len());
    for stage in &plan.stages {
        let inputs = stage.inputs.iter().map(|i| resolve(i, &units, &done)).collect::<CliResult<Vec<_>>>()?;
        done.push(sculpt_stage(&inputs, &stage.observations, stage.alpha)?);
    }
    let out = resolve(&plan.output, &units, &done)?;
    Ok((done, out))
}

struct Setup {
    plan: ObservationPlan,
    bases: HashMap<String, ForwardPolicy>,
    order: Vec<(String, ForwardPolicy)>,
    dists: HashMap<String, DensityTable>,
}

fn setup(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<Setup> {
    let expr = parse(cfg.expression()?).map_err(|e| CliError::Config(format!("expression: {e}")))?;
    let plan = lower(&expr);
    let order = load_bases(cfg, layout)?;
    let bases: HashMap<String, ForwardPolicy> = order.iter().cloned().collect();
    let dists = order
        .iter()
        .map(|(n, p)| Ok((n.clone(), enumerate_distribution(p)?)))
        .collect::<CliResult<HashMap<_, _>>>()?;
    Ok(Setup { plan, bases, order, dists })
}

/// Exact-oracle composite and its L1 to the ground truth; fails with
/// `OracleMismatch` when the two disagree.
fn checked_oracle(s: &Setup) -> CliResult<(Vec<RealizedStage>, RealizedStage, Vec<ScaledTable>, ScaledTable, f64)> {
    let (stages, out) = realize(&s.plan, &s.bases, exact_classify)?;
    let (truth_stages, truth_out) = truth(&s.plan, &s.dists)?;
    let l1 = enumerate_distribution(&out.policy)?.l1_distance(&truth_out.table)?;
    if !(l1 <= ORACLE_TOLERANCE) {
        return Err(CliError::OracleMismatch { l1 });
    }
    Ok((stages, out, truth_stages, truth_out, l1))
}

pub fn train_classifiers(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<()> {
    let s = setup(cfg, layout)?;
    checked_oracle(&s)?;
    if s.plan.stages.is_empty() {
        return Err(CliError::Config("the expression is a single base; there is nothing to classify".into()));
    }
    realize(&s.plan, &s.bases, |k, stage, policies, model| {
        let mut c = cfg.grid_classifier_config(cfg.seed + 1000 + k as u64);
        c.observations = stage.observations.len();
        c.prior = Some(model.prior().to_vec());
        c.parameterized = stage.alpha.is_some();
        let (clf, metrics) = train_classifier(policies, &c)?;
        clf.to_checkpoint(c.steps as u64).save(&layout.classifier(k))?;
        let rows = metrics.iter().map(|m| {
            vec![
                m.step.to_string(),
                format!("{:e}", m.terminal_loss),
                format!("{:e}", m.nonterminal_loss),
                format!("{:e}", m.gamma),
            ]
        });
        write_csv(&layout.classifier_losses(k), &["step", "terminal_loss", "nonterminal_loss", "gamma"], rows)?;
        Ok(clf.tabulate(stage.alpha, true)?)
    })?;
    layout.write_manifest(&ClassifierManifest {
        expr: cfg.expression()?.to_string(),
        stages: s.plan.stages.len(),
        seed: cfg.seed,
    })
}

/// The learned composite, if classifiers were trained for the expression.
fn learned(cfg: &ExperimentConfig, layout: &Layout, s: &Setup) -> CliResult<Option<(Vec<RealizedStage>, RealizedStage)>> {
    let Some(manifest) = layout.manifest_for(cfg.expression()?)? else {
        return Ok(None);
    };
    if manifest.stages != s.plan.stages.len() {
        return Err(CliError::MissingCheckpoint("classifier manifest does not match the plan".into()));
    }
    let out = realize(&s.plan, &s.bases, |k, stage, _, _| {
        let path = layout.classifier(k);
        require(&path, &format!("classifier for stage {k}"))?;
        let clf = SculptClassifier::from_checkpoint(&Checkpoint::load(&path)?)?;
        Ok(clf.tabulate(stage.alpha, true)?)
    })?;
    Ok(Some(out))
}

pub fn compose(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<()> {
    let s = setup(cfg, layout)?;
    let (_, oracle, _, truth_out, _) = checked_oracle(&s)?;
    write_table_csv(&layout.compose("exact.csv"), &enumerate_distribution(&oracle.policy)?)?;
    write_table_csv(&layout.compose("truth.csv"), &truth_out.table)?;
    if let Some((_, out)) = learned(cfg, layout, &s)? {
        write_table_csv(&layout.compose("learned.csv"), &enumerate_distribution(&out.policy)?)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BaseFit {
    name: String,
    target_l1: f64,
}

#[derive(Serialize)]
struct StageMetrics {
    stage: usize,
    /// One-based labels, as written in expressions.
    observations: Vec<usize>,
    alpha: Option<f64>,
    exact_oracle_l1: f64,
    learned_l1: Option<f64>,
}

#[derive(Serialize)]
struct GridMetrics {
    domain: &'static str,
    expression: String,
    seed: u64,
    bases: Vec<BaseFit>,
    stages: Vec<StageMetrics>,
    exact_oracle_l1: f64,
    learned_l1: Option<f64>,
}

pub fn evaluate(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<()> {
    let grid = cfg.grid()?;
    let s = setup(cfg, layout)?;
    let (oracle_stages, _, truth_stages, truth_out, oracle_l1) = checked_oracle(&s)?;
    let learned = learned(cfg, layout, &s)?;
    let mut stages = Vec::new();
    for (k, stage) in s.plan.stages.iter().enumerate() {
        let exact = enumerate_distribution(&oracle_stages[k].policy)?.l1_distance(&truth_stages[k].table)?;
        let learned_l1 = match &learned {
            Some((ls, _)) => Some(enumerate_distribution(&ls[k].policy)?.l1_distance(&truth_stages[k].table)?),
            None => None,
        };
        stages.push(StageMetrics {
            stage: k,
            observations: stage.observations.iter().map(|o| o + 1).collect(),
            alpha: stage.alpha,
            exact_oracle_l1: exact,
            learned_l1,
        });
    }
    let learned_l1 = match &learned {
        Some((_, out)) => Some(enumerate_distribution(&out.policy)?.l1_distance(&truth_out.table)?),
        None => None,
    };
    let bases = grid
        .bases
        .iter()
        .map(|b| {
            let target = b.reward(grid.height)?.target(grid.beta)?;
            Ok(BaseFit { name: b.name.clone(), target_l1: s.dists[&b.name].l1_distance(&target)? })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let metrics = GridMetrics {
        domain: "grid",
        expression: cfg.expression()?.to_string(),
        seed: cfg.seed,
        bases,
        stages,
        exact_oracle_l1: oracle_l1,
        learned_l1,
    };
    layout.write_json(&layout.metrics(), &metrics)
}

/// One row of heatmaps with a shared colour scale: the bases, the ground
/// truth, the exact-oracle composite and, when trained, the learned one.
pub fn report(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<()> {
    let grid = cfg.grid()?;
    let s = setup(cfg, layout)?;
    let (_, oracle, _, truth_out, _) = checked_oracle(&s)?;
    let mut panels: Vec<(String, DensityTable)> = s.order.iter().map(|(n, _)| (n.clone(), s.dists[n].clone())).collect();
    panels.push(("truth".into(), truth_out.table));
    panels.push(("exact".into(), enumerate_distribution(&oracle.policy)?));
    if let Some((_, out)) = learned(cfg, layout, &s)? {
        panels.push(("learned".into(), enumerate_distribution(&out.policy)?));
    }
    let masses: Vec<&[f64]> = panels.iter().map(|(_, t)| t.mass()).collect();
    let img = image::heatmap_row(&masses, grid.height, cfg.report.cell_pixels.max(1));
    image::save(&img, &layout.report("grid.ppm"))?;
    image::save(&img, &layout.report("grid.png"))?;
    let order: Vec<&str> = panels.iter().map(|(n, _)| n.as_str()).collect();
    layout.write_json(&layout.report("grid_panels.json"), &order)
}
