//! Gaussian-domain pipeline: analytic bases under the VE SDE, guided reverse
//! sampling with the quadrature oracle or a learned time classifier, W1
//! metrics, density overlays.

use serde::Serialize;

use sculpt::densities::{
    contrast_curve, gaussian_negation_is_proper, harmonic_mean_curve, log_sum_exp, negation_curve, simpson,
    Curve1d, GaussianMixtureDensity, LabelModel, SIMPSON_POINTS, WINDOW_SDS,
};
use sculpt::diffusion::{
    euler_maruyama, guided_prior_samples, train_time_classifier, wasserstein1, ComposedDynamics, DiffusedMixture,
    LabelGuide, QuadratureOracle, TimeClassifier, VeSde,
};
use sculpt::dsl::{lower, parse, StageInput};
use sculpt::io::{read_samples, write_curve_csv, write_samples, SampleSidecar};
use sculpt::nn::Checkpoint;

use crate::config::{Domain, ExperimentConfig, GuideKind};
use crate::error::{CliError, CliResult};
use crate::image;
use crate::layout::{require, write_csv, ClassifierManifest, Layout};

/// Points per axis when tabulating bivariate densities.
const GRID_2D: usize = 401;
/// Half-width of bivariate windows in component standard deviations.
const WINDOW_SDS_2D: f64 = 8.0;

fn bases(cfg: &ExperimentConfig) -> CliResult<Vec<(String, GaussianMixtureDensity)>> {
    cfg.gaussian()?.bases.iter().map(|b| Ok((b.name.clone(), b.density()?))).collect()
}

/// A single guidance stage over analytic bases.
struct Composite {
    inputs: Vec<GaussianMixtureDensity>,
    observations: Vec<usize>,
    model: LabelModel,
}

impl Composite {
    fn from_config(cfg: &ExperimentConfig) -> CliResult<Self> {
        let all = bases(cfg)?;
        let find = |name: &str| -> CliResult<GaussianMixtureDensity> {
            all.iter()
                .find(|(n, _)| n == name)
                .map(|(_, d)| d.clone())
                .ok_or_else(|| CliError::Config(format!("undeclared base `{name}`")))
        };
        let plan = lower(&parse(cfg.expression()?).map_err(|e| CliError::Config(format!("expression: {e}")))?);
        match (plan.stages.as_slice(), &plan.output) {
            ([], StageInput::Base(name)) => {
                Ok(Self { inputs: vec![find(name)?], observations: vec![], model: LabelModel::uniform(1, 1) })
            }
            ([stage], _) => {
                let inputs = stage
                    .inputs
                    .iter()
                    .map(|i| match i {
                        StageInput::Base(name) => find(name),
                        StageInput::Stage(_) => Err(CliError::Config(
                            "diffusion compositions support a single guidance stage over bases".into(),
                        )),
                    })
                    .collect::<CliResult<Vec<_>>>()?;
                let zeros = vec![0.0; inputs.len()];
                let model = LabelModel::from_log_scales(&zeros, stage.observations.len(), stage.alpha)?;
                Ok(Self { inputs, observations: stage.observations.clone(), model })
            }
            _ => Err(CliError::Config("diffusion compositions support a single guidance stage over bases".into())),
        }
    }

    fn diffused(&self) -> Vec<DiffusedMixture> {
        self.inputs.iter().map(|d| DiffusedMixture::new(d.clone(), VeSde::default())).collect()
    }

    fn is_parameterized(&self) -> bool {
        self.observations.len() == 2 && self.model.likelihood_weights(1) != self.model.prior()
    }

    /// Unnormalized log-density of the composite.
    fn log_density(&self, x: &[f64]) -> f64 {
        let lp: Vec<f64> = self.inputs.iter().map(|d| d.log_pdf(x)).collect();
        if self.observations.is_empty() {
            return lp[0];
        }
        let prior = self.model.log_prior_density(&lp);
        if prior == f64::NEG_INFINITY {
            return prior;
        }
        prior + self.model.log_joint_likelihood(&self.observations, &lp)
    }

    /// Normalized marginal of each coordinate.
    fn marginals(&self, dim: usize) -> CliResult<Vec<Curve1d>> {
        if dim == 1 {
            let (lo, hi) = window_1d(&self.inputs);
            return Ok(vec![Curve1d::from_log_fn(lo, hi, SIMPSON_POINTS, |x| self.log_density(&[x]))?]);
        }
        let win = window_2d(&self.inputs);
        (0..2)
            .map(|axis| {
                let (lo, hi) = win[1 - axis];
                let h = (hi - lo) / (GRID_2D - 1) as f64;
                let log_marginal = |x: f64| {
                    let logs: Vec<f64> = (0..GRID_2D)
                        .map(|j| {
                            let y = lo + h * j as f64;
                            let p = if axis == 0 { [x, y] } else { [y, x] };
                            self.log_density(&p)
                        })
                        .collect();
                    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    if max == f64::NEG_INFINITY {
                        return max;
                    }
                    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
                    max + simpson(&w, h).ln()
                };
                let (a, b) = win[axis];
                Ok(Curve1d::from_log_fn(a, b, GRID_2D, log_marginal)?)
            })
            .collect()
    }
}

fn window_1d(dists: &[GaussianMixtureDensity]) -> (f64, f64) {
    dists.iter().map(|d| d.support_window_1d(WINDOW_SDS)).fold((f64::INFINITY, f64::NEG_INFINITY), |a, b| {
        (a.0.min(b.0), a.1.max(b.1))
    })
}

fn window_2d(dists: &[GaussianMixtureDensity]) -> [(f64, f64); 2] {
    let mut win = [(f64::INFINITY, f64::NEG_INFINITY); 2];
    for c in dists.iter().flat_map(|d| d.components()) {
        for (axis, (m, v)) in c.mean().iter().zip(c.variances()).enumerate() {
            let r = WINDOW_SDS_2D * v.sqrt();
            win[axis] = (win[axis].0.min(m - r), win[axis].1.max(m + r));
        }
    }
    win
}

fn dim(cfg: &ExperimentConfig) -> usize {
    if cfg.domain == Domain::Gaussian1d {
        1
    } else {
        2
    }
}

/// Analytic bases need no training; this records their densities.
pub fn train_bases(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<()> {
    for (name, d) in bases(cfg)? {
        layout.write_json(&layout.base_meta(&name), &d)?;
        if cfg.domain == Domain::Gaussian1d {
            let (lo, hi) = d.support_window_1d(WINDOW_SDS);
            let curve = Curve1d::from_log_fn(lo, hi, SIMPSON_POINTS, |x| d.log_pdf(&[x]))?;
            write_curve_csv(&layout.base_file(&name, ".csv"), curve.x(), curve.pdf())?;
        }
    }
    Ok(())
}

pub fn train_classifier(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<()> {
    let c = Composite::from_config(cfg)?;
    if c.observations.is_empty() {
        return Err(CliError::Config("the expression is a single base; there is nothing to classify".into()));
    }
    if c.is_parameterized() {
        return Err(CliError::Config(
            "learned diffusion classifiers cover the unparameterized operations only; use the oracle guide".into(),
        ));
    }
    let mut tc = cfg.time_classifier_config(cfg.seed + 1000);
    tc.observations = c.observations.len();
    let (clf, metrics) = train_time_classifier(&c.diffused(), &tc)?;
    clf.to_checkpoint(tc.steps as u64).save(&layout.classifier(0))?;
    let rows = metrics.iter().map(|m| {
        vec![
            m.step.to_string(),
            format!("{:e}", m.terminal_loss),
            format!("{:e}", m.nonterminal_loss),
            format!("{:e}", m.gamma),
        ]
    });
    write_csv(&layout.classifier_losses(0), &["step", "terminal_loss", "nonterminal_loss", "gamma"], rows)?;
    layout.write_manifest(&ClassifierManifest { expr: cfg.expression()?.to_string(), stages: 1, seed: cfg.seed })
}

fn load_classifier(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<TimeClassifier> {
    if layout.manifest_for(cfg.expression()?)?.is_none() {
        return Err(CliError::MissingCheckpoint("no classifier trained for this expression".into()));
    }
    let path = layout.classifier(0);
    require(&path, "time classifier")?;
    Ok(TimeClassifier::from_checkpoint(&Checkpoint::load(&path)?)?)
}

fn sample(cfg: &ExperimentConfig, c: &Composite, guide: &dyn LabelGuide, seed: u64) -> CliResult<Vec<f64>> {
    let dms = c.diffused();
    let s = &cfg.sampler;
    let prior = c.model.prior().to_vec();
    let init = guided_prior_samples(&dms, &prior, guide, &c.observations, s.samples, s.oversample, seed)?;
    let dynamics = ComposedDynamics::new(&dms, guide, &c.observations, cfg.guidance_scale)?;
    let out = euler_maruyama(&dynamics, init, s.steps, seed + 1)?;
    Ok(out.iter().copied().collect())
}

fn samples_file(kind: &str) -> String {
    format!("{kind}_samples.bin")
}

pub fn compose(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<()> {
    let c = Composite::from_config(cfg)?;
    let d = dim(cfg);
    let meta = SampleSidecar { n_samples: cfg.sampler.samples, dim: d, seed: cfg.seed, steps: cfg.sampler.steps };
    if matches!(cfg.sampler.guide, GuideKind::Oracle | GuideKind::Both) {
        let oracle = if c.observations.is_empty() {
            QuadratureOracle::iid(c.diffused(), vec![1.0], 1)?
        } else {
            QuadratureOracle::new(c.diffused(), c.model.clone())?
        };
        let xs = sample(cfg, &c, &oracle, cfg.seed + 2000)?;
        write_samples(&layout.compose(&samples_file("oracle")), &xs, &meta)?;
    }
    if matches!(cfg.sampler.guide, GuideKind::Learned | GuideKind::Both) {
        let clf = load_classifier(cfg, layout)?;
        let guide = clf.guide(true)?;
        let xs = sample(cfg, &c, &guide, cfg.seed + 3000)?;
        write_samples(&layout.compose(&samples_file("learned")), &xs, &meta)?;
    }
    for (axis, curve) in c.marginals(d)?.iter().enumerate() {
        write_curve_csv(&layout.compose(&format!("target_x{axis}.csv")), curve.x(), curve.pdf())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct GaussianMetrics {
    domain: &'static str,
    expression: String,
    seed: u64,
    guidance_scale: f64,
    samples: usize,
    steps: usize,
    /// W1 of each coordinate marginal to the composite's marginal.
    oracle_w1: Vec<f64>,
    learned_w1: Option<Vec<f64>>,
}

fn marginal_w1(values: &[f64], d: usize, targets: &[Curve1d]) -> CliResult<Vec<f64>> {
    (0..d)
        .map(|axis| {
            let column: Vec<f64> = values.iter().skip(axis).step_by(d).copied().collect();
            Ok(wasserstein1(&column, &targets[axis])?)
        })
        .collect()
}

fn read_kind(layout: &Layout, kind: &str, d: usize) -> CliResult<Option<Vec<f64>>> {
    let path = layout.compose(&samples_file(kind));
    if !path.exists() {
        return Ok(None);
    }
    let (values, meta) = read_samples(&path)?;
    if meta.dim != d {
        return Err(CliError::MissingCheckpoint(format!("{} holds {}-dimensional samples", path.display(), meta.dim)));
    }
    Ok(Some(values))
}

/// W1 per coordinate. A learned result is only reported alongside the
/// oracle-guided one for the same expression.
pub fn evaluate(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<()> {
    let c = Composite::from_config(cfg)?;
    let d = dim(cfg);
    let targets = c.marginals(d)?;
    let oracle = read_kind(layout, "oracle", d)?.ok_or_else(|| {
        CliError::MissingCheckpoint("oracle-guided samples not found; run `compose` with the oracle guide".into())
    })?;
    let learned = read_kind(layout, "learned", d)?;
    let metrics = GaussianMetrics {
        domain: if d == 1 { "gaussian1d" } else { "gaussian2d" },
        expression: cfg.expression()?.to_string(),
        seed: cfg.seed,
        guidance_scale: cfg.guidance_scale,
        samples: cfg.sampler.samples,
        steps: cfg.sampler.steps,
        oracle_w1: marginal_w1(&oracle, d, &targets)?,
        learned_w1: learned.map(|v| marginal_w1(&v, d, &targets)).transpose()?,
    };
    layout.write_json(&layout.metrics(), &metrics)
}

#[derive(Serialize)]
struct CurveEntry {
    name: String,
    /// `None` when properness cannot be decided in closed form.
    proper: Option<bool>,
    file: Option<String>,
}

pub fn report(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<()> {
    if cfg.domain == Domain::Gaussian2d {
        return report_2d(cfg, layout);
    }
    let all = bases(cfg)?;
    let mut negations = Vec::new();
    let mut curves: Vec<(String, Curve1d)> = Vec::new();
    for (name, d) in &all {
        let (lo, hi) = d.support_window_1d(WINDOW_SDS);
        curves.push((name.clone(), Curve1d::from_log_fn(lo, hi, SIMPSON_POINTS, |x| d.log_pdf(&[x]))?));
    }
    if let [(_, p), (_, q), ..] = all.as_slice() {
        curves.push(("hm".into(), harmonic_mean_curve(p, q, 0.5)?));
        for &a in &cfg.report.alphas {
            curves.push((format!("contrast_alpha{a}"), contrast_curve(p, q, a)?));
        }
        let single = p.components().len() == 1 && q.components().len() == 1;
        for &g in &cfg.report.gammas {
            let name = format!("negation_gamma{g}");
            let proper = if single {
                Some(gaussian_negation_is_proper(&p.components()[0], &q.components()[0], g)?.proper)
            } else {
                None
            };
            if proper == Some(false) {
                negations.push(CurveEntry { name, proper, file: None });
            } else {
                let curve = negation_curve(p, q, g)?;
                let file = format!("curves/{name}.csv");
                write_curve_csv(&layout.report(&file), curve.x(), curve.pdf())?;
                negations.push(CurveEntry { name, proper, file: Some(file) });
            }
        }
    }
    if cfg.expr.is_some() {
        let c = Composite::from_config(cfg)?;
        curves.push(("composite".into(), c.marginals(1)?.remove(0)));
    }
    let mut entries = Vec::new();
    for (name, curve) in &curves {
        let file = format!("curves/{name}.csv");
        write_curve_csv(&layout.report(&file), curve.x(), curve.pdf())?;
        entries.push(CurveEntry { name: name.clone(), proper: Some(true), file: Some(file) });
    }
    entries.extend(negations);
    let lines: Vec<(&[f64], &[f64])> = curves.iter().map(|(_, c)| (c.x(), c.pdf())).collect();
    let img = image::line_plot(&lines, 800, 400);
    image::save(&img, &layout.report("overlay.ppm"))?;
    image::save(&img, &layout.report("overlay.png"))?;
    layout.write_json(&layout.report("curves.json"), &entries)
}

/// Heatmaps of the bases and, when an expression is given, the composite.
fn report_2d(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<()> {
    let all = bases(cfg)?;
    let dists: Vec<GaussianMixtureDensity> = all.iter().map(|(_, d)| d.clone()).collect();
    let win = window_2d(&dists);
    let n = 201;
    let at = |i: usize, axis: usize| win[axis].0 + (win[axis].1 - win[axis].0) * i as f64 / (n - 1) as f64;
    let tabulate = |log_f: &dyn Fn(&[f64]) -> f64| -> Vec<f64> {
        let logs: Vec<f64> = (0..n * n).map(|k| log_f(&[at(k / n, 0), at(k % n, 1)])).collect();
        let max = log_sum_exp(&logs);
        logs.iter().map(|l| (l - max).exp()).collect()
    };
    let mut panels: Vec<Vec<f64>> = dists.iter().map(|d| tabulate(&|x| d.log_pdf(x))).collect();
    if cfg.expr.is_some() {
        let c = Composite::from_config(cfg)?;
        panels.push(tabulate(&|x| c.log_density(x)));
    }
    let refs: Vec<&[f64]> = panels.iter().map(|p| p.as_slice()).collect();
    let img = image::heatmap_row(&refs, n, 1);
    image::save(&img, &layout.report("density.ppm"))?;
    image::save(&img, &layout.report("density.png"))
}
