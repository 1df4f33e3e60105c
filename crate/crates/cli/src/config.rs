//! Experiment configuration, read from TOML. Unknown keys are errors.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use sculpt::densities::{GaussianComponent, GaussianMixtureDensity};
use sculpt::gflownet::{Bump, ClassifierConfig, PolicyBacking, RewardField, TrainBaseConfig};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Grid,
    Gaussian1d,
    Gaussian2d,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: Domain,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub expr: Option<String>,
    #[serde(default = "one")]
    pub guidance_scale: f64,
    pub grid: Option<GridSection>,
    pub gaussian: Option<GaussianSection>,
    #[serde(default)]
    pub train_base: TrainBaseSection,
    #[serde(default)]
    pub train_classifier: ClassifierSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub report: ReportSection,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub height: usize,
    #[serde(default = "one")]
    pub beta: f64,
    pub bases: Vec<GridBase>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBase {
    pub name: String,
    /// Sum of Gaussian bumps over a constant floor.
    #[serde(default)]
    pub bumps: Vec<BumpSpec>,
    #[serde(default)]
    pub floor: Option<f64>,
    /// Explicit row-major rewards instead of bumps.
    #[serde(default)]
    pub values: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSpec {
    pub row: f64,
    pub col: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSection {
    pub bases: Vec<GaussianBase>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianBase {
    pub name: String,
    /// Mixture weights; uniform over the components when absent.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    pub components: Vec<ComponentSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub mean: Vec<f64>,
    /// Diagonal variances.
    pub variance: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Backing {
    Tabular,
    #[default]
    Mlp,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBaseSection {
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub log_z_lr: Option<f64>,
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub backing: Backing,
    pub hidden: Option<Vec<usize>>,
    pub eval_every: Option<usize>,
}

/// Classifier settings shared by both domains; the grid-only and
/// diffusion-only keys are ignored by the other domain.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSection {
    pub steps: Option<usize>,
    pub batch_per_base: Option<usize>,
    pub lr: Option<f64>,
    pub ema: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub completion_cap: Option<usize>,
    pub completion_samples: Option<usize>,
    pub warmup_fraction: Option<f64>,
    pub alpha_groups: Option<usize>,
    pub alpha_logit_range: Option<f64>,
    pub times_per_sample: Option<usize>,
    pub terminal_only_fraction: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GuideKind {
    #[default]
    Oracle,
    Learned,
    Both,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub samples: usize,
    pub steps: usize,
    pub oversample: usize,
    pub guide: GuideKind,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self { samples: 5000, steps: 1000, oversample: 4, guide: GuideKind::Oracle }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    /// Contrast parameters for the univariate overlay.
    pub alphas: Vec<f64>,
    /// Negation exponents for the univariate overlay.
    pub gammas: Vec<f64>,
    /// Pixels per grid cell in heatmaps.
    pub cell_pixels: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self { alphas: vec![0.05, 0.5, 0.95], gammas: vec![0.1, 0.5], cell_pixels: 8 }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let names = self.base_names()?;
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(CliError::Config(format!("base `{n}` is declared twice")));
            }
        }
        if let Some(text) = &self.expr {
            if text.trim().is_empty() {
                return Err(CliError::Config("compose expression is empty".into()));
            }
            let expr = sculpt::dsl::parse(text).map_err(|e| CliError::Config(format!("expression: {e}")))?;
            for b in expr.base_names() {
                if !seen.contains(b.as_str()) {
                    return Err(CliError::Config(format!("expression uses undeclared base `{b}`")));
                }
            }
        }
        if !(self.guidance_scale.is_finite() && self.guidance_scale >= 0.0) {
            return Err(CliError::Config("guidance_scale must be a non-negative number".into()));
        }
        if self.sampler.samples == 0 || self.sampler.steps == 0 {
            return Err(CliError::Config("sampler needs positive samples and steps".into()));
        }
        Ok(())
    }

    fn base_names(&self) -> CliResult<Vec<String>> {
        match self.domain {
            Domain::Grid => {
                if self.gaussian.is_some() {
                    return Err(CliError::Config("a grid experiment takes no [gaussian] section".into()));
                }
                let g = self.grid.as_ref().ok_or_else(|| CliError::Config("missing [grid] section".into()))?;
                if g.bases.is_empty() {
                    return Err(CliError::Config("no grid bases declared".into()));
                }
                Ok(g.bases.iter().map(|b| b.name.clone()).collect())
            }
            Domain::Gaussian1d | Domain::Gaussian2d => {
                if self.grid.is_some() {
                    return Err(CliError::Config("a gaussian experiment takes no [grid] section".into()));
                }
                let g = self.gaussian.as_ref().ok_or_else(|| CliError::Config("missing [gaussian] section".into()))?;
                if g.bases.is_empty() {
                    return Err(CliError::Config("no gaussian bases declared".into()));
                }
                let dim = if self.domain == Domain::Gaussian1d { 1 } else { 2 };
                for b in &g.bases {
                    if b.components.iter().any(|c| c.mean.len() != dim || c.variance.len() != dim) {
                        return Err(CliError::Config(format!("base `{}` must have {dim}-dimensional components", b.name)));
                    }
                }
                Ok(g.bases.iter().map(|b| b.name.clone()).collect())
            }
        }
    }

    /// The compose expression, required by every command that uses it.
    pub fn expression(&self) -> CliResult<&str> {
        self.expr.as_deref().ok_or_else(|| CliError::Config("no compose expression given (`expr` or --expr)".into()))
    }

    pub fn grid(&self) -> CliResult<&GridSection> {
        self.grid.as_ref().ok_or_else(|| CliError::Config("missing [grid] section".into()))
    }

    pub fn gaussian(&self) -> CliResult<&GaussianSection> {
        self.gaussian.as_ref().ok_or_else(|| CliError::Config("missing [gaussian] section".into()))
    }

    pub fn train_base_config(&self, seed: u64) -> TrainBaseConfig {
        let s = &self.train_base;
        let d = TrainBaseConfig::default();
        let backing = match s.backing {
            Backing::Tabular => PolicyBacking::Tabular,
            Backing::Mlp => PolicyBacking::Mlp { hidden: s.hidden.clone().unwrap_or_else(|| vec![256, 256]) },
        };
        TrainBaseConfig {
            steps: s.steps.unwrap_or(d.steps),
            batch_size: s.batch_size.unwrap_or(d.batch_size),
            lr: s.lr.unwrap_or(d.lr),
            log_z_lr: s.log_z_lr.unwrap_or(d.log_z_lr),
            epsilon: s.epsilon.unwrap_or(d.epsilon),
            backing,
            seed,
            eval_every: s.eval_every.unwrap_or(d.eval_every),
        }
    }

    pub fn grid_classifier_config(&self, seed: u64) -> ClassifierConfig {
        let s = &self.train_classifier;
        let d = ClassifierConfig::default();
        ClassifierConfig {
            steps: s.steps.unwrap_or(d.steps),
            batch_per_base: s.batch_per_base.unwrap_or(d.batch_per_base),
            lr: s.lr.unwrap_or(d.lr),
            ema: s.ema.unwrap_or(d.ema),
            warmup_fraction: s.warmup_fraction.unwrap_or(d.warmup_fraction),
            hidden: s.hidden.clone().unwrap_or(d.hidden),
            completion_cap: s.completion_cap.unwrap_or(d.completion_cap),
            completion_samples: s.completion_samples.unwrap_or(d.completion_samples),
            alpha_groups: s.alpha_groups.unwrap_or(d.alpha_groups),
            alpha_logit_range: s.alpha_logit_range.unwrap_or(d.alpha_logit_range),
            seed,
            ..d
        }
    }

    pub fn time_classifier_config(&self, seed: u64) -> sculpt::diffusion::TimeClassifierConfig {
        let s = &self.train_classifier;
        let d = sculpt::diffusion::TimeClassifierConfig::default();
        sculpt::diffusion::TimeClassifierConfig {
            steps: s.steps.unwrap_or(d.steps),
            batch_per_base: s.batch_per_base.unwrap_or(d.batch_per_base),
            times_per_sample: s.times_per_sample.unwrap_or(d.times_per_sample),
            lr: s.lr.unwrap_or(d.lr),
            ema: s.ema.unwrap_or(d.ema),
            terminal_only_fraction: s.terminal_only_fraction.unwrap_or(d.terminal_only_fraction),
            hidden: s.hidden.clone().unwrap_or(d.hidden),
            completion_cap: s.completion_cap.unwrap_or(d.completion_cap),
            completion_samples: s.completion_samples.unwrap_or(d.completion_samples),
            seed,
            ..d
        }
    }
}

impl GridBase {
    pub fn reward(&self, height: usize) -> CliResult<RewardField> {
        let field = match (&self.values, self.bumps.is_empty()) {
            (Some(v), true) => RewardField::new(height, v.clone()),
            (None, false) => {
                let bumps: Vec<Bump> =
                    self.bumps.iter().map(|b| Bump { row: b.row, col: b.col, sigma: b.sigma }).collect();
                RewardField::bumps(height, &bumps, self.floor.unwrap_or(0.0))
            }
            _ => {
                return Err(CliError::Config(format!("base `{}` needs exactly one of `bumps` or `values`", self.name)))
            }
        };
        field.map_err(|e| CliError::Config(format!("base `{}`: {e}", self.name)))
    }
}

impl GaussianBase {
    pub fn density(&self) -> CliResult<GaussianMixtureDensity> {
        let k = self.components.len();
        let weights = self.weights.clone().unwrap_or_else(|| vec![1.0 / k as f64; k]);
        let comps = self
            .components
            .iter()
            .map(|c| GaussianComponent::new_diagonal(c.mean.clone(), c.variance.clone()))
            .collect::<Result<Vec<_>, _>>()
            .and_then(|comps| GaussianMixtureDensity::new(weights, comps));
        comps.map_err(|e| CliError::Config(format!("base `{}`: {e}", self.name)))
    }
}
