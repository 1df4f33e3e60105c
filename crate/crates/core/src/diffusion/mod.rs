//! Diffusion-model composition over Gaussian-mixture bases: the mixture
//! SDE, classifier-guided reverse SDEs, exact quadrature oracles and a
//! learned time-conditioned classifier.

mod classifier;
mod guide;
mod metrics;
mod quadrature;
mod sampler;
mod sde;

pub use classifier::{
    train_time_classifier, TimeClassifier, TimeClassifierConfig, TimeClassifierGuide, TimeClassifierMetrics,
    TIME_FEATURES,
};
pub use guide::{composed_backward_drift, ComposedDynamics, LabelGuide};
pub use metrics::{wasserstein1, Empirical, Quantile1d, QUANTILE_POINTS};
pub use quadrature::{quadrature_label_joint, QuadratureOracle};
pub use sampler::{euler_maruyama, guided_prior_samples, prior_samples, PointwiseDynamics, ReverseDynamics};
pub use sde::{
    analytic_score, diffused_marginal, label_posterior, mixture_backward_drift, mixture_backward_drift_general,
    DiffusedMixture, ReverseCoefficients, VeSde,
};
