//! Exact composition operators on finite tables and Gaussian mixtures.

mod continuous;
mod gaussian;
mod ops;
mod sculpt;
mod table;

pub use continuous::{
    contrast_curve, harmonic_mean_curve, negation_curve, posterior_curve, product_curve,
    simpson, Curve1d, SIMPSON_POINTS, WINDOW_SDS,
};
pub use gaussian::{
    gaussian_negation_is_proper, log_sum_exp, GaussianComponent, GaussianMixtureDensity, NegationDiagnostic,
};
pub use ops::{
    contrast, energy_negation, energy_product, harmonic_mass, harmonic_mean, mixture,
    nary_posterior, validate_simplex,
};
pub use sculpt::{
    scaled_contrast, scaled_harmonic_mean, scaled_posterior, sculpt_stage, LabelModel, ScaledTable,
};
pub use table::{l1_distance, DensityTable};
