//! GFlowNets on the grid DAG: base training, exact enumeration, classifier
//! oracles and learned classifiers, and composed policies.

mod classifier;
mod compose;
mod grid;
mod oracle;
mod policy;
mod train_base;

pub use classifier::{train_classifier, train_classifier_with, ClassifierConfig, ClassifierMetrics, SculptClassifier};
pub use compose::{
    composed_policy, guided_policy, mixture_policy, parameterized_label_weights, realize_plan_exact, realize_stage,
    RealizedStage,
};
pub use grid::{Action, Bump, GridDag, RewardField, NUM_ACTIONS};
pub use oracle::{exact_classifier, ClassifierTable};
pub use policy::{
    encode_cell, enumerate_distribution, masked_log_softmax, sample_trajectory, state_visit_probs,
    ForwardPolicy, Trajectory, TrajectorySampler,
};
pub use train_base::{train_base, BaseMetrics, PolicyBacking, TrainBaseConfig, TrainedBase};
