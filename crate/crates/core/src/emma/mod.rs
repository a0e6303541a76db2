//! Monotonic alignment, infinite-lookback attention and the regularized
//! training objective.

mod alignment;
mod lookback;
mod objective;
mod params;
mod regularize;

pub use alignment::{
    alignment_parallel, alignment_recursive, extended_probability, stepwise_probability,
    transition_matrix, with_last_column_forced,
};
pub use lookback::{attention_energies, attention_output, beta_parallel, beta_recursive, shifted_exp};
pub use objective::{
    emma_objective, emma_objective_with_gradient, AlignmentBundle, EmmaModel, ObjectiveConfig,
    ObjectiveTerms,
};
pub use params::{
    EncDecStates, FeedForward, HeadConfig, HeadParams, Linear, LossWeights, PolicyHeadParams,
    Readout, DEFAULT_BIAS, DEFAULT_TEMPERATURE,
};
pub use regularize::{
    alignment_variance, expected_delays, ideal_delay, latency_loss, variance_loss, LatencyCost,
};
