//! Gaussian random fields with Matérn correlation, the transformed models
//! built from them, and parameter fitting.

mod matching;
mod matern;
mod mle;
mod simulate;

pub use matching::{lag_correlations, match_correlation, MatchOptions, MatchResult, MATCH_LAGS};
pub use matern::{matern_cor, MaternParams};
pub use mle::{fit_matern_mle, matern_log_likelihood, MleFit, MleOptions};
pub use simulate::{
    covariance_matrix, simulate_grf, simulate_iid, simulate_model, FieldModel, GrfSampler, ModelKind, ModelSampler,
    DENSE_CELL_LIMIT,
};
