//! Hazard-function estimators for topological events on Gaussian-related
//! random fields and branching structures.

pub mod cox;
pub mod error;
pub mod filtration;
pub mod inference;
pub mod lattice;
pub mod limiting;
pub mod linalg;
pub mod nelson_aalen;
pub mod optim;
pub mod qmc;
pub mod randfield;
pub mod rng;
pub mod special;
pub mod trees;

pub use error::{Error, Result};
pub use filtration::{barcode, birth_process, local_maxima, local_minima, Barcode, Birth, BirthProcess, Direction, Interval, RiskConvention};
pub use lattice::{Boundary, GridIndex, LatticeField, LatticeOptions, Neighborhood};
pub use nelson_aalen::{at_risk_percentile_grid, discretize, naive_variance, nelson_aalen, CurveKind, PercentileGrid, StepCurve};
pub use randfield::{fit_matern_mle, match_correlation, matern_cor, simulate_grf, simulate_iid, simulate_model, FieldModel, MaternParams, ModelKind};
pub use limiting::{iid_limit, limit_curve, mean_shift_variance, mvn_upper_orthant, LimitCorrelation, LimitCurve, LimitSpec};
pub use inference::{bootstrap_band, coverage_experiment, naive_band, replicate_band, replicate_pointwise, BandMethod, BandResult, CoverageConfig, CoverageTable};
pub use trees::{build_event_table, radial_risk_set, tree_nelson_aalen, EdgeStatus, EventKind, EventRow, EventTable, MetricTree, NodeKind};
pub use cox::{cox_fit, gradient_check, hazard_ratio_20_80, CoxFit, CoxFormula, Term, Ties};
