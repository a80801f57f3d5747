//! Limiting cumulative hazard of component births for Gaussian fields.

mod curve;
mod orthant;

pub use curve::{iid_limit, limit_curve, mean_shift_variance, neighbor_classes, LimitCorrelation, LimitCurve, LimitSpec, NeighborClass};
pub use orthant::{mvn_upper_orthant, OrthantEstimate, ORTHANT_MAX_DIM, ORTHANT_SHIFTS};
