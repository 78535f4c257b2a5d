//! Policy-gradient estimation and the safety-constrained parameter step.

mod gradient;
mod membership;
mod safe_update;

pub use gradient::{estimate_policy_gradient, GradientEstimate, GradientScaling};
pub use membership::{membership_check, Membership, MEMBERSHIP_TOL};
pub use safe_update::{
    count_outside, dataset_residuals, outside_indices, safe_update, ConstraintDataset, SafeUpdateNlp, SafeUpdateOptions,
    SafeUpdateOutcome, StepSize, Transition, UpdateMethod,
};
