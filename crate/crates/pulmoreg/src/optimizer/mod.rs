//! Continuous optimization: L-BFGS with the curvature metric, the
//! multilevel driver and the mask pre-registration chain.

mod lbfgs;
mod metric;
mod multilevel;
mod prereg;

pub use lbfgs::{
    flatten_coeffs, lbfgs_minimize, unflatten_coeffs, IterateInfo, LbfgsOptions, LbfgsOutcome,
};
pub use metric::apply_inverse_metric;
pub use multilevel::{
    level_image, run_multilevel, LevelReport, LevelSchedule, LevelSpec, MultilevelOutcome,
    RunSettings,
};
pub use prereg::{mask_centroid, preregister, PreRegParams, PreRegistration};
