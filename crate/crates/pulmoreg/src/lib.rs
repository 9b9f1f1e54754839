//! Deformable registration of inspiration/expiration lung CT.
//!
//! The pipeline recovers large respiratory motion in two stages driven by
//! the same normalized-gradient-fields similarity: a sparse stage matches
//! Förstner keypoints over a dense displacement lattice with min-sum belief
//! propagation on a minimum spanning tree, and a dense stage minimizes a
//! unified objective (NGF + curvature + boundary + volume change control +
//! keypoint penalty) over a first-order B-spline control grid with L-BFGS
//! on a four-level pyramid. Volume change control keeps every accepted
//! iterate free of foldings.

pub mod error;
pub mod eval;
pub mod image;
pub mod io;
pub mod keypoints;
pub mod objective;
pub mod optimizer;
pub mod phantom;
pub mod pipeline;
pub mod transform;

pub use error::{Error, Result};
