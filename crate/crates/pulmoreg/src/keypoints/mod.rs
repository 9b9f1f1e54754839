//! Sparse regularized keypoint correspondences: Förstner detection, NGF
//! cost volumes over a dense displacement lattice, min-sum belief
//! propagation on a minimum spanning tree and symmetric marginal
//! refinement.

mod bp;
mod cost_volume;
mod foerstner;
mod gdt;
mod mst;
mod refine;

pub use bp::tree_bp_marginals;
pub use cost_volume::{build_cost_volume, build_cost_volume_from_gradients};
pub use foerstner::detect_keypoints;
pub use gdt::{quadratic_distance_transform, quadratic_distance_transform_1d};
pub use mst::build_mst;
pub(crate) use mst::build_mst_from_values;
pub use refine::symmetric_refine;

use crate::image::{gradient, Image3D};
use crate::transform::BSplineTransform;
use serde::{Deserialize, Serialize};

/// Quantized displacement search space `{0, +-step, ..., +-radius}^3` in mm.
/// Defaults give 33^3 = 35937 labels.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DisplacementLattice {
    /// Quantization step, mm.
    pub step: f64,
    /// Maximum displacement magnitude per axis, mm.
    pub radius: f64,
}

impl Default for DisplacementLattice {
    fn default() -> Self {
        Self { step: 2.0, radius: 32.0 }
    }
}

impl DisplacementLattice {
    pub fn new(step: f64, radius: f64) -> Self {
        assert!(step > 0.0 && radius >= 0.0);
        Self { step, radius }
    }

    /// Labels per axis (odd).
    pub fn axis_len(&self) -> usize {
        2 * (self.radius / self.step).round() as usize + 1
    }

    /// Total number of labels.
    pub fn num_labels(&self) -> usize {
        let n = self.axis_len();
        n * n * n
    }

    /// Signed axis offsets in mm, ascending.
    pub fn axis_offsets(&self) -> Vec<f64> {
        let half = (self.radius / self.step).round() as i64;
        (-half..=half).map(|i| i as f64 * self.step).collect()
    }

    /// Displacement vector of a linear label index (x fastest).
    pub fn displacement(&self, label: usize) -> [f64; 3] {
        let n = self.axis_len();
        let half = (n / 2) as i64;
        let ix = (label % n) as i64 - half;
        let iy = ((label / n) % n) as i64 - half;
        let iz = (label / (n * n)) as i64 - half;
        [
            ix as f64 * self.step,
            iy as f64 * self.step,
            iz as f64 * self.step,
        ]
    }

    /// Label index of the negated displacement (the lattice is symmetric).
    pub fn negated_label(&self, label: usize) -> usize {
        let n = self.axis_len();
        let ix = label % n;
        let iy = (label / n) % n;
        let iz = label / (n * n);
        (n - 1 - ix) + n * ((n - 1 - iy) + n * (n - 1 - iz))
    }

    /// Label index of zero displacement.
    pub fn zero_label(&self) -> usize {
        let n = self.axis_len();
        let half = n / 2;
        half + n * (half + n * half)
    }
}

/// Förstner keypoints in the fixed image: world positions (mm) and their
/// distinctiveness scores.
#[derive(Debug, Clone, Default)]
pub struct KeypointSet {
    pub points: Vec<[f64; 3]>,
    pub scores: Vec<f64>,
}

impl KeypointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Per-keypoint matching costs over the displacement lattice, all in [0, 1].
#[derive(Debug, Clone)]
pub struct CostVolume {
    pub lattice: DisplacementLattice,
    /// costs[k][label]
    pub costs: Vec<Vec<f64>>,
}

/// Minimum spanning tree over the keypoints. `parent[root] == root`;
/// `edge_weight[k]` is the cost of the edge to the parent (denominator of
/// the pairwise regularizer).
#[derive(Debug, Clone)]
pub struct SpanningTree {
    pub root: usize,
    pub parent: Vec<usize>,
    pub children: Vec<Vec<usize>>,
    pub edge_weight: Vec<f64>,
    /// Topological order, root first.
    pub order: Vec<usize>,
}

/// One refined keypoint correspondence: fixed-frame source, target in the
/// original moving frame, and the minimal averaged marginal energy.
#[derive(Debug, Clone, Copy)]
pub struct Correspondence {
    pub source: [f64; 3],
    pub target: [f64; 3],
    pub energy: f64,
}

/// Refined sparse correspondence field. Marginal energies are kept only on
/// request; they are large (|K| x |L|).
#[derive(Debug, Clone, Default)]
pub struct CorrespondenceSet {
    pub items: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn sources(&self) -> Vec<[f64; 3]> {
        self.items.iter().map(|c| c.source).collect()
    }

    pub fn targets(&self) -> Vec<[f64; 3]> {
        self.items.iter().map(|c| c.target).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Tunables of the keypoint stage; defaults follow the reference setup.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KeypointParams {
    /// Structure tensor smoothing, mm.
    pub sigma_mm: f64,
    /// Non-max suppression window radius, voxels.
    pub suppression_radius: usize,
    pub lattice: DisplacementLattice,
    /// NGF edge parameter shared with the dense term.
    pub eta: f64,
    /// Pairwise regularization weight of the part-based model.
    pub alpha_kp: f64,
    /// Candidate edges per node for the spanning tree.
    pub knn: usize,
    /// Intensity scale in the edge cost denominator.
    pub sigma_intensity: f64,
}

impl Default for KeypointParams {
    fn default() -> Self {
        Self {
            sigma_mm: 1.4,
            suppression_radius: 3,
            lattice: DisplacementLattice::default(),
            eta: 12.0,
            alpha_kp: 1.0 / 45.0,
            knn: 10,
            sigma_intensity: 150.0,
        }
    }
}

/// Runs the full sparse stage on the 1 mm isotropic masked images: detect
/// keypoints in the fixed image, match them against the pre-aligned moving
/// image over the lattice, regularize with tree belief propagation, refine
/// symmetrically and map the targets through the pre-registration into the
/// original moving frame.
pub fn find_correspondences(
    fixed_1mm: &Image3D,
    mask_1mm: &Image3D,
    moving_prealigned_1mm: &Image3D,
    pre_registration: &BSplineTransform,
    params: &KeypointParams,
) -> CorrespondenceSet {
    let keys = detect_keypoints(fixed_1mm, mask_1mm, params.sigma_mm, params.suppression_radius);
    if keys.is_empty() {
        return CorrespondenceSet::default();
    }
    let fixed_grad = gradient(fixed_1mm);
    let moving_grad = gradient(moving_prealigned_1mm);
    let cost = build_cost_volume_from_gradients(
        &fixed_grad,
        &moving_grad,
        &keys.points,
        &params.lattice,
        params.eta,
    );
    let tree = build_mst(&keys, fixed_1mm, params.knn, params.sigma_intensity);
    let forward = tree_bp_marginals(&cost, &tree, params.alpha_kp);
    symmetric_refine(
        &forward,
        &keys,
        fixed_1mm,
        &fixed_grad,
        moving_prealigned_1mm,
        &moving_grad,
        pre_registration,
        params,
    )
}
