//! NGF matching costs over the displacement lattice.
//!
//! For a keypoint and a candidate displacement, the cost is the mean
//! pointwise NGF residual over a 7^3 patch with stride 2 (64 samples)
//! between the fixed gradient at the patch and the moving gradient at the
//! displaced patch. Samples leaving either volume cost the maximum
//! residual 1.

use super::{CostVolume, DisplacementLattice};
use crate::image::{gradient, Image3D, VectorField3};
use crate::objective::ngf_residual;
use rayon::prelude::*;

/// Patch offsets in voxels: 7^3 window with stride 2.
const PATCH_OFFSETS: [i64; 4] = [-3, -1, 1, 3];

/// Builds the cost volume from precomputed gradient fields. Both fields
/// must live on 1 mm isotropic grids (shared frame with integer-mm lattice
/// steps), so patch and displacement lookups stay voxel-exact.
pub fn build_cost_volume_from_gradients(
    fixed_grad: &VectorField3,
    moving_grad: &VectorField3,
    keys: &[[f64; 3]],
    lattice: &DisplacementLattice,
    eta: f64,
) -> CostVolume {
    let n_labels = lattice.num_labels();
    let n_axis = lattice.axis_len();
    let offsets = lattice.axis_offsets();
    // per-axis voxel offsets of the lattice in the moving grid
    let label_vox: [Vec<i64>; 3] = [
        offsets.iter().map(|d| (d / moving_grad.spacing[0]).round() as i64).collect(),
        offsets.iter().map(|d| (d / moving_grad.spacing[1]).round() as i64).collect(),
        offsets.iter().map(|d| (d / moving_grad.spacing[2]).round() as i64).collect(),
    ];

    let costs: Vec<Vec<f64>> = keys
        .par_iter()
        .map(|key| {
            // fixed patch: gradients and moving-grid base indices
            let mut patch: Vec<(Option<[f64; 3]>, [i64; 3])> = Vec::with_capacity(64);
            for oz in PATCH_OFFSETS {
                for oy in PATCH_OFFSETS {
                    for ox in PATCH_OFFSETS {
                        let p = [
                            key[0] + ox as f64 * fixed_grad.spacing[0],
                            key[1] + oy as f64 * fixed_grad.spacing[1],
                            key[2] + oz as f64 * fixed_grad.spacing[2],
                        ];
                        let fg = nearest_vector(fixed_grad, p);
                        let um = moving_grad.world_to_voxel(p);
                        let base = [
                            um[0].round() as i64,
                            um[1].round() as i64,
                            um[2].round() as i64,
                        ];
                        patch.push((fg, base));
                    }
                }
            }
            let [mnx, mny, mnz] = moving_grad.dims;
            let mut row = vec![0.0f64; n_labels];
            for (label, cost) in row.iter_mut().enumerate() {
                let ix = label % n_axis;
                let iy = (label / n_axis) % n_axis;
                let iz = label / (n_axis * n_axis);
                let dv = [label_vox[0][ix], label_vox[1][iy], label_vox[2][iz]];
                let mut acc = 0.0;
                for (fg, base) in &patch {
                    let r = match fg {
                        None => 1.0,
                        Some(f) => {
                            let q = [base[0] + dv[0], base[1] + dv[1], base[2] + dv[2]];
                            if q[0] < 0
                                || q[1] < 0
                                || q[2] < 0
                                || q[0] >= mnx as i64
                                || q[1] >= mny as i64
                                || q[2] >= mnz as i64
                            {
                                1.0
                            } else {
                                let m = moving_grad.vectors[q[0] as usize
                                    + mnx * (q[1] as usize + mny * q[2] as usize)];
                                ngf_residual(m, *f, eta)
                            }
                        }
                    };
                    acc += r;
                }
                *cost = acc / 64.0;
            }
            row
        })
        .collect();

    CostVolume {
        lattice: *lattice,
        costs,
    }
}

/// Builds the cost volume from the raw images (gradients computed here).
pub fn build_cost_volume(
    fixed: &Image3D,
    moving: &Image3D,
    keys: &[[f64; 3]],
    lattice: &DisplacementLattice,
    eta: f64,
) -> CostVolume {
    let fg = gradient(fixed);
    let mg = gradient(moving);
    build_cost_volume_from_gradients(&fg, &mg, keys, lattice, eta)
}

fn nearest_vector(field: &VectorField3, p: [f64; 3]) -> Option<[f64; 3]> {
    let u = field.world_to_voxel(p);
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let r = u[a].round();
        if r < 0.0 || r > (field.dims[a] - 1) as f64 {
            return None;
        }
        idx[a] = r as usize;
    }
    Some(field.at(idx[0], idx[1], idx[2]))
}
