//! Lung boundary alignment term: squared difference of the segmentation
//! masks under the transform. Both masks are pre-smoothed with sigma = 1
//! voxel so the term carries a usable descent direction; on matching
//! smoothed masks the term is exactly zero.

use super::{GridSampler, TermValue};
use crate::image::trilinear_sample_with_derivative;
use crate::image::{smooth_gaussian_axes, Image3D};
use crate::transform::BSplineTransform;
use rayon::prelude::*;

/// Smoothing applied to a binary mask before it enters the boundary term:
/// sigma = 1 voxel per axis.
pub fn smooth_mask_for_boundary(mask: &Image3D) -> Image3D {
    smooth_gaussian_axes(mask, mask.spacing)
}

/// Boundary term over pre-smoothed masks with cached voxel tables.
pub(crate) fn boundary_term_cached(
    boundary_fixed: &Image3D,
    boundary_moving: &Image3D,
    t: &BSplineTransform,
    sampler: &GridSampler,
) -> TermValue {
    let [nx, ny, _nz] = boundary_fixed.dims;
    let plane = nx * ny;
    let w_vol = boundary_fixed.voxel_volume();

    let mut val_field = vec![[0.0f64; 3]; boundary_fixed.len()];
    let partials: Vec<f64> = val_field
        .par_chunks_mut(plane)
        .enumerate()
        .map(|(z, slab)| {
            let mut acc = 0.0;
            for y in 0..ny {
                for x in 0..nx {
                    let li = x + nx * y;
                    let p = boundary_fixed.voxel_center([x, y, z]);
                    let d = sampler.displacement(t, [x, y, z]);
                    let yp = [p[0] + d[0], p[1] + d[1], p[2] + d[2]];
                    let (bm, dbm) = trilinear_sample_with_derivative(boundary_moving, yp);
                    let resid = bm - boundary_fixed.values[li + plane * z];
                    acc += resid * resid;
                    slab[li] = [
                        w_vol * resid * dbm[0],
                        w_vol * resid * dbm[1],
                        w_vol * resid * dbm[2],
                    ];
                }
            }
            acc
        })
        .collect();
    let value = 0.5 * w_vol * partials.iter().sum::<f64>();
    let gradient = sampler.gather(t.grid_dims(), &val_field);
    TermValue { value, gradient }
}

/// Standalone boundary term on raw binary masks: smooths both masks with
/// sigma = 1 voxel, then evaluates the squared difference under `y`.
pub fn boundary_term(b_fixed: &Image3D, b_moving: &Image3D, t: &BSplineTransform) -> TermValue {
    let bf = smooth_mask_for_boundary(b_fixed);
    let bm = smooth_mask_for_boundary(b_moving);
    let sampler = GridSampler::new(b_fixed, t);
    boundary_term_cached(&bf, &bm, t, &sampler)
}
