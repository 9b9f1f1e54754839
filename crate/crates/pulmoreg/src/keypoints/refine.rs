//! Symmetric refinement of the regularized matches.
//!
//! The keypoints are translated by their forward matches into the moving
//! image and used as control points for a second correspondence search in
//! the opposite direction. Forward and sign-reversed backward marginal
//! energies are averaged; the refined displacement is the argmin of the
//! average. Targets are mapped through the pre-registration into the
//! original moving frame.

use super::{
    build_cost_volume_from_gradients, build_mst_from_values, tree_bp_marginals, Correspondence,
    CorrespondenceSet, KeypointParams, KeypointSet,
};
use crate::image::{Image3D, VectorField3};
use crate::transform::BSplineTransform;

#[allow(clippy::too_many_arguments)]
pub fn symmetric_refine(
    forward_marginals: &[Vec<f64>],
    keys: &KeypointSet,
    fixed: &Image3D,
    fixed_grad: &VectorField3,
    moving_prealigned: &Image3D,
    moving_grad: &VectorField3,
    pre_registration: &BSplineTransform,
    params: &KeypointParams,
) -> CorrespondenceSet {
    let _ = fixed;
    let lattice = &params.lattice;
    let n = keys.len();
    assert_eq!(forward_marginals.len(), n);

    // forward matches move the control points into the moving image
    let fwd_best: Vec<usize> = forward_marginals.iter().map(|m| argmin(m)).collect();
    let control: Vec<[f64; 3]> = keys
        .points
        .iter()
        .zip(fwd_best.iter())
        .map(|(p, &l)| {
            let d = lattice.displacement(l);
            [p[0] + d[0], p[1] + d[1], p[2] + d[2]]
        })
        .collect();

    // backward search: moving patches against displaced fixed patches
    let backward_cost =
        build_cost_volume_from_gradients(moving_grad, fixed_grad, &control, lattice, params.eta);
    let control_intensity: Vec<f64> = control
        .iter()
        .map(|&p| moving_prealigned.nearest(p).unwrap_or(0.0))
        .collect();
    let backward_marginals = if n >= 2 {
        let tree =
            build_mst_from_values(&control, &control_intensity, params.knn, params.sigma_intensity);
        tree_bp_marginals(&backward_cost, &tree, params.alpha_kp)
    } else {
        backward_cost.costs.clone()
    };

    // average forward and sign-reversed backward energies
    let n_labels = lattice.num_labels();
    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        let mut best = f64::INFINITY;
        let mut best_label = 0usize;
        for l in 0..n_labels {
            let avg = 0.5 * (forward_marginals[i][l] + backward_marginals[i][lattice.negated_label(l)]);
            if avg < best {
                best = avg;
                best_label = l;
            }
        }
        let d = lattice.displacement(best_label);
        let p = keys.points[i];
        let matched = [p[0] + d[0], p[1] + d[1], p[2] + d[2]];
        let target = pre_registration.evaluate(matched);
        items.push(Correspondence {
            source: p,
            target,
            energy: best,
        });
    }
    CorrespondenceSet { items }
}

fn argmin(v: &[f64]) -> usize {
    let mut best = f64::INFINITY;
    let mut arg = 0usize;
    for (i, &x) in v.iter().enumerate() {
        if x < best {
            best = x;
            arg = i;
        }
    }
    arg
}
