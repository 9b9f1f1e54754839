//! Curvature regularizer on the control grid.
//!
//! Penalizes second derivatives of the deviation of `y` from the
//! pre-registration, i.e. of the optimized coefficients alone:
//! `R = 1/2 C sum_p |L u(p)|^2` with the 7-point Laplacian `L` evaluated at
//! interior nodes (boundary rows vanish, the discrete analogue of natural
//! boundary conditions). Affine coefficient functions are annihilated
//! exactly. The gradient is the biharmonic stencil `C L^T L u`.

use super::TermValue;
use crate::transform::BSplineTransform;

pub fn curvature(t: &BSplineTransform) -> TermValue {
    let dims = t.grid_dims();
    let n = t.num_nodes();
    let h = t.cell_size();
    let cvol = t.cell_volume();
    let inv_h2 = [1.0 / (h[0] * h[0]), 1.0 / (h[1] * h[1]), 1.0 / (h[2] * h[2])];

    // Laplacian of each coefficient component at interior nodes.
    let mut lap = vec![[0.0f64; 3]; n];
    let mut value = 0.0;
    let idx = |i: usize, j: usize, k: usize| i + dims[0] * (j + dims[1] * k);
    if dims.iter().all(|&d| d >= 3) {
        for k in 1..dims[2] - 1 {
            for j in 1..dims[1] - 1 {
                for i in 1..dims[0] - 1 {
                    let c = t.coeffs[idx(i, j, k)];
                    let mut l = [0.0; 3];
                    for (a, (im, ip)) in [
                        (idx(i - 1, j, k), idx(i + 1, j, k)),
                        (idx(i, j - 1, k), idx(i, j + 1, k)),
                        (idx(i, j, k - 1), idx(i, j, k + 1)),
                    ]
                    .into_iter()
                    .enumerate()
                    {
                        let cm = t.coeffs[im];
                        let cp = t.coeffs[ip];
                        for comp in 0..3 {
                            l[comp] += (cp[comp] - 2.0 * c[comp] + cm[comp]) * inv_h2[a];
                        }
                    }
                    lap[idx(i, j, k)] = l;
                    value += l[0] * l[0] + l[1] * l[1] + l[2] * l[2];
                }
            }
        }
    }
    value *= 0.5 * cvol;

    // gradient: apply the (symmetric) stencil to the zero-extended Laplacian
    let mut gradient = vec![[0.0f64; 3]; n];
    let get = |v: &Vec<[f64; 3]>, i: isize, j: isize, k: isize| -> [f64; 3] {
        if i < 0
            || j < 0
            || k < 0
            || i as usize >= dims[0]
            || j as usize >= dims[1]
            || k as usize >= dims[2]
        {
            [0.0; 3]
        } else {
            v[idx(i as usize, j as usize, k as usize)]
        }
    };
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let (ii, jj, kk) = (i as isize, j as isize, k as isize);
                let c = lap[idx(i, j, k)];
                let mut g = [0.0; 3];
                for (a, (m, p)) in [
                    (get(&lap, ii - 1, jj, kk), get(&lap, ii + 1, jj, kk)),
                    (get(&lap, ii, jj - 1, kk), get(&lap, ii, jj + 1, kk)),
                    (get(&lap, ii, jj, kk - 1), get(&lap, ii, jj, kk + 1)),
                ]
                .into_iter()
                .enumerate()
                {
                    for comp in 0..3 {
                        g[comp] += (p[comp] - 2.0 * c[comp] + m[comp]) * inv_h2[a];
                    }
                }
                for comp in 0..3 {
                    gradient[idx(i, j, k)][comp] = cvol * g[comp];
                }
            }
        }
    }
    TermValue { value, gradient }
}

/// Applies the curvature quadratic-form operator `C L^T L` to an arbitrary
/// coefficient vector (the Hessian of [`curvature`]); used by the L-BFGS
/// metric.
pub(crate) fn curvature_operator(t: &BSplineTransform, u: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut probe = t.clone();
    probe.coeffs.copy_from_slice(u);
    // curvature is an exact quadratic form: gradient at u equals C L^T L u
    curvature(&probe).gradient
}
