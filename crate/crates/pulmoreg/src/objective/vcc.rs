//! Volume change control: the barrier on the per-cell volume-ratio terms.
//!
//! `V = C sum_cells sum_l psi(d_l)` with the convex weighting
//! `psi(t) = (t - 1)^2 / t` for `t > 0` and infinity otherwise. By Jensen's
//! inequality this upper-bounds the integral of `psi(det grad y)` over the
//! domain, and the infinite branch bars any cell whose determinant could
//! reach zero, so finite values certify local injectivity.

use super::TermValue;
use crate::transform::{cell_corner_offset, BSplineTransform, CellJacobianWork};
use rayon::prelude::*;

/// Symmetric volume-change weighting: `psi(t) = psi(1/t)`, zero at 1,
/// infinite for `t <= 0`.
#[inline]
pub fn psi(t: f64) -> f64 {
    if t > 0.0 {
        let d = t - 1.0;
        d * d / t
    } else {
        f64::INFINITY
    }
}

/// Derivative of [`psi`] on the feasible branch.
#[inline]
pub fn psi_prime(t: f64) -> f64 {
    1.0 - 1.0 / (t * t)
}

/// Volume change control term. The value is infinite as soon as any of the
/// 64 per-cell terms is non-positive; the optimizer treats that as a
/// rejected step.
pub fn vcc(t: &BSplineTransform) -> TermValue {
    vcc_detailed(t).0
}

/// [`vcc`] plus the minimum volume-ratio term over all cells.
pub fn vcc_detailed(t: &BSplineTransform) -> (TermValue, f64) {
    let cells = t.cell_counts();
    let cvol = t.cell_volume();
    let n_cells = cells[0] * cells[1] * cells[2];
    let grid_dims = t.grid_dims();

    // per-cell pass: psi sum, min term, corner gradients
    let per_cell: Vec<(f64, f64, [[f64; 3]; 8])> = (0..n_cells)
        .into_par_iter()
        .map(|ci| {
            let cell = [
                ci % cells[0],
                (ci / cells[0]) % cells[1],
                ci / (cells[0] * cells[1]),
            ];
            let work = CellJacobianWork::new(t, cell);
            let d = work.d_values();
            let min_d = d.iter().cloned().fold(f64::INFINITY, f64::min);
            if min_d <= 0.0 {
                return (f64::INFINITY, min_d, [[0.0; 3]; 8]);
            }
            let mut sum = 0.0;
            let mut grads = [[0.0; 3]; 8];
            for (l, &dl) in d.iter().enumerate() {
                sum += psi(dl);
                work.accumulate_gradient(l, psi_prime(dl), &mut grads);
            }
            (sum, min_d, grads)
        })
        .collect();

    let mut min_d = f64::INFINITY;
    let mut sum = 0.0;
    for (s, m, _) in &per_cell {
        min_d = min_d.min(*m);
        sum += s;
    }
    if !sum.is_finite() {
        return (
            TermValue {
                value: f64::INFINITY,
                gradient: vec![[0.0; 3]; t.num_nodes()],
            },
            min_d,
        );
    }

    // gather per-cell corner gradients onto nodes
    let n_nodes = t.num_nodes();
    let gradient: Vec<[f64; 3]> = (0..n_nodes)
        .into_par_iter()
        .map(|np| {
            let px = np % grid_dims[0];
            let py = (np / grid_dims[0]) % grid_dims[1];
            let pz = np / (grid_dims[0] * grid_dims[1]);
            let mut g = [0.0f64; 3];
            // adjacent cells: offsets o in {0,1}^3 with cell = node - o
            for o in 0..8usize {
                let off = cell_corner_offset(o);
                if off[0] > px || off[1] > py || off[2] > pz {
                    continue;
                }
                let c = [px - off[0], py - off[1], pz - off[2]];
                if c[0] >= cells[0] || c[1] >= cells[1] || c[2] >= cells[2] {
                    continue;
                }
                let ci = c[0] + cells[0] * (c[1] + cells[1] * c[2]);
                let corner = &per_cell[ci].2[o];
                g[0] += cvol * corner[0];
                g[1] += cvol * corner[1];
                g[2] += cvol * corner[2];
            }
            g
        })
        .collect();

    (
        TermValue {
            value: cvol * sum,
            gradient,
        },
        min_d,
    )
}
