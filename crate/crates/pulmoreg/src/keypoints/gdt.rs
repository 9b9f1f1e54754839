//! Quadratic min-convolution over the displacement lattice: the message
//! update of the part-based model, linear in the number of labels.

use super::DisplacementLattice;
use crate::image::lower_envelope_quadratic;

/// 1D min-convolution `g(p) = min_q f(q) + w * (step * (p - q))^2` with the
/// inner minimizer per output.
pub fn quadratic_distance_transform_1d(
    costs: &[f64],
    step: f64,
    weight: f64,
) -> (Vec<f64>, Vec<usize>) {
    let n = costs.len();
    let pos: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let w_eff = weight * (step * step);
    let mut vals = vec![0.0; n];
    let mut args = vec![0usize; n];
    lower_envelope_quadratic(costs, &pos, w_eff, &mut vals, &mut args);
    (vals, args)
}

/// Separable 3D min-convolution over the label grid:
/// `g(d) = min_d' f(d') + w * |d - d'|^2` with lattice distances in mm.
/// Returns the transformed costs and, per output label, the linear index
/// of the minimizing input label (for message backtracking).
pub fn quadratic_distance_transform(
    costs: &[f64],
    lattice: &DisplacementLattice,
    weight: f64,
) -> (Vec<f64>, Vec<usize>) {
    let n = lattice.axis_len();
    assert_eq!(costs.len(), n * n * n);
    let pos: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let w_eff = weight * (lattice.step * lattice.step);

    let mut vals = costs.to_vec();
    // per-axis argmin tables
    let mut axis_args: [Vec<usize>; 3] = [vec![0; vals.len()], vec![0; vals.len()], vec![0; vals.len()]];
    let mut line = vec![0.0; n];
    let mut lvals = vec![0.0; n];
    let mut largs = vec![0usize; n];
    for axis in 0..3 {
        for j2 in 0..n {
            for j1 in 0..n {
                for i in 0..n {
                    line[i] = vals[lattice_index(n, axis, i, j1, j2)];
                }
                lower_envelope_quadratic(&line, &pos, w_eff, &mut lvals, &mut largs);
                for i in 0..n {
                    let idx = lattice_index(n, axis, i, j1, j2);
                    vals[idx] = lvals[i];
                    axis_args[axis][idx] = largs[i];
                }
            }
        }
    }

    // compose the per-axis minimizers into full argmin labels
    let mut args = vec![0usize; vals.len()];
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let zp = axis_args[2][x + n * (y + n * z)];
                let yp = axis_args[1][x + n * (y + n * zp)];
                let xp = axis_args[0][x + n * (yp + n * zp)];
                args[x + n * (y + n * z)] = xp + n * (yp + n * zp);
            }
        }
    }
    (vals, args)
}

#[inline]
fn lattice_index(n: usize, axis: usize, i: usize, j1: usize, j2: usize) -> usize {
    let (x, y, z) = match axis {
        0 => (i, j1, j2),
        1 => (j1, i, j2),
        _ => (j1, j2, i),
    };
    x + n * (y + n * z)
}
