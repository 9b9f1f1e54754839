//! Per-cell volume-ratio terms of the first-order B-spline transform.
//!
//! Within one control cell the determinant of the transform Jacobian is a
//! convex combination of 64 constants: write the Jacobian column for axis
//! `a` as the bilinear blend (in the two other axes) of the 4 edge
//! differences of the total transform across the cell in direction `a`,
//! scaled by the cell edge length. Expanding the determinant by
//! multilinearity over the 4 x 4 x 4 column choices gives
//! `det grad y(x) = sum_l alpha_l(x) d_l` with `alpha_l(x) >= 0` summing to
//! one. Hence `min_l d_l <= det grad y(x) <= max_l d_l` everywhere in the
//! cell, and positivity of all 64 terms certifies local injectivity.

use super::{det3, BSplineTransform};

/// The 64 dimensionless volume-ratio terms of one cell.
#[derive(Debug, Clone)]
pub struct CellJacobianTerms {
    pub cell: [usize; 3],
    pub d: [f64; 64],
}

/// Precomputed edge-difference vectors of a cell, used to evaluate the 64
/// terms and their derivatives with respect to the corner coefficients.
pub struct CellJacobianWork {
    /// Edge differences along x, indexed by (b, c) = (q & 1, q >> 1).
    e1: [[f64; 3]; 4],
    /// Edge differences along y, indexed by (a, c).
    e2: [[f64; 3]; 4],
    /// Edge differences along z, indexed by (a, b).
    e3: [[f64; 3]; 4],
    inv_h: [f64; 3],
}

/// Corner order within a cell: linear index `a + 2b + 4c` for offsets
/// (a, b, c) in {0,1}^3 relative to the cell's low node.
#[inline]
pub fn cell_corner_offset(n: usize) -> [usize; 3] {
    [n & 1, (n >> 1) & 1, (n >> 2) & 1]
}

impl CellJacobianWork {
    pub fn new(t: &BSplineTransform, cell: [usize; 3]) -> Self {
        let cells = t.cell_counts();
        assert!(
            (0..3).all(|a| cell[a] < cells[a]),
            "cell {cell:?} outside grid with {cells:?} cells"
        );
        let h = t.cell_size();
        // total transform positions at the 8 corners
        let mut pos = [[0.0; 3]; 8];
        for (n, pn) in pos.iter_mut().enumerate() {
            let o = cell_corner_offset(n);
            let node = [cell[0] + o[0], cell[1] + o[1], cell[2] + o[2]];
            let base = t.node_position(node);
            let c = t.total_coeff(t.node_index(node));
            *pn = [base[0] + c[0], base[1] + c[1], base[2] + c[2]];
        }
        let mut e1 = [[0.0; 3]; 4];
        let mut e2 = [[0.0; 3]; 4];
        let mut e3 = [[0.0; 3]; 4];
        for q in 0..4 {
            let (s, t_) = (q & 1, q >> 1);
            // x edges: (1,b,c) - (0,b,c) with (b,c) = (s,t)
            e1[q] = sub(pos[1 + 2 * s + 4 * t_], pos[2 * s + 4 * t_]);
            // y edges: (a,1,c) - (a,0,c) with (a,c) = (s,t)
            e2[q] = sub(pos[s + 2 + 4 * t_], pos[s + 4 * t_]);
            // z edges: (a,b,1) - (a,b,0) with (a,b) = (s,t)
            e3[q] = sub(pos[s + 2 * t_ + 4], pos[s + 2 * t_]);
        }
        Self {
            e1,
            e2,
            e3,
            inv_h: [1.0 / h[0], 1.0 / h[1], 1.0 / h[2]],
        }
    }

    #[inline]
    fn scale(&self) -> f64 {
        self.inv_h[0] * self.inv_h[1] * self.inv_h[2]
    }

    /// Term `l = q1 + 4 q2 + 16 q3`: determinant of the matrix with columns
    /// `e1[q1]/h1, e2[q2]/h2, e3[q3]/h3`.
    #[inline]
    pub fn d(&self, l: usize) -> f64 {
        let (q1, q2, q3) = (l & 3, (l >> 2) & 3, (l >> 4) & 3);
        det3(&transpose_cols(self.e1[q1], self.e2[q2], self.e3[q3])) * self.scale()
    }

    pub fn d_values(&self) -> [f64; 64] {
        let mut out = [0.0; 64];
        let s = self.scale();
        // reuse cross products: d = e1[q1] . (e2[q2] x e3[q3]) * s
        let mut cross23 = [[0.0; 3]; 16];
        for q2 in 0..4 {
            for q3 in 0..4 {
                cross23[q2 * 4 + q3] = cross(self.e2[q2], self.e3[q3]);
            }
        }
        for l in 0..64 {
            let (q1, q2, q3) = (l & 3, (l >> 2) & 3, (l >> 4) & 3);
            out[l] = dot(self.e1[q1], cross23[q2 * 4 + q3]) * s;
        }
        out
    }

    /// Adds `weight * d d_l / d corner` to the 8 per-corner accumulators
    /// (corner order as in [`cell_corner_offset`]). The derivative with
    /// respect to a corner's total position equals its derivative with
    /// respect to that corner's coefficient.
    pub fn accumulate_gradient(&self, l: usize, weight: f64, grads: &mut [[f64; 3]; 8]) {
        let (q1, q2, q3) = (l & 3, (l >> 2) & 3, (l >> 4) & 3);
        let s = self.scale();
        // d = s * det[e1, e2, e3]; column derivatives are cross products
        let g1 = scale_vec(cross(self.e2[q2], self.e3[q3]), weight * s);
        let g2 = scale_vec(cross(self.e3[q3], self.e1[q1]), weight * s);
        let g3 = scale_vec(cross(self.e1[q1], self.e2[q2]), weight * s);
        // e1[q1] = P(1,b,c) - P(0,b,c) with (b,c) = (q1 & 1, q1 >> 1)
        let (b, c) = (q1 & 1, q1 >> 1);
        add_assign(&mut grads[1 + 2 * b + 4 * c], g1);
        sub_assign(&mut grads[2 * b + 4 * c], g1);
        let (a, c) = (q2 & 1, q2 >> 1);
        add_assign(&mut grads[a + 2 + 4 * c], g2);
        sub_assign(&mut grads[a + 4 * c], g2);
        let (a, b) = (q3 & 1, q3 >> 1);
        add_assign(&mut grads[a + 2 * b + 4], g3);
        sub_assign(&mut grads[a + 2 * b], g3);
    }
}

/// The 64 volume-ratio terms of a cell.
pub fn cell_jacobian_terms(t: &BSplineTransform, cell: [usize; 3]) -> CellJacobianTerms {
    let work = CellJacobianWork::new(t, cell);
    CellJacobianTerms {
        cell,
        d: work.d_values(),
    }
}

#[inline]
fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn scale_vec(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
fn add_assign(a: &mut [f64; 3], b: [f64; 3]) {
    a[0] += b[0];
    a[1] += b[1];
    a[2] += b[2];
}

#[inline]
fn sub_assign(a: &mut [f64; 3], b: [f64; 3]) {
    a[0] -= b[0];
    a[1] -= b[1];
    a[2] -= b[2];
}

#[inline]
fn transpose_cols(c1: [f64; 3], c2: [f64; 3], c3: [f64; 3]) -> [[f64; 3]; 3] {
    [
        [c1[0], c2[0], c3[0]],
        [c1[1], c2[1], c3[1]],
        [c1[2], c2[2], c3[2]],
    ]
}
