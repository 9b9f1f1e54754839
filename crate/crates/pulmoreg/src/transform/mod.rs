//! First-order B-spline transformation on a regular control grid.
//!
//! The transform is `y(x) = x + r(x) + u(x)` where `r` is the
//! pre-registration displacement resampled onto the control grid
//! (`reference` coefficients) and `u` is the trilinear interpolation of the
//! optimized `coeffs`. With all coefficients zero, `y` reproduces the
//! pre-registration.

mod affine;
mod jacobian;

pub use affine::AffineTransform;
pub use jacobian::{cell_corner_offset, cell_jacobian_terms, CellJacobianTerms, CellJacobianWork};

use crate::image::Image3D;

#[derive(Debug, Clone)]
pub struct BSplineTransform {
    grid_dims: [usize; 3],
    domain_origin: [f64; 3],
    domain_extent: [f64; 3],
    /// Optimized displacement coefficients (mm), x-fastest over the grid.
    pub coeffs: Vec<[f64; 3]>,
    /// Pre-registration displacement at the control nodes, if any.
    pub reference: Option<Vec<[f64; 3]>>,
}

/// Location of a point relative to the control grid. `inside[a]` is false
/// when the point was clamped along axis `a` (constant extrapolation of
/// the displacement).
#[derive(Debug, Clone, Copy)]
pub struct CellLocation {
    pub cell: [usize; 3],
    pub frac: [f64; 3],
    pub inside: [bool; 3],
}

impl BSplineTransform {
    pub fn new(grid_dims: [usize; 3], domain_origin: [f64; 3], domain_extent: [f64; 3]) -> Self {
        assert!(grid_dims.iter().all(|&d| d >= 2), "control grid needs >= 2 nodes per axis");
        assert!(domain_extent.iter().all(|&e| e > 0.0), "domain extent must be positive");
        let n = grid_dims[0] * grid_dims[1] * grid_dims[2];
        Self {
            grid_dims,
            domain_origin,
            domain_extent,
            coeffs: vec![[0.0; 3]; n],
            reference: None,
        }
    }

    pub fn with_reference(mut self, reference: Vec<[f64; 3]>) -> Self {
        assert_eq!(reference.len(), self.coeffs.len());
        self.reference = Some(reference);
        self
    }

    pub fn grid_dims(&self) -> [usize; 3] {
        self.grid_dims
    }

    pub fn domain_origin(&self) -> [f64; 3] {
        self.domain_origin
    }

    pub fn domain_extent(&self) -> [f64; 3] {
        self.domain_extent
    }

    pub fn num_nodes(&self) -> usize {
        self.coeffs.len()
    }

    /// Cells per axis.
    pub fn cell_counts(&self) -> [usize; 3] {
        [self.grid_dims[0] - 1, self.grid_dims[1] - 1, self.grid_dims[2] - 1]
    }

    /// Edge length of a cell per axis, mm.
    pub fn cell_size(&self) -> [f64; 3] {
        [
            self.domain_extent[0] / (self.grid_dims[0] - 1) as f64,
            self.domain_extent[1] / (self.grid_dims[1] - 1) as f64,
            self.domain_extent[2] / (self.grid_dims[2] - 1) as f64,
        ]
    }

    /// Volume of one cell, mm^3.
    pub fn cell_volume(&self) -> f64 {
        let h = self.cell_size();
        h[0] * h[1] * h[2]
    }

    #[inline]
    pub fn node_index(&self, n: [usize; 3]) -> usize {
        n[0] + self.grid_dims[0] * (n[1] + self.grid_dims[1] * n[2])
    }

    /// World position of a control node.
    pub fn node_position(&self, n: [usize; 3]) -> [f64; 3] {
        let h = self.cell_size();
        [
            self.domain_origin[0] + n[0] as f64 * h[0],
            self.domain_origin[1] + n[1] as f64 * h[1],
            self.domain_origin[2] + n[2] as f64 * h[2],
        ]
    }

    /// Total displacement coefficient (reference + optimized) at a node.
    #[inline]
    pub fn total_coeff(&self, idx: usize) -> [f64; 3] {
        let c = self.coeffs[idx];
        match &self.reference {
            Some(r) => [c[0] + r[idx][0], c[1] + r[idx][1], c[2] + r[idx][2]],
            None => c,
        }
    }

    /// Cell index and fractional position of a world point, clamped to the
    /// control domain.
    pub fn locate(&self, p: [f64; 3]) -> CellLocation {
        let h = self.cell_size();
        let mut cell = [0usize; 3];
        let mut frac = [0.0; 3];
        let mut inside = [true; 3];
        for a in 0..3 {
            let top = (self.grid_dims[a] - 1) as f64;
            let u = (p[a] - self.domain_origin[a]) / h[a];
            let uc = if u < 0.0 {
                inside[a] = false;
                0.0
            } else if u > top {
                inside[a] = false;
                top
            } else {
                u
            };
            let mut i = uc.floor() as usize;
            let mut f = uc - i as f64;
            if i >= self.grid_dims[a] - 1 {
                i = self.grid_dims[a] - 2;
                f = 1.0;
            }
            cell[a] = i;
            frac[a] = f;
        }
        CellLocation { cell, frac, inside }
    }

    /// The 8 (node index, trilinear weight) pairs that interpolate at `loc`.
    pub fn node_weights(&self, loc: &CellLocation) -> [(usize, f64); 8] {
        let [i, j, k] = loc.cell;
        let [fx, fy, fz] = loc.frac;
        let mut out = [(0usize, 0.0); 8];
        let mut t = 0;
        for dz in 0..2 {
            let wz = if dz == 0 { 1.0 - fz } else { fz };
            for dy in 0..2 {
                let wy = if dy == 0 { 1.0 - fy } else { fy };
                for dx in 0..2 {
                    let wx = if dx == 0 { 1.0 - fx } else { fx };
                    out[t] = (self.node_index([i + dx, j + dy, k + dz]), wx * wy * wz);
                    t += 1;
                }
            }
        }
        out
    }

    /// Total displacement (reference + coefficients) at a world point.
    pub fn displacement(&self, p: [f64; 3]) -> [f64; 3] {
        let loc = self.locate(p);
        let mut disp = [0.0; 3];
        for (idx, w) in self.node_weights(&loc) {
            let c = self.total_coeff(idx);
            disp[0] += w * c[0];
            disp[1] += w * c[1];
            disp[2] += w * c[2];
        }
        disp
    }

    /// Displacement of the optimized coefficients alone (deviation from the
    /// pre-registration).
    pub fn coeff_displacement(&self, p: [f64; 3]) -> [f64; 3] {
        let loc = self.locate(p);
        let mut disp = [0.0; 3];
        for (idx, w) in self.node_weights(&loc) {
            let c = self.coeffs[idx];
            disp[0] += w * c[0];
            disp[1] += w * c[1];
            disp[2] += w * c[2];
        }
        disp
    }

    /// The transformation `y(x)`.
    pub fn evaluate(&self, p: [f64; 3]) -> [f64; 3] {
        let d = self.displacement(p);
        [p[0] + d[0], p[1] + d[1], p[2] + d[2]]
    }

    pub fn evaluate_points(&self, points: &[[f64; 3]]) -> Vec<[f64; 3]> {
        points.iter().map(|&p| self.evaluate(p)).collect()
    }

    /// Analytic Jacobian matrix of `y` at a world point: `jac[j][a] = dy_j/dx_a`.
    pub fn jacobian(&self, p: [f64; 3]) -> [[f64; 3]; 3] {
        let loc = self.locate(p);
        let h = self.cell_size();
        let [fx, fy, fz] = loc.frac;
        let mut jac = [[0.0; 3]; 3];
        for j in 0..3 {
            jac[j][j] = 1.0;
        }
        let [i, jc, k] = loc.cell;
        for dz in 0..2 {
            let (wz, gz) = if dz == 0 { (1.0 - fz, -1.0) } else { (fz, 1.0) };
            for dy in 0..2 {
                let (wy, gy) = if dy == 0 { (1.0 - fy, -1.0) } else { (fy, 1.0) };
                for dx in 0..2 {
                    let (wx, gx) = if dx == 0 { (1.0 - fx, -1.0) } else { (fx, 1.0) };
                    let c = self.total_coeff(self.node_index([i + dx, jc + dy, k + dz]));
                    let dw = [
                        if loc.inside[0] { gx * wy * wz / h[0] } else { 0.0 },
                        if loc.inside[1] { wx * gy * wz / h[1] } else { 0.0 },
                        if loc.inside[2] { wx * wy * gz / h[2] } else { 0.0 },
                    ];
                    for j in 0..3 {
                        jac[j][0] += dw[0] * c[j];
                        jac[j][1] += dw[1] * c[j];
                        jac[j][2] += dw[2] * c[j];
                    }
                }
            }
        }
        jac
    }

    /// Analytic `det grad y` at a world point.
    pub fn det_jacobian(&self, p: [f64; 3]) -> f64 {
        det3(&self.jacobian(p))
    }

    /// Prolong the coefficients to a finer control grid over the same
    /// domain. When the fine nodes are a superset refinement of the coarse
    /// nodes the represented displacement function is preserved exactly.
    pub fn prolong(&self, finer_dims: [usize; 3]) -> BSplineTransform {
        for a in 0..3 {
            assert!(finer_dims[a] >= self.grid_dims[a], "prolong target must not be coarser");
        }
        let mut fine = BSplineTransform::new(finer_dims, self.domain_origin, self.domain_extent);
        let interp = |src: &Vec<[f64; 3]>, p: [f64; 3]| -> [f64; 3] {
            let loc = self.locate(p);
            let mut d = [0.0; 3];
            for (idx, w) in self.node_weights(&loc) {
                d[0] += w * src[idx][0];
                d[1] += w * src[idx][1];
                d[2] += w * src[idx][2];
            }
            d
        };
        for k in 0..finer_dims[2] {
            for j in 0..finer_dims[1] {
                for i in 0..finer_dims[0] {
                    let p = fine.node_position([i, j, k]);
                    let idx = fine.node_index([i, j, k]);
                    fine.coeffs[idx] = interp(&self.coeffs, p);
                }
            }
        }
        if let Some(r) = &self.reference {
            let mut fine_ref = vec![[0.0; 3]; fine.num_nodes()];
            for k in 0..finer_dims[2] {
                for j in 0..finer_dims[1] {
                    for i in 0..finer_dims[0] {
                        let p = fine.node_position([i, j, k]);
                        fine_ref[fine.node_index([i, j, k])] = interp(r, p);
                    }
                }
            }
            fine.reference = Some(fine_ref);
        }
        fine
    }

    /// Lower bound on `det grad y` over the whole domain: the minimum of
    /// the per-cell volume-ratio terms. Positive iff the transform is free
    /// of foldings.
    pub fn min_jacobian_bound(&self) -> f64 {
        let cells = self.cell_counts();
        let mut min_d = f64::INFINITY;
        for k in 0..cells[2] {
            for j in 0..cells[1] {
                for i in 0..cells[0] {
                    let work = CellJacobianWork::new(self, [i, j, k]);
                    for l in 0..64 {
                        min_d = min_d.min(work.d(l));
                    }
                }
            }
        }
        min_d
    }
}

/// Per-voxel `det grad y` at the voxel centers of `grid`, by analytic
/// differentiation of the trilinear transform.
pub fn det_jacobian_field(t: &BSplineTransform, grid: &Image3D) -> Image3D {
    use rayon::prelude::*;
    let mut out = Image3D::zeros(grid.dims, grid.spacing, grid.origin);
    let [nx, ny, _] = grid.dims;
    let plane = nx * ny;
    out.values
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(z, slab)| {
            for y in 0..ny {
                for x in 0..nx {
                    let p = grid.voxel_center([x, y, z]);
                    slab[x + nx * y] = t.det_jacobian(p);
                }
            }
        });
    out
}

/// Applies a transform to a point: `y_hat(p)` by evaluation. Used to map
/// keypoint targets from the pre-aligned frame into the original moving
/// frame.
pub fn compose_displacement(outer: &BSplineTransform, inner_point: [f64; 3]) -> [f64; 3] {
    outer.evaluate(inner_point)
}

#[inline]
pub(crate) fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}
