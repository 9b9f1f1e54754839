//! Energy terms of the joint registration objective
//! `J = D + alpha R + beta B + gamma V + delta K`: NGF distance, curvature
//! regularizer, boundary alignment, volume change control and the keypoint
//! penalty, each with value and analytic gradient with respect to the
//! B-spline coefficients.

mod boundary;
mod curvature;
mod keypoint;
mod ngf;
mod vcc;

pub use boundary::smooth_mask_for_boundary;
pub use boundary::boundary_term;
pub(crate) use boundary::boundary_term_cached;
pub use curvature::curvature;
pub(crate) use curvature::curvature_operator;
pub use keypoint::keypoint_penalty;
pub use ngf::{ngf_distance, ngf_residual};
pub(crate) use ngf::ngf_term;
pub use vcc::{psi, psi_prime, vcc, vcc_detailed};

use crate::image::{gradient, Image3D, VectorField3};
use crate::transform::BSplineTransform;
use serde::{Deserialize, Serialize};

/// Weights of the joint objective. `beta` and `delta` are determined
/// adaptively at the start of a registration; the others are user
/// parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    /// Curvature weight.
    pub alpha: f64,
    /// Boundary weight (adaptive).
    pub beta: f64,
    /// Volume change control weight.
    pub gamma: f64,
    /// Keypoint penalty weight (adaptive).
    pub delta: f64,
    /// NGF edge parameter, intensity units per mm.
    pub eta: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 0.0,
            gamma: 0.001,
            delta: 0.0,
            eta: 12.0,
        }
    }
}

/// Value and coefficient gradient of one term. The gradient layout matches
/// `BSplineTransform::coeffs`.
#[derive(Debug, Clone)]
pub struct TermValue {
    pub value: f64,
    pub gradient: Vec<[f64; 3]>,
}

impl TermValue {
    pub fn zero(num_nodes: usize) -> Self {
        Self {
            value: 0.0,
            gradient: vec![[0.0; 3]; num_nodes],
        }
    }

    /// Adds `weight * other` into this accumulator.
    pub fn add_scaled(&mut self, other: &TermValue, weight: f64) {
        self.value += weight * other.value;
        for (g, o) in self.gradient.iter_mut().zip(other.gradient.iter()) {
            g[0] += weight * o[0];
            g[1] += weight * o[1];
            g[2] += weight * o[2];
        }
    }
}

/// Term values of one objective evaluation (unweighted), for reporting.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct TermBreakdown {
    pub ngf: f64,
    pub curvature: f64,
    pub boundary: f64,
    pub vcc: f64,
    pub keypoint: f64,
    pub total: f64,
    /// Minimum volume-ratio term over all cells; > 0 means fold-free.
    pub min_jacobian_term: f64,
}

/// Adaptive weights from the term values at `y = y_hat`: the keypoint term
/// is balanced against the NGF distance and the boundary term is held two
/// orders of magnitude below it. Degenerate (already satisfied) terms get
/// weight zero.
pub fn adapt_weights(d0: f64, b0: f64, k0: f64) -> (f64, f64) {
    let beta = if b0 < 1e-12 { 0.0 } else { d0 / (100.0 * b0) };
    let delta = if k0 < 1e-12 { 0.0 } else { d0 / k0 };
    (beta, delta)
}

/// Cached inputs for evaluating the dense objective on one level: images,
/// precomputed gradient fields, smoothed masks, keypoint correspondences
/// and the voxel-to-control-grid tables.
pub struct ObjectiveState {
    pub config: ObjectiveConfig,
    pub fixed_grad: VectorField3,
    pub moving_grad: VectorField3,
    /// Binary lung mask on the fixed level grid (NGF domain).
    pub fixed_mask: Image3D,
    /// Smoothed masks for the boundary term.
    pub boundary_fixed: Image3D,
    pub boundary_moving: Image3D,
    pub kp_sources: Vec<[f64; 3]>,
    pub kp_targets: Vec<[f64; 3]>,
    /// When false the NGF term is skipped (mask-driven pre-registration).
    pub use_ngf: bool,
    pub(crate) sampler: GridSampler,
}

impl ObjectiveState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        config: ObjectiveConfig,
        fixed: &Image3D,
        moving: &Image3D,
        fixed_mask: Image3D,
        moving_mask: &Image3D,
        kp_sources: Vec<[f64; 3]>,
        kp_targets: Vec<[f64; 3]>,
        use_ngf: bool,
        transform: &BSplineTransform,
    ) -> Self {
        let fixed_grad = if use_ngf {
            gradient(fixed)
        } else {
            VectorField3::zeros(fixed.dims, fixed.spacing, fixed.origin)
        };
        let moving_grad = if use_ngf {
            gradient(moving)
        } else {
            VectorField3::zeros(moving.dims, moving.spacing, moving.origin)
        };
        let boundary_fixed = smooth_mask_for_boundary(&fixed_mask);
        let boundary_moving = smooth_mask_for_boundary(moving_mask);
        let sampler = GridSampler::new(fixed, transform);
        Self {
            config,
            fixed_grad,
            moving_grad,
            fixed_mask,
            boundary_fixed,
            boundary_moving,
            kp_sources,
            kp_targets,
            use_ngf,
            sampler,
        }
    }

    /// Evaluates the weighted objective and its gradient. An infeasible
    /// transform (some volume-ratio term <= 0 while `gamma > 0`) yields an
    /// infinite value.
    pub fn evaluate(&self, t: &BSplineTransform) -> (TermValue, TermBreakdown) {
        let cfg = &self.config;
        let mut total = TermValue::zero(t.num_nodes());
        let mut bd = TermBreakdown::default();

        if cfg.gamma > 0.0 {
            let (v, min_d) = vcc_detailed(t);
            bd.vcc = v.value;
            bd.min_jacobian_term = min_d;
            if !v.value.is_finite() {
                bd.total = f64::INFINITY;
                total.value = f64::INFINITY;
                return (total, bd);
            }
            total.add_scaled(&v, cfg.gamma);
        } else {
            bd.min_jacobian_term = t.min_jacobian_bound();
        }

        if self.use_ngf {
            let d = ngf_term(
                &self.fixed_grad,
                &self.moving_grad,
                &self.fixed_mask,
                t,
                &self.sampler,
                cfg.eta,
            );
            bd.ngf = d.value;
            total.add_scaled(&d, 1.0);
        }

        if cfg.alpha > 0.0 {
            let r = curvature(t);
            bd.curvature = r.value;
            total.add_scaled(&r, cfg.alpha);
        }

        if cfg.beta > 0.0 {
            let b = boundary_term_cached(&self.boundary_fixed, &self.boundary_moving, t, &self.sampler);
            bd.boundary = b.value;
            total.add_scaled(&b, cfg.beta);
        }

        if cfg.delta > 0.0 && !self.kp_sources.is_empty() {
            let k = keypoint_penalty(t, &self.kp_sources, &self.kp_targets);
            bd.keypoint = k.value;
            total.add_scaled(&k, cfg.delta);
        }

        bd.total = total.value;
        (total, bd)
    }

    /// NGF distance with this state's cached gradient fields and tables.
    pub fn ngf(&self, t: &BSplineTransform) -> TermValue {
        ngf_term(
            &self.fixed_grad,
            &self.moving_grad,
            &self.fixed_mask,
            t,
            &self.sampler,
            self.config.eta,
        )
    }

    /// Boundary term with this state's pre-smoothed masks and tables.
    pub fn boundary(&self, t: &BSplineTransform) -> TermValue {
        boundary_term_cached(&self.boundary_fixed, &self.boundary_moving, t, &self.sampler)
    }

    /// Unweighted term values at a transform, used for weight adaptation.
    pub fn raw_data_terms(&self, t: &BSplineTransform) -> (f64, f64, f64) {
        let d = if self.use_ngf {
            ngf_term(
                &self.fixed_grad,
                &self.moving_grad,
                &self.fixed_mask,
                t,
                &self.sampler,
                self.config.eta,
            )
            .value
        } else {
            0.0
        };
        let b = boundary_term_cached(&self.boundary_fixed, &self.boundary_moving, t, &self.sampler).value;
        let k = if self.kp_sources.is_empty() {
            0.0
        } else {
            keypoint_penalty(t, &self.kp_sources, &self.kp_targets).value
        };
        (d, b, k)
    }
}

/// Precomputed voxel-to-control-grid interpolation tables for one (image
/// grid, control grid) pair. The per-axis factorization keeps the memory
/// footprint linear in the grid side lengths.
pub(crate) struct GridSampler {
    img_dims: [usize; 3],
    cell: [Vec<usize>; 3],
    frac: [Vec<f64>; 3],
    /// Per node along each axis: voxel index range [lo, hi) whose cells
    /// touch that node.
    node_range: [Vec<(usize, usize)>; 3],
}

impl GridSampler {
    pub fn new(img: &Image3D, t: &BSplineTransform) -> Self {
        let h = t.cell_size();
        let dom = t.domain_origin();
        let grid_dims = t.grid_dims();
        let mut cell: [Vec<usize>; 3] = Default::default();
        let mut frac: [Vec<f64>; 3] = Default::default();
        let mut node_range: [Vec<(usize, usize)>; 3] = Default::default();
        for a in 0..3 {
            let n_vox = img.dims[a];
            let top = (grid_dims[a] - 1) as f64;
            let mut cells_a = Vec::with_capacity(n_vox);
            let mut fracs_a = Vec::with_capacity(n_vox);
            for i in 0..n_vox {
                let p = img.origin[a] + i as f64 * img.spacing[a];
                let u = ((p - dom[a]) / h[a]).clamp(0.0, top);
                let mut c = u.floor() as usize;
                let mut f = u - c as f64;
                if c >= grid_dims[a] - 1 {
                    c = grid_dims[a] - 2;
                    f = 1.0;
                }
                cells_a.push(c);
                fracs_a.push(f);
            }
            let n_cells = grid_dims[a] - 1;
            let mut first = vec![usize::MAX; n_cells];
            let mut last = vec![0usize; n_cells];
            for (i, &c) in cells_a.iter().enumerate() {
                if first[c] == usize::MAX {
                    first[c] = i;
                }
                last[c] = i;
            }
            let mut ranges = Vec::with_capacity(grid_dims[a]);
            for n in 0..grid_dims[a] {
                let mut lo = usize::MAX;
                let mut hi = 0usize;
                for c in [n.wrapping_sub(1), n] {
                    if c < n_cells && first[c] != usize::MAX {
                        lo = lo.min(first[c]);
                        hi = hi.max(last[c] + 1);
                    }
                }
                if lo == usize::MAX {
                    ranges.push((0, 0));
                } else {
                    ranges.push((lo, hi));
                }
            }
            cell[a] = cells_a;
            frac[a] = fracs_a;
            node_range[a] = ranges;
        }
        Self {
            img_dims: img.dims,
            cell,
            frac,
            node_range,
        }
    }

    /// Total displacement at voxel (x, y, z) via the cached tables;
    /// identical to `t.displacement` at the voxel center.
    #[inline]
    pub fn displacement(&self, t: &BSplineTransform, v: [usize; 3]) -> [f64; 3] {
        let gd = t.grid_dims();
        let (cx, fx) = (self.cell[0][v[0]], self.frac[0][v[0]]);
        let (cy, fy) = (self.cell[1][v[1]], self.frac[1][v[1]]);
        let (cz, fz) = (self.cell[2][v[2]], self.frac[2][v[2]]);
        let mut disp = [0.0; 3];
        for dz in 0..2 {
            let wz = if dz == 0 { 1.0 - fz } else { fz };
            for dy in 0..2 {
                let wy = if dy == 0 { 1.0 - fy } else { fy };
                let base = gd[0] * (cy + dy + gd[1] * (cz + dz));
                for dx in 0..2 {
                    let wx = if dx == 0 { 1.0 - fx } else { fx };
                    let c = t.total_coeff(cx + dx + base);
                    let w = wx * wy * wz;
                    disp[0] += w * c[0];
                    disp[1] += w * c[1];
                    disp[2] += w * c[2];
                }
            }
        }
        disp
    }

    /// Per-axis interpolation weight of node `n` at voxel `i`, zero when
    /// the voxel's cell does not touch the node.
    #[inline]
    fn axis_weight(&self, a: usize, i: usize, n: usize) -> f64 {
        let c = self.cell[a][i];
        if c == n {
            1.0 - self.frac[a][i]
        } else if c + 1 == n {
            self.frac[a][i]
        } else {
            0.0
        }
    }

    /// Scatters a per-voxel vector field onto the control nodes:
    /// `out[p] = sum_v W_p(v) * val[v]`, the adjoint of the trilinear
    /// interpolation. Deterministic: gather formulation, parallel over
    /// nodes.
    pub fn gather(&self, grid_dims: [usize; 3], val: &[[f64; 3]]) -> Vec<[f64; 3]> {
        use rayon::prelude::*;
        let [nx, ny, _] = self.img_dims;
        let n_nodes = grid_dims[0] * grid_dims[1] * grid_dims[2];
        (0..n_nodes)
            .into_par_iter()
            .map(|np| {
                let px = np % grid_dims[0];
                let py = (np / grid_dims[0]) % grid_dims[1];
                let pz = np / (grid_dims[0] * grid_dims[1]);
                let (zlo, zhi) = self.node_range[2][pz];
                let (ylo, yhi) = self.node_range[1][py];
                let (xlo, xhi) = self.node_range[0][px];
                let mut g = [0.0f64; 3];
                for k in zlo..zhi {
                    let wz = self.axis_weight(2, k, pz);
                    if wz == 0.0 {
                        continue;
                    }
                    for j in ylo..yhi {
                        let wyz = wz * self.axis_weight(1, j, py);
                        if wyz == 0.0 {
                            continue;
                        }
                        let row = nx * (j + ny * k);
                        for i in xlo..xhi {
                            let w = wyz * self.axis_weight(0, i, px);
                            if w == 0.0 {
                                continue;
                            }
                            let v = val[row + i];
                            g[0] += w * v[0];
                            g[1] += w * v[1];
                            g[2] += w * v[2];
                        }
                    }
                }
                g
            })
            .collect()
    }
}
