//! Mask-driven pre-registration chain: center-of-gravity alignment, affine
//! SSD registration of the smoothed masks, and a deformable mask stage
//! that reuses the multilevel machinery with the boundary term as data
//! term (no NGF, no keypoints).

use super::lbfgs::{lbfgs_minimize, LbfgsOptions};
use super::multilevel::{run_multilevel, LevelSchedule, LevelSpec, RunSettings};
use crate::error::{Error, Result};
use crate::image::{
    resample, smooth_gaussian_axes, trilinear_sample_with_derivative, Image3D, Interpolation,
};
use crate::keypoints::CorrespondenceSet;
use crate::objective::ObjectiveConfig;
use crate::transform::{AffineTransform, BSplineTransform};

/// The composed pre-registration `y_hat`. The deformable stage, when
/// present, already carries the affine displacement as its reference, so
/// it evaluates the full chain.
#[derive(Debug, Clone)]
pub struct PreRegistration {
    pub affine: AffineTransform,
    pub deformable: Option<BSplineTransform>,
}

impl PreRegistration {
    pub fn identity() -> Self {
        Self {
            affine: AffineTransform::identity(),
            deformable: None,
        }
    }

    pub fn map(&self, p: [f64; 3]) -> [f64; 3] {
        match &self.deformable {
            Some(d) => d.evaluate(p),
            None => self.affine.map(p),
        }
    }

    pub fn displacement(&self, p: [f64; 3]) -> [f64; 3] {
        let y = self.map(p);
        [y[0] - p[0], y[1] - p[1], y[2] - p[2]]
    }
}

#[derive(Debug, Clone)]
pub struct PreRegParams {
    /// Isotropic affine-stage resolutions as multiples of the largest
    /// original spacing component, coarse to fine.
    pub affine_spacing_factors: Vec<f64>,
    /// Mask smoothing at each affine level, voxels.
    pub affine_sigma_vox: f64,
    pub affine_lbfgs: LbfgsOptions,
    /// Deformable stage on/off and its geometry.
    pub deformable: bool,
    pub deformable_finest_grid: [usize; 3],
    /// Deformable level resolutions as multiples of the largest original
    /// spacing, coarse to fine.
    pub deformable_spacing_factors: Vec<f64>,
    pub alpha: f64,
    pub gamma: f64,
    pub lbfgs: LbfgsOptions,
    pub tau: f64,
}

impl Default for PreRegParams {
    fn default() -> Self {
        Self {
            affine_spacing_factors: vec![4.0, 2.0, 1.0],
            affine_sigma_vox: 1.0,
            affine_lbfgs: LbfgsOptions {
                max_iterations: 150,
                grad_reduction: 1e-6,
                min_step_norm: 1e-10,
                ..LbfgsOptions::default()
            },
            deformable: true,
            deformable_finest_grid: [32, 32, 32],
            deformable_spacing_factors: vec![4.0, 2.0],
            alpha: 2.0,
            gamma: 0.001,
            lbfgs: LbfgsOptions::default(),
            tau: 10.0,
        }
    }
}

/// World centroid of a binary mask.
pub fn mask_centroid(mask: &Image3D) -> Result<[f64; 3]> {
    let mut acc = [0.0f64; 3];
    let mut count = 0usize;
    for v in mask.iter_voxels() {
        if mask.at(v[0], v[1], v[2]) > 0.5 {
            let p = mask.voxel_center(v);
            for a in 0..3 {
                acc[a] += p[a];
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::validation("mask is empty"));
    }
    Ok([acc[0] / count as f64, acc[1] / count as f64, acc[2] / count as f64])
}

/// Runs the pre-registration chain on the binary lung masks.
pub fn preregister(
    b_fixed: &Image3D,
    b_moving: &Image3D,
    params: &PreRegParams,
) -> Result<PreRegistration> {
    let c_fixed = mask_centroid(b_fixed)?;
    let c_moving = mask_centroid(b_moving)?;

    // stage 1: center-of-gravity alignment
    let mut affine = AffineTransform::identity();
    affine.center = c_fixed;
    affine.translation = [
        c_moving[0] - c_fixed[0],
        c_moving[1] - c_fixed[1],
        c_moving[2] - c_fixed[2],
    ];

    // stage 2: affine SSD on smoothed masks, coarse to fine; levels where
    // the mask would span fewer than ~6 voxels carry no usable shape
    // information and are skipped
    let base = b_fixed.spacing.iter().cloned().fold(0.0f64, f64::max);
    let span = mask_extent_mm(b_fixed);
    for &factor in &params.affine_spacing_factors {
        let h = base * factor;
        if span.iter().cloned().fold(f64::INFINITY, f64::min) / h < 6.0 && factor > 1.0 {
            continue;
        }
        let bf = mask_at_resolution(b_fixed, h, params.affine_sigma_vox);
        let bm = mask_at_resolution(b_moving, h, params.affine_sigma_vox);
        affine = affine_stage(&bf, &bm, affine, c_fixed, &params.affine_lbfgs)?;
    }

    // stage 3: deformable mask registration on top of the affine
    let deformable = if params.deformable {
        let schedule = LevelSchedule {
            levels: params
                .deformable_spacing_factors
                .iter()
                .enumerate()
                .map(|(i, &factor)| {
                    let back = params.deformable_spacing_factors.len() - 1 - i;
                    LevelSpec {
                        spacing: Some(base * factor),
                        grid_dims: [
                            (params.deformable_finest_grid[0] >> back).max(2),
                            (params.deformable_finest_grid[1] >> back).max(2),
                            (params.deformable_finest_grid[2] >> back).max(2),
                        ],
                    }
                })
                .collect(),
        };
        let config = ObjectiveConfig {
            alpha: params.alpha,
            beta: 1.0,
            gamma: params.gamma,
            delta: 0.0,
            eta: 1.0,
        };
        let settings = RunSettings {
            schedule,
            lbfgs: params.lbfgs.clone(),
            tau: params.tau,
            use_ngf: false,
            adapt_weights: false,
            boundary_multiplier: 1.0,
        };
        let aff = affine.clone();
        let out = run_multilevel(
            b_fixed,
            b_moving,
            b_fixed,
            b_moving,
            &CorrespondenceSet::default(),
            &config,
            move |p| aff.map(p),
            &settings,
            |_, _| {},
        )?;
        Some(out.transform)
    } else {
        None
    };

    Ok(PreRegistration { affine, deformable })
}

fn mask_at_resolution(mask: &Image3D, h: f64, sigma_vox: f64) -> Image3D {
    let coarse = resample(mask, [h; 3], Interpolation::Nearest);
    smooth_gaussian_axes(&coarse, [sigma_vox * h; 3])
}

/// Bounding-box extent of the labeled region, mm per axis.
fn mask_extent_mm(mask: &Image3D) -> [f64; 3] {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for v in mask.iter_voxels() {
        if mask.at(v[0], v[1], v[2]) > 0.5 {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
    }
    let mut out = [0.0; 3];
    for a in 0..3 {
        out[a] = if lo[a] == usize::MAX {
            0.0
        } else {
            (hi[a] - lo[a] + 1) as f64 * mask.spacing[a]
        };
    }
    out
}

/// One affine level: minimizes `1/2 sum (bm(y(x)) - bf(x))^2` over the 12
/// parameters with L-BFGS (identity metric).
fn affine_stage(
    bf: &Image3D,
    bm: &Image3D,
    init: AffineTransform,
    center: [f64; 3],
    opts: &LbfgsOptions,
) -> Result<AffineTransform> {
    // mean SSD keeps values and gradients O(1) so unit trial steps are
    // sensible for the dimensionless parameters
    use rayon::prelude::*;
    let inv_n = 1.0 / bf.len() as f64;
    let [nx, ny, nz] = bf.dims;
    let objective = |params: &[f64], _want_grad: bool| {
        let aff = AffineTransform::from_params(params, center);
        let partials: Vec<(f64, [f64; 12])> = (0..nz)
            .into_par_iter()
            .map(|z| {
                let mut value = 0.0;
                let mut grad = [0.0f64; 12];
                for y in 0..ny {
                    for x in 0..nx {
                        let p = bf.voxel_center([x, y, z]);
                        let (m, dm) = trilinear_sample_with_derivative(bm, aff.map(p));
                        let r = m - bf.at(x, y, z);
                        value += r * r;
                        let dc = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
                        for j in 0..3 {
                            let coef = r * dm[j] * inv_n;
                            for k in 0..3 {
                                grad[3 * j + k] += coef * dc[k];
                            }
                            grad[9 + j] += coef;
                        }
                    }
                }
                (value, grad)
            })
            .collect();
        let mut value = 0.0;
        let mut grad = vec![0.0f64; 12];
        for (v, g) in &partials {
            value += v;
            for i in 0..12 {
                grad[i] += g[i];
            }
        }
        (0.5 * inv_n * value, Some(grad))
    };
    let out = lbfgs_minimize(
        objective,
        init.to_params().to_vec(),
        |q: &[f64]| q.to_vec(),
        opts,
        |_| {},
    )?;
    Ok(AffineTransform::from_params(&out.x, center))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(dims: [usize; 3], spacing: f64, center: [f64; 3], radii: [f64; 3]) -> Image3D {
        let mut m = Image3D::zeros(dims, [spacing; 3], [0.0; 3]);
        for v in m.iter_voxels().collect::<Vec<_>>() {
            let p = m.voxel_center(v);
            let d: f64 = (0..3).map(|a| ((p[a] - center[a]) / radii[a]).powi(2)).sum();
            m.set(v[0], v[1], v[2], if d <= 1.0 { 1.0 } else { 0.0 });
        }
        m
    }

    #[test]
    fn empty_mask_is_rejected() {
        let empty = Image3D::zeros([8, 8, 8], [1.0; 3], [0.0; 3]);
        assert!(mask_centroid(&empty).is_err());
        let full = sphere([8, 8, 8], 1.0, [3.5; 3], [2.5; 3]);
        assert!(preregister(&empty, &full, &PreRegParams::default()).is_err());
    }

    #[test]
    fn identical_masks_stay_near_identity() {
        let m = sphere([24, 24, 24], 2.0, [23.0; 3], [14.0, 12.0, 10.0]);
        let pre = preregister(&m, &m, &PreRegParams::default()).unwrap();
        for a in 0..3 {
            assert!(pre.affine.translation[a].abs() < 1e-9);
            for b in 0..3 {
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((pre.affine.matrix[a][b] - want).abs() < 1e-6);
            }
        }
        // deformable correction stays tiny
        for p in [[20.0, 20.0, 20.0], [30.0, 16.0, 24.0]] {
            let d = pre.displacement(p);
            assert!(d.iter().all(|c| c.abs() < 0.05), "{d:?}");
        }
    }

    #[test]
    fn translated_mask_recovers_exact_centroid_shift() {
        let a = sphere([28, 28, 28], 2.0, [21.0; 3], [12.0, 11.0, 13.0]);
        let b = sphere([28, 28, 28], 2.0, [31.0, 21.0, 21.0], [12.0, 11.0, 13.0]);
        let params = PreRegParams {
            deformable: false,
            affine_spacing_factors: vec![],
            ..PreRegParams::default()
        };
        let pre = preregister(&a, &b, &params).unwrap();
        assert!((pre.affine.translation[0] - 10.0).abs() < 1e-9);
        assert!(pre.affine.translation[1].abs() < 1e-9);
        assert!(pre.affine.translation[2].abs() < 1e-9);
    }

    #[test]
    fn scaled_mask_recovers_diagonal() {
        // moving mask is the fixed sphere scaled by 1.2 about its centroid
        let dims = [32, 32, 32];
        let a = sphere(dims, 2.0, [31.0; 3], [11.0, 10.0, 12.0]);
        let b = sphere(dims, 2.0, [31.0; 3], [13.2, 12.0, 14.4]);
        let params = PreRegParams {
            deformable: false,
            ..PreRegParams::default()
        };
        let pre = preregister(&a, &b, &params).unwrap();
        for j in 0..3 {
            let got = pre.affine.matrix[j][j];
            assert!((got - 1.2).abs() < 0.024, "diagonal {j}: {got}");
            for k in 0..3 {
                if k != j {
                    assert!(pre.affine.matrix[j][k].abs() < 0.05);
                }
            }
        }
    }
}
