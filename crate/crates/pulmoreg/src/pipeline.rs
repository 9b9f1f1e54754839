//! End-to-end registration pipeline: mask preprocessing, pre-registration,
//! keypoint correspondences on the 1 mm resamples, the multilevel dense
//! optimization, and the parameter sweep harness.

use crate::error::{Error, Result};
use crate::eval::{eval_jacobian_transform, eval_tre, JacobianReport, TreReport};
use crate::image::{trilinear_sample, Image3D, Interpolation, VectorField3};
use crate::io::LandmarkList;
use crate::keypoints::{find_correspondences, CorrespondenceSet, DisplacementLattice, KeypointParams};
use crate::objective::{ObjectiveConfig, TermBreakdown};
use crate::optimizer::{
    level_image, preregister, run_multilevel, IterateInfo, LbfgsOptions, LevelReport,
    LevelSchedule, MultilevelOutcome, PreRegParams, PreRegistration, RunSettings,
};
use crate::transform::BSplineTransform;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Full pipeline configuration with the reference defaults. All fields are
/// optional in a JSON config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    /// Curvature weight.
    pub alpha: f64,
    /// Volume change control weight.
    pub gamma: f64,
    /// NGF edge parameter.
    pub eta: f64,
    /// Pairwise weight of the keypoint part-based model.
    pub alpha_kp: f64,
    /// Displacement lattice step / radius, mm.
    pub lattice_step: f64,
    pub lattice_radius: f64,
    /// Structure tensor smoothing of the keypoint detector, mm.
    pub keypoint_sigma_mm: f64,
    /// Non-max suppression radius, voxels.
    pub suppression_radius: usize,
    /// Candidate neighbours for the spanning tree.
    pub knn: usize,
    /// Intensity scale of the edge cost, HU.
    pub sigma_intensity: f64,
    /// Isotropic resolution for the keypoint stage, mm.
    pub keypoint_resolution_mm: f64,
    /// Run the keypoint stage (off reduces the model to delta = 0).
    pub use_keypoints: bool,
    /// Pyramid depth and finest control grid.
    pub levels: usize,
    pub finest_grid: [usize; 3],
    /// L-BFGS settings for the dense stage.
    pub max_iterations: usize,
    pub grad_reduction: f64,
    pub min_step_norm: f64,
    /// Metric shift in `R + tau I`.
    pub tau: f64,
    /// Extra factor on the adapted boundary weight.
    pub boundary_multiplier: f64,
    /// Mask pre-registration on/off plus its deformable stage.
    pub prereg_enabled: bool,
    pub prereg_deformable: bool,
    pub prereg_grid: [usize; 3],
    pub prereg_alpha: f64,
    pub prereg_gamma: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            gamma: 0.001,
            eta: 12.0,
            alpha_kp: 1.0 / 45.0,
            lattice_step: 2.0,
            lattice_radius: 32.0,
            keypoint_sigma_mm: 1.4,
            suppression_radius: 3,
            knn: 10,
            sigma_intensity: 150.0,
            keypoint_resolution_mm: 1.0,
            use_keypoints: true,
            levels: 4,
            finest_grid: [128, 128, 128],
            max_iterations: 100,
            grad_reduction: 1e-3,
            min_step_norm: 1e-5,
            tau: 10.0,
            boundary_multiplier: 1.0,
            prereg_enabled: true,
            prereg_deformable: true,
            prereg_grid: [32, 32, 32],
            prereg_alpha: 2.0,
            prereg_gamma: 0.001,
        }
    }
}

impl RegistrationConfig {
    pub fn keypoint_params(&self) -> KeypointParams {
        KeypointParams {
            sigma_mm: self.keypoint_sigma_mm,
            suppression_radius: self.suppression_radius,
            lattice: DisplacementLattice::new(self.lattice_step, self.lattice_radius),
            eta: self.eta,
            alpha_kp: self.alpha_kp,
            knn: self.knn,
            sigma_intensity: self.sigma_intensity,
        }
    }

    pub fn lbfgs_options(&self) -> LbfgsOptions {
        LbfgsOptions {
            max_iterations: self.max_iterations,
            grad_reduction: self.grad_reduction,
            min_step_norm: self.min_step_norm,
            ..LbfgsOptions::default()
        }
    }

    pub fn prereg_params(&self) -> PreRegParams {
        PreRegParams {
            deformable: self.prereg_deformable,
            deformable_finest_grid: self.prereg_grid,
            alpha: self.prereg_alpha,
            gamma: self.prereg_gamma,
            ..PreRegParams::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTimings {
    pub preregistration_ms: u128,
    pub keypoints_ms: u128,
    pub multilevel_ms: u128,
    pub total_ms: u128,
}

/// Machine-readable run report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub weights: ObjectiveConfig,
    pub levels: Vec<LevelReport>,
    pub final_terms: TermBreakdown,
    pub keypoint_count: usize,
    pub jacobian: JacobianReport,
    /// Minimum per-cell volume-ratio term of the final transform.
    pub min_jacobian_term: f64,
    pub fold_free: bool,
    pub timings: StageTimings,
    pub config: RegistrationConfig,
}

pub struct RegistrationResult {
    pub transform: BSplineTransform,
    pub pre_registration: PreRegistration,
    /// Total displacement `y(x) - x` on the fixed grid, mm.
    pub displacement: VectorField3,
    /// Moving image resampled through `y` onto the fixed grid.
    pub warped: Image3D,
    pub correspondences: CorrespondenceSet,
    pub report: RegistrationReport,
}

fn validate_geometry(img: &Image3D, mask: &Image3D, what: &str) -> Result<()> {
    if img.dims != mask.dims {
        return Err(Error::validation(format!(
            "{what} image and mask dims differ: {:?} vs {:?}",
            img.dims, mask.dims
        )));
    }
    let close = |a: [f64; 3], b: [f64; 3]| (0..3).all(|i| (a[i] - b[i]).abs() < 1e-6);
    if !close(img.spacing, mask.spacing) || !close(img.origin, mask.origin) {
        return Err(Error::validation(format!("{what} image and mask geometry differ")));
    }
    Ok(())
}

fn apply_mask(img: &Image3D, mask: &Image3D) -> Image3D {
    let mut out = img.clone();
    for (v, m) in out.values.iter_mut().zip(mask.values.iter()) {
        if *m <= 0.5 {
            *v = 0.0;
        }
    }
    out
}

/// Runs the full pipeline. `progress` receives (stage label, level,
/// iterate) events from the dense optimizations.
pub fn register(
    fixed: &Image3D,
    moving: &Image3D,
    fixed_mask: &Image3D,
    moving_mask: &Image3D,
    config: &RegistrationConfig,
    mut progress: impl FnMut(&str, usize, &IterateInfo),
) -> Result<RegistrationResult> {
    let t_total = Instant::now();
    validate_geometry(fixed, fixed_mask, "fixed")?;
    validate_geometry(moving, moving_mask, "moving")?;
    if !fixed_mask.values.iter().any(|&v| v > 0.5) {
        return Err(Error::validation("fixed mask is empty"));
    }
    if !moving_mask.values.iter().any(|&v| v > 0.5) {
        return Err(Error::validation("moving mask is empty"));
    }

    // masked scans drive every subsequent step
    let fixed_masked = apply_mask(fixed, fixed_mask);
    let moving_masked = apply_mask(moving, moving_mask);

    // pre-registration on the masks
    let t0 = Instant::now();
    let pre = if config.prereg_enabled {
        preregister(fixed_mask, moving_mask, &config.prereg_params())?
    } else {
        PreRegistration::identity()
    };
    let preregistration_ms = t0.elapsed().as_millis();

    // keypoint correspondences at isotropic resolution
    let t1 = Instant::now();
    let correspondences = if config.use_keypoints {
        let kp_res = config.keypoint_resolution_mm;
        let fixed_1mm = level_image(&fixed_masked, Some(kp_res), false);
        let mask_1mm = level_image(fixed_mask, Some(kp_res), true);
        let moving_prealigned = resample_through(&moving_masked, &fixed_1mm, &pre);
        find_correspondences(
            &fixed_1mm,
            &mask_1mm,
            &moving_prealigned,
            &deformable_or_affine(&pre, &fixed_1mm),
            &config.keypoint_params(),
        )
    } else {
        CorrespondenceSet::default()
    };
    let keypoints_ms = t1.elapsed().as_millis();

    // dense multilevel registration
    let t2 = Instant::now();
    let base = ObjectiveConfig {
        alpha: config.alpha,
        beta: 0.0,
        gamma: config.gamma,
        delta: 0.0,
        eta: config.eta,
    };
    let settings = RunSettings {
        schedule: LevelSchedule::standard(config.levels, config.finest_grid, fixed.spacing),
        lbfgs: config.lbfgs_options(),
        tau: config.tau,
        use_ngf: true,
        adapt_weights: true,
        boundary_multiplier: config.boundary_multiplier,
    };
    let pre_map = pre.clone();
    let outcome: MultilevelOutcome = run_multilevel(
        &fixed_masked,
        &moving_masked,
        fixed_mask,
        moving_mask,
        &correspondences,
        &base,
        move |p| pre_map.map(p),
        &settings,
        |level, info| progress("dense", level, info),
    )?;
    let multilevel_ms = t2.elapsed().as_millis();

    let transform = outcome.transform;

    // outputs on the fixed grid
    let displacement = displacement_field(&transform, fixed);
    let warped = warp_image(&moving_masked, fixed, &transform);
    let jacobian = eval_jacobian_transform(&transform, fixed_mask)?;
    let min_jacobian_term = transform.min_jacobian_bound();
    let final_terms = outcome
        .levels
        .last()
        .map(|l| l.breakdown)
        .unwrap_or_default();

    let report = RegistrationReport {
        weights: outcome.weights,
        levels: outcome.levels,
        final_terms,
        keypoint_count: correspondences.len(),
        jacobian,
        min_jacobian_term,
        fold_free: outcome.fold_free,
        timings: StageTimings {
            preregistration_ms,
            keypoints_ms,
            multilevel_ms,
            total_ms: t_total.elapsed().as_millis(),
        },
        config: config.clone(),
    };

    Ok(RegistrationResult {
        transform,
        pre_registration: pre,
        displacement,
        warped,
        correspondences,
        report,
    })
}

/// The pre-registration as a transform the keypoint stage can evaluate:
/// the deformable stage when present, otherwise the affine sampled onto a
/// trivial control grid over the fixed domain.
fn deformable_or_affine(pre: &PreRegistration, fixed: &Image3D) -> BSplineTransform {
    if let Some(d) = &pre.deformable {
        return d.clone();
    }
    let extent = [
        (fixed.dims[0] - 1) as f64 * fixed.spacing[0],
        (fixed.dims[1] - 1) as f64 * fixed.spacing[1],
        (fixed.dims[2] - 1) as f64 * fixed.spacing[2],
    ];
    let mut t = BSplineTransform::new([2, 2, 2], fixed.origin, extent);
    let reference: Vec<[f64; 3]> = (0..8)
        .map(|n| {
            let node = [n & 1, (n >> 1) & 1, n >> 2];
            let p = t.node_position(node);
            pre.displacement(p)
        })
        .collect();
    // node order of the 2^3 grid matches the linear index
    let mut ordered = vec![[0.0; 3]; 8];
    for (n, r) in reference.into_iter().enumerate() {
        let node = [n & 1, (n >> 1) & 1, n >> 2];
        ordered[t.node_index(node)] = r;
    }
    t = t.with_reference(ordered);
    t
}

/// Moving image sampled through the pre-registration onto the target grid.
fn resample_through(moving: &Image3D, target: &Image3D, pre: &PreRegistration) -> Image3D {
    let mut out = Image3D::zeros(target.dims, target.spacing, target.origin);
    let [nx, ny, _] = target.dims;
    let plane = nx * ny;
    out.values
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(z, slab)| {
            for y in 0..ny {
                for x in 0..nx {
                    let p = target.voxel_center([x, y, z]);
                    slab[x + nx * y] = trilinear_sample(moving, pre.map(p));
                }
            }
        });
    out
}

/// Total displacement of the transform on the grid of `reference`.
pub fn displacement_field(t: &BSplineTransform, reference: &Image3D) -> VectorField3 {
    let mut out = VectorField3::zeros(reference.dims, reference.spacing, reference.origin);
    let [nx, ny, _] = reference.dims;
    let plane = nx * ny;
    out.vectors
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(z, slab)| {
            for y in 0..ny {
                for x in 0..nx {
                    let p = reference.voxel_center([x, y, z]);
                    slab[x + nx * y] = t.displacement(p);
                }
            }
        });
    out
}

/// Moving image warped by `y` onto the grid of `reference`.
pub fn warp_image(moving: &Image3D, reference: &Image3D, t: &BSplineTransform) -> Image3D {
    let mut out = Image3D::zeros(reference.dims, reference.spacing, reference.origin);
    let [nx, ny, _] = reference.dims;
    let plane = nx * ny;
    out.values
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(z, slab)| {
            for y in 0..ny {
                for x in 0..nx {
                    let p = reference.voxel_center([x, y, z]);
                    slab[x + nx * y] = trilinear_sample(moving, t.evaluate(p));
                }
            }
        });
    out
}

/// Parameter varied by the sensitivity sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Alpha,
    AlphaKp,
    Gamma,
    Eta,
}

impl SweepParameter {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "alpha" => Some(Self::Alpha),
            "alpha_kp" | "alpha-kp" => Some(Self::AlphaKp),
            "gamma" => Some(Self::Gamma),
            "eta" => Some(Self::Eta),
            _ => None,
        }
    }

    pub fn apply(&self, config: &mut RegistrationConfig, factor: f64) {
        match self {
            Self::Alpha => config.alpha *= factor,
            Self::AlphaKp => config.alpha_kp *= factor,
            Self::Gamma => config.gamma *= factor,
            Self::Eta => config.eta *= factor,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub factor: f64,
    pub mean_tre: Option<f64>,
    pub std_tre: Option<f64>,
    pub error: Option<String>,
}

/// Re-runs the registration with one parameter multiplied by each factor
/// and reports the landmark error per cell. Failed cells are marked, not
/// fatal.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    fixed: &Image3D,
    moving: &Image3D,
    fixed_mask: &Image3D,
    moving_mask: &Image3D,
    landmarks: &LandmarkList,
    base: &RegistrationConfig,
    parameter: SweepParameter,
    factors: &[f64],
) -> Vec<SweepCell> {
    factors
        .iter()
        .map(|&factor| {
            let mut config = base.clone();
            parameter.apply(&mut config, factor);
            let run = register(fixed, moving, fixed_mask, moving_mask, &config, |_, _, _| {});
            match run.and_then(|r| eval_tre(landmarks, &r.displacement, None)) {
                Ok(tre) => SweepCell {
                    factor,
                    mean_tre: Some(tre.mean),
                    std_tre: Some(tre.std),
                    error: None,
                },
                Err(e) => SweepCell {
                    factor,
                    mean_tre: None,
                    std_tre: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

fn _assert_tre_report_serializable(r: &TreReport) -> String {
    serde_json::to_string(r).unwrap_or_default()
}

/// Resamples both scans and masks to an isotropic resolution; the
/// preprocessing entry of the CLI.
pub fn preprocess_to_isotropic(
    img: &Image3D,
    mask: &Image3D,
    resolution_mm: f64,
) -> (Image3D, Image3D) {
    let masked = apply_mask(img, mask);
    (
        level_image(&masked, Some(resolution_mm), false),
        resample(mask, [resolution_mm; 3], Interpolation::Nearest),
    )
}

use crate::image::resample;
