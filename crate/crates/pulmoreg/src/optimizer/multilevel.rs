//! Coarse-to-fine driver: image pyramid, per-level control grids,
//! adaptive weight determination on the coarsest level and coefficient
//! prolongation between levels.

use super::lbfgs::{flatten_coeffs, lbfgs_minimize, unflatten_coeffs, IterateInfo, LbfgsOptions};
use super::metric::apply_inverse_metric;
use crate::error::Result;
use crate::image::{resample, smooth_gaussian_axes, Image3D, Interpolation};
use crate::keypoints::CorrespondenceSet;
use crate::objective::{adapt_weights, ObjectiveConfig, ObjectiveState, TermBreakdown};
use crate::transform::BSplineTransform;
use serde::{Deserialize, Serialize};

/// One pyramid level: target isotropic image spacing (`None` keeps the
/// original resolution) and the control grid size.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LevelSpec {
    pub spacing: Option<f64>,
    pub grid_dims: [usize; 3],
}

/// Pyramid description, coarsest level first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelSchedule {
    pub levels: Vec<LevelSpec>,
}

impl LevelSchedule {
    /// Standard pyramid: the finest level uses the original images and the
    /// given control grid; every coarser level halves the grid per axis and
    /// doubles an isotropic spacing derived from the largest original
    /// spacing component.
    pub fn standard(n_levels: usize, finest_grid: [usize; 3], original_spacing: [f64; 3]) -> Self {
        assert!(n_levels >= 1);
        let base = original_spacing.iter().cloned().fold(0.0f64, f64::max);
        let mut levels = Vec::with_capacity(n_levels);
        for k in (0..n_levels).rev() {
            let spacing = if k == 0 { None } else { Some(base * (1 << k) as f64) };
            let grid_dims = [
                (finest_grid[0] >> k).max(2),
                (finest_grid[1] >> k).max(2),
                (finest_grid[2] >> k).max(2),
            ];
            levels.push(LevelSpec { spacing, grid_dims });
        }
        Self { levels }
    }
}

/// Driver settings shared by the main registration and the mask
/// pre-registration.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub schedule: LevelSchedule,
    pub lbfgs: LbfgsOptions,
    /// Metric shift in `R + tau I`.
    pub tau: f64,
    /// NGF data term on (true) or mask-SSD-only pre-registration (false).
    pub use_ngf: bool,
    /// Determine beta and delta on the coarsest level.
    pub adapt_weights: bool,
    /// Extra factor on the adapted boundary weight.
    pub boundary_multiplier: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelReport {
    pub spacing: [f64; 3],
    pub grid_dims: [usize; 3],
    pub iterations: usize,
    pub initial_value: f64,
    pub final_value: f64,
    pub breakdown: TermBreakdown,
}

#[derive(Debug)]
pub struct MultilevelOutcome {
    pub transform: BSplineTransform,
    /// Weights actually used (adapted beta/delta filled in).
    pub weights: ObjectiveConfig,
    pub levels: Vec<LevelReport>,
    /// True when every accepted iterate had a finite objective and the
    /// final transform has a positive Jacobian bound.
    pub fold_free: bool,
}

/// Smooth-then-resample with the anti-aliasing sigma of half the
/// downsampling factor; masks resample nearest without smoothing.
pub fn level_image(img: &Image3D, spacing: Option<f64>, is_mask: bool) -> Image3D {
    match spacing {
        None => img.clone(),
        Some(h) => {
            let target = [h; 3];
            if is_mask {
                resample(img, target, Interpolation::Nearest)
            } else {
                let sigma = [
                    if h > img.spacing[0] { 0.5 * h } else { 0.0 },
                    if h > img.spacing[1] { 0.5 * h } else { 0.0 },
                    if h > img.spacing[2] { 0.5 * h } else { 0.0 },
                ];
                let smoothed = smooth_gaussian_axes(img, sigma);
                resample(&smoothed, target, Interpolation::Trilinear)
            }
        }
    }
}

/// Runs the multilevel registration. `reference_map` is the
/// pre-registration `y_hat`; its displacement is resampled onto each
/// level's control grid. Returns the finest-level transform (total
/// transform = reference + optimized coefficients).
#[allow(clippy::too_many_arguments)]
pub fn run_multilevel<R>(
    fixed: &Image3D,
    moving: &Image3D,
    fixed_mask: &Image3D,
    moving_mask: &Image3D,
    correspondences: &CorrespondenceSet,
    base_config: &ObjectiveConfig,
    reference_map: R,
    settings: &RunSettings,
    mut progress: impl FnMut(usize, &IterateInfo),
) -> Result<MultilevelOutcome>
where
    R: Fn([f64; 3]) -> [f64; 3],
{
    let domain_origin = fixed.origin;
    let domain_extent = [
        (fixed.dims[0] - 1) as f64 * fixed.spacing[0],
        (fixed.dims[1] - 1) as f64 * fixed.spacing[1],
        (fixed.dims[2] - 1) as f64 * fixed.spacing[2],
    ];
    let kp_sources = correspondences.sources();
    let kp_targets = correspondences.targets();

    let mut config = *base_config;
    let mut prev: Option<BSplineTransform> = None;
    let mut reports = Vec::new();
    let mut all_finite = true;

    for (li, spec) in settings.schedule.levels.iter().enumerate() {
        let f_l = level_image(fixed, spec.spacing, false);
        let m_l = level_image(moving, spec.spacing, false);
        let fm_l = level_image(fixed_mask, spec.spacing, true);
        let mm_l = level_image(moving_mask, spec.spacing, true);

        let mut t = BSplineTransform::new(spec.grid_dims, domain_origin, domain_extent);
        let reference: Vec<[f64; 3]> = (0..spec.grid_dims[2])
            .flat_map(|k| {
                (0..spec.grid_dims[1]).flat_map(move |j| (0..spec.grid_dims[0]).map(move |i| [i, j, k]))
            })
            .map(|n| {
                let p = t.node_position(n);
                let y = reference_map(p);
                [y[0] - p[0], y[1] - p[1], y[2] - p[2]]
            })
            .collect();
        t = t.with_reference(reference);
        if let Some(prev_t) = &prev {
            let prolonged = prev_t.prolong(spec.grid_dims);
            t.coeffs = prolonged.coeffs;
        }

        let state = ObjectiveState::new(
            config,
            &f_l,
            &m_l,
            fm_l,
            &mm_l,
            kp_sources.clone(),
            kp_targets.clone(),
            settings.use_ngf,
            &t,
        );

        if li == 0 && settings.adapt_weights {
            let zero_t = {
                let mut z = t.clone();
                z.coeffs.iter_mut().for_each(|c| *c = [0.0; 3]);
                z
            };
            let (d0, b0, k0) = state.raw_data_terms(&zero_t);
            let (beta, delta) = adapt_weights(d0, b0, k0);
            config.beta = beta * settings.boundary_multiplier;
            config.delta = delta;
        }
        // the state captured the pre-adaptation config; rebuild weights
        let state = ObjectiveState { config, ..state };

        let (initial, _) = state.evaluate(&t);
        let template = t.clone();
        let objective = |x: &[f64], _want_grad: bool| {
            let mut tw = template.clone();
            tw.coeffs = unflatten_coeffs(x);
            let (tv, _) = state.evaluate(&tw);
            (tv.value, Some(flatten_coeffs(&tv.gradient)))
        };
        let metric_t = template.clone();
        let tau = settings.tau;
        let metric = move |q: &[f64]| -> Vec<f64> {
            let p = apply_inverse_metric(&metric_t, &unflatten_coeffs(q), tau);
            flatten_coeffs(&p)
        };

        let mut level_finite = true;
        let out = lbfgs_minimize(
            objective,
            flatten_coeffs(&t.coeffs),
            metric,
            &settings.lbfgs,
            |info| {
                if !info.value.is_finite() {
                    level_finite = false;
                }
                progress(li, info);
            },
        )?;
        all_finite &= level_finite;

        t.coeffs = unflatten_coeffs(&out.x);
        let (_, breakdown) = state.evaluate(&t);
        reports.push(LevelReport {
            spacing: f_l.spacing,
            grid_dims: spec.grid_dims,
            iterations: out.iterations,
            initial_value: initial.value,
            final_value: out.value,
            breakdown,
        });
        prev = Some(t);
    }

    let transform = prev.expect("schedule has at least one level");
    let fold_free = all_finite && transform.min_jacobian_bound() > 0.0;
    Ok(MultilevelOutcome {
        transform,
        weights: config,
        levels: reports,
        fold_free,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_schedule_halves_grids_and_doubles_spacing() {
        let s = LevelSchedule::standard(4, [128, 128, 128], [0.6, 0.6, 2.5]);
        assert_eq!(s.levels.len(), 4);
        assert_eq!(s.levels[0].grid_dims, [16, 16, 16]);
        assert_eq!(s.levels[3].grid_dims, [128, 128, 128]);
        assert_eq!(s.levels[0].spacing, Some(20.0));
        assert_eq!(s.levels[1].spacing, Some(10.0));
        assert_eq!(s.levels[2].spacing, Some(5.0));
        assert_eq!(s.levels[3].spacing, None);
    }

    #[test]
    fn level_image_keeps_masks_binary() {
        let mut mask = Image3D::zeros([12, 12, 12], [2.0; 3], [0.0; 3]);
        for v in mask.iter_voxels().collect::<Vec<_>>() {
            if v.iter().all(|&c| (3..9).contains(&c)) {
                mask.set(v[0], v[1], v[2], 1.0);
            }
        }
        let coarse = level_image(&mask, Some(8.0), true);
        assert!(coarse.values.iter().all(|&v| v == 0.0 || v == 1.0));
        let img = level_image(&mask, Some(8.0), false);
        // smoothed image values live strictly between the extremes
        assert!(img.values.iter().any(|&v| v > 0.0 && v < 1.0));
    }
}
