//! Evaluation of registration results: landmark distances, fissure surface
//! distances and Jacobian statistics.

use crate::error::{Error, Result};
use crate::image::{
    euclidean_distance_transform, sample_vector, trilinear_sample, Image3D, VectorField3,
};
use crate::io::LandmarkList;
use crate::transform::{det_jacobian_field, BSplineTransform};
use serde::{Deserialize, Serialize};

/// Voxel grid geometry used for snapping transformed landmarks.
#[derive(Debug, Clone, Copy)]
pub struct GridGeometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl From<&Image3D> for GridGeometry {
    fn from(img: &Image3D) -> Self {
        Self {
            dims: img.dims,
            spacing: img.spacing,
            origin: img.origin,
        }
    }
}

impl GridGeometry {
    /// Nearest voxel center to a world point (clamped to the grid).
    pub fn snap(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for a in 0..3 {
            let u = ((p[a] - self.origin[a]) / self.spacing[a])
                .round()
                .clamp(0.0, (self.dims[a] - 1) as f64);
            out[a] = self.origin[a] + u * self.spacing[a];
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreReport {
    /// Per-landmark Euclidean distances, mm (excluded landmarks omitted).
    pub distances: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Landmarks outside the field domain, flagged and excluded.
    pub excluded: usize,
    /// Cumulative distribution sampled at 0.5 mm steps: (threshold,
    /// fraction of landmarks at or below it).
    pub cumulative: Vec<(f64, f64)>,
}

/// Landmark distances under a displacement field on the fixed grid. With
/// `snap`, transformed landmarks move to the nearest voxel center of the
/// given (moving) grid before distancing.
pub fn eval_tre(
    landmarks: &LandmarkList,
    field: &VectorField3,
    snap: Option<GridGeometry>,
) -> Result<TreReport> {
    if landmarks.is_empty() {
        return Err(Error::validation("no landmarks to evaluate"));
    }
    let mut distances = Vec::with_capacity(landmarks.len());
    let mut excluded = 0usize;
    for (pf, pm) in landmarks.fixed.iter().zip(landmarks.moving.iter()) {
        let u = field.world_to_voxel(*pf);
        let inside = (0..3).all(|a| u[a] >= 0.0 && u[a] <= (field.dims[a] - 1) as f64);
        if !inside {
            excluded += 1;
            continue;
        }
        let d = sample_vector(field, *pf);
        let mut y = [pf[0] + d[0], pf[1] + d[1], pf[2] + d[2]];
        if let Some(grid) = &snap {
            y = grid.snap(y);
        }
        let dist =
            ((y[0] - pm[0]).powi(2) + (y[1] - pm[1]).powi(2) + (y[2] - pm[2]).powi(2)).sqrt();
        distances.push(dist);
    }
    if distances.is_empty() {
        return Err(Error::validation("all landmarks fall outside the field domain"));
    }
    let (mean, std) = mean_std(&distances);
    let max = distances.iter().cloned().fold(0.0f64, f64::max);
    let n_bins = (max / 0.5).ceil() as usize + 1;
    let cumulative = (1..=n_bins)
        .map(|i| {
            let thr = i as f64 * 0.5;
            let frac =
                distances.iter().filter(|&&d| d <= thr).count() as f64 / distances.len() as f64;
            (thr, frac)
        })
        .collect();
    Ok(TreReport {
        distances,
        mean,
        std,
        excluded,
        cumulative,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FissureReport {
    pub mean: f64,
    pub std: f64,
    /// Fixed-image fissure voxels evaluated.
    pub count: usize,
}

/// Fissure alignment: distance-transform the moving fissure mask, warp the
/// distance image by the field with linear interpolation, and average over
/// the fixed-image fissure voxels.
pub fn eval_fissure(
    fixed_fissure: &Image3D,
    moving_fissure: &Image3D,
    field: &VectorField3,
) -> Result<FissureReport> {
    if !moving_fissure.values.iter().any(|&v| v > 0.5) {
        return Err(Error::validation("moving fissure mask is empty"));
    }
    let dt = euclidean_distance_transform(moving_fissure);
    let mut samples = Vec::new();
    for v in fixed_fissure.iter_voxels() {
        if fixed_fissure.at(v[0], v[1], v[2]) <= 0.5 {
            continue;
        }
        let p = fixed_fissure.voxel_center(v);
        let d = sample_vector(field, p);
        let y = [p[0] + d[0], p[1] + d[1], p[2] + d[2]];
        samples.push(trilinear_sample(&dt, y));
    }
    if samples.is_empty() {
        return Err(Error::validation("fixed fissure mask is empty"));
    }
    let (mean, std) = mean_std(&samples);
    Ok(FissureReport {
        mean,
        std,
        count: samples.len(),
    })
}

/// Statistics of `det grad y` over the lung voxels (Q1/Q99 are nearest-rank
/// percentiles).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct JacobianReport {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q01: f64,
    pub q99: f64,
    pub max: f64,
    pub count: usize,
}

/// Jacobian statistics of a B-spline transform, evaluated analytically at
/// the masked voxel centers.
pub fn eval_jacobian_transform(t: &BSplineTransform, mask: &Image3D) -> Result<JacobianReport> {
    let det = det_jacobian_field(t, mask);
    jacobian_stats(&det, mask)
}

/// Jacobian statistics of a sampled displacement field (central
/// differences, one-sided at the borders).
pub fn eval_jacobian_field(field: &VectorField3, mask: &Image3D) -> Result<JacobianReport> {
    assert_eq!(field.dims, mask.dims, "field and mask grids must match");
    let mut det = Image3D::zeros(field.dims, field.spacing, field.origin);
    for v in field.iter_indices() {
        let mut jac = [[0.0f64; 3]; 3];
        for a in 0..3 {
            let n = field.dims[a];
            let h = field.spacing[a];
            let get = |j: usize| {
                let mut w = v;
                w[a] = j;
                field.at(w[0], w[1], w[2])
            };
            let (dp, dm, scale) = if v[a] == 0 {
                (get(1), get(0), 1.0)
            } else if v[a] == n - 1 {
                (get(n - 1), get(n - 2), 1.0)
            } else {
                (get(v[a] + 1), get(v[a] - 1), 2.0)
            };
            for j in 0..3 {
                jac[j][a] = (dp[j] - dm[j]) / (scale * h) + if j == a { 1.0 } else { 0.0 };
            }
        }
        let d = jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
            - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
            + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0]);
        det.set(v[0], v[1], v[2], d);
    }
    jacobian_stats(&det, mask)
}

fn jacobian_stats(det: &Image3D, mask: &Image3D) -> Result<JacobianReport> {
    let mut vals: Vec<f64> = det
        .values
        .iter()
        .zip(mask.values.iter())
        .filter(|(_, &m)| m > 0.5)
        .map(|(&d, _)| d)
        .collect();
    if vals.is_empty() {
        return Err(Error::validation("mask is empty"));
    }
    let (mean, std) = mean_std(&vals);
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = vals.len();
    let rank = |q: f64| -> f64 {
        let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
        vals[idx]
    };
    Ok(JacobianReport {
        mean,
        std,
        min: vals[0],
        q01: rank(0.01),
        q99: rank(0.99),
        max: vals[n - 1],
        count: n,
    })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl VectorField3 {
    /// Iterate voxel indices in storage order.
    pub fn iter_indices(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [nx, ny, nz] = self.dims;
        (0..nz).flat_map(move |z| (0..ny).flat_map(move |y| (0..nx).map(move |x| [x, y, z])))
    }
}
