//! Förstner interest point detection.
//!
//! Distinctiveness is the inverse trace of the inverse smoothed structure
//! tensor, `F_D = 1 / trace((G_sigma * (grad F grad F^T))^-1)`, followed by
//! non-max suppression over a cubic window and restriction to the lung
//! mask.

use super::KeypointSet;
use crate::image::{gradient, smooth_gaussian, Image3D};
use rayon::prelude::*;

/// Structure tensor diagonal regularization before inversion.
const TENSOR_EPS: f64 = 1e-12;

/// Responses at or below this are regularizer-dominated (flat or edge-only
/// neighbourhoods, whose raw tensor is singular) and are excluded.
const MIN_DISTINCTIVENESS: f64 = 1000.0 * TENSOR_EPS;

/// Detects keypoints in the fixed image. `sigma_mm` smooths the structure
/// tensor; `suppression_radius` is the non-max window radius in voxels (a
/// voxel survives only if it attains the window maximum).
pub fn detect_keypoints(
    f: &Image3D,
    mask: &Image3D,
    sigma_mm: f64,
    suppression_radius: usize,
) -> KeypointSet {
    assert_eq!(f.dims, mask.dims, "image and mask grids must match");
    let score = foerstner_response(f, sigma_mm);
    let maxed = max_filter(&score, suppression_radius);

    let mut points = Vec::new();
    let mut scores = Vec::new();
    for v in f.iter_voxels() {
        let i = f.index(v[0], v[1], v[2]);
        let s = score.values[i];
        if s > 0.0 && mask.values[i] > 0.5 && s == maxed.values[i] {
            points.push(f.voxel_center(v));
            scores.push(s);
        }
    }
    KeypointSet { points, scores }
}

/// The distinctiveness volume. Near-singular structure tensors (flat
/// regions) score ~0 and never survive suppression.
pub(crate) fn foerstner_response(f: &Image3D, sigma_mm: f64) -> Image3D {
    let g = gradient(f);
    let n = f.len();
    // six unique structure tensor components
    let mut comps: Vec<Image3D> = (0..6)
        .map(|_| Image3D::zeros(f.dims, f.spacing, f.origin))
        .collect();
    for i in 0..n {
        let v = g.vectors[i];
        comps[0].values[i] = v[0] * v[0];
        comps[1].values[i] = v[1] * v[1];
        comps[2].values[i] = v[2] * v[2];
        comps[3].values[i] = v[0] * v[1];
        comps[4].values[i] = v[0] * v[2];
        comps[5].values[i] = v[1] * v[2];
    }
    let comps: Vec<Image3D> = comps
        .into_iter()
        .map(|c| smooth_gaussian(&c, sigma_mm))
        .collect();

    let mut out = Image3D::zeros(f.dims, f.spacing, f.origin);
    out.values
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, dest)| {
            let xx = comps[0].values[i] + TENSOR_EPS;
            let yy = comps[1].values[i] + TENSOR_EPS;
            let zz = comps[2].values[i] + TENSOR_EPS;
            let xy = comps[3].values[i];
            let xz = comps[4].values[i];
            let yz = comps[5].values[i];
            let det = xx * (yy * zz - yz * yz) - xy * (xy * zz - yz * xz)
                + xz * (xy * yz - yy * xz);
            // trace of the adjugate = sum of principal 2x2 cofactors
            let cof = (yy * zz - yz * yz) + (xx * zz - xz * xz) + (xx * yy - xy * xy);
            let fd = if det.is_finite() && cof > 0.0 && det > 0.0 {
                det / cof
            } else {
                0.0
            };
            *dest = if fd > MIN_DISTINCTIVENESS { fd } else { 0.0 };
        });
    out
}

/// Separable cubic max filter with window `[-r, r]` per axis.
fn max_filter(img: &Image3D, r: usize) -> Image3D {
    let mut out = img.clone();
    for axis in 0..3 {
        out = max_axis(&out, axis, r as i64);
    }
    out
}

fn max_axis(img: &Image3D, axis: usize, r: i64) -> Image3D {
    let [nx, ny, _] = img.dims;
    let n_axis = img.dims[axis] as i64;
    let plane = nx * ny;
    let mut out = Image3D::zeros(img.dims, img.spacing, img.origin);
    out.values
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(z, slab)| {
            for y in 0..ny {
                for x in 0..nx {
                    let v = [x as i64, y as i64, z as i64];
                    let mut m = f64::NEG_INFINITY;
                    for d in -r..=r {
                        let mut q = v;
                        q[axis] = (v[axis] + d).clamp(0, n_axis - 1);
                        m = m.max(img.at(q[0] as usize, q[1] as usize, q[2] as usize));
                    }
                    slab[x + nx * y] = m;
                }
            }
        });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Flat volume with a bright cube corner at `corner` (three orthogonal
    /// step edges meeting there).
    fn corner_phantom(dims: [usize; 3], corner: [usize; 3], contrast: f64) -> Image3D {
        let mut img = Image3D::zeros(dims, [1.0; 3], [0.0; 3]);
        for v in img.iter_voxels().collect::<Vec<_>>() {
            if v[0] >= corner[0] && v[1] >= corner[1] && v[2] >= corner[2] {
                img.set(v[0], v[1], v[2], contrast);
            }
        }
        img
    }

    fn full_mask(dims: [usize; 3]) -> Image3D {
        Image3D::new(dims, [1.0; 3], [0.0; 3], vec![1.0; dims[0] * dims[1] * dims[2]])
    }

    #[test]
    fn constant_image_yields_no_keypoints() {
        let img = Image3D::new([10, 10, 10], [1.0; 3], [0.0; 3], vec![-500.0; 1000]);
        let keys = detect_keypoints(&img, &full_mask([10, 10, 10]), 1.4, 3);
        assert!(keys.is_empty());
    }

    #[test]
    fn single_corner_yields_one_nearby_keypoint() {
        let img = corner_phantom([20, 20, 20], [10, 10, 10], 1000.0);
        let keys = detect_keypoints(&img, &full_mask([20, 20, 20]), 1.4, 3);
        assert_eq!(keys.len(), 1, "got {} keypoints", keys.len());
        let p = keys.points[0];
        for a in 0..3 {
            assert!((p[a] - 10.0).abs() <= 3.0, "keypoint at {p:?}");
        }
        // oracle: the detected point is the argmax of an independently
        // computed response map
        let resp = naive_response(&img, 1.4);
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, &v) in resp.values.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        let bx = best.0 % 20;
        let by = (best.0 / 20) % 20;
        let bz = best.0 / 400;
        assert_eq!(p, img.voxel_center([bx, by, bz]));
    }

    #[test]
    fn nearby_corners_are_suppressed_to_one() {
        // two corners 3 voxels apart with unequal contrast: the weaker sits
        // inside the stronger one's suppression window (radius 3)
        let mut img = corner_phantom([24, 20, 20], [8, 10, 10], 1000.0);
        let img2 = corner_phantom([24, 20, 20], [11, 10, 10], 800.0);
        for i in 0..img.len() {
            img.values[i] += img2.values[i];
        }
        let keys = detect_keypoints(&img, &full_mask([24, 20, 20]), 1.4, 3);
        assert_eq!(keys.len(), 1, "expected a single survivor, got {}", keys.len());
    }

    #[test]
    fn mask_restricts_detection() {
        let img = corner_phantom([20, 20, 20], [10, 10, 10], 1000.0);
        let mut mask = full_mask([20, 20, 20]);
        // exclude the corner neighbourhood
        for v in mask.iter_voxels().collect::<Vec<_>>() {
            if v.iter().all(|&c| (6..15).contains(&c)) {
                mask.set(v[0], v[1], v[2], 0.0);
            }
        }
        let keys = detect_keypoints(&img, &mask, 1.4, 3);
        for p in &keys.points {
            assert!(p.iter().any(|&c| !(6.0..15.0).contains(&c)));
        }
    }

    /// Independent response oracle: direct dense 3D convolution of the
    /// structure tensor, no separability.
    fn naive_response(f: &Image3D, sigma_mm: f64) -> Image3D {
        let g = gradient(f);
        let r = (3.0 * sigma_mm).ceil() as i64;
        let mut taps = vec![];
        let mut wsum = 0.0;
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    let w = (-((dx * dx + dy * dy + dz * dz) as f64)
                        / (2.0 * sigma_mm * sigma_mm))
                        .exp();
                    taps.push(([dx, dy, dz], w));
                    wsum += w;
                }
            }
        }
        let mut out = Image3D::zeros(f.dims, f.spacing, f.origin);
        for v in f.iter_voxels().collect::<Vec<_>>() {
            let mut t = [0.0f64; 6];
            for ([dx, dy, dz], w) in &taps {
                let q = [
                    (v[0] as i64 + dx).clamp(0, f.dims[0] as i64 - 1) as usize,
                    (v[1] as i64 + dy).clamp(0, f.dims[1] as i64 - 1) as usize,
                    (v[2] as i64 + dz).clamp(0, f.dims[2] as i64 - 1) as usize,
                ];
                let gv = g.at(q[0], q[1], q[2]);
                t[0] += w * gv[0] * gv[0];
                t[1] += w * gv[1] * gv[1];
                t[2] += w * gv[2] * gv[2];
                t[3] += w * gv[0] * gv[1];
                t[4] += w * gv[0] * gv[2];
                t[5] += w * gv[1] * gv[2];
            }
            let (xx, yy, zz, xy, xz, yz) = (
                t[0] / wsum + 1e-12,
                t[1] / wsum + 1e-12,
                t[2] / wsum + 1e-12,
                t[3] / wsum,
                t[4] / wsum,
                t[5] / wsum,
            );
            let det =
                xx * (yy * zz - yz * yz) - xy * (xy * zz - yz * xz) + xz * (xy * yz - yy * xz);
            let cof = (yy * zz - yz * yz) + (xx * zz - xz * xz) + (xx * yy - xy * xy);
            out.set(v[0], v[1], v[2], if cof > 0.0 && det > 0.0 { det / cof } else { 0.0 });
        }
        out
    }
}
