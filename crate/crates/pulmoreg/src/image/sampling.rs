//! Trilinear and nearest-neighbor sampling plus grid resampling.

use super::{Image3D, VectorField3};

/// Interpolation scheme for [`resample`]. Masks must use `Nearest`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

/// Per-axis interpolation cell: lower index and fractional offset.
#[inline]
fn cell_and_frac(u: f64, n: usize) -> Option<(usize, f64)> {
    let top = (n - 1) as f64;
    if u < 0.0 || u > top {
        return None;
    }
    let mut i = u.floor() as usize;
    let mut f = u - i as f64;
    if i >= n - 1 {
        // u == n-1 exactly: fold into the last cell.
        i = n - 2;
        f = 1.0;
    }
    Some((i, f))
}

/// Trilinear interpolation at a world point. Points outside the span of
/// voxel centers return 0 (masked-background convention).
pub fn trilinear_sample(img: &Image3D, p: [f64; 3]) -> f64 {
    let u = img.world_to_voxel(p);
    let (Some((ix, fx)), Some((iy, fy)), Some((iz, fz))) = (
        cell_and_frac(u[0], img.dims[0]),
        cell_and_frac(u[1], img.dims[1]),
        cell_and_frac(u[2], img.dims[2]),
    ) else {
        return 0.0;
    };
    let mut acc = 0.0;
    for dz in 0..2 {
        let wz = if dz == 0 { 1.0 - fz } else { fz };
        for dy in 0..2 {
            let wy = if dy == 0 { 1.0 - fy } else { fy };
            for dx in 0..2 {
                let wx = if dx == 0 { 1.0 - fx } else { fx };
                acc += wx * wy * wz * img.at(ix + dx, iy + dy, iz + dz);
            }
        }
    }
    acc
}

/// Trilinear sample of a scalar image together with its spatial derivative
/// (per mm). Outside the grid both are zero.
pub fn trilinear_sample_with_derivative(img: &Image3D, p: [f64; 3]) -> (f64, [f64; 3]) {
    let u = img.world_to_voxel(p);
    let (Some((ix, fx)), Some((iy, fy)), Some((iz, fz))) = (
        cell_and_frac(u[0], img.dims[0]),
        cell_and_frac(u[1], img.dims[1]),
        cell_and_frac(u[2], img.dims[2]),
    ) else {
        return (0.0, [0.0; 3]);
    };
    let mut val = 0.0;
    let mut der = [0.0; 3];
    for dz in 0..2 {
        let (wz, gz) = if dz == 0 { (1.0 - fz, -1.0) } else { (fz, 1.0) };
        for dy in 0..2 {
            let (wy, gy) = if dy == 0 { (1.0 - fy, -1.0) } else { (fy, 1.0) };
            for dx in 0..2 {
                let (wx, gx) = if dx == 0 { (1.0 - fx, -1.0) } else { (fx, 1.0) };
                let v = img.at(ix + dx, iy + dy, iz + dz);
                val += wx * wy * wz * v;
                der[0] += gx * wy * wz * v;
                der[1] += wx * gy * wz * v;
                der[2] += wx * wy * gz * v;
            }
        }
    }
    for a in 0..3 {
        der[a] /= img.spacing[a];
    }
    (val, der)
}

/// Trilinear sample of a vector field at a world point; zero outside.
pub fn sample_vector(field: &VectorField3, p: [f64; 3]) -> [f64; 3] {
    let u = field.world_to_voxel(p);
    let (Some((ix, fx)), Some((iy, fy)), Some((iz, fz))) = (
        cell_and_frac(u[0], field.dims[0]),
        cell_and_frac(u[1], field.dims[1]),
        cell_and_frac(u[2], field.dims[2]),
    ) else {
        return [0.0; 3];
    };
    let mut acc = [0.0; 3];
    for dz in 0..2 {
        let wz = if dz == 0 { 1.0 - fz } else { fz };
        for dy in 0..2 {
            let wy = if dy == 0 { 1.0 - fy } else { fy };
            for dx in 0..2 {
                let wx = if dx == 0 { 1.0 - fx } else { fx };
                let v = field.at(ix + dx, iy + dy, iz + dz);
                let w = wx * wy * wz;
                acc[0] += w * v[0];
                acc[1] += w * v[1];
                acc[2] += w * v[2];
            }
        }
    }
    acc
}

/// Trilinear sample of a vector field with its Jacobian: returns
/// `(m, d)` where `d[j][k] = d m_j / d p_k` in units per mm. Outside the
/// grid both are zero.
pub fn sample_vector_with_jacobian(field: &VectorField3, p: [f64; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let u = field.world_to_voxel(p);
    let (Some((ix, fx)), Some((iy, fy)), Some((iz, fz))) = (
        cell_and_frac(u[0], field.dims[0]),
        cell_and_frac(u[1], field.dims[1]),
        cell_and_frac(u[2], field.dims[2]),
    ) else {
        return ([0.0; 3], [[0.0; 3]; 3]);
    };
    let mut val = [0.0; 3];
    let mut jac = [[0.0; 3]; 3];
    for dz in 0..2 {
        let (wz, gz) = if dz == 0 { (1.0 - fz, -1.0) } else { (fz, 1.0) };
        for dy in 0..2 {
            let (wy, gy) = if dy == 0 { (1.0 - fy, -1.0) } else { (fy, 1.0) };
            for dx in 0..2 {
                let (wx, gx) = if dx == 0 { (1.0 - fx, -1.0) } else { (fx, 1.0) };
                let v = field.at(ix + dx, iy + dy, iz + dz);
                let w = wx * wy * wz;
                let dwx = gx * wy * wz;
                let dwy = wx * gy * wz;
                let dwz = wx * wy * gz;
                for j in 0..3 {
                    val[j] += w * v[j];
                    jac[j][0] += dwx * v[j];
                    jac[j][1] += dwy * v[j];
                    jac[j][2] += dwz * v[j];
                }
            }
        }
    }
    for j in 0..3 {
        for k in 0..3 {
            jac[j][k] /= field.spacing[k];
        }
    }
    (val, jac)
}

/// Resample onto a new spacing over the same physical extent. New dims are
/// `ceil(extent / new_spacing)` (at least 2); the origin is kept, so voxel
/// centers of both grids share the world frame.
pub fn resample(img: &Image3D, new_spacing: [f64; 3], interpolation: Interpolation) -> Image3D {
    assert!(new_spacing.iter().all(|&s| s > 0.0), "new spacing must be positive");
    let extent = img.extent();
    let mut dims = [0usize; 3];
    for a in 0..3 {
        dims[a] = ((extent[a] / new_spacing[a]).ceil() as usize).max(2);
    }
    let mut out = Image3D::zeros(dims, new_spacing, img.origin);
    let n = out.len();
    let mut values = vec![0.0; n];
    for (i, v) in values.iter_mut().enumerate() {
        let x = i % dims[0];
        let y = (i / dims[0]) % dims[1];
        let z = i / (dims[0] * dims[1]);
        let p = out.voxel_center([x, y, z]);
        *v = match interpolation {
            Interpolation::Trilinear => trilinear_sample(img, p),
            Interpolation::Nearest => img.nearest(p).unwrap_or(0.0),
        };
    }
    out.values = values;
    out
}
