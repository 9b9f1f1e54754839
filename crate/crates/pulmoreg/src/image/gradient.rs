//! Finite-difference image gradients.

use super::{Image3D, VectorField3};

/// Image gradient in intensity units per mm: central differences in the
/// interior, one-sided at the first/last voxel of each axis.
pub fn gradient(img: &Image3D) -> VectorField3 {
    let [nx, ny, nz] = img.dims;
    let mut out = VectorField3::zeros(img.dims, img.spacing, img.origin);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let g = [
                    diff_along(img, [x, y, z], 0),
                    diff_along(img, [x, y, z], 1),
                    diff_along(img, [x, y, z], 2),
                ];
                let i = out.index(x, y, z);
                out.vectors[i] = g;
            }
        }
    }
    out
}

#[inline]
fn diff_along(img: &Image3D, v: [usize; 3], axis: usize) -> f64 {
    let n = img.dims[axis];
    let i = v[axis];
    let h = img.spacing[axis];
    let value = |j: usize| {
        let mut w = v;
        w[axis] = j;
        img.at(w[0], w[1], w[2])
    };
    if i == 0 {
        (value(1) - value(0)) / h
    } else if i == n - 1 {
        (value(n - 1) - value(n - 2)) / h
    } else {
        (value(i + 1) - value(i - 1)) / (2.0 * h)
    }
}
