//! Voxel-grid containers and the shared raster operations: resampling,
//! Gaussian smoothing, finite-difference gradients and exact Euclidean
//! distance transforms.
//!
//! All grids live in world coordinates: voxel index `v` sits at
//! `origin + v * spacing` (component-wise, millimetres). Values are stored
//! x-fastest.

mod edt;
mod envelope;
mod gradient;
mod sampling;
mod smooth;

pub use edt::euclidean_distance_transform;
pub(crate) use envelope::lower_envelope_quadratic;
pub use gradient::gradient;
pub use sampling::{resample, sample_vector, sample_vector_with_jacobian, trilinear_sample, trilinear_sample_with_derivative, Interpolation};
pub use smooth::{smooth_gaussian, smooth_gaussian_axes};

/// Scalar voxel grid with physical geometry. Holds CT intensities in
/// Hounsfield units, binary masks in {0,1} or distance maps in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct Image3D {
    pub dims: [usize; 3],
    /// mm per voxel, all components > 0.
    pub spacing: [f64; 3],
    /// World position of voxel (0,0,0), mm.
    pub origin: [f64; 3],
    /// Voxel values, x-fastest.
    pub values: Vec<f64>,
}

impl Image3D {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], values: Vec<f64>) -> Self {
        assert!(dims.iter().all(|&d| d >= 2), "image dims must be >= 2, got {dims:?}");
        assert!(spacing.iter().all(|&s| s > 0.0), "spacing must be positive, got {spacing:?}");
        assert_eq!(values.len(), dims[0] * dims[1] * dims[2], "value count must match dims");
        Self { dims, spacing, origin, values }
    }

    /// All-zero image over the given grid.
    pub fn zeros(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        Self::new(dims, spacing, origin, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f64) {
        let i = self.index(x, y, z);
        self.values[i] = v;
    }

    /// World coordinate of a voxel center.
    #[inline]
    pub fn voxel_center(&self, v: [usize; 3]) -> [f64; 3] {
        [
            self.origin[0] + v[0] as f64 * self.spacing[0],
            self.origin[1] + v[1] as f64 * self.spacing[1],
            self.origin[2] + v[2] as f64 * self.spacing[2],
        ]
    }

    /// Continuous voxel coordinate of a world point.
    #[inline]
    pub fn world_to_voxel(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.origin[0]) / self.spacing[0],
            (p[1] - self.origin[1]) / self.spacing[1],
            (p[2] - self.origin[2]) / self.spacing[2],
        ]
    }

    /// Volume of one voxel in mm^3.
    #[inline]
    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    /// Physical extent dims * spacing per axis (cell-based), mm.
    pub fn extent(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.spacing[0],
            self.dims[1] as f64 * self.spacing[1],
            self.dims[2] as f64 * self.spacing[2],
        ]
    }

    /// Nearest-voxel value at a world point, or `None` outside the grid.
    pub fn nearest(&self, p: [f64; 3]) -> Option<f64> {
        let u = self.world_to_voxel(p);
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let r = u[a].round();
            if r < 0.0 || r > (self.dims[a] - 1) as f64 {
                return None;
            }
            idx[a] = r as usize;
        }
        Some(self.at(idx[0], idx[1], idx[2]))
    }

    /// Iterate voxel indices in storage order (x fastest).
    pub fn iter_voxels(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [nx, ny, nz] = self.dims;
        (0..nz).flat_map(move |z| (0..ny).flat_map(move |y| (0..nx).map(move |x| [x, y, z])))
    }
}

/// Dense 3-vector field on a voxel grid; used for image gradients
/// (intensity per mm) and displacement fields (mm).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField3 {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    /// One 3-vector per voxel, x-fastest.
    pub vectors: Vec<[f64; 3]>,
}

impl VectorField3 {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], vectors: Vec<[f64; 3]>) -> Self {
        assert!(dims.iter().all(|&d| d >= 2), "field dims must be >= 2");
        assert!(spacing.iter().all(|&s| s > 0.0), "spacing must be positive");
        assert_eq!(vectors.len(), dims[0] * dims[1] * dims[2]);
        Self { dims, spacing, origin, vectors }
    }

    pub fn zeros(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        Self::new(dims, spacing, origin, vec![[0.0; 3]; n])
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        self.vectors[self.index(x, y, z)]
    }

    #[inline]
    pub fn voxel_center(&self, v: [usize; 3]) -> [f64; 3] {
        [
            self.origin[0] + v[0] as f64 * self.spacing[0],
            self.origin[1] + v[1] as f64 * self.spacing[1],
            self.origin[2] + v[2] as f64 * self.spacing[2],
        ]
    }

    #[inline]
    pub fn world_to_voxel(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.origin[0]) / self.spacing[0],
            (p[1] - self.origin[1]) / self.spacing[1],
            (p[2] - self.origin[2]) / self.spacing[2],
        ]
    }
}
