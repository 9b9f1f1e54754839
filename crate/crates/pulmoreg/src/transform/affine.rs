//! Affine transform parameterized about a center point, used by the mask
//! pre-registration.

/// `y(x) = M (x - c) + c + t`. Centering on the fixed-mask centroid keeps
/// scale and shift parameters decorrelated during optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTransform {
    pub matrix: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub center: [f64; 3],
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
            center: [0.0; 3],
        }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    pub fn map(&self, p: [f64; 3]) -> [f64; 3] {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let mut out = [0.0; 3];
        for j in 0..3 {
            out[j] = self.matrix[j][0] * d[0]
                + self.matrix[j][1] * d[1]
                + self.matrix[j][2] * d[2]
                + self.center[j]
                + self.translation[j];
        }
        out
    }

    pub fn displacement(&self, p: [f64; 3]) -> [f64; 3] {
        let y = self.map(p);
        [y[0] - p[0], y[1] - p[1], y[2] - p[2]]
    }

    /// Flat 12-parameter view: row-major matrix then translation.
    pub fn to_params(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for j in 0..3 {
            for k in 0..3 {
                out[3 * j + k] = self.matrix[j][k];
            }
        }
        out[9..12].copy_from_slice(&self.translation);
        out
    }

    pub fn from_params(params: &[f64], center: [f64; 3]) -> Self {
        assert_eq!(params.len(), 12);
        let mut matrix = [[0.0; 3]; 3];
        for j in 0..3 {
            for k in 0..3 {
                matrix[j][k] = params[3 * j + k];
            }
        }
        Self {
            matrix,
            translation: [params[9], params[10], params[11]],
            center,
        }
    }
}
