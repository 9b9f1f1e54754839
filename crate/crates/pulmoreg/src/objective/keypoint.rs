//! Least-squares penalty tying the dense transform to the sparse keypoint
//! correspondences: `K = sum_i |y(x_i) - y_kp(x_i)|^2` in mm^2.

use super::TermValue;
use crate::transform::BSplineTransform;

pub fn keypoint_penalty(
    t: &BSplineTransform,
    sources: &[[f64; 3]],
    targets: &[[f64; 3]],
) -> TermValue {
    assert_eq!(sources.len(), targets.len());
    let mut value = 0.0;
    let mut gradient = vec![[0.0f64; 3]; t.num_nodes()];
    for (x, target) in sources.iter().zip(targets.iter()) {
        let y = t.evaluate(*x);
        let r = [y[0] - target[0], y[1] - target[1], y[2] - target[2]];
        value += r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
        let loc = t.locate(*x);
        for (idx, w) in t.node_weights(&loc) {
            gradient[idx][0] += 2.0 * w * r[0];
            gradient[idx][1] += 2.0 * w * r[1];
            gradient[idx][2] += 2.0 * w * r[2];
        }
    }
    TermValue { value, gradient }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_targets_give_zero_penalty() {
        let mut t = BSplineTransform::new([3, 3, 3], [0.0; 3], [10.0; 3]);
        t.coeffs.iter_mut().for_each(|c| *c = [1.0, 0.0, 0.0]);
        let sources = vec![[2.0, 3.0, 4.0], [7.0, 1.0, 9.0]];
        let targets: Vec<[f64; 3]> = sources.iter().map(|&p| t.evaluate(p)).collect();
        let k = keypoint_penalty(&t, &sources, &targets);
        assert_eq!(k.value, 0.0);
        assert!(k.gradient.iter().all(|g| *g == [0.0; 3]));
    }

    #[test]
    fn single_offset_is_squared_norm() {
        let t = BSplineTransform::new([3, 3, 3], [0.0; 3], [10.0; 3]);
        let sources = vec![[5.0, 5.0, 5.0]];
        let targets = vec![[2.0, 1.0, 5.0]]; // y - target = (3, 4, 0)
        let k = keypoint_penalty(&t, &sources, &targets);
        assert!((k.value - 25.0).abs() < 1e-12);
    }

    #[test]
    fn random_points_match_direct_sum_oracle() {
        let mut s = 21u64;
        let mut rnd = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut t = BSplineTransform::new([4, 4, 4], [0.0; 3], [12.0; 3]);
        for c in t.coeffs.iter_mut() {
            *c = [rnd() - 0.5, rnd() - 0.5, rnd() - 0.5];
        }
        let sources: Vec<[f64; 3]> =
            (0..10).map(|_| [rnd() * 12.0, rnd() * 12.0, rnd() * 12.0]).collect();
        let targets: Vec<[f64; 3]> =
            (0..10).map(|_| [rnd() * 12.0, rnd() * 12.0, rnd() * 12.0]).collect();
        let k = keypoint_penalty(&t, &sources, &targets);
        let mut want = 0.0;
        for (x, tg) in sources.iter().zip(targets.iter()) {
            let y = t.evaluate(*x);
            want += (y[0] - tg[0]).powi(2) + (y[1] - tg[1]).powi(2) + (y[2] - tg[2]).powi(2);
        }
        assert!((k.value - want).abs() < 1e-12);
    }
}
