//! Curvature-metric initialization of the quasi-Newton Hessian: applying
//! `(R + tau I)^-1` by matrix-free conjugate gradients, where `R` is the
//! quadratic-form operator of the curvature regularizer.

use crate::objective::curvature_operator;
use crate::transform::BSplineTransform;

pub const CG_TOLERANCE: f64 = 1e-8;
pub const CG_MAX_ITERATIONS: usize = 200;

/// Solves `(R + tau I) p = g` on the control grid of `t`. The operator is
/// symmetric positive definite for `tau > 0`, so CG converges; if the
/// iteration cap is hit the best iterate is returned with a warning.
pub fn apply_inverse_metric(t: &BSplineTransform, g: &[[f64; 3]], tau: f64) -> Vec<[f64; 3]> {
    assert!(tau > 0.0, "metric shift must be positive");
    assert_eq!(g.len(), t.num_nodes());
    let n = g.len();
    let gnorm = norm(g);
    if gnorm == 0.0 {
        return vec![[0.0; 3]; n];
    }

    let apply = |v: &[[f64; 3]]| -> Vec<[f64; 3]> {
        let mut out = curvature_operator(t, v);
        for (o, x) in out.iter_mut().zip(v.iter()) {
            o[0] += tau * x[0];
            o[1] += tau * x[1];
            o[2] += tau * x[2];
        }
        out
    };

    let mut x = vec![[0.0f64; 3]; n];
    let mut r = g.to_vec();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    for _ in 0..CG_MAX_ITERATIONS {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rs / pap;
        for i in 0..n {
            for c in 0..3 {
                x[i][c] += alpha * p[i][c];
                r[i][c] -= alpha * ap[i][c];
            }
        }
        let rs_new = dot(&r, &r);
        if rs_new.sqrt() <= CG_TOLERANCE * gnorm {
            return x;
        }
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..n {
            for c in 0..3 {
                p[i][c] = r[i][c] + beta * p[i][c];
            }
        }
    }
    eprintln!(
        "warning: metric CG stopped at {} iterations with residual {:.3e}",
        CG_MAX_ITERATIONS,
        dot(&r, &r).sqrt() / gnorm
    );
    x
}

fn dot(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x[0] * y[0] + x[1] * y[1] + x[2] * y[2])
        .sum()
}

fn norm(a: &[[f64; 3]]) -> f64 {
    dot(a, a).sqrt()
}
