//! Matrix-free L-BFGS with a curvature-metric seed and an
//! infeasibility-aware Armijo line search.
//!
//! The two-loop recursion is seeded with an arbitrary initial inverse
//! Hessian application (here `(R + tau I)^-1`). Infinite objective values
//! (the volume-change barrier) reject a trial step outright, so every
//! accepted iterate stays fold-free.

use crate::error::{Error, Result};
use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    /// History pairs kept for the two-loop recursion.
    pub buffer: usize,
    pub max_iterations: usize,
    /// Stop when the gradient norm falls below this fraction of its
    /// starting value.
    pub grad_reduction: f64,
    /// Stop when the accepted step's infinity norm (mm) falls below this.
    pub min_step_norm: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo_c1: f64,
    /// Step halvings before the line search gives up.
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            buffer: 5,
            max_iterations: 100,
            grad_reduction: 1e-3,
            min_step_norm: 1e-5,
            armijo_c1: 1e-4,
            max_backtracks: 40,
        }
    }
}

/// Snapshot of one accepted iterate, for progress reporting.
#[derive(Debug, Clone, Copy)]
pub struct IterateInfo {
    pub iteration: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub step_norm: f64,
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// True when a convergence test fired (rather than the iteration cap).
    pub converged: bool,
}

/// Minimizes `objective` starting from `x0`. The closure returns the value
/// and, when requested, the gradient; `metric` applies the initial inverse
/// Hessian.
pub fn lbfgs_minimize<F, M>(
    mut objective: F,
    x0: Vec<f64>,
    metric: M,
    opts: &LbfgsOptions,
    mut monitor: impl FnMut(&IterateInfo),
) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64], bool) -> (f64, Option<Vec<f64>>),
    M: Fn(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let mut x = x0;
    let (mut f, g) = objective(&x, true);
    if !f.is_finite() {
        return Err(Error::numerical(
            "objective is infeasible at the starting point (pre-registration must be fold-free)",
        ));
    }
    let mut g = g.expect("gradient requested");
    let g0_norm = norm2(&g);
    if g0_norm == 0.0 {
        return Ok(LbfgsOutcome {
            x,
            value: f,
            iterations: 0,
            converged: true,
        });
    }

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.buffer);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iterations {
        let mut dir = two_loop(&g, &history, &metric);
        for d in dir.iter_mut() {
            *d = -*d;
        }
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            // numerically non-descent: fall back to the metric steepest
            // descent direction
            dir = metric(&g);
            for d in dir.iter_mut() {
                *d = -*d;
            }
            slope = dot(&g, &dir);
            if slope >= 0.0 {
                converged = true;
                break;
            }
        }

        // Armijo backtracking; infinite trial values reject the step
        let mut step = 1.0f64;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let xt: Vec<f64> = x.iter().zip(dir.iter()).map(|(xi, di)| xi + step * di).collect();
            let (ft, _) = objective(&xt, false);
            if ft.is_finite() && ft <= f + opts.armijo_c1 * step * slope {
                accepted = Some((xt, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            converged = true;
            break;
        };
        let step_norm = step * dir.iter().fold(0.0f64, |m, d| m.max(d.abs()));

        let (_, g_new) = objective(&x_new, true);
        let g_new = g_new.expect("gradient requested");

        // curvature-gated history update
        let s: Vec<f64> = x_new.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let yk: Vec<f64> = g_new.iter().zip(g.iter()).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yk);
        if sy > 0.0 && sy.is_finite() {
            if history.len() == opts.buffer {
                history.pop_front();
            }
            history.push_back((s, yk, 1.0 / sy));
        }

        x = x_new;
        f = f_new;
        g = g_new;
        iterations += 1;

        let info = IterateInfo {
            iteration: iterations,
            value: f,
            grad_norm: norm2(&g),
            step_norm,
        };
        monitor(&info);

        if info.grad_norm <= opts.grad_reduction * g0_norm {
            converged = true;
            break;
        }
        if step_norm < opts.min_step_norm {
            converged = true;
            break;
        }
    }

    let _ = n;
    Ok(LbfgsOutcome {
        x,
        value: f,
        iterations,
        converged,
    })
}

fn two_loop<M>(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, metric: &M) -> Vec<f64>
where
    M: Fn(&[f64]) -> Vec<f64>,
{
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y.iter()) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    let mut r = metric(&q);
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &r);
        for (ri, si) in r.iter_mut().zip(s.iter()) {
            *ri += (a - b) * si;
        }
    }
    r
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Flattens control coefficients for the optimizer (node-major, xyz
/// interleaved).
pub fn flatten_coeffs(coeffs: &[[f64; 3]]) -> Vec<f64> {
    let mut out = Vec::with_capacity(coeffs.len() * 3);
    for c in coeffs {
        out.extend_from_slice(c);
    }
    out
}

pub fn unflatten_coeffs(flat: &[f64]) -> Vec<[f64; 3]> {
    assert_eq!(flat.len() % 3, 0);
    flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::psi;

    #[test]
    fn quadratic_converges_to_direct_solve() {
        // 1/2 x^T A x - b^T x with SPD A
        let n = 10;
        let mut s = 3u64;
        let mut rnd = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut m = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            for j in 0..n {
                m[i][j] = rnd() - 0.5;
            }
        }
        // A = M^T M + I
        let mut a = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += m[k][i] * m[k][j];
                }
                a[i][j] = acc + if i == j { 1.0 } else { 0.0 };
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rnd() * 2.0 - 1.0).collect();
        let objective = |x: &[f64], want_g: bool| {
            let ax: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| a[i][j] * x[j]).sum::<f64>())
                .collect();
            let f = 0.5 * dot(x, &ax) - dot(&b, x);
            let g = if want_g {
                Some((0..n).map(|i| ax[i] - b[i]).collect())
            } else {
                None
            };
            (f, g)
        };
        let out = lbfgs_minimize(
            objective,
            vec![0.0; n],
            |q: &[f64]| q.to_vec(),
            &LbfgsOptions {
                grad_reduction: 1e-10,
                max_iterations: 200,
                min_step_norm: 1e-12,
                ..LbfgsOptions::default()
            },
            |_| {},
        )
        .unwrap();
        // direct solve by Gaussian elimination
        let mut aug = a.clone();
        let mut rhs = b.clone();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| aug[i][col].abs().partial_cmp(&aug[j][col].abs()).unwrap())
                .unwrap();
            aug.swap(col, piv);
            rhs.swap(col, piv);
            for row in (col + 1)..n {
                let f = aug[row][col] / aug[col][col];
                for k in col..n {
                    aug[row][k] -= f * aug[col][k];
                }
                rhs[row] -= f * rhs[col];
            }
        }
        let mut want = vec![0.0f64; n];
        for row in (0..n).rev() {
            let mut acc = rhs[row];
            for k in (row + 1)..n {
                acc -= aug[row][k] * want[k];
            }
            want[row] = acc / aug[row][row];
        }
        for i in 0..n {
            assert!(
                (out.x[i] - want[i]).abs() < 1e-6,
                "component {i}: {} vs {}",
                out.x[i],
                want[i]
            );
        }
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let objective = |x: &[f64], want_g: bool| {
            let f = x[0] * x[0];
            (f, if want_g { Some(vec![2.0 * x[0]]) } else { None })
        };
        let out = lbfgs_minimize(
            objective,
            vec![0.0],
            |q: &[f64]| q.to_vec(),
            &LbfgsOptions::default(),
            |_| {},
        )
        .unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.x, vec![0.0]);
    }

    #[test]
    fn barrier_objective_keeps_iterates_feasible() {
        // psi(1 + x) + (x - 5)^2: the barrier caps how far x can go
        // negative; all iterates must keep 1 + x > 0
        let mut feasible = true;
        let objective = |x: &[f64], want_g: bool| {
            let t = 1.0 + x[0];
            let f = psi(t) + (x[0] - 5.0) * (x[0] - 5.0);
            let g = if want_g {
                Some(vec![1.0 - 1.0 / (t * t) + 2.0 * (x[0] - 5.0)])
            } else {
                None
            };
            (f, g)
        };
        let out = lbfgs_minimize(
            objective,
            vec![0.0],
            |q: &[f64]| q.to_vec(),
            &LbfgsOptions {
                grad_reduction: 1e-12,
                max_iterations: 200,
                ..LbfgsOptions::default()
            },
            |info| {
                if !info.value.is_finite() {
                    feasible = false;
                }
            },
        )
        .unwrap();
        assert!(feasible, "an accepted iterate had infinite objective");
        assert!(1.0 + out.x[0] > 0.0);
        // independent oracle: bisection on the derivative
        let dfdx = |x: f64| 1.0 - 1.0 / ((1.0 + x) * (1.0 + x)) + 2.0 * (x - 5.0);
        let (mut lo, mut hi) = (0.0f64, 5.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if dfdx(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!(
            (out.x[0] - lo).abs() < 1e-5,
            "minimizer {} vs oracle {lo}",
            out.x[0]
        );
    }

    #[test]
    fn infeasible_start_is_an_error() {
        let objective = |x: &[f64], want_g: bool| {
            let f = psi(x[0]);
            (f, if want_g { Some(vec![0.0]) } else { None })
        };
        let err = lbfgs_minimize(
            objective,
            vec![-1.0],
            |q: &[f64]| q.to_vec(),
            &LbfgsOptions::default(),
            |_| {},
        );
        assert!(err.is_err());
    }

    #[test]
    fn objective_is_monotone_over_accepted_iterates() {
        let mut values = vec![];
        let objective = |x: &[f64], want_g: bool| {
            let f = (x[0] - 2.0).powi(4) + (x[1] + 1.0).powi(2) + 0.3 * (x[0] * 3.0).sin();
            let g = if want_g {
                Some(vec![
                    4.0 * (x[0] - 2.0).powi(3) + 0.9 * (x[0] * 3.0).cos(),
                    2.0 * (x[1] + 1.0),
                ])
            } else {
                None
            };
            (f, g)
        };
        lbfgs_minimize(
            objective,
            vec![0.0, 0.0],
            |q: &[f64]| q.to_vec(),
            &LbfgsOptions::default(),
            |info| values.push(info.value),
        )
        .unwrap();
        for w in values.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "objective increased: {} -> {}", w[0], w[1]);
        }
    }
}
