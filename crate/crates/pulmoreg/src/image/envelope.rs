//! Lower envelope of parabolas: the 1D building block for exact distance
//! transforms and quadratic min-convolutions.

/// Computes `out[p] = min_q (f[q] + w * (pos[p] - pos[q])^2)` together with
/// the minimizing `q` per output. Positions must be strictly increasing.
/// Entries with `f[q] = +inf` are skipped; if every entry is infinite the
/// output is infinite and the argmin is the identity.
///
/// `w == 0` degenerates to the global minimum of `f` everywhere.
pub fn lower_envelope_quadratic(
    f: &[f64],
    pos: &[f64],
    w: f64,
    out_vals: &mut [f64],
    out_args: &mut [usize],
) {
    let n = f.len();
    assert_eq!(pos.len(), n);
    assert_eq!(out_vals.len(), n);
    assert_eq!(out_args.len(), n);
    assert!(w >= 0.0, "quadratic weight must be non-negative");

    if w == 0.0 {
        let mut best = f64::INFINITY;
        let mut arg = 0usize;
        for (q, &fq) in f.iter().enumerate() {
            if fq < best {
                best = fq;
                arg = q;
            }
        }
        if best.is_infinite() {
            for p in 0..n {
                out_vals[p] = f64::INFINITY;
                out_args[p] = p;
            }
        } else {
            for p in 0..n {
                out_vals[p] = best;
                out_args[p] = arg;
            }
        }
        return;
    }

    // sites[i]: index of the i-th parabola on the envelope; bounds[i] is the
    // left edge of the interval where it is minimal.
    let mut sites: Vec<usize> = Vec::with_capacity(n);
    let mut bounds: Vec<f64> = Vec::with_capacity(n + 1);

    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        if sites.is_empty() {
            sites.push(q);
            bounds.push(f64::NEG_INFINITY);
            bounds.push(f64::INFINITY);
            continue;
        }
        loop {
            let p = *sites.last().unwrap();
            // intersection of parabolas rooted at pos[p] and pos[q]
            let s = ((f[q] + w * pos[q] * pos[q]) - (f[p] + w * pos[p] * pos[p]))
                / (2.0 * w * (pos[q] - pos[p]));
            if s <= bounds[sites.len() - 1] && sites.len() > 1 {
                sites.pop();
                bounds.pop();
            } else {
                sites.push(q);
                *bounds.last_mut().unwrap() = s;
                bounds.push(f64::INFINITY);
                break;
            }
        }
    }

    if sites.is_empty() {
        for p in 0..n {
            out_vals[p] = f64::INFINITY;
            out_args[p] = p;
        }
        return;
    }

    let mut k = 0usize;
    for p in 0..n {
        while bounds[k + 1] < pos[p] {
            k += 1;
        }
        let q = sites[k];
        let d = pos[p] - pos[q];
        out_vals[p] = f[q] + w * (d * d);
        out_args[p] = q;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(f: &[f64], pos: &[f64], w: f64) -> (Vec<f64>, Vec<f64>) {
        let n = f.len();
        let mut vals = vec![f64::INFINITY; n];
        let mut args = vec![f64::NAN; n];
        for p in 0..n {
            for q in 0..n {
                let d = pos[p] - pos[q];
                let c = f[q] + w * (d * d);
                if c < vals[p] {
                    vals[p] = c;
                    args[p] = q as f64;
                }
            }
        }
        (vals, args)
    }

    #[test]
    fn hand_case_with_infinities() {
        // f = [0, inf, inf], positions 0/2/4 mm, w = 1 -> [0, 4, 16]
        let f = [0.0, f64::INFINITY, f64::INFINITY];
        let pos = [0.0, 2.0, 4.0];
        let mut vals = [0.0; 3];
        let mut args = [0usize; 3];
        lower_envelope_quadratic(&f, &pos, 1.0, &mut vals, &mut args);
        assert_eq!(vals, [0.0, 4.0, 16.0]);
        assert_eq!(args, [0, 0, 0]);
    }

    #[test]
    fn zero_weight_returns_global_min() {
        let f = [3.0, 1.0, 2.0, 5.0];
        let pos = [0.0, 1.0, 2.0, 3.0];
        let mut vals = [0.0; 4];
        let mut args = [0usize; 4];
        lower_envelope_quadratic(&f, &pos, 0.0, &mut vals, &mut args);
        assert_eq!(vals, [1.0; 4]);
        assert_eq!(args, [1; 4]);
    }

    #[test]
    fn all_infinite_yields_infinite() {
        let f = [f64::INFINITY; 3];
        let pos = [0.0, 1.0, 2.0];
        let mut vals = [0.0; 3];
        let mut args = [9usize; 3];
        lower_envelope_quadratic(&f, &pos, 2.0, &mut vals, &mut args);
        assert!(vals.iter().all(|v| v.is_infinite()));
        assert_eq!(args, [0, 1, 2]);
    }

    #[test]
    fn random_lines_match_brute_force_exactly() {
        let mut s = 7u64;
        let mut rnd = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        for case in 0..300 {
            let n = 2 + (case % 40);
            let step = 0.5 + rnd() * 3.0;
            let w = if case % 7 == 0 { 0.0 } else { rnd() * 4.0 + 1e-3 };
            let pos: Vec<f64> = (0..n).map(|i| i as f64 * step).collect();
            let f: Vec<f64> = (0..n)
                .map(|_| if rnd() < 0.1 { f64::INFINITY } else { rnd() * 10.0 })
                .collect();
            let mut vals = vec![0.0; n];
            let mut args = vec![0usize; n];
            lower_envelope_quadratic(&f, &pos, w, &mut vals, &mut args);
            let (want, _) = brute_force(&f, &pos, w);
            for p in 0..n {
                assert_eq!(vals[p], want[p], "case {case}, p {p}");
            }
        }
    }
}
