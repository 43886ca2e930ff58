//! Scalar minimization helpers.

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section search for the minimum of a unimodal `f` on `[lo, hi]`.
///
/// Stops once the bracket is narrower than `rel_tol` times the initial width.
/// Both endpoints are evaluated as well, so minima sitting on the boundary
/// are returned exactly. Returns `(argmin, min)`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, rel_tol: f64) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let mut best = (lo, f(lo));
    let consider = |x: f64, fx: f64, best: &mut (f64, f64)| {
        if fx < best.1 {
            *best = (x, fx);
        }
    };
    if hi <= lo {
        return best;
    }
    let f_hi = f(hi);
    consider(hi, f_hi, &mut best);
    let stop = rel_tol * (hi - lo);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..400 {
        if b - a <= stop {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    consider(c, fc, &mut best);
    consider(d, fd, &mut best);
    best
}

/// Picks the candidate with the smallest value; near-ties (within `tol`
/// relative) are broken by `prefer`, which returns true when its first
/// argument should win.
pub(crate) fn argmin_with_tiebreak<F, P>(candidates: &[f64], value: F, prefer: P) -> Option<(f64, f64)>
where
    F: Fn(f64) -> f64,
    P: Fn(f64, f64) -> bool,
{
    const TOL: f64 = 1e-12;
    let mut best: Option<(f64, f64)> = None;
    for &x in candidates {
        let v = value(x);
        best = match best {
            None => Some((x, v)),
            Some((bx, bv)) => {
                let scale = 1.0 + bv.abs().max(v.abs());
                if v < bv - TOL * scale || (v <= bv + TOL * scale && prefer(x, bx)) {
                    Some((x, v))
                } else {
                    Some((bx, bv))
                }
            }
        };
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_minimum() {
        let (x, fx) = golden_section(|x| (x - 1.3).powi(2) + 2.0, -4.0, 7.0, 1e-12);
        assert!((x - 1.3).abs() < 1e-7);
        assert!((fx - 2.0).abs() < 1e-15);
    }

    #[test]
    fn boundary_minimum_is_exact() {
        assert_eq!(golden_section(|x| 3.0 * x, -2.0, 5.0, 1e-10), (-2.0, -6.0));
        assert_eq!(golden_section(|x| -x, -2.0, 5.0, 1e-10), (5.0, -5.0));
    }

    #[test]
    fn kinked_minimum() {
        let (x, _) = golden_section(|x: f64| (x - 0.25).abs(), -1.0, 1.0, 1e-13);
        assert!((x - 0.25).abs() < 1e-12);
    }

    #[test]
    fn tie_break_prefers_small_magnitude() {
        let best = argmin_with_tiebreak(&[-2.0, 0.5, 1.0], |_| 1.0, |a, b| a.abs() < b.abs());
        assert_eq!(best, Some((0.5, 1.0)));
    }
}
