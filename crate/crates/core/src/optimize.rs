//! Bounded scalar maximization (Brent's method: golden section with parabolic steps).

/// Outcome of [`maximize_bounded`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarOptimum {
    pub x: f64,
    pub value: f64,
    pub evaluations: usize,
    /// `x` is exactly the lower or upper end of the search interval.
    pub at_lower: bool,
    pub at_upper: bool,
    pub converged: bool,
}

const GOLDEN: f64 = 0.381_966_011_250_105_1; // (3 - √5) / 2

/// Maximizes `f` on the closed interval `[lo, hi]`.
///
/// The interior search stops once the bracket is narrower than about `xtol`.
/// Both endpoints are evaluated as well and the best of the three candidates
/// is returned, so the result always dominates `f(lo)` and `f(hi)`.
pub fn maximize_bounded<F>(mut f: F, lo: f64, hi: f64, xtol: f64, max_evals: usize) -> ScalarOptimum
where
    F: FnMut(f64) -> f64,
{
    assert!(lo <= hi, "empty interval [{lo}, {hi}]");
    // Minimize the negation; NaN is treated as -inf for the maximizer.
    let mut g = |x: f64| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            -v
        }
    };

    let (mut a, mut b) = (lo, hi);
    let mut v = a + GOLDEN * (b - a);
    let mut w = v;
    let mut x = v;
    let mut fx = g(x);
    let mut fv = fx;
    let mut fw = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let mut evals = 1;
    let mut converged = false;

    while evals < max_evals {
        let xm = 0.5 * (a + b);
        let tol1 = xtol / 3.0 + 4.0 * f64::EPSILON * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            converged = true;
            break;
        }

        let mut use_golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if (u - a) < tol2 || (b - u) < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLDEN * e;
        }

        let step = if d.abs() >= tol1 { d } else { tol1.copysign(d) };
        let u = (x + step).clamp(lo, hi);
        let fu = g(u);
        evals += 1;

        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }

    let f_lo = g(lo);
    let f_hi = g(hi);
    evals += 2;
    let mut best = ScalarOptimum {
        x,
        value: -fx,
        evaluations: evals,
        at_lower: false,
        at_upper: false,
        converged,
    };
    if f_lo <= fx && f_lo <= f_hi {
        best.x = lo;
        best.value = -f_lo;
        best.at_lower = true;
    } else if f_hi <= fx {
        best.x = hi;
        best.value = -f_hi;
        best.at_upper = true;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_quadratic_max() {
        let r = maximize_bounded(|x| -(x - 0.3).powi(2), 0.0, 1.0, 1e-10, 500);
        assert!((r.x - 0.3).abs() < 1e-8, "{r:?}");
        assert!(!r.at_lower && !r.at_upper);
        assert!(r.converged);
    }

    #[test]
    fn monotone_functions_hit_the_boundary() {
        let r = maximize_bounded(|x| x, 0.1, 0.9, 1e-9, 500);
        assert_eq!(r.x, 0.9);
        assert!(r.at_upper);
        let r = maximize_bounded(|x| -x, 0.1, 0.9, 1e-9, 500);
        assert_eq!(r.x, 0.1);
        assert!(r.at_lower);
    }

    #[test]
    fn concave_log_objective_beats_grid() {
        let f = |x: f64| 3.0 * x.ln() + 7.0 * (1.0 - x).ln();
        let r = maximize_bounded(f, 1e-6, 1.0 - 1e-6, 1e-9, 500);
        assert!((r.x - 0.3).abs() < 1e-7);
        for k in 0..=1000 {
            let x = 1e-6 + (1.0 - 2e-6) * k as f64 / 1000.0;
            assert!(f(x) <= r.value + 1e-12);
        }
    }

    #[test]
    fn degenerate_interval() {
        let r = maximize_bounded(|x| x, 0.4, 0.4, 1e-9, 100);
        assert_eq!(r.x, 0.4);
    }
}
