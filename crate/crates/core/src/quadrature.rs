//! Adaptive Simpson quadrature.

/// Hard cap on recursion depth; intervals are never split below `(b-a)/2^50`.
const MAX_DEPTH: u32 = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    /// Accumulated Richardson error estimate.
    pub error: f64,
    /// True when some subinterval hit the depth cap before meeting tolerance.
    pub capped: bool,
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Quadrature {
    if a == b {
        return Quadrature {
            value: 0.0,
            error: 0.0,
            capped: false,
        };
    }
    if b < a {
        let q = adaptive_simpson(f, b, a, tol);
        return Quadrature { value: -q.value, ..q };
    }
    // Seed with four panels so that integrands vanishing at the three
    // classical Simpson nodes are not mistaken for zero.
    let mut out = Quadrature {
        value: 0.0,
        error: 0.0,
        capped: false,
    };
    let panels = 4;
    let w = (b - a) / panels as f64;
    for k in 0..panels {
        let lo = a + w * k as f64;
        let hi = if k + 1 == panels { b } else { lo + w };
        let mid = 0.5 * (lo + hi);
        let (flo, fmid, fhi) = (f(lo), f(mid), f(hi));
        let whole = simpson(lo, hi, flo, fmid, fhi);
        let q = recurse(&f, lo, hi, flo, fmid, fhi, whole, tol / panels as f64, MAX_DEPTH);
        out.value += q.value;
        out.error += q.error;
        out.capped |= q.capped;
    }
    out
}

#[inline]
fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Quadrature {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || m <= a || m >= b {
        return Quadrature {
            value: left + right + delta / 15.0,
            error: delta.abs() / 15.0,
            capped: true,
        };
    }
    if delta.abs() <= 15.0 * tol {
        return Quadrature {
            value: left + right + delta / 15.0,
            error: delta.abs() / 15.0,
            capped: false,
        };
    }
    let l = recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1);
    let r = recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1);
    Quadrature {
        value: l.value + r.value,
        error: l.error + r.error,
        capped: l.capped || r.capped,
    }
}

/// Composite Simpson rule with an even number of `panels`. Used where the
/// integrand carries its own quadrature noise, which would send an adaptive
/// rule chasing rounding error.
pub(crate) fn composite_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let panels = panels.max(2) + panels % 2;
    let w = (b - a) / panels as f64;
    let inner: f64 = (1..panels)
        .map(|k| {
            let c = if k % 2 == 1 { 4.0 } else { 2.0 };
            c * f(a + w * k as f64)
        })
        .sum();
    (f(a) + inner + f(b)) * w / 3.0
}

/// Trapezoid weights on a uniform grid of `points` nodes over `[0, upper]`.
pub(crate) fn uniform_grid(upper: f64, points: usize) -> (Vec<f64>, Vec<f64>) {
    debug_assert!(points >= 2);
    let step = upper / (points - 1) as f64;
    let times = (0..points)
        .map(|k| if k + 1 == points { upper } else { step * k as f64 })
        .collect();
    let mut weights = vec![step; points];
    weights[0] = 0.5 * step;
    weights[points - 1] = 0.5 * step;
    (times, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composite_simpson_is_exact_for_cubics() {
        let v = composite_simpson(|x| x * x * x - x, 0.0, 2.0, 8);
        assert!((v - 2.0).abs() < 1e-13);
        // Odd panel counts round up: 8 panels, error ≈ h⁴ (e - 1) / 180.
        let v = composite_simpson(f64::exp, 0.0, 1.0, 7);
        let err = v - (std::f64::consts::E - 1.0);
        assert!(err > 0.0 && err < 2.5e-6, "{err}");
    }

    #[test]
    fn polynomials_and_exponentials() {
        let q = adaptive_simpson(|x| x * x, 0.0, 3.0, 1e-12);
        assert!((q.value - 9.0).abs() < 1e-12);
        let q = adaptive_simpson(f64::exp, 0.0, 1.0, 1e-10);
        assert!((q.value - (std::f64::consts::E - 1.0)).abs() < 1e-10);
        assert!(!q.capped);
    }

    #[test]
    fn reversed_and_empty_intervals() {
        assert_eq!(adaptive_simpson(|x| x, 1.0, 1.0, 1e-8).value, 0.0);
        let q = adaptive_simpson(|x| x, 2.0, 0.0, 1e-10);
        assert!((q.value + 2.0).abs() < 1e-12);
    }

    #[test]
    fn narrow_bump_is_found() {
        // Vanishes at 0, 0.5 and 1: a single three-point rule would see zero.
        let bump = |x: f64| if (x - 0.3).abs() < 0.05 { 1.0 } else { 0.0 };
        let q = adaptive_simpson(bump, 0.0, 1.0, 1e-6);
        assert!((q.value - 0.1).abs() < 1e-4, "{}", q.value);
    }

    #[test]
    fn trapezoid_grid() {
        let (t, w) = uniform_grid(2.0, 5);
        assert_eq!(t, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(w, vec![0.25, 0.5, 0.5, 0.5, 0.25]);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-15);
    }
}
