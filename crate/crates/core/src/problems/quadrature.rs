//! Adaptive Simpson quadrature.

const MAX_DEPTH: u32 = 50;

/// `∫_a^b f` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    refine(&f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

#[inline]
fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn refine<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol || m <= a || m >= b {
        return left + right + delta / 15.0;
    }
    refine(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + refine(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_and_trig() {
        assert!((integrate(|s| s, 0.0, 1.0, 1e-12) - 0.5).abs() < 1e-14);
        assert!((integrate(|s| s * s * s, -1.0, 2.0, 1e-12) - 3.75).abs() < 1e-12);
        let v = integrate(f64::cos, 0.0, 2.0, 1e-12);
        assert!((v - 2f64.sin()).abs() < 1e-12);
        assert_eq!(integrate(f64::exp, 1.0, 1.0, 1e-12), 0.0);
        assert!((integrate(|s| s, 1.0, 0.0, 1e-12) + 0.5).abs() < 1e-14);
    }
}
