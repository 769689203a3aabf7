//! Composite trapezoid sums on the uniform grid and adaptive Simpson
//! integration for smooth scalar functions.

/// Composite trapezoid rule for samples spaced `dx` apart.
pub fn trapezoid(values: &[f64], dx: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = values[1..n - 1].iter().sum();
            dx * (inner + 0.5 * (values[0] + values[n - 1]))
        }
    }
}

/// Trapezoid approximation of `∫ x^k f(x) dx` where `f` is sampled at
/// `x_i = i * dx`.
pub fn trapezoid_moment(values: &[f64], dx: f64, k: u32) -> f64 {
    if k == 0 {
        return trapezoid(values, dx);
    }
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let term = |i: usize| (i as f64 * dx).powi(k as i32) * values[i];
    let inner: f64 = (1..n - 1).map(term).sum();
    dx * (inner + 0.5 * (term(0) + term(n - 1)))
}

/// Trapezoid-weighted discrete L² norm.
pub fn l2_norm(values: &[f64], dx: f64) -> f64 {
    let sq: Vec<f64> = values.iter().map(|v| v * v).collect();
    trapezoid(&sq, dx).sqrt()
}

/// Trapezoid-weighted discrete L¹ norm.
pub fn l1_norm(values: &[f64], dx: f64) -> f64 {
    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    trapezoid(&abs, dx)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
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
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_is_exact_on_linear_samples() {
        let dx = 0.25;
        let v: Vec<f64> = (0..9).map(|i| 3.0 + 2.0 * i as f64 * dx).collect();
        // ∫_0^2 (3 + 2x) dx = 10
        assert!((trapezoid(&v, dx) - 10.0).abs() < 1e-14);
    }

    #[test]
    fn uniform_moments() {
        let n = 1025;
        let dx = 1.0 / 1024.0;
        let ones = vec![1.0; n];
        assert!((trapezoid_moment(&ones, dx, 0) - 1.0).abs() < 1e-3);
        assert!((trapezoid_moment(&ones, dx, 1) - 0.5).abs() < 1e-3);
    }

    #[test]
    fn simpson_handles_smooth_integrands() {
        let v = adaptive_simpson(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12);
        assert!((v - 2.0).abs() < 1e-10);
        assert_eq!(adaptive_simpson(&|x: f64| x, 1.0, 1.0, 1e-9), 0.0);
    }
}
