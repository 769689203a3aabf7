//! Reconstruction of the division rate from a stationary size profile.
//!
//! All methods work with the product `H = B N`, which is what the stationary
//! balance determines, and only divide by `N` at the end. Four routes are
//! provided:
//!
//! * [`solve_dilation`]: the exact relation `4H(2x) - H(x) = L(x)` solved
//!   backward from the (zero) tail.
//! * [`quasi_reversibility`]: the same relation in the variable `y = 2x`,
//!   regularized by `α ∂_y H` and marched upward from `H(0) = 0`.
//! * [`filter_regularize`]: the exact solve applied to mollified data, with the
//!   derivative carried by the kernel.
//! * [`hybrid`]: quasi-reversibility on mollified data.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{regularized_eigenvalue, DivisionRate, GrowthLaw, SizeDensity, UniformGrid};
use crate::mollifier::Mollifier;
use crate::quadrature;
use crate::regselect;

/// `B` is only resolved where `N ≥ DIVISION_FLOOR * max N`.
pub const DIVISION_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Exact,
    QuasiReversibility,
    Filtering,
    Hybrid,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::QuasiReversibility => "qr",
            Method::Filtering => "filter",
            Method::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Method::Exact),
            "qr" => Ok(Method::QuasiReversibility),
            "filter" => Ok(Method::Filtering),
            "hybrid" => Ok(Method::Hybrid),
            other => Err(Error::InvalidInput(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// Nodes where a negative `B` was clamped to zero.
    pub clamped_count: usize,
    /// `∫ |min(B, 0)| N` over the clamped nodes.
    pub clamped_mass: f64,
    /// Nodes below the division floor, where `B` is set to zero.
    pub floored_count: usize,
    /// Mollifier width, for the filtering and hybrid methods.
    pub filter_width: Option<f64>,
    /// The smoothing width exceeds the extent of the data.
    pub oversmoothed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    /// Clamped, nonnegative rate.
    pub rate: DivisionRate,
    /// `H / N` before clamping (zero below the division floor).
    pub unclamped: Vec<f64>,
    /// `H = B N` as produced by the solver, before any clamping.
    pub product: Vec<f64>,
    /// Profile `B` was divided by (the smoothed one for filtering).
    pub n_used: SizeDensity,
    pub lambda_used: f64,
    pub alpha: f64,
    pub method: Method,
    pub residual: f64,
    pub diagnostics: Diagnostics,
}

impl ReconstructionResult {
    /// CSV `x,B,N_used,H` followed by a `# key=value` footer.
    pub fn write_csv<W: Write>(&self, mut w: W, growth: &GrowthLaw) -> Result<()> {
        let grid = self.rate.grid();
        writeln!(w, "x,B,N_used,H")?;
        for i in 0..grid.n_points() {
            writeln!(
                w,
                "{},{},{},{}",
                grid.x(i),
                self.rate.values()[i],
                self.n_used.values()[i],
                self.product[i]
            )?;
        }
        writeln!(w, "# lambda={}", self.lambda_used)?;
        writeln!(w, "# alpha={}", self.alpha)?;
        writeln!(w, "# residual={}", self.residual)?;
        writeln!(w, "# method={}", self.method)?;
        writeln!(w, "# growth={}", growth_tag(growth))?;
        writeln!(w, "# growth_coefficient={}", growth.coefficient())?;
        if let Some(width) = self.diagnostics.filter_width {
            writeln!(w, "# filter_width={width}")?;
        }
        writeln!(w, "# clamped_count={}", self.diagnostics.clamped_count)?;
        writeln!(w, "# floored_count={}", self.diagnostics.floored_count)?;
        Ok(())
    }

    /// `∫ B N_used`, the scale clamping is measured against.
    pub fn division_mass(&self) -> f64 {
        let bn: Vec<f64> = self
            .rate
            .values()
            .iter()
            .zip(self.n_used.values())
            .map(|(b, n)| b * n)
            .collect();
        quadrature::trapezoid(&bn, self.rate.grid().dx())
    }
}

pub(crate) fn growth_tag(g: &GrowthLaw) -> &'static str {
    match g {
        GrowthLaw::Linear(_) => "linear",
        GrowthLaw::Exponential(_) => "exponential",
    }
}

/// Centered derivative of `f` (second-order one-sided stencils at the ends).
pub(crate) fn derivative(f: &[f64], dx: f64) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (f[i + 1] - f[i - 1]) / (2.0 * dx);
    }
    d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dx);
    d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * dx);
    d
}

/// Source term `L = (g N)' + λ N`.
pub fn rhs_l(n: &SizeDensity, lambda: f64, g: &GrowthLaw) -> Vec<f64> {
    rhs_l_values(n.values(), n.grid(), lambda, g)
}

pub(crate) fn rhs_l_values(n: &[f64], grid: &UniformGrid, lambda: f64, g: &GrowthLaw) -> Vec<f64> {
    let flux: Vec<f64> = n
        .iter()
        .enumerate()
        .map(|(i, v)| g.eval(grid.x(i)) * v)
        .collect();
    derivative(&flux, grid.dx())
        .into_iter()
        .zip(n)
        .map(|(d, v)| d + lambda * v)
        .collect()
}

/// Solves `4H(2x) - H(x) = L(x)` node by node from the end of the grid,
/// taking `H = 0` beyond it. At the origin the relation reads `3H(0) = L(0)`.
pub fn dilation_product(l: &[f64]) -> Vec<f64> {
    let n = l.len();
    let mut h = vec![0.0; n];
    for i in (1..n).rev() {
        let far = if 2 * i < n { h[2 * i] } else { 0.0 };
        h[i] = 4.0 * far - l[i];
    }
    h[0] = l[0] / 3.0;
    h
}

/// Exact inversion of the stationary balance for given `L`.
pub fn solve_dilation(l: &[f64], n: &SizeDensity) -> Result<DivisionRate> {
    if l.len() != n.values().len() {
        return Err(Error::GridMismatch);
    }
    let h = dilation_product(l);
    let (rate, _, _) = divide_product(&h, n)?;
    Ok(rate)
}

/// `B = H / N` above the division floor, zero below it, then clamped.
/// Returns the rate, the unclamped ratio and the diagnostics.
fn divide_product(h: &[f64], n: &SizeDensity) -> Result<(DivisionRate, Vec<f64>, Diagnostics)> {
    let floor = n.max_value() * DIVISION_FLOOR;
    if !(floor > 0.0) {
        return Err(Error::DegenerateDensity(
            "profile is identically zero".to_string(),
        ));
    }
    let dx = n.grid().dx();
    let mut diag = Diagnostics::default();
    let mut unclamped = Vec::with_capacity(h.len());
    let mut clamped = Vec::with_capacity(h.len());
    let mut negative = vec![0.0; h.len()];
    for (i, (&hv, &nv)) in h.iter().zip(n.values()).enumerate() {
        let b = if nv >= floor && nv > 0.0 {
            hv / nv
        } else {
            diag.floored_count += 1;
            0.0
        };
        unclamped.push(b);
        if b < 0.0 {
            diag.clamped_count += 1;
            negative[i] = -b * nv;
            clamped.push(0.0);
        } else {
            clamped.push(b);
        }
    }
    diag.clamped_mass = quadrature::trapezoid(&negative, dx);
    Ok((DivisionRate::new(*n.grid(), clamped)?, unclamped, diag))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveAlpha(alpha))
    }
}

/// Marches `(α/dy)(H_i - H_{i-1}) + 4H_i = H(y_i/2) + L(y_i/2)` upward from
/// `H_0 = 0`. Half-node values are exact at even `i` and linearly
/// interpolated at odd `i`; for `i = 1` the interpolation involves `H_1`
/// itself and is folded into the implicit update.
pub(crate) fn march_quasi_reversibility(l: &[f64], alpha: f64, dy: f64) -> Vec<f64> {
    let n = l.len();
    let a = alpha / dy;
    let mut h = vec![0.0; n];
    if n > 1 {
        let source = 0.5 * (l[0] + l[1]);
        h[1] = (a * h[0] + 0.5 * h[0] + source) / (a + 4.0 - 0.5);
    }
    for i in 2..n {
        let (hh, ll) = if i % 2 == 0 {
            (h[i / 2], l[i / 2])
        } else {
            let (lo, hi) = ((i - 1) / 2, i.div_ceil(2));
            (0.5 * (h[lo] + h[hi]), 0.5 * (l[lo] + l[hi]))
        };
        h[i] = (a * h[i - 1] + hh + ll) / (a + 4.0);
    }
    h
}

/// Exact inversion with `λ` from the moment identity at `α = 0` unless
/// overridden.
pub fn exact(
    n_eps: &SizeDensity,
    g: &GrowthLaw,
    lambda_override: Option<f64>,
) -> Result<ReconstructionResult> {
    let lambda = match lambda_override {
        Some(l) => l,
        None => regularized_eigenvalue(n_eps.values(), n_eps.grid(), 0.0, g)?,
    };
    let l = rhs_l(n_eps, lambda, g);
    let h = dilation_product(&l);
    finish(
        h,
        n_eps.clone(),
        n_eps,
        lambda,
        0.0,
        Method::Exact,
        g,
        Diagnostics::default(),
    )
}

/// Quasi-reversibility reconstruction at regularization `alpha`.
pub fn quasi_reversibility(
    n_eps: &SizeDensity,
    alpha: f64,
    g: &GrowthLaw,
    lambda_override: Option<f64>,
) -> Result<ReconstructionResult> {
    check_alpha(alpha)?;
    let lambda = match lambda_override {
        Some(l) => l,
        None => regularized_eigenvalue(n_eps.values(), n_eps.grid(), alpha, g)?,
    };
    let l = rhs_l(n_eps, lambda, g);
    let h = march_quasi_reversibility(&l, alpha, n_eps.grid().dx());
    finish(
        h,
        n_eps.clone(),
        n_eps,
        lambda,
        alpha,
        Method::QuasiReversibility,
        g,
        Diagnostics::default(),
    )
}

pub fn make_mollifier(alpha: f64) -> Result<Mollifier> {
    Mollifier::new(alpha)
}

/// Mollified profile and the mollified flux derivative `(g N) * ρ_α'`.
fn mollify(
    n_eps: &SizeDensity,
    alpha: f64,
    g: &GrowthLaw,
) -> Result<(SizeDensity, Vec<f64>, bool)> {
    let grid = n_eps.grid();
    let kernel = make_mollifier(alpha)?;
    let smooth = kernel.smooth(n_eps.values(), grid.dx());
    let flux: Vec<f64> = n_eps
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| g.eval(grid.x(i)) * v)
        .collect();
    let dflux = kernel.smooth_derivative(&flux, grid.dx());
    let smoothed = SizeDensity::new(*grid, smooth.into_iter().map(|v| v.max(0.0)).collect())?;
    if !(smoothed.max_value() > 0.0) {
        return Err(Error::DegenerateDensity(format!(
            "mollified profile vanishes at alpha = {alpha}"
        )));
    }
    Ok((smoothed, dflux, alpha > support_width(n_eps)))
}

/// Extent of the region where the profile exceeds the division floor.
fn support_width(n: &SizeDensity) -> f64 {
    let floor = n.max_value() * DIVISION_FLOOR;
    let v = n.values();
    match (
        v.iter().position(|&a| a >= floor),
        v.iter().rposition(|&a| a >= floor),
    ) {
        (Some(lo), Some(hi)) => (hi - lo) as f64 * n.grid().dx(),
        _ => 0.0,
    }
}

/// Exact inversion of mollified data; the derivative acts on the kernel.
pub fn filter_regularize(
    n_eps: &SizeDensity,
    alpha: f64,
    g: &GrowthLaw,
    lambda_override: Option<f64>,
) -> Result<ReconstructionResult> {
    check_alpha(alpha)?;
    let lambda = match lambda_override {
        Some(l) => l,
        None => regularized_eigenvalue(n_eps.values(), n_eps.grid(), alpha, g)?,
    };
    let (smoothed, dflux, oversmoothed) = mollify(n_eps, alpha, g)?;
    let l: Vec<f64> = dflux
        .iter()
        .zip(smoothed.values())
        .map(|(d, v)| d + lambda * v)
        .collect();
    let h = dilation_product(&l);
    let diag = Diagnostics {
        filter_width: Some(alpha),
        oversmoothed,
        ..Default::default()
    };
    finish(
        h,
        smoothed,
        n_eps,
        lambda,
        alpha,
        Method::Filtering,
        g,
        diag,
    )
}

/// Mollify at `alpha_filter`, then march the quasi-reversibility problem at
/// `alpha_qr` on the smoothed profile.
pub fn hybrid(
    n_eps: &SizeDensity,
    alpha_filter: f64,
    alpha_qr: f64,
    g: &GrowthLaw,
    lambda_override: Option<f64>,
) -> Result<ReconstructionResult> {
    check_alpha(alpha_filter)?;
    check_alpha(alpha_qr)?;
    let (smoothed, dflux, oversmoothed) = mollify(n_eps, alpha_filter, g)?;
    let lambda = match lambda_override {
        Some(l) => l,
        None => regularized_eigenvalue(smoothed.values(), smoothed.grid(), alpha_qr, g)?,
    };
    let l: Vec<f64> = dflux
        .iter()
        .zip(smoothed.values())
        .map(|(d, v)| d + lambda * v)
        .collect();
    let h = march_quasi_reversibility(&l, alpha_qr, n_eps.grid().dx());
    let diag = Diagnostics {
        filter_width: Some(alpha_filter),
        oversmoothed,
        ..Default::default()
    };
    finish(
        h,
        smoothed,
        n_eps,
        lambda,
        alpha_qr,
        Method::Hybrid,
        g,
        diag,
    )
}

#[allow(clippy::too_many_arguments)]
fn finish(
    h: Vec<f64>,
    n_used: SizeDensity,
    n_eps: &SizeDensity,
    lambda: f64,
    alpha: f64,
    method: Method,
    g: &GrowthLaw,
    mut diag: Diagnostics,
) -> Result<ReconstructionResult> {
    let (rate, unclamped, d) = divide_product(&h, &n_used)?;
    diag.clamped_count = d.clamped_count;
    diag.clamped_mass = d.clamped_mass;
    diag.floored_count = d.floored_count;
    // measured on the unfiltered data with the unclamped rate
    let residual = regselect::residual_values(&unclamped, n_eps, lambda, g)?;
    Ok(ReconstructionResult {
        rate,
        unclamped,
        product: h,
        n_used,
        lambda_used: lambda,
        alpha,
        method,
        residual,
        diagnostics: diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> UniformGrid {
        UniformGrid::new(1.0 / 256.0, 2049).unwrap()
    }

    fn bump(grid: &UniformGrid) -> SizeDensity {
        SizeDensity::normalized(
            *grid,
            grid.sample(|x| x * x * (-(x - 2.0) * (x - 2.0)).exp()),
        )
        .unwrap()
    }

    #[test]
    fn plateau_has_zero_source() {
        let g = grid();
        let n =
            SizeDensity::new(g, g.sample(|x| (x / 0.5).min(1.0).min((8.0 - x).max(0.0)))).unwrap();
        let l = rhs_l(&n, 0.0, &GrowthLaw::Linear(1.0));
        assert!(l[200..1500].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn exponential_source_matches_analytic_derivative() {
        let g = grid();
        let n = bump(&g);
        let c = n.values()[512] / (2.0f64 * 2.0 * 1.0);
        let kappa = 0.7;
        let lambda = 0.3;
        let l = rhs_l(&n, lambda, &GrowthLaw::Exponential(kappa));
        // N = c x² e^{-(x-2)²}, (κ x N)' = κ c (3x² - 2x³(x-2)) e^{-(x-2)²}
        let exact: Vec<f64> = g.sample(|x| {
            let e = (-(x - 2.0) * (x - 2.0)).exp();
            kappa * c * (3.0 * x * x - 2.0 * x.powi(3) * (x - 2.0)) * e + lambda * c * x * x * e
        });
        let diff: Vec<f64> = l.iter().zip(&exact).map(|(a, b)| a - b).collect();
        let dx = g.dx();
        assert!(
            quadrature::l2_norm(&diff, dx) <= 10.0 * dx * dx,
            "{}",
            quadrature::l2_norm(&diff, dx)
        );
    }

    #[test]
    fn zero_forcing_gives_zero_rate() {
        let g = grid();
        let n = bump(&g);
        let b = solve_dilation(&vec![0.0; g.n_points()], &n).unwrap();
        assert!(b.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn solve_dilation_rejects_length_mismatch() {
        let g = grid();
        assert_eq!(
            solve_dilation(&[0.0; 3], &bump(&g)).unwrap_err(),
            Error::GridMismatch
        );
    }

    #[test]
    fn nonpositive_alpha_is_rejected() {
        let g = grid();
        let n = bump(&g);
        let law = GrowthLaw::Linear(1.0);
        assert_eq!(
            quasi_reversibility(&n, 0.0, &law, None).unwrap_err(),
            Error::NonPositiveAlpha(0.0)
        );
        assert!(filter_regularize(&n, -1.0, &law, None).is_err());
        assert!(hybrid(&n, 0.1, 0.0, &law, None).is_err());
        assert!(make_mollifier(0.0).is_err());
    }

    #[test]
    fn dilation_identity_holds_exactly() {
        let g = grid();
        let n = bump(&g);
        let l = rhs_l(&n, 0.5, &GrowthLaw::Linear(1.0));
        let h = dilation_product(&l);
        let len = h.len();
        for i in 1..len {
            let far = if 2 * i < len { h[2 * i] } else { 0.0 };
            let scale = l.iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!((4.0 * far - h[i] - l[i]).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn floor_and_clamp_are_reported() {
        let g = UniformGrid::new(1.0, 5).unwrap();
        let n = SizeDensity::new(g, vec![0.0, 1e-6, 1.0, 1.0, 0.5]).unwrap();
        let h = vec![0.0, 1.0, -0.5, 2.0, 1.0];
        let (rate, unclamped, diag) = divide_product(&h, &n).unwrap();
        assert_eq!(diag.floored_count, 2);
        assert_eq!(diag.clamped_count, 1);
        assert_eq!(rate.values(), &[0.0, 0.0, 0.0, 2.0, 2.0]);
        assert_eq!(unclamped[2], -0.5);
        assert!((diag.clamped_mass - 0.5).abs() < 1e-12);
    }

    #[test]
    fn oversmoothing_is_flagged() {
        let g = grid();
        let n = SizeDensity::normalized(g, g.sample(|x| ((x - 1.0) * (1.2 - x)).max(0.0))).unwrap();
        let r = filter_regularize(&n, 1.0, &GrowthLaw::Linear(1.0), None).unwrap();
        assert!(r.diagnostics.oversmoothed);
        let r = filter_regularize(&n, 0.05, &GrowthLaw::Linear(1.0), None).unwrap();
        assert!(!r.diagnostics.oversmoothed);
    }

    #[test]
    fn method_names_round_trip() {
        for m in [
            Method::Exact,
            Method::QuasiReversibility,
            Method::Filtering,
            Method::Hybrid,
        ] {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("tikhonov".parse::<Method>().is_err());
    }

    #[test]
    fn csv_has_header_and_footer() {
        let g = grid();
        let n = bump(&g);
        let law = GrowthLaw::Linear(1.0);
        let r = quasi_reversibility(&n, 0.1, &law, None).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf, &law).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,B,N_used,H\n"));
        for key in ["# lambda=", "# alpha=0.1", "# residual=", "# method=qr"] {
            assert!(text.contains(key), "{key}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn exact_solve_is_scale_equivariant(c in 0.01f64..100.0, lambda in 0.1f64..2.0) {
            let g = grid();
            let n = bump(&g);
            let law = GrowthLaw::Linear(1.0);
            let scaled = n.scaled(c).unwrap();
            let b1 = solve_dilation(&rhs_l(&n, lambda, &law), &n).unwrap();
            let b2 = solve_dilation(&rhs_l(&scaled, lambda, &law), &scaled).unwrap();
            for (a, b) in b1.values().iter().zip(b2.values()) {
                prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-300) + 1e-300);
            }
        }

        #[test]
        fn quasi_reversibility_is_scale_equivariant(c in 0.01f64..100.0, override_lambda in proptest::bool::ANY) {
            let g = grid();
            let n = bump(&g);
            let law = GrowthLaw::Linear(1.0);
            let lam = if override_lambda { Some(0.6) } else { None };
            let r1 = quasi_reversibility(&n, 0.1, &law, lam).unwrap();
            let r2 = quasi_reversibility(&n.scaled(c).unwrap(), 0.1, &law, lam).unwrap();
            for (a, b) in r1.rate.values().iter().zip(r2.rate.values()) {
                prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-12));
            }
        }
    }
}
