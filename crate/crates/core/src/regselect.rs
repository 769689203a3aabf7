//! Residuals, α sweeps and regularization-parameter selection.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inverse::{self, Method, ReconstructionResult};
use crate::model::{DivisionRate, GrowthLaw, SizeDensity};
use crate::quadrature;

/// Relative spread below which the residual/√α curve counts as flat.
pub const FLATNESS_THRESHOLD: f64 = 0.05;

/// Trapezoid L² norm of `4B(2x)N(2x) - B(x)N(x) - [(gN)' + λN]`.
pub fn residual(b: &DivisionRate, n: &SizeDensity, lambda: f64, g: &GrowthLaw) -> Result<f64> {
    n.grid().ensure_matches(b.grid())?;
    residual_values(b.values(), n, lambda, g)
}

/// Same as [`residual`] for a rate that may still carry negative values.
pub fn residual_values(b: &[f64], n: &SizeDensity, lambda: f64, g: &GrowthLaw) -> Result<f64> {
    if b.len() != n.values().len() {
        return Err(Error::GridMismatch);
    }
    let h: Vec<f64> = b.iter().zip(n.values()).map(|(b, n)| b * n).collect();
    let l = inverse::rhs_l(n, lambda, g);
    Ok(residual_of_product(&h, &l, n.grid().dx()))
}

/// Trapezoid L² norm of `4H(2x) - H(x) - L(x)`, with `H = 0` beyond the grid.
pub fn residual_of_product(h: &[f64], l: &[f64], dx: f64) -> f64 {
    let n = h.len();
    let defect: Vec<f64> = (0..n)
        .map(|i| {
            let far = if 2 * i < n { h[2 * i] } else { 0.0 };
            4.0 * far - h[i] - l[i]
        })
        .collect();
    quadrature::l2_norm(&defect, dx)
}

/// Regularization method as swept over α. For the hybrid method α is the
/// quasi-reversibility parameter and the filter width stays fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepMethod {
    Exact,
    QuasiReversibility,
    Filtering,
    Hybrid { alpha_filter: f64 },
}

impl SweepMethod {
    pub fn method(&self) -> Method {
        match self {
            SweepMethod::Exact => Method::Exact,
            SweepMethod::QuasiReversibility => Method::QuasiReversibility,
            SweepMethod::Filtering => Method::Filtering,
            SweepMethod::Hybrid { .. } => Method::Hybrid,
        }
    }

    pub fn run(
        &self,
        n_eps: &SizeDensity,
        alpha: f64,
        g: &GrowthLaw,
        lambda_override: Option<f64>,
    ) -> Result<ReconstructionResult> {
        match *self {
            SweepMethod::Exact => inverse::exact(n_eps, g, lambda_override),
            SweepMethod::QuasiReversibility => {
                inverse::quasi_reversibility(n_eps, alpha, g, lambda_override)
            }
            SweepMethod::Filtering => inverse::filter_regularize(n_eps, alpha, g, lambda_override),
            SweepMethod::Hybrid { alpha_filter } => {
                inverse::hybrid(n_eps, alpha_filter, alpha, g, lambda_override)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub alpha: f64,
    /// The reconstruction, or the reason it failed.
    pub outcome: std::result::Result<ReconstructionResult, String>,
}

impl SweepEntry {
    pub fn residual(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|r| r.residual)
    }

    pub fn ratio(&self) -> Option<f64> {
        self.residual().map(|r| r / self.alpha.sqrt())
    }

    /// Trapezoid L² norm of `B N_used`.
    pub fn solution_norm(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(solution_norm)
    }
}

pub fn solution_norm(r: &ReconstructionResult) -> f64 {
    let bn: Vec<f64> = r
        .rate
        .values()
        .iter()
        .zip(r.n_used.values())
        .map(|(b, n)| b * n)
        .collect();
    quadrature::l2_norm(&bn, r.rate.grid().dx())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSweep {
    pub method: Method,
    /// Sorted ascending.
    pub entries: Vec<SweepEntry>,
}

impl AlphaSweep {
    pub fn alphas(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.alpha).collect()
    }

    pub fn residuals(&self) -> Vec<Option<f64>> {
        self.entries.iter().map(SweepEntry::residual).collect()
    }

    pub fn ratios(&self) -> Vec<Option<f64>> {
        self.entries.iter().map(SweepEntry::ratio).collect()
    }

    pub fn solution_norms(&self) -> Vec<Option<f64>> {
        self.entries.iter().map(SweepEntry::solution_norm).collect()
    }

    pub fn get(&self, alpha: f64) -> Option<&ReconstructionResult> {
        self.entries
            .iter()
            .find(|e| e.alpha == alpha)
            .and_then(|e| e.outcome.as_ref().ok())
    }

    /// CSV `alpha,residual,ratio,solution_norm`; failed entries leave the
    /// numeric fields empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "alpha,residual,ratio,solution_norm")?;
        for e in &self.entries {
            let f = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{}",
                e.alpha,
                f(e.residual()),
                f(e.ratio()),
                f(e.solution_norm())
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

/// Runs `method` at every α (in parallel on the current rayon pool).
pub fn sweep_alpha(
    method: SweepMethod,
    n_eps: &SizeDensity,
    alphas: &[f64],
    g: &GrowthLaw,
    lambda_override: Option<f64>,
) -> Result<AlphaSweep> {
    sweep_alpha_with(
        method,
        n_eps,
        alphas,
        g,
        lambda_override,
        Execution::Parallel,
    )
}

pub fn sweep_alpha_with(
    method: SweepMethod,
    n_eps: &SizeDensity,
    alphas: &[f64],
    g: &GrowthLaw,
    lambda_override: Option<f64>,
    execution: Execution,
) -> Result<AlphaSweep> {
    if alphas.is_empty() {
        return Err(Error::EmptySweep);
    }
    let mut sorted = alphas.to_vec();
    if let Some(bad) = sorted.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(Error::NonPositiveAlpha(*bad));
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite alphas"));
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput("alphas must be distinct".to_string()));
    }
    let run = |&alpha: &f64| SweepEntry {
        alpha,
        outcome: method
            .run(n_eps, alpha, g, lambda_override)
            .map_err(|e| e.to_string()),
    };
    let entries = match execution {
        Execution::Sequential => sorted.iter().map(run).collect(),
        Execution::Parallel => sorted.par_iter().map(run).collect(),
    };
    Ok(AlphaSweep {
        method: method.method(),
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioChoice {
    pub alpha: f64,
    /// The ratio at every sampled neighbor is within 5% of the minimum.
    pub flat: bool,
}

/// α minimizing residual/√α over the successful entries.
pub fn select_alpha_ratio(sweep: &AlphaSweep) -> Result<RatioChoice> {
    let points: Vec<(f64, f64)> = sweep
        .entries
        .iter()
        .filter_map(|e| e.ratio().map(|r| (e.alpha, r)))
        .collect();
    if points.is_empty() {
        return Err(Error::EmptySweep);
    }
    let (best, &(alpha, min)) = points
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).expect("finite ratios"))
        .expect("nonempty");
    let neighbors: Vec<f64> = [best.checked_sub(1), Some(best + 1)]
        .into_iter()
        .flatten()
        .filter_map(|k| points.get(k).map(|p| p.1))
        .collect();
    let flat = !neighbors.is_empty()
        && neighbors
            .iter()
            .all(|&r| (r - min).abs() < FLATNESS_THRESHOLD * min.abs());
    Ok(RatioChoice { alpha, flat })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcurveChoice {
    pub alpha: f64,
    /// No interior point bends toward the corner; the middle α is returned.
    pub degenerate: bool,
}

/// Signed curvature of the circle through three points; positive for a
/// counter-clockwise turn.
fn menger_curvature(p: (f64, f64), q: (f64, f64), r: (f64, f64)) -> f64 {
    let cross = (q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0);
    let d = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let denom = d(p, q) * d(q, r) * d(p, r);
    if denom == 0.0 {
        0.0
    } else {
        2.0 * cross / denom
    }
}

/// α at the point of maximum curvature of `(log residual, log norm)`.
///
/// With α increasing, the residual grows and the solution norm shrinks, so
/// the corner is a counter-clockwise turn.
pub fn select_alpha_lcurve(sweep: &AlphaSweep, solution_norms: &[f64]) -> Result<LcurveChoice> {
    if solution_norms.len() != sweep.entries.len() {
        return Err(Error::InvalidInput(format!(
            "{} solution norms for {} sweep entries",
            solution_norms.len(),
            sweep.entries.len()
        )));
    }
    let points: Vec<(f64, (f64, f64))> = sweep
        .entries
        .iter()
        .zip(solution_norms)
        .filter_map(|(e, &eta)| {
            let rho = e.residual()?;
            (rho > 0.0 && eta > 0.0).then(|| (e.alpha, (rho.ln(), eta.ln())))
        })
        .collect();
    if points.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            got: points.len(),
        });
    }
    let curvatures: Vec<f64> = points
        .windows(3)
        .map(|w| menger_curvature(w[0].1, w[1].1, w[2].1))
        .collect();
    let (k, &kmax) = curvatures
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite curvature"))
        .expect("nonempty");
    if !(kmax > 1e-12) {
        return Ok(LcurveChoice {
            alpha: points[points.len() / 2].0,
            degenerate: true,
        });
    }
    Ok(LcurveChoice {
        alpha: points[k + 1].0,
        degenerate: false,
    })
}
