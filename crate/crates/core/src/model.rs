//! Shared domain types and the closed-form scalar quantities of the
//! growth-fragmentation model.
//!
//! Every profile lives on a [`UniformGrid`] anchored at the origin, so that
//! the dilation `x ↦ 2x` maps node `i` onto node `2i` exactly. Volumes are in
//! μm³ and times in minutes whenever real data is involved.

use crate::error::{Error, Result};
use crate::quadrature;

/// Relative tolerance for the normalization invariant of [`SizeDensity`].
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Uniform volume axis `x_i = i * dx`, `i = 0..n_points`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid {
    dx: f64,
    n_points: usize,
}

impl UniformGrid {
    pub fn new(dx: f64, n_points: usize) -> Result<Self> {
        if !(dx.is_finite() && dx > 0.0) {
            return Err(Error::InvalidGrid(format!("dx must be positive, got {dx}")));
        }
        if n_points < 4 {
            return Err(Error::InvalidGrid(format!(
                "need at least 4 nodes, got {n_points}"
            )));
        }
        Ok(Self { dx, n_points })
    }

    /// Grid with `n_points` nodes spanning `[0, x_max]`.
    pub fn spanning(x_max: f64, n_points: usize) -> Result<Self> {
        if n_points < 4 {
            return Err(Error::InvalidGrid(format!(
                "need at least 4 nodes, got {n_points}"
            )));
        }
        Self::new(x_max / (n_points - 1) as f64, n_points)
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.n_points - 1)
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |i| self.x(i))
    }

    pub fn sample<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        self.nodes().map(f).collect()
    }

    /// Two grids are interchangeable when they have the same node count and
    /// spacing (up to rounding in the last few bits).
    pub fn matches(&self, other: &UniformGrid) -> bool {
        self.n_points == other.n_points
            && (self.dx - other.dx).abs() <= 1e-12 * self.dx.max(other.dx)
    }

    pub fn ensure_matches(&self, other: &UniformGrid) -> Result<()> {
        if self.matches(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// Sampled cell-size density `N(x)` (or a transient `n(t, x)`).
#[derive(Debug, Clone, PartialEq)]
pub struct SizeDensity {
    grid: UniformGrid,
    values: Vec<f64>,
    normalized: bool,
}

impl SizeDensity {
    /// Wraps raw samples without rescaling. Values must be finite and
    /// nonnegative, and the origin sample must vanish.
    pub fn new(grid: UniformGrid, values: Vec<f64>) -> Result<Self> {
        validate_profile(&grid, &values)?;
        if values[0] != 0.0 {
            return Err(Error::InvalidInput(
                "density must vanish at x = 0".to_string(),
            ));
        }
        let total = quadrature::trapezoid(&values, grid.dx);
        let normalized = (total - 1.0).abs() <= NORMALIZATION_TOL;
        Ok(Self {
            grid,
            values,
            normalized,
        })
    }

    /// Rescales the samples to unit mass.
    pub fn normalized(grid: UniformGrid, values: Vec<f64>) -> Result<Self> {
        let mut d = Self::new(grid, values)?;
        d.normalize()?;
        Ok(d)
    }

    pub fn normalize(&mut self) -> Result<()> {
        let total = quadrature::trapezoid(&self.values, self.grid.dx);
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::DegenerateDensity(format!(
                "cannot normalize a profile with mass {total}"
            )));
        }
        self.values.iter_mut().for_each(|v| *v /= total);
        self.normalized = true;
        Ok(())
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Returns `c * self`; a positive factor keeps every invariant.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "scale must be positive, got {c}"
            )));
        }
        Self::new(self.grid, self.values.iter().map(|v| v * c).collect())
    }
}

/// Sampled division rate `B(x) ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DivisionRate {
    grid: UniformGrid,
    values: Vec<f64>,
}

impl DivisionRate {
    pub fn new(grid: UniformGrid, values: Vec<f64>) -> Result<Self> {
        validate_profile(&grid, &values)?;
        Ok(Self { grid, values })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: UniformGrid, f: F) -> Result<Self> {
        Self::new(grid, grid.sample(f))
    }

    pub fn constant(grid: UniformGrid, b: f64) -> Result<Self> {
        Self::from_fn(grid, |_| b)
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_identically_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

fn validate_profile(grid: &UniformGrid, values: &[f64]) -> Result<()> {
    if values.len() != grid.n_points {
        return Err(Error::GridMismatch);
    }
    if let Some((i, v)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
    {
        return Err(Error::InvalidInput(format!(
            "sample {i} is {v}; profiles must be finite and nonnegative"
        )));
    }
    Ok(())
}

/// Individual growth speed `g(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GrowthLaw {
    /// `g(x) = g0`.
    Linear(f64),
    /// `g(x) = kappa * x`.
    Exponential(f64),
}

/// Which family of growth law to build when only the kind is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrowthKind {
    Linear,
    Exponential,
}

impl GrowthLaw {
    pub fn linear(g0: f64) -> Result<Self> {
        Self::checked(GrowthLaw::Linear(g0))
    }

    pub fn exponential(kappa: f64) -> Result<Self> {
        Self::checked(GrowthLaw::Exponential(kappa))
    }

    pub fn of_kind(kind: GrowthKind, coefficient: f64) -> Result<Self> {
        match kind {
            GrowthKind::Linear => Self::linear(coefficient),
            GrowthKind::Exponential => Self::exponential(coefficient),
        }
    }

    fn checked(law: GrowthLaw) -> Result<Self> {
        let c = law.coefficient();
        if c.is_finite() && c > 0.0 {
            Ok(law)
        } else {
            Err(Error::InvalidInput(format!(
                "growth coefficient must be positive, got {c}"
            )))
        }
    }

    pub fn kind(&self) -> GrowthKind {
        match self {
            GrowthLaw::Linear(_) => GrowthKind::Linear,
            GrowthLaw::Exponential(_) => GrowthKind::Exponential,
        }
    }

    pub fn coefficient(&self) -> f64 {
        match *self {
            GrowthLaw::Linear(c) | GrowthLaw::Exponential(c) => c,
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            GrowthLaw::Linear(g0) => g0,
            GrowthLaw::Exponential(kappa) => kappa * x,
        }
    }

    pub fn sample(&self, grid: &UniformGrid) -> Vec<f64> {
        grid.sample(|x| self.eval(x))
    }

    /// Largest growth speed over the grid.
    pub fn max_on(&self, grid: &UniformGrid) -> f64 {
        match *self {
            GrowthLaw::Linear(g0) => g0,
            GrowthLaw::Exponential(kappa) => kappa * grid.x_max(),
        }
    }
}

/// Principal eigenpair `(N, λ₀)` of the stationary problem.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub density: SizeDensity,
    pub malthus: f64,
}

/// Metadata attached to a measured or synthetic histogram.
///
/// The numeric fields are optional because real files may omit them; when
/// present they must be positive (`diameter_sigma` nonnegative).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetMeta {
    /// Population doubling time `T₀` in minutes.
    pub doubling_time: Option<f64>,
    /// Mean cell volume `V_b` in μm³.
    pub mean_volume: Option<f64>,
    /// Instrument resolution on the cell diameter, μm.
    pub diameter_sigma: Option<f64>,
    pub label: String,
}

impl DatasetMeta {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("doubling_time", self.doubling_time),
            ("mean_volume", self.mean_volume),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "{name} must be positive, got {v}"
                    )));
                }
            }
        }
        if let Some(s) = self.diameter_sigma {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "diameter_sigma must be nonnegative, got {s}"
                )));
            }
        }
        Ok(())
    }

    pub fn require_doubling_time(&self) -> Result<f64> {
        self.doubling_time
            .ok_or_else(|| Error::MissingMetadata("doubling_time_min".to_string()))
    }
}

/// One recorded time slice of a transient run.
#[derive(Debug, Clone, PartialEq)]
pub struct TransientState {
    pub time: f64,
    pub density: SizeDensity,
    /// Total cell number `∫ n dx`.
    pub total_number: f64,
    /// Total biomass `∫ x n dx`.
    pub total_biomass: f64,
}

impl TransientState {
    pub fn new(time: f64, density: SizeDensity) -> Self {
        let total_number = moment(&density, 0);
        let total_biomass = moment(&density, 1);
        Self {
            time,
            density,
            total_number,
            total_biomass,
        }
    }
}

/// Trapezoid approximation of `∫ x^k d(x) dx`.
pub fn moment(d: &SizeDensity, k: u32) -> f64 {
    quadrature::trapezoid_moment(&d.values, d.grid.dx, k)
}

/// `∫ g N dx` on the grid.
pub fn growth_moment(n: &[f64], grid: &UniformGrid, g: &GrowthLaw) -> f64 {
    match *g {
        GrowthLaw::Linear(g0) => g0 * quadrature::trapezoid_moment(n, grid.dx, 0),
        GrowthLaw::Exponential(kappa) => kappa * quadrature::trapezoid_moment(n, grid.dx, 1),
    }
}

/// Malthus parameter from the stationary profile: `∫ g N / ∫ x N`.
pub fn malthus_from_density(n: &SizeDensity, g: &GrowthLaw) -> Result<f64> {
    let m1 = moment(n, 1);
    if !(m1 > 0.0) {
        return Err(Error::DegenerateDensity(format!("first moment is {m1}")));
    }
    Ok(match *g {
        GrowthLaw::Linear(g0) => g0 * moment(n, 0) / m1,
        // the moments cancel identically
        GrowthLaw::Exponential(kappa) => kappa,
    })
}

/// Regularized eigenvalue paired with the quasi-reversibility problem for
/// unit linear growth: `∫N / (∫xN + (α/4) ∫N)`.
pub fn malthus_regularized(n_eps: &SizeDensity, alpha: f64) -> Result<f64> {
    regularized_eigenvalue(n_eps.values(), n_eps.grid(), alpha, &GrowthLaw::Linear(1.0))
}

/// Growth-law generalization of [`malthus_regularized`]:
/// `∫gN / (∫xN + (α/4) ∫N)`. Integrating the regularized marching equation
/// against `1` and `x` gives this value for any `g`; it reduces to the unit
/// linear case when `g ≡ 1`.
pub fn regularized_eigenvalue(
    n: &[f64],
    grid: &UniformGrid,
    alpha: f64,
    g: &GrowthLaw,
) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "alpha must be nonnegative, got {alpha}"
        )));
    }
    let m0 = quadrature::trapezoid_moment(n, grid.dx, 0);
    let m1 = quadrature::trapezoid_moment(n, grid.dx, 1);
    let denom = m1 + 0.25 * alpha * m0;
    if !(denom > 0.0) {
        return Err(Error::DegenerateDensity(format!("denominator is {denom}")));
    }
    Ok(growth_moment(n, grid, g) / denom)
}

/// `λ₀ = ln 2 / T₀` together with the growth law that makes the stationary
/// identity `λ₀ = ∫gN / ∫xN` hold for the observed profile.
pub fn growth_constant_from_doubling(
    meta: &DatasetMeta,
    n_eps: &SizeDensity,
    kind: GrowthKind,
) -> Result<(f64, GrowthLaw)> {
    let t0 = meta.require_doubling_time()?;
    if !(t0 > 0.0 && t0.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "doubling time must be positive, got {t0}"
        )));
    }
    let lambda0 = std::f64::consts::LN_2 / t0;
    let law = match kind {
        GrowthKind::Linear => {
            let m0 = moment(n_eps, 0);
            let m1 = moment(n_eps, 1);
            if !(m0 > 0.0 && m1 > 0.0) {
                return Err(Error::DegenerateDensity(format!(
                    "moments are ({m0}, {m1})"
                )));
            }
            GrowthLaw::linear(lambda0 * m1 / m0)?
        }
        GrowthKind::Exponential => GrowthLaw::exponential(lambda0)?,
    };
    Ok((lambda0, law))
}

/// Volume standard deviation induced by a diameter resolution `σ` for
/// spherical cells: `(π/6) √15 σ³`.
pub fn volume_sigma(diameter_sigma: f64) -> f64 {
    std::f64::consts::PI / 6.0 * 15f64.sqrt() * diameter_sigma.powi(3)
}
