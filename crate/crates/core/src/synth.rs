//! Oracle division rates and synthetic histograms sampled from their
//! stationary profiles.
//!
//! Oracles are defined for unit linear growth. A [`PhysicalScale`] maps a
//! dimensionless oracle to a dataset with a prescribed doubling time and
//! mean volume: volumes scale by `c = V_b / ∫xN`, rates by `s = λ / λ_d`,
//! and the growth speed becomes `c s`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::forward::{eigenpair_solve_from, EigenReport, SolverConfig};
use crate::ingest::{add_noise, NoiseSpec, RawHistogram};
use crate::model::{
    moment, DatasetMeta, DivisionRate, EigenPair, GrowthLaw, SizeDensity, UniformGrid,
};

/// Default fraction of the peak below which no channel is recorded.
pub const CHANNEL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleRate {
    /// `B ≡ b`.
    Constant(f64),
    /// `0.4 + 2.5 exp(-((x - 2) / 0.5)²)`, peaked at `x = 2`.
    Bump,
    /// `2x² / (1 + x²)`, rising to a plateau at 2.
    Rational,
}

impl OracleRate {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            OracleRate::Constant(b) => b,
            OracleRate::Bump => 0.4 + 2.5 * (-((x - 2.0) / 0.5).powi(2)).exp(),
            OracleRate::Rational => 2.0 * x * x / (1.0 + x * x),
        }
    }

    /// Location of the maximum, where there is one.
    pub fn peak(&self) -> Option<f64> {
        match self {
            OracleRate::Bump => Some(2.0),
            _ => None,
        }
    }

    /// Domain long enough for the stationary profile to decay below 1e-6 of
    /// its peak.
    pub fn default_x_max(&self) -> f64 {
        match *self {
            OracleRate::Constant(b) => (12.0 / b).clamp(8.0, 24.0),
            OracleRate::Bump => 8.0,
            OracleRate::Rational => 16.0,
        }
    }

    pub fn grid(&self, dx: f64) -> Result<UniformGrid> {
        let n = (self.default_x_max() / dx).round() as usize + 1;
        UniformGrid::new(dx, n)
    }

    pub fn sample(&self, grid: &UniformGrid) -> Result<DivisionRate> {
        DivisionRate::from_fn(*grid, |x| self.eval(x))
    }
}

impl fmt::Display for OracleRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleRate::Constant(b) => write!(f, "constant:{b}"),
            OracleRate::Bump => f.write_str("bump"),
            OracleRate::Rational => f.write_str("rational"),
        }
    }
}

impl FromStr for OracleRate {
    type Err = Error;

    /// `constant`, `constant:<b>`, `bump` or `rational`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("constant", b)) => {
                let b: f64 = b
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad constant rate `{b}`")))?;
                if !(b > 0.0 && b.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "constant rate must be positive, got {b}"
                    )));
                }
                Ok(OracleRate::Constant(b))
            }
            None if s == "constant" => Ok(OracleRate::Constant(1.0)),
            None if s == "bump" => Ok(OracleRate::Bump),
            None if s == "rational" => Ok(OracleRate::Rational),
            _ => Err(Error::InvalidInput(format!("unknown oracle rate `{s}`"))),
        }
    }
}

/// Stationary pair of an oracle under unit linear growth.
pub fn oracle_eigenpair(
    rate: &OracleRate,
    grid: &UniformGrid,
) -> Result<(DivisionRate, EigenPair, EigenReport)> {
    let b = rate.sample(grid)?;
    let g = GrowthLaw::Linear(1.0);
    let cfg = SolverConfig::stable(grid, &g, 1.0);
    let (pair, report) = eigenpair_solve_from(None, &b, &g, &cfg)?;
    Ok((b, pair, report))
}

/// Target units for a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalScale {
    /// Minutes.
    pub doubling_time: f64,
    /// Mean volume `∫xN`, μm³.
    pub mean_volume: f64,
}

/// A dimensionless stationary state mapped to physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledOracle {
    pub rate: DivisionRate,
    pub density: SizeDensity,
    pub malthus: f64,
    pub growth: GrowthLaw,
}

/// Rescales `(B, N, λ)` obtained with unit linear growth.
pub fn rescale(
    b: &DivisionRate,
    pair: &EigenPair,
    scale: Option<&PhysicalScale>,
) -> Result<ScaledOracle> {
    let Some(scale) = scale else {
        return Ok(ScaledOracle {
            rate: b.clone(),
            density: pair.density.clone(),
            malthus: pair.malthus,
            growth: GrowthLaw::Linear(1.0),
        });
    };
    if !(scale.doubling_time > 0.0 && scale.mean_volume > 0.0) {
        return Err(Error::InvalidInput(
            "doubling time and mean volume must be positive".to_string(),
        ));
    }
    let mean = moment(&pair.density, 1);
    let c = scale.mean_volume / mean;
    let lambda = std::f64::consts::LN_2 / scale.doubling_time;
    let s = lambda / pair.malthus;
    let grid = pair.density.grid();
    let scaled = UniformGrid::new(c * grid.dx(), grid.n_points())?;
    let rate = DivisionRate::new(scaled, b.values().iter().map(|v| v * s).collect())?;
    let density = SizeDensity::normalized(
        scaled,
        pair.density.values().iter().map(|v| v / c).collect(),
    )?;
    Ok(ScaledOracle {
        rate,
        density,
        malthus: lambda,
        growth: GrowthLaw::linear(c * s)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub channels: usize,
    /// Channels cover the nodes where the clean profile is at least this
    /// fraction of its peak.
    pub floor: f64,
    pub noise: Option<NoiseSpec>,
    pub label: String,
}

impl SynthSpec {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            floor: CHANNEL_FLOOR,
            noise: None,
            label: String::new(),
        }
    }
}

/// Histogram with one channel per selected grid node.
///
/// Channels are spread evenly over the nodes where the clean profile is at
/// least `spec.floor` of its maximum; the optional noise is applied to the
/// full profile before sampling.
pub fn sample_histogram(
    oracle: &ScaledOracle,
    spec: &SynthSpec,
    scale: Option<&PhysicalScale>,
) -> Result<RawHistogram> {
    if spec.channels < 4 {
        return Err(Error::TooFewPoints {
            needed: 4,
            got: spec.channels,
        });
    }
    let clean = &oracle.density;
    if !(spec.floor > 0.0 && spec.floor < 1.0) {
        return Err(Error::InvalidInput(format!(
            "channel floor must lie in (0, 1), got {}",
            spec.floor
        )));
    }
    let floor = spec.floor * clean.max_value();
    let v = clean.values();
    let lo = v.iter().position(|&a| a >= floor).unwrap_or(0).max(1);
    let hi = v.iter().rposition(|&a| a >= floor).unwrap_or(0);
    if hi < lo + spec.channels - 1 {
        return Err(Error::InvalidInput(format!(
            "{} channels requested but the profile spans only {} nodes",
            spec.channels,
            hi.saturating_sub(lo) + 1
        )));
    }
    let sampled = match &spec.noise {
        Some(noise) => add_noise(clean, noise)?.density,
        None => clean.clone(),
    };
    let grid = clean.grid();
    let span = (hi - lo) as f64;
    let last = (spec.channels - 1) as f64;
    let points = (0..spec.channels)
        .map(|j| {
            let i = lo + (j as f64 * span / last).round() as usize;
            (grid.x(i), sampled.values()[i])
        })
        .collect();
    let meta = DatasetMeta {
        doubling_time: scale.map(|s| s.doubling_time),
        mean_volume: scale.map(|s| s.mean_volume),
        diameter_sigma: None,
        label: spec.label.clone(),
    };
    RawHistogram::new(points, meta)
}
