#![allow(dead_code)]

use std::sync::OnceLock;

use divrate::ingest::{complete_boundaries, to_uniform_density, NoiseSpec};
use divrate::model::{DivisionRate, EigenPair, SizeDensity, UniformGrid};
use divrate::synth::{oracle_eigenpair, rescale, sample_histogram, OracleRate, SynthSpec};

pub const FINE_DX: f64 = 1.0 / 1024.0;
pub const RESOLVED: f64 = 0.01;

pub struct Oracle {
    pub rate: OracleRate,
    pub b: DivisionRate,
    pub pair: EigenPair,
}

impl Oracle {
    pub fn new(rate: OracleRate, dx: f64) -> Self {
        let grid = rate.grid(dx).unwrap();
        let (b, pair, _) = oracle_eigenpair(&rate, &grid).unwrap();
        Self { rate, b, pair }
    }

    pub fn n(&self) -> &SizeDensity {
        &self.pair.density
    }

    pub fn grid(&self) -> &UniformGrid {
        self.b.grid()
    }

    /// Noisy profile through the measurement pipeline: perturbed profile,
    /// 64-channel histogram, spline back onto the grid.
    pub fn measured(&self, epsilon: f64, seed: u64) -> SizeDensity {
        let scaled = rescale(&self.b, &self.pair, None).unwrap();
        let mut spec = SynthSpec::new(64);
        spec.noise = Some(NoiseSpec::multiplicative(epsilon, seed));
        let h = sample_histogram(&scaled, &spec, None).unwrap();
        let h = complete_boundaries(&h, self.grid().x_max()).unwrap();
        to_uniform_density(&h, self.grid()).unwrap().0
    }
}

pub fn bump_fine() -> &'static Oracle {
    static CELL: OnceLock<Oracle> = OnceLock::new();
    CELL.get_or_init(|| Oracle::new(OracleRate::Bump, FINE_DX))
}

/// Bump oracle on the default 1025-node grid.
pub fn bump_coarse() -> &'static Oracle {
    static CELL: OnceLock<Oracle> = OnceLock::new();
    CELL.get_or_init(|| Oracle::new(OracleRate::Bump, 1.0 / 128.0))
}

pub fn unit_fine() -> &'static Oracle {
    static CELL: OnceLock<Oracle> = OnceLock::new();
    CELL.get_or_init(|| Oracle::new(OracleRate::Constant(1.0), FINE_DX))
}

pub fn rational_fine() -> &'static Oracle {
    static CELL: OnceLock<Oracle> = OnceLock::new();
    CELL.get_or_init(|| Oracle::new(OracleRate::Rational, FINE_DX))
}

/// Relative N-weighted L² distance between two rates on the resolved nodes.
pub fn rate_distance(a: &DivisionRate, b: &DivisionRate, n: &SizeDensity) -> f64 {
    divrate::compare::weighted_rate_error(a.values(), b, n, RESOLVED).unwrap()
}

pub fn smooth_bump(grid: &UniformGrid, center: f64) -> SizeDensity {
    SizeDensity::normalized(
        *grid,
        grid.sample(|x| x * x * (-4.0 * (x - center).powi(2)).exp()),
    )
    .unwrap()
}
