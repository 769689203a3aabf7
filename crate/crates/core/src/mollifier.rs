//! Compactly supported smoothing kernel `ρ_α(x) = ρ(x/α)/α` built on the
//! canonical bump `ρ(s) = C exp(-1/(s(1-s)))` on `(0, 1)`.
//!
//! Convolutions are evaluated exactly for the piecewise-linear interpolant of
//! the grid samples: the kernel is integrated cell by cell, so the result is
//! meaningful even when `α` spans only a couple of grid cells.

use crate::error::{Error, Result};
use crate::quadrature::adaptive_simpson;

const QUAD_TOL: f64 = 1e-14;

fn unit_bump(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        0.0
    } else {
        (-1.0 / (s * (1.0 - s))).exp()
    }
}

fn unit_bump_derivative(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        0.0
    } else {
        let q = s * (1.0 - s);
        unit_bump(s) * (1.0 - 2.0 * s) / (q * q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mollifier {
    alpha: f64,
    /// `C = 1 / ∫₀¹ exp(-1/(s(1-s))) ds`.
    norm: f64,
}

impl Mollifier {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::NonPositiveAlpha(alpha));
        }
        let mass = adaptive_simpson(&unit_bump, 0.0, 1.0, QUAD_TOL);
        Ok(Self {
            alpha,
            norm: 1.0 / mass,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Normalization constant of the unit-width bump.
    pub fn normalization(&self) -> f64 {
        self.norm
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.norm * unit_bump(x / self.alpha) / self.alpha
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.norm * unit_bump_derivative(x / self.alpha) / (self.alpha * self.alpha)
    }

    /// `∫ ρ_α dx` by adaptive quadrature over the support.
    pub fn total_mass(&self) -> f64 {
        adaptive_simpson(
            &|x| self.eval(x),
            0.0,
            self.alpha,
            QUAD_TOL / self.alpha.min(1.0),
        )
    }

    /// Per-cell kernel integrals for grid spacing `dx`.
    fn cell_weights(&self, dx: f64) -> CellWeights {
        let cells = (self.alpha / dx).ceil().max(1.0) as usize;
        let scale = dx / self.alpha;
        let mut mass = Vec::with_capacity(cells);
        let mut first = Vec::with_capacity(cells);
        for j in 0..cells {
            let a = j as f64 * scale;
            let b = ((j + 1) as f64 * scale).min(1.0);
            let w0 = self.norm * adaptive_simpson(&unit_bump, a, b, QUAD_TOL);
            let ws = self.norm * adaptive_simpson(&|s| s * unit_bump(s), a, b, QUAD_TOL);
            mass.push(w0);
            // ∫ (u - j dx)/dx ρ_α(u) du over the cell, in unit-bump variables
            first.push(ws / scale - j as f64 * w0);
        }
        CellWeights { mass, first }
    }

    /// `(N * ρ_α)(x_i)` for the piecewise-linear interpolant of `values`,
    /// extended by zero to negative volumes.
    pub fn smooth(&self, values: &[f64], dx: f64) -> Vec<f64> {
        let w = self.cell_weights(dx);
        let at = |k: isize| if k < 0 { 0.0 } else { values[k as usize] };
        (0..values.len())
            .map(|i| {
                let i = i as isize;
                w.mass
                    .iter()
                    .zip(&w.first)
                    .enumerate()
                    .map(|(j, (m, f))| {
                        let j = j as isize;
                        at(i - j) * (m - f) + at(i - j - 1) * f
                    })
                    .sum()
            })
            .collect()
    }

    /// `(N * ρ_α')(x_i)` for the piecewise-linear interpolant of `values`.
    /// Integrating by parts moves the derivative onto the interpolant, whose
    /// slope is constant on each cell.
    pub fn smooth_derivative(&self, values: &[f64], dx: f64) -> Vec<f64> {
        let w = self.cell_weights(dx);
        let at = |k: isize| if k < 0 { 0.0 } else { values[k as usize] };
        (0..values.len())
            .map(|i| {
                let i = i as isize;
                w.mass
                    .iter()
                    .enumerate()
                    .map(|(j, m)| {
                        let j = j as isize;
                        (at(i - j) - at(i - j - 1)) / dx * m
                    })
                    .sum()
            })
            .collect()
    }
}

struct CellWeights {
    /// `∫_cell ρ_α`.
    mass: Vec<f64>,
    /// `∫_cell ((u - u_j)/dx) ρ_α(u) du`.
    first: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::l2_norm;

    #[test]
    fn rejects_nonpositive_width() {
        assert_eq!(
            Mollifier::new(0.0).unwrap_err(),
            Error::NonPositiveAlpha(0.0)
        );
        assert!(Mollifier::new(-1.0).is_err());
        assert!(Mollifier::new(f64::NAN).is_err());
    }

    #[test]
    fn unit_mass_for_all_widths() {
        for alpha in [1e-4, 0.1, 1.0] {
            let m = Mollifier::new(alpha).unwrap();
            assert!((m.total_mass() - 1.0).abs() < 1e-8, "alpha = {alpha}");
        }
    }

    #[test]
    fn support_is_contained_in_unit_scaled_interval() {
        let m = Mollifier::new(0.3).unwrap();
        for x in [-1.0, -1e-9, 0.0, 0.3, 0.3 + 1e-12, 2.0] {
            assert_eq!(m.eval(x), 0.0);
            assert_eq!(m.derivative(x), 0.0);
        }
        assert!(m.eval(0.15) > 0.0);
    }

    #[test]
    fn peak_is_at_half_width() {
        let alpha = 0.4;
        let m = Mollifier::new(alpha).unwrap();
        let peak = (1..4000)
            .map(|k| k as f64 * alpha / 4000.0)
            .max_by(|a, b| m.eval(*a).partial_cmp(&m.eval(*b)).unwrap())
            .unwrap();
        assert!((peak - alpha / 2.0).abs() < 1e-3 * alpha);
        assert!(m.derivative(alpha / 2.0).abs() < 1e-12);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let m = Mollifier::new(0.5).unwrap();
        let h = 1e-6;
        for x in [0.1, 0.2, 0.33, 0.45] {
            let fd = (m.eval(x + h) - m.eval(x - h)) / (2.0 * h);
            assert!((fd - m.derivative(x)).abs() < 1e-5 * m.derivative(x).abs().max(1.0));
        }
    }

    #[test]
    fn smoothing_preserves_linear_ramps_up_to_shift() {
        // ramp convolved with a unit-mass kernel of mean α/2 shifts by α/2
        let dx = 0.01;
        let alpha = 0.1;
        let m = Mollifier::new(alpha).unwrap();
        let v: Vec<f64> = (0..200).map(|i| i as f64 * dx).collect();
        let s = m.smooth(&v, dx);
        let d = m.smooth_derivative(&v, dx);
        for i in 20..200 {
            assert!(
                (s[i] - (v[i] - alpha / 2.0)).abs() < 1e-10,
                "{} vs {}",
                s[i],
                v[i]
            );
            assert!((d[i] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn smoothing_converges_as_width_shrinks() {
        let dx = 1.0 / 1024.0;
        let v: Vec<f64> = (0..4097)
            .map(|i| {
                let x = i as f64 * dx;
                x * x * (-(x - 1.5) * (x - 1.5) * 3.0).exp()
            })
            .collect();
        let errs: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&a| {
                let s = Mollifier::new(a).unwrap().smooth(&v, dx);
                let diff: Vec<f64> = s.iter().zip(&v).map(|(a, b)| a - b).collect();
                l2_norm(&diff, dx)
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn tiny_width_reduces_to_interpolation() {
        let dx = 0.01;
        let m = Mollifier::new(1e-4).unwrap();
        let v: Vec<f64> = (0..50).map(|i| ((i as f64) * 0.1).sin().abs()).collect();
        let s = m.smooth(&v, dx);
        for i in 1..50 {
            assert!((s[i] - v[i]).abs() < 1e-3);
        }
    }
}
