//! Error measures for judging reconstructions against a known truth.

use crate::error::Result;
use crate::model::{DivisionRate, SizeDensity};

/// Nodes where `n` is at least `level` times its maximum.
pub fn resolved_nodes(n: &SizeDensity, level: f64) -> impl Iterator<Item = usize> + '_ {
    let floor = level * n.max_value();
    n.values()
        .iter()
        .enumerate()
        .filter(move |(_, &v)| v >= floor)
        .map(|(i, _)| i)
}

/// Relative N-weighted L² error of `rate` on the nodes where `n` is at least
/// `level` times its maximum: `(Σ N (B - B*)² / Σ N B*²)^½`.
pub fn weighted_rate_error(
    rate: &[f64],
    truth: &DivisionRate,
    n: &SizeDensity,
    level: f64,
) -> Result<f64> {
    truth.grid().ensure_matches(n.grid())?;
    let (mut num, mut den) = (0.0, 0.0);
    for i in resolved_nodes(n, level) {
        let w = n.values()[i];
        let t = truth.values()[i];
        num += w * (rate[i] - t).powi(2);
        den += w * t * t;
    }
    Ok(if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    })
}

/// Relative L² error of a product `H` against `B* N` on the resolved nodes.
pub fn product_error(h: &[f64], truth: &DivisionRate, n: &SizeDensity, level: f64) -> Result<f64> {
    truth.grid().ensure_matches(n.grid())?;
    let (mut num, mut den) = (0.0, 0.0);
    for i in resolved_nodes(n, level) {
        let t = truth.values()[i] * n.values()[i];
        num += (h[i] - t).powi(2);
        den += t * t;
    }
    Ok(if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    })
}

/// Trapezoid `∫ |a - b|`.
pub fn l1_distance(a: &SizeDensity, b: &SizeDensity) -> Result<f64> {
    a.grid().ensure_matches(b.grid())?;
    let diff: Vec<f64> = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(p, q)| p - q)
        .collect();
    Ok(crate::quadrature::l1_norm(&diff, a.grid().dx()))
}

/// Abscissa of the largest value of `rate` over the resolved nodes of `n`.
pub fn resolved_peak(rate: &[f64], n: &SizeDensity, level: f64) -> Option<f64> {
    resolved_nodes(n, level)
        .max_by(|&i, &j| rate[i].partial_cmp(&rate[j]).expect("finite rates"))
        .map(|i| n.grid().x(i))
}
