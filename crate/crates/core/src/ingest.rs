//! From measured histograms to a normalized density on the working grid,
//! and controlled perturbation of densities for synthetic experiments.

use std::fmt::Write as _;
use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::io::read_table;
use crate::model::{DatasetMeta, SizeDensity, UniformGrid};
use crate::quadrature;

/// Transcribed size histogram: `(volume μm³, count)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct RawHistogram {
    pub points: Vec<(f64, f64)>,
    pub meta: DatasetMeta,
}

impl RawHistogram {
    pub fn new(points: Vec<(f64, f64)>, meta: DatasetMeta) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::TooFewPoints {
                needed: 4,
                got: points.len(),
            });
        }
        for (k, &(v, c)) in points.iter().enumerate() {
            if !(v.is_finite() && v >= 0.0 && c.is_finite() && c >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "point {k} = ({v}, {c}) must be finite and nonnegative"
                )));
            }
        }
        if let Some(k) = points.windows(2).position(|w| w[1].0 <= w[0].0) {
            return Err(Error::NonMonotoneVolumes { line: k + 2 });
        }
        meta.validate()?;
        Ok(Self { points, meta })
    }

    pub fn volumes(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.0).collect()
    }

    pub fn max_volume(&self) -> f64 {
        self.points[self.points.len() - 1].0
    }

    /// CSV `volume,count` preceded by the metadata lines.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let m = &self.meta;
        if !m.label.is_empty() {
            let _ = writeln!(s, "# label={}", m.label);
        }
        if let Some(t) = m.doubling_time {
            let _ = writeln!(s, "# doubling_time_min={t}");
        }
        if let Some(v) = m.mean_volume {
            let _ = writeln!(s, "# mean_volume={v}");
        }
        if let Some(sig) = m.diameter_sigma {
            let _ = writeln!(s, "# sigma_um={sig}");
        }
        s.push_str("volume,count\n");
        for (v, c) in &self.points {
            let _ = writeln!(s, "{v},{c}");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// `N_i (1 + ε u_i)`, `u_i ~ U[-1, 1]`.
    MultiplicativeUniform,
    /// `N_i + ε ‖N‖ z_i / √(n dx)`, `z_i ~ N(0, 1)`.
    AdditiveGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub epsilon: f64,
    pub seed: u64,
    pub kind: NoiseKind,
}

impl NoiseSpec {
    pub fn multiplicative(epsilon: f64, seed: u64) -> Self {
        Self {
            epsilon,
            seed,
            kind: NoiseKind::MultiplicativeUniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyDensity {
    pub density: SizeDensity,
    /// `‖N_ε - N‖ / ‖N‖` in trapezoid L², after renormalization.
    pub realized: f64,
}

/// Parses `volume,count` rows with optional `# key=value` metadata:
/// `doubling_time_min`, `mean_volume`, `sigma_um`, `label`.
pub fn parse_histogram<R: BufRead>(reader: R) -> Result<RawHistogram> {
    let table = read_table(reader)?;
    let vi = table.headers.iter().position(|h| h == "volume");
    let ci = table.headers.iter().position(|h| h == "count");
    let (vi, ci) = match (vi, ci) {
        (Some(v), Some(c)) => (v, c),
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!(
                    "expected header `volume,count`, found `{}`",
                    table.headers.join(",")
                ),
            })
        }
    };
    for (row, &line) in table.rows.iter().zip(&table.lines) {
        if row[vi] < 0.0 || row[ci] < 0.0 {
            return Err(Error::Parse {
                line,
                message: "volumes and counts must be nonnegative".to_string(),
            });
        }
    }
    if let Some(k) = table.rows.windows(2).position(|w| w[1][vi] <= w[0][vi]) {
        return Err(Error::NonMonotoneVolumes {
            line: table.lines[k + 1],
        });
    }
    let meta = DatasetMeta {
        doubling_time: table.meta_f64("doubling_time_min")?,
        mean_volume: table.meta_f64("mean_volume")?,
        diameter_sigma: table.meta_f64("sigma_um")?,
        label: table.meta.get("label").cloned().unwrap_or_default(),
    };
    let points = table.rows.iter().map(|r| (r[vi], r[ci])).collect();
    RawHistogram::new(points, meta)
}

/// Default right end of the working domain: `4 V_b` when the mean volume is
/// known, `1.5 ×` the largest recorded volume otherwise.
pub fn default_x_max(h: &RawHistogram) -> f64 {
    match h.meta.mean_volume {
        Some(vb) if 4.0 * vb > h.max_volume() => 4.0 * vb,
        _ => 1.5 * h.max_volume(),
    }
}

/// Pads the histogram with zero knots at the origin, just past the last
/// datum (one median spacing further) and at `x_max`.
///
/// A histogram that already ends with a zero count at `x_max` is left alone
/// on the right.
pub fn complete_boundaries(h: &RawHistogram, x_max: f64) -> Result<RawHistogram> {
    let last = h.points[h.points.len() - 1];
    let ends_at_zero = last.0 == x_max && last.1 == 0.0;
    if !(x_max > last.0 || ends_at_zero) {
        return Err(Error::BadRange(format!(
            "x_max = {x_max} does not exceed the largest volume {}",
            last.0
        )));
    }
    let mut points = Vec::with_capacity(h.points.len() + 3);
    if h.points[0].0 > 0.0 {
        points.push((0.0, 0.0));
    } else if h.points[0].1 != 0.0 {
        return Err(Error::InvalidInput(
            "histogram has a nonzero count at volume 0".to_string(),
        ));
    }
    points.extend_from_slice(&h.points);
    if !ends_at_zero {
        let mut gaps: Vec<f64> = h.points.windows(2).map(|w| w[1].0 - w[0].0).collect();
        gaps.sort_by(|a, b| a.partial_cmp(b).expect("finite volumes"));
        let median = gaps[gaps.len() / 2];
        let knot = last.0 + median;
        if knot < x_max {
            points.push((knot, 0.0));
        }
        points.push((x_max, 0.0));
    }
    Ok(RawHistogram {
        points,
        meta: h.meta.clone(),
    })
}

/// Natural cubic spline through strictly increasing knots.
#[derive(Debug, Clone)]
pub struct NaturalSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots (zero at both ends).
    m: Vec<f64>,
}

impl NaturalSpline {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::TooFewPoints { needed: 2, got: n });
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for the interior second derivatives (Thomas)
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for j in 0..k {
                let (h0, h1) = (x[j + 1] - x[j], x[j + 2] - x[j + 1]);
                diag[j] = 2.0 * (h0 + h1);
                upper[j] = h1;
                rhs[j] = 6.0 * ((y[j + 2] - y[j + 1]) / h1 - (y[j + 1] - y[j]) / h0);
            }
            for j in 1..k {
                let lower = x[j + 1] - x[j];
                let w = lower / diag[j - 1];
                diag[j] -= w * upper[j - 1];
                rhs[j] -= w * rhs[j - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for j in (0..k - 1).rev() {
                m[j + 1] = (rhs[j] - upper[j] * m[j + 2]) / diag[j];
            }
        }
        Ok(Self { x, y, m })
    }

    /// Value at `t`; zero outside the knot range.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t < self.x[0] || t > self.x[n - 1] {
            return 0.0;
        }
        let j = match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let h = self.x[j + 1] - self.x[j];
        let a = (self.x[j + 1] - t) / h;
        let b = (t - self.x[j]) / h;
        a * self.y[j]
            + b * self.y[j + 1]
            + ((a * a * a - a) * self.m[j] + (b * b * b - b) * self.m[j + 1]) * h * h / 6.0
    }
}

/// Spline interpolation onto `grid`, clamping negative overshoot and
/// normalizing to unit mass. Returns the density and the clamped node count.
pub fn to_uniform_density(h: &RawHistogram, grid: &UniformGrid) -> Result<(SizeDensity, usize)> {
    let last = h.max_volume();
    if grid.x_max() < last * (1.0 - 1e-12) || h.points[0].0 < 0.0 {
        return Err(Error::GridMismatch);
    }
    let (x, y): (Vec<f64>, Vec<f64>) = h.points.iter().cloned().unzip();
    let spline = NaturalSpline::new(x, y)?;
    let mut clamped = 0;
    let mut values: Vec<f64> = grid
        .nodes()
        .map(|t| {
            let v = spline.eval(t.min(last));
            let v = if t > last { 0.0 } else { v };
            if v < 0.0 {
                clamped += 1;
                0.0
            } else {
                v
            }
        })
        .collect();
    values[0] = 0.0;
    Ok((SizeDensity::normalized(*grid, values)?, clamped))
}

/// Seeded perturbation of a normalized density.
pub fn add_noise(n: &SizeDensity, spec: &NoiseSpec) -> Result<NoisyDensity> {
    if !(spec.epsilon >= 0.0 && spec.epsilon.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "epsilon must be nonnegative, got {}",
            spec.epsilon
        )));
    }
    if spec.epsilon == 0.0 {
        return Ok(NoisyDensity {
            density: n.clone(),
            realized: 0.0,
        });
    }
    let grid = *n.grid();
    let dx = grid.dx();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base = n.values();
    let norm = quadrature::l2_norm(base, dx);
    let mut values: Vec<f64> = match spec.kind {
        NoiseKind::MultiplicativeUniform => base
            .iter()
            .map(|v| v * (1.0 + spec.epsilon * rng.random_range(-1.0..=1.0)))
            .collect(),
        NoiseKind::AdditiveGaussian => {
            let amp = spec.epsilon * norm / (grid.n_points() as f64 * dx).sqrt();
            base.iter()
                .map(|v| {
                    let z: f64 = rng.sample(StandardNormal);
                    v + amp * z
                })
                .collect()
        }
    };
    values.iter_mut().for_each(|v| *v = v.max(0.0));
    values[0] = 0.0;
    let density = SizeDensity::normalized(grid, values)?;
    let diff: Vec<f64> = density
        .values()
        .iter()
        .zip(base)
        .map(|(a, b)| a - b)
        .collect();
    let realized = if norm > 0.0 {
        quadrature::l2_norm(&diff, dx) / norm
    } else {
        0.0
    };
    Ok(NoisyDensity { density, realized })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "# doubling_time_min=20\n# mean_volume=1.36\nvolume,count\n\
        0.4,1\n0.6,5\n0.8,12\n1.0,20\n1.2,24\n1.4,21\n1.6,15\n1.8,9\n2.0,4\n2.2,1\n";

    fn sample() -> RawHistogram {
        parse_histogram(SAMPLE.as_bytes()).unwrap()
    }

    #[test]
    fn parses_rows_and_metadata() {
        let h = sample();
        assert_eq!(h.points.len(), 10);
        assert_eq!(h.meta.doubling_time, Some(20.0));
        assert_eq!(h.meta.mean_volume, Some(1.36));
        assert_eq!(h.meta.diameter_sigma, None);
    }

    #[test]
    fn fractional_counts_are_accepted() {
        let h = parse_histogram("volume,count\n1,0.5\n2,1.25\n3,0.75\n4,0.1\n".as_bytes()).unwrap();
        assert_eq!(h.points[1], (2.0, 1.25));
    }

    #[test]
    fn unsorted_volumes_are_rejected() {
        let text = "volume,count\n1,1\n2,1\n1.5,1\n3,1\n";
        assert_eq!(
            parse_histogram(text.as_bytes()).unwrap_err(),
            Error::NonMonotoneVolumes { line: 4 }
        );
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let text = "# label=x\nvolume,count\n1,1\n2,oops\n";
        assert!(matches!(
            parse_histogram(text.as_bytes()),
            Err(Error::Parse { line: 4, .. })
        ));
        assert!(matches!(
            parse_histogram("v,c\n1,1\n".as_bytes()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn csv_export_parses_back() {
        let h = sample();
        assert_eq!(parse_histogram(h.to_csv().as_bytes()).unwrap(), h);
    }

    #[test]
    fn boundaries_are_zero_padded() {
        let h = sample();
        let x_max = default_x_max(&h);
        assert!((x_max - 5.44).abs() < 1e-12);
        let c = complete_boundaries(&h, x_max).unwrap();
        assert_eq!(c.points[0], (0.0, 0.0));
        assert_eq!(*c.points.last().unwrap(), (x_max, 0.0));
        // extra zero knot one median spacing past the data
        let extra = c.points[c.points.len() - 2];
        assert!((extra.0 - 2.4).abs() < 1e-12 && extra.1 == 0.0);
        assert_eq!(c.points.len(), h.points.len() + 3);
    }

    #[test]
    fn existing_origin_knot_is_not_duplicated() {
        let h = parse_histogram("volume,count\n0,0\n1,2\n2,3\n3,1\n".as_bytes()).unwrap();
        let c = complete_boundaries(&h, 5.0).unwrap();
        assert_eq!(c.points.iter().filter(|p| p.0 == 0.0).count(), 1);
    }

    #[test]
    fn x_max_must_exceed_data() {
        assert!(matches!(
            complete_boundaries(&sample(), 2.0),
            Err(Error::BadRange(_))
        ));
    }

    #[test]
    fn spline_reproduces_linear_data() {
        let x: Vec<f64> = vec![0.0, 0.5, 1.25, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 1.0 + 2.0 * v).collect();
        let s = NaturalSpline::new(x, y).unwrap();
        for k in 0..=300 {
            let t = k as f64 * 0.01;
            assert!((s.eval(t) - (1.0 + 2.0 * t)).abs() < 1e-12);
        }
    }

    #[test]
    fn spline_hits_knots_on_grid_nodes() {
        let grid = UniformGrid::new(0.1, 41).unwrap();
        let h = RawHistogram::new(
            vec![
                (0.0, 0.0),
                (0.5, 2.0),
                (1.0, 3.0),
                (2.0, 1.0),
                (3.0, 0.0),
                (4.0, 0.0),
            ],
            DatasetMeta::default(),
        )
        .unwrap();
        let (d, _) = to_uniform_density(&h, &grid).unwrap();
        let mass = quadrature::trapezoid(
            &grid
                .nodes()
                .map(|t| {
                    NaturalSpline::new(h.volumes(), h.points.iter().map(|p| p.1).collect())
                        .unwrap()
                        .eval(t)
                        .max(0.0)
                })
                .collect::<Vec<_>>(),
            grid.dx(),
        );
        for (v, c) in &h.points {
            let i = (v / grid.dx()).round() as usize;
            assert!((d.values()[i] * mass - c).abs() < 1e-9, "knot {v}");
        }
    }

    #[test]
    fn single_bump_becomes_unimodal_unit_density() {
        let h = sample();
        let x_max = default_x_max(&h);
        let c = complete_boundaries(&h, x_max).unwrap();
        let grid = UniformGrid::spanning(x_max, 1025).unwrap();
        let (d, _) = to_uniform_density(&c, &grid).unwrap();
        assert!((quadrature::trapezoid(d.values(), grid.dx()) - 1.0).abs() < 1e-10);
        let v = d.values();
        let peak = v.iter().cloned().fold(0.0, f64::max);
        let ip = v.iter().position(|&a| a == peak).unwrap();
        // unimodal up to the clamped zero tail
        assert!(v[..=ip].windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!(v[ip..].windows(2).all(|w| w[1] <= w[0] + peak * 2e-2));
        assert_eq!(v[0], 0.0);
    }

    #[test]
    fn grid_must_cover_knots() {
        let c = complete_boundaries(&sample(), 5.44).unwrap();
        let short = UniformGrid::spanning(3.0, 257).unwrap();
        assert_eq!(
            to_uniform_density(&c, &short).unwrap_err(),
            Error::GridMismatch
        );
    }

    #[test]
    fn on_grid_data_is_reproduced() {
        let grid = UniformGrid::new(1.0 / 64.0, 257).unwrap();
        let n = SizeDensity::normalized(grid, grid.sample(|x| x * x * (4.0 - x).powi(2))).unwrap();
        let h = RawHistogram::new(
            grid.nodes().zip(n.values().iter().cloned()).collect(),
            DatasetMeta::default(),
        )
        .unwrap();
        let c = complete_boundaries(&h, grid.x_max()).unwrap();
        let (d, clamped) = to_uniform_density(&c, &grid).unwrap();
        assert_eq!(clamped, 0);
        for (a, b) in d.values().iter().zip(n.values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    fn smooth_density() -> SizeDensity {
        let grid = UniformGrid::new(1.0 / 256.0, 1025).unwrap();
        SizeDensity::normalized(
            grid,
            grid.sample(|x| x * (-(x - 1.5f64).powi(2) * 2.0).exp()),
        )
        .unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let n = smooth_density();
        let out = add_noise(&n, &NoiseSpec::multiplicative(0.0, 3)).unwrap();
        assert_eq!(out.density, n);
        assert_eq!(out.realized, 0.0);
    }

    #[test]
    fn noise_is_seeded_and_normalized() {
        let n = smooth_density();
        for kind in [
            NoiseKind::MultiplicativeUniform,
            NoiseKind::AdditiveGaussian,
        ] {
            let spec = NoiseSpec {
                epsilon: 1e-2,
                seed: 11,
                kind,
            };
            let a = add_noise(&n, &spec).unwrap();
            let b = add_noise(&n, &spec).unwrap();
            assert_eq!(a, b);
            assert!(a.density.is_normalized());
            assert_eq!(a.density.values()[0], 0.0);
            let c = add_noise(&n, &NoiseSpec { seed: 12, ..spec }).unwrap();
            assert_ne!(a.density, c.density);
        }
    }

    #[test]
    fn multiplicative_level_matches_uniform_variance() {
        // E|u|² = 1/3, so the relative L² perturbation concentrates near ε/√3
        let n = smooth_density();
        let levels: Vec<f64> = (0..100)
            .map(|seed| {
                add_noise(&n, &NoiseSpec::multiplicative(1e-2, seed))
                    .unwrap()
                    .realized
            })
            .collect();
        for r in &levels {
            assert!((0.003..=0.01).contains(r), "{r}");
        }
        let mean = levels.iter().sum::<f64>() / levels.len() as f64;
        assert!((mean - 1e-2 / 3f64.sqrt()).abs() < 1e-3, "{mean}");
    }
}
