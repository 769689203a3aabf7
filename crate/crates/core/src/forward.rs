//! Forward growth-fragmentation solver.
//!
//! The generator `n ↦ -∂x(g n) - B n + 4 B(2x) n(2x)` is discretized with
//! first-order upwind differences in `x` (growth is always toward larger
//! volume) and the dilation term is read at node `2i`. Time integration is
//! explicit Euler, which keeps the scheme positive under the CFL bound.

use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{
    malthus_from_density, DivisionRate, EigenPair, GrowthLaw, SizeDensity, TransientState,
    UniformGrid,
};
use crate::quadrature;

const BLOW_UP: f64 = 1e300;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_max: f64,
    pub convergence_tol: f64,
    pub max_steps: usize,
    pub record_every: usize,
}

impl SolverConfig {
    /// Time step at half the CFL limit, which also keeps the explicit update
    /// positive for moderate division rates.
    pub fn stable(grid: &UniformGrid, g: &GrowthLaw, t_max: f64) -> Self {
        let dt = 0.5 * grid.dx() / g.max_on(grid);
        Self {
            dt,
            t_max,
            convergence_tol: 1e-8,
            max_steps: 2_000_000,
            record_every: 1,
        }
    }

    /// [`SolverConfig::stable`], shortened further when needed so that
    /// `dt · max B ≤ 1/2`, which keeps the loss term from overshooting.
    pub fn stable_for(grid: &UniformGrid, g: &GrowthLaw, b: &DivisionRate, t_max: f64) -> Self {
        let cfg = Self::stable(grid, g, t_max);
        let bmax = b.values().iter().cloned().fold(0.0, f64::max);
        if bmax * cfg.dt > 0.5 {
            cfg.with_dt(0.5 / bmax)
        } else {
            cfg
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    pub fn with_max_steps(mut self, steps: usize) -> Self {
        self.max_steps = steps;
        self
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.convergence_tol = tol;
        self
    }

    pub fn check(&self, grid: &UniformGrid, g: &GrowthLaw) -> Result<()> {
        for (name, v) in [
            ("dt", self.dt),
            ("t_max", self.t_max),
            ("convergence_tol", self.convergence_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.max_steps == 0 || self.record_every == 0 {
            return Err(Error::InvalidInput(
                "max_steps and record_every must be positive".to_string(),
            ));
        }
        let courant = self.dt * g.max_on(grid);
        if courant > grid.dx() * (1.0 + 1e-12) {
            return Err(Error::CflViolation {
                courant,
                dx: grid.dx(),
            });
        }
        Ok(())
    }
}

/// Recorded history of a transient run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: UniformGrid,
    pub states: Vec<TransientState>,
    /// Total mass (`∫` of the negative part) removed by positivity clamping.
    pub clamped_mass: f64,
}

impl Trajectory {
    /// Long-format CSV `t,x,n`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,n")?;
        for s in &self.states {
            for (i, v) in s.density.values().iter().enumerate() {
                writeln!(w, "{},{},{}", s.time, self.grid.x(i), v)?;
            }
        }
        Ok(())
    }
}

/// Precomputed coefficients of the discrete generator.
struct Generator {
    dx: f64,
    growth: Vec<f64>,
    rate: Vec<f64>,
    /// `4 B(x_{2i})`, zero once `2i` leaves the grid.
    dilated: Vec<f64>,
}

impl Generator {
    fn new(b: &DivisionRate, g: &GrowthLaw) -> Self {
        let grid = *b.grid();
        let n = grid.n_points();
        let rate = b.values().to_vec();
        let dilated = (0..n)
            .map(|i| if 2 * i < n { 4.0 * rate[2 * i] } else { 0.0 })
            .collect();
        Self {
            dx: grid.dx(),
            growth: g.sample(&grid),
            rate,
            dilated,
        }
    }

    fn apply(&self, n: &[f64], out: &mut [f64]) {
        let len = n.len();
        out[0] = 0.0;
        let inv_dx = 1.0 / self.dx;
        for i in 1..len {
            let transport = (self.growth[i] * n[i] - self.growth[i - 1] * n[i - 1]) * inv_dx;
            let gain = if 2 * i < len {
                self.dilated[i] * n[2 * i]
            } else {
                0.0
            };
            out[i] = -transport - self.rate[i] * n[i] + gain;
        }
    }

    /// One explicit Euler step from `n` into `next`; returns the clamped
    /// negative mass (sum of removed values times dx).
    fn step(&self, n: &[f64], next: &mut [f64], dt: f64) -> f64 {
        let len = n.len();
        let inv_dx = 1.0 / self.dx;
        next[0] = 0.0;
        let mut clamped = 0.0;
        for i in 1..len {
            let transport = (self.growth[i] * n[i] - self.growth[i - 1] * n[i - 1]) * inv_dx;
            let gain = if 2 * i < len {
                self.dilated[i] * n[2 * i]
            } else {
                0.0
            };
            let v = n[i] + dt * (gain - transport - self.rate[i] * n[i]);
            if v < 0.0 {
                clamped -= v;
                next[i] = 0.0;
            } else {
                next[i] = v;
            }
        }
        clamped * self.dx
    }
}

/// Semi-discrete right-hand side `-D_up[g n] - B n + 4 B(2x) n(2x)`.
pub fn apply_generator(n: &SizeDensity, b: &DivisionRate, g: &GrowthLaw) -> Result<Vec<f64>> {
    n.grid().ensure_matches(b.grid())?;
    let gen = Generator::new(b, g);
    let mut out = vec![0.0; n.values().len()];
    gen.apply(n.values(), &mut out);
    Ok(out)
}

/// Explicit Euler integration of the transient problem on `[0, t_max]`.
///
/// The step is shrunk slightly so that an integer number of steps lands on
/// `t_max`. States are recorded at `t = 0`, every `record_every` steps, and at
/// the final time.
pub fn transient_solve(
    n0: &SizeDensity,
    b: &DivisionRate,
    g: &GrowthLaw,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    let grid = *n0.grid();
    grid.ensure_matches(b.grid())?;
    cfg.check(&grid, g)?;

    let steps = (cfg.t_max / cfg.dt).ceil().max(1.0) as usize;
    if steps > cfg.max_steps {
        return Err(Error::InvalidInput(format!(
            "{steps} steps needed but max_steps is {}",
            cfg.max_steps
        )));
    }
    let dt = cfg.t_max / steps as f64;

    let gen = Generator::new(b, g);
    let mut cur = n0.values().to_vec();
    cur[0] = 0.0;
    let mut next = vec![0.0; cur.len()];
    let mut states = vec![TransientState::new(
        0.0,
        SizeDensity::new(grid, cur.clone())?,
    )];
    let mut clamped_mass = 0.0;

    for k in 1..=steps {
        clamped_mass += gen.step(&cur, &mut next, dt);
        std::mem::swap(&mut cur, &mut next);
        let t = k as f64 * dt;
        if cur.iter().any(|v| !(v.abs() <= BLOW_UP)) {
            return Err(Error::BlowUp { time: t });
        }
        if k % cfg.record_every == 0 || k == steps {
            states.push(TransientState::new(t, SizeDensity::new(grid, cur.clone())?));
        }
    }

    Ok(Trajectory {
        grid,
        states,
        clamped_mass,
    })
}

/// Convergence diagnostics of [`eigenpair_solve_from`].
#[derive(Debug, Clone, PartialEq)]
pub struct EigenReport {
    pub steps: usize,
    pub time: f64,
    /// L¹ change of the normalized profile over the last step.
    pub last_change: f64,
    /// Growth-rate estimate from the mass growth.
    pub growth_rate: f64,
    /// `∫gN / ∫xN` on the returned profile.
    pub moment_rate: f64,
    pub clamped_mass: f64,
}

/// Principal eigenpair by renormalized long-time iteration from a default
/// initial profile.
pub fn eigenpair_solve(b: &DivisionRate, g: &GrowthLaw, cfg: &SolverConfig) -> Result<EigenPair> {
    eigenpair_solve_from(None, b, g, cfg).map(|(pair, _)| pair)
}

/// Default starting profile `x e^{-8x/x_max}`, normalized.
pub fn default_initial_profile(grid: &UniformGrid) -> Result<SizeDensity> {
    let scale = grid.x_max() / 8.0;
    SizeDensity::normalized(*grid, grid.sample(|x| x * (-x / scale).exp()))
}

/// Iterates transient steps, renormalizing to unit mass after each one.
///
/// Stops once the L¹ change of the normalized profile over one step and the
/// change of the per-step growth rate both drop below
/// `cfg.convergence_tol`. The eigenvalue is the mean per-step log growth of
/// the total mass over the last 10% of iterations, and must agree with the
/// moment identity `∫gN/∫xN` within `10 dx`.
pub fn eigenpair_solve_from(
    n0: Option<&SizeDensity>,
    b: &DivisionRate,
    g: &GrowthLaw,
    cfg: &SolverConfig,
) -> Result<(EigenPair, EigenReport)> {
    let grid = *b.grid();
    if b.is_identically_zero() {
        return Err(Error::DegenerateInput(
            "division rate is identically zero".to_string(),
        ));
    }
    cfg.check(&grid, g)?;
    let start = match n0 {
        Some(d) => {
            grid.ensure_matches(d.grid())?;
            let mut d = d.clone();
            d.normalize()?;
            d
        }
        None => default_initial_profile(&grid)?,
    };

    let dx = grid.dx();
    let dt = cfg.dt;
    let gen = Generator::new(b, g);
    let mut cur = start.into_values();
    let mut next = vec![0.0; cur.len()];
    let mut rates: Vec<f64> = Vec::new();
    let mut clamped_mass = 0.0;
    let mut last_change = f64::INFINITY;

    for k in 1..=cfg.max_steps {
        clamped_mass += gen.step(&cur, &mut next, dt);
        let mass = quadrature::trapezoid(&next, dx);
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::DegenerateDensity(format!(
                "population mass became {mass} at step {k}"
            )));
        }
        // the previous profile has unit mass
        rates.push(mass.ln() / dt);
        let inv = 1.0 / mass;
        let mut change = 0.0;
        for (a, n) in next.iter_mut().zip(&cur) {
            *a *= inv;
            change += (*a - n).abs();
        }
        // trapezoid weights differ only at the (zero) origin and the far end
        last_change = change * dx;
        std::mem::swap(&mut cur, &mut next);

        let rate_stable = rates.len() >= 2
            && (rates[rates.len() - 1] - rates[rates.len() - 2]).abs() < cfg.convergence_tol;
        if k >= 10 && last_change < cfg.convergence_tol && rate_stable {
            let tail = (rates.len() / 10).max(1);
            let growth_rate = rates[rates.len() - tail..].iter().sum::<f64>() / tail as f64;
            let density = SizeDensity::normalized(grid, cur)?;
            let moment_rate = malthus_from_density(&density, g)?;
            let report = EigenReport {
                steps: k,
                time: k as f64 * dt,
                last_change,
                growth_rate,
                moment_rate,
                clamped_mass,
            };
            if (growth_rate - moment_rate).abs() > 10.0 * dx {
                return Err(Error::NonConverged(format!(
                    "growth-rate estimate {growth_rate} and moment identity {moment_rate} disagree by more than 10 dx"
                )));
            }
            if !(growth_rate > 0.0) {
                return Err(Error::NonConverged(format!(
                    "Malthus parameter estimate {growth_rate} is not positive"
                )));
            }
            return Ok((
                EigenPair {
                    density,
                    malthus: growth_rate,
                },
                report,
            ));
        }
    }
    Err(Error::NonConverged(format!(
        "no convergence after {} steps (last L1 change {last_change:.3e})",
        cfg.max_steps
    )))
}

/// Maximum over interior recorded times of `|dN/dt - ∫Bn|` and
/// `|dM/dt - ∫gn|`, derivatives by centered differences, each divided by the
/// instantaneous cell number.
pub fn balance_residuals(traj: &Trajectory, b: &DivisionRate, g: &GrowthLaw) -> Result<(f64, f64)> {
    if traj.states.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            got: traj.states.len(),
        });
    }
    traj.grid.ensure_matches(b.grid())?;
    let grid = traj.grid;
    let growth = g.sample(&grid);
    let mut number_res: f64 = 0.0;
    let mut biomass_res: f64 = 0.0;
    for w in traj.states.windows(3) {
        let (prev, mid, next) = (&w[0], &w[1], &w[2]);
        let span = next.time - prev.time;
        let dn = (next.total_number - prev.total_number) / span;
        let dm = (next.total_biomass - prev.total_biomass) / span;
        let values = mid.density.values();
        let division: Vec<f64> = values.iter().zip(b.values()).map(|(n, r)| n * r).collect();
        let uptake: Vec<f64> = values.iter().zip(&growth).map(|(n, gr)| n * gr).collect();
        let scale = mid.total_number;
        if scale <= 0.0 {
            continue;
        }
        number_res =
            number_res.max((dn - quadrature::trapezoid(&division, grid.dx())).abs() / scale);
        biomass_res =
            biomass_res.max((dm - quadrature::trapezoid(&uptake, grid.dx())).abs() / scale);
    }
    Ok((number_res, biomass_res))
}

/// Relative L¹ distance between `e^{-λ₀t} n(t, ·)` and its best multiple of
/// `N` (L² projection), for every recorded state.
pub fn eigen_convergence_distances(traj: &Trajectory, pair: &EigenPair) -> Result<Vec<(f64, f64)>> {
    traj.grid.ensure_matches(pair.density.grid())?;
    let dx = traj.grid.dx();
    let target = pair.density.values();
    let target_sq: f64 = target.iter().map(|v| v * v).sum();
    Ok(traj
        .states
        .iter()
        .map(|s| {
            let decay = (-pair.malthus * s.time).exp();
            let u: Vec<f64> = s.density.values().iter().map(|v| v * decay).collect();
            let proj: f64 = u.iter().zip(target).map(|(a, b)| a * b).sum::<f64>() / target_sq;
            let diff: Vec<f64> = u.iter().zip(target).map(|(a, b)| a - proj * b).collect();
            let norm = quadrature::l1_norm(&u, dx);
            let dist = if norm > 0.0 {
                quadrature::l1_norm(&diff, dx) / norm
            } else {
                0.0
            };
            (s.time, dist)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> UniformGrid {
        UniformGrid::new(1.0 / 64.0, 257).unwrap()
    }

    fn bump(grid: &UniformGrid) -> SizeDensity {
        SizeDensity::normalized(
            *grid,
            grid.sample(|x| x * x * (-(x - 1.0) * (x - 1.0) * 4.0).exp()),
        )
        .unwrap()
    }

    #[test]
    fn generator_is_linear_and_zero_on_zero() {
        let g = grid();
        let b = DivisionRate::constant(g, 1.0).unwrap();
        let zero = SizeDensity::new(g, vec![0.0; g.n_points()]).unwrap();
        let rhs = apply_generator(&zero, &b, &GrowthLaw::Linear(1.0)).unwrap();
        assert!(rhs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generator_rejects_grid_mismatch() {
        let g = grid();
        let other = UniformGrid::new(1.0 / 32.0, 257).unwrap();
        let b = DivisionRate::constant(other, 1.0).unwrap();
        assert_eq!(
            apply_generator(&bump(&g), &b, &GrowthLaw::Linear(1.0)).unwrap_err(),
            Error::GridMismatch
        );
    }

    #[test]
    fn pure_transport_matches_shifted_profile() {
        // with B ≡ 0 one Euler step at dt = dx is an exact one-node shift
        let g = grid();
        let n = bump(&g);
        let b = DivisionRate::constant(g, 0.0).unwrap();
        let rhs = apply_generator(&n, &b, &GrowthLaw::Linear(1.0)).unwrap();
        let v = n.values();
        for i in 1..v.len() {
            let shifted_diff = (v[i - 1] - v[i]) / g.dx();
            assert!((rhs[i] - shifted_diff).abs() < 1e-12);
        }
    }

    #[test]
    fn cfl_is_enforced() {
        let g = grid();
        let b = DivisionRate::constant(g, 1.0).unwrap();
        let cfg = SolverConfig::stable(&g, &GrowthLaw::Linear(1.0), 1.0).with_dt(2.0 * g.dx());
        assert!(matches!(
            transient_solve(&bump(&g), &b, &GrowthLaw::Linear(1.0), &cfg),
            Err(Error::CflViolation { .. })
        ));
        let exp = GrowthLaw::Exponential(1.0);
        let cfg = SolverConfig::stable(&g, &GrowthLaw::Linear(1.0), 1.0);
        assert!(matches!(
            transient_solve(&bump(&g), &b, &exp, &cfg),
            Err(Error::CflViolation { .. })
        ));
    }

    #[test]
    fn no_division_conserves_number() {
        let g = grid();
        let b = DivisionRate::constant(g, 0.0).unwrap();
        let law = GrowthLaw::Linear(1.0);
        let cfg = SolverConfig::stable(&g, &law, 1.0).with_record_every(16);
        let traj = transient_solve(&bump(&g), &b, &law, &cfg).unwrap();
        let n0 = traj.states[0].total_number;
        for s in &traj.states {
            assert!(((s.total_number - n0) / n0).abs() < 1e-6);
        }
        let (nr, _) = balance_residuals(&traj, &b, &law).unwrap();
        assert!(nr <= 1e-6);
    }

    #[test]
    fn vanishing_growth_has_no_biomass_residual() {
        let g = UniformGrid::new(1.0 / 1024.0, 4097).unwrap();
        let b = DivisionRate::constant(g, 1.0).unwrap();
        let law = GrowthLaw::Linear(1e-12);
        let cfg = SolverConfig::stable(&g, &GrowthLaw::Linear(1.0), 0.25).with_record_every(16);
        let traj = transient_solve(&bump(&g), &b, &law, &cfg).unwrap();
        let (_, br) = balance_residuals(&traj, &b, &law).unwrap();
        assert!(br <= 1e-6, "{br}");
    }

    #[test]
    fn balance_needs_three_states() {
        let g = grid();
        let b = DivisionRate::constant(g, 1.0).unwrap();
        let traj = Trajectory {
            grid: g,
            states: vec![TransientState::new(0.0, bump(&g))],
            clamped_mass: 0.0,
        };
        assert!(matches!(
            balance_residuals(&traj, &b, &GrowthLaw::Linear(1.0)),
            Err(Error::TooFewPoints { .. })
        ));
    }

    #[test]
    fn eigen_rejects_zero_rate() {
        let g = grid();
        let b = DivisionRate::constant(g, 0.0).unwrap();
        let law = GrowthLaw::Linear(1.0);
        let cfg = SolverConfig::stable(&g, &law, 1.0);
        assert!(matches!(
            eigenpair_solve(&b, &law, &cfg),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn eigen_reports_nonconvergence_when_step_budget_is_exhausted() {
        let g = grid();
        let b = DivisionRate::constant(g, 1.0).unwrap();
        let law = GrowthLaw::Linear(1.0);
        let cfg = SolverConfig::stable(&g, &law, 1.0).with_max_steps(20);
        assert!(matches!(
            eigenpair_solve(&b, &law, &cfg),
            Err(Error::NonConverged(_))
        ));
    }

    #[test]
    fn trajectory_csv_has_long_format() {
        let g = UniformGrid::new(0.25, 5).unwrap();
        let b = DivisionRate::constant(g, 0.0).unwrap();
        let law = GrowthLaw::Linear(1.0);
        let n0 = SizeDensity::normalized(g, vec![0.0, 1.0, 1.0, 1.0, 0.0]).unwrap();
        let cfg = SolverConfig::stable(&g, &law, 0.25);
        let traj = transient_solve(&n0, &b, &law, &cfg).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x,n");
        assert_eq!(lines.len(), 1 + traj.states.len() * 5);
        assert!(lines[1].starts_with("0,0,"));
    }
}
