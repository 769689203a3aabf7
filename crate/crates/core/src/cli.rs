//! Command-line front end.
//!
//! Every command reads CSV inputs, writes CSV artifacts plus a `report.txt`
//! into `--output-dir`, and prints the report. Outputs carry no timestamps,
//! so repeated runs with the same flags are byte-identical.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | usage or configuration error |
//! | 3 | file I/O error |
//! | 4 | malformed input file or non-monotone volumes |
//! | 5 | degenerate density or input (e.g. `B ≡ 0`) |
//! | 6 | eigen iteration did not converge |
//! | 7 | CFL violation or numerical blow-up |
//! | 8 | required metadata missing |
//! | 9 | any other failure (grid mismatch, bad range, empty sweep, ...) |

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, ValueEnum};

use crate::compare;
use crate::error::{Error, Result};
use crate::forward::{balance_residuals, eigenpair_solve_from, transient_solve, SolverConfig};
use crate::ingest::{
    add_noise, complete_boundaries, default_x_max, parse_histogram, to_uniform_density, NoiseKind,
    NoiseSpec,
};
use crate::inverse::{Method, ReconstructionResult};
use crate::io;
use crate::model::{
    growth_constant_from_doubling, malthus_from_density, DatasetMeta, DivisionRate, GrowthKind,
    GrowthLaw, SizeDensity, UniformGrid,
};
use crate::regselect::{
    select_alpha_lcurve, select_alpha_ratio, sweep_alpha, AlphaSweep, SweepMethod,
};
use crate::synth::{
    oracle_eigenpair, rescale, sample_histogram, OracleRate, PhysicalScale, SynthSpec,
};

/// Grid size used when neither `--dx` nor `--n-points` is given.
pub const DEFAULT_POINTS: usize = 1025;
/// Grid spacing of oracle-driven runs (`synth`, synthetic `roundtrip`) when
/// neither `--dx` nor `--n-points` is given.
pub const ORACLE_DX: f64 = 1.0 / 1024.0;
pub const DEFAULT_ALPHAS: [f64; 6] = [0.025, 0.05, 0.1, 0.2, 0.4, 0.8];
/// Profiles are compared on nodes above this fraction of their peak.
pub const RESOLVED_LEVEL: f64 = 0.01;

#[derive(Parser, Debug)]
#[command(
    name = "divrate",
    version,
    about = "Division-rate calibration from stationary size distributions"
)]
pub struct Cli {
    #[command(flatten)]
    pub config: RunConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Stationary profile and Malthus parameter of a rate file.
    Eigen,
    /// Transient run with balance-law diagnostics.
    Simulate,
    /// Histogram or density to division rate.
    Calibrate,
    /// Residual curves over a list of α.
    Sweep,
    /// Forward check of a reconstruction, or a full synthetic experiment.
    Roundtrip,
    /// Synthetic histogram from an oracle rate.
    Synth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Exact,
    Qr,
    Filter,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GrowthArg {
    Linear,
    Exponential,
}

impl From<GrowthArg> for GrowthKind {
    fn from(g: GrowthArg) -> Self {
        match g {
            GrowthArg::Linear => GrowthKind::Linear,
            GrowthArg::Exponential => GrowthKind::Exponential,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LambdaSource {
    /// Moment identity of the regularized problem.
    Eq7,
    /// `ln 2 / T₀` from the doubling time.
    Doubling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Select {
    Ratio,
    Lcurve,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseArg {
    Uniform,
    Gaussian,
}

#[derive(Args, Debug, Clone)]
pub struct RunConfig {
    #[arg(value_enum)]
    pub command: Command,
    /// Rate file (eigen, simulate, roundtrip) or histogram/density file
    /// (calibrate, sweep).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Data to compare against (roundtrip) or initial profile (simulate).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Qr)]
    pub method: MethodArg,
    /// Defaults to the footer of a rate file, then linear.
    #[arg(long, value_enum)]
    pub growth: Option<GrowthArg>,
    /// `g₀` (linear) or `κ` (exponential).
    #[arg(long)]
    pub growth_coefficient: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Vec<f64>,
    /// Mollifier width of the hybrid method.
    #[arg(long)]
    pub alpha_filter: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value_t = NoiseArg::Uniform)]
    pub noise: NoiseArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub dx: Option<f64>,
    #[arg(long)]
    pub n_points: Option<usize>,
    #[arg(long)]
    pub x_max: Option<f64>,
    /// Defaults to `doubling` when a doubling time is known, else `eq7`.
    #[arg(long, value_enum)]
    pub lambda_source: Option<LambdaSource>,
    /// Defaults to `ratio` when no `--alpha` is given.
    #[arg(long, value_enum)]
    pub select: Option<Select>,
    /// Oracle (`constant[:b]`, `bump`, `rational`) or rate file.
    #[arg(long)]
    pub rate: Option<String>,
    #[arg(long, default_value_t = 64)]
    pub channels: usize,
    /// Fraction of the peak below which synth records no channel.
    #[arg(long)]
    pub channel_floor: Option<f64>,
    /// Doubling time in minutes; overrides file metadata.
    #[arg(long)]
    pub doubling_time: Option<f64>,
    /// Mean volume; overrides file metadata.
    #[arg(long)]
    pub mean_volume: Option<f64>,
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub record_every: Option<usize>,
    #[arg(long)]
    pub label: Option<String>,
}

/// Ordered `key=value` lines, written to `report.txt` and stdout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<(String, String)>,
}

impl Report {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

/// Exit code of an error class.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidGrid(_) | Error::InvalidInput(_) => 2,
        Error::Io(_) => 3,
        Error::Parse { .. } | Error::NonMonotoneVolumes { .. } => 4,
        Error::DegenerateDensity(_) | Error::DegenerateInput(_) => 5,
        Error::NonConverged(_) => 6,
        Error::CflViolation { .. } | Error::BlowUp { .. } => 7,
        Error::MissingMetadata(_) => 8,
        _ => 9,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli.config) {
        Ok(report) => {
            print!("{}", report.to_text());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cfg: &RunConfig) -> Result<Report> {
    validate(cfg)?;
    let report = match cfg.command {
        Command::Eigen => cmd_eigen(cfg)?,
        Command::Simulate => cmd_simulate(cfg)?,
        Command::Calibrate => cmd_calibrate(cfg)?,
        Command::Sweep => cmd_sweep(cfg)?,
        Command::Roundtrip => cmd_roundtrip(cfg)?,
        Command::Synth => cmd_synth(cfg)?,
    };
    write_file(&cfg.output_dir.join("report.txt"), |w| {
        w.write_all(report.to_text().as_bytes())?;
        Ok(())
    })?;
    Ok(report)
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

fn validate(cfg: &RunConfig) -> Result<()> {
    let positive = [
        ("--alpha", cfg.alpha),
        ("--alpha-filter", cfg.alpha_filter),
        ("--dx", cfg.dx),
        ("--x-max", cfg.x_max),
        ("--growth-coefficient", cfg.growth_coefficient),
        ("--doubling-time", cfg.doubling_time),
        ("--mean-volume", cfg.mean_volume),
        ("--t-max", cfg.t_max),
    ];
    for (flag, v) in positive {
        if let Some(v) = v {
            if !(v > 0.0 && v.is_finite()) {
                return Err(usage(format!("{flag} must be positive, got {v}")));
            }
        }
    }
    if let Some(a) = cfg.alphas.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(usage(format!("--alphas entries must be positive, got {a}")));
    }
    if !(cfg.epsilon >= 0.0 && cfg.epsilon.is_finite()) {
        return Err(usage(format!(
            "--epsilon must be nonnegative, got {}",
            cfg.epsilon
        )));
    }
    if cfg.n_points.is_some_and(|n| n < 4) {
        return Err(usage("--n-points must be at least 4"));
    }
    if cfg.dx.is_some() && cfg.n_points.is_some() && cfg.x_max.is_some() {
        return Err(usage("give at most two of --dx, --n-points and --x-max"));
    }
    if cfg.record_every == Some(0) {
        return Err(usage("--record-every must be positive"));
    }
    if let Some(f) = cfg.channel_floor {
        if !(f > 0.0 && f < 1.0) {
            return Err(usage(format!(
                "--channel-floor must lie in (0, 1), got {f}"
            )));
        }
    }
    Ok(())
}

fn require_input(cfg: &RunConfig) -> Result<&Path> {
    match &cfg.input {
        Some(p) if !p.as_os_str().is_empty() => Ok(p),
        _ => Err(usage("--input is required for this command")),
    }
}

fn write_file<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> Result<()>,
{
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Uniform grid on `[0, x_max]` honoring `--dx`, `--n-points` and `--x-max`.
fn working_grid(x_max: f64, cfg: &RunConfig) -> Result<UniformGrid> {
    match (cfg.dx, cfg.n_points) {
        (Some(dx), _) => {
            let n = (x_max / dx - 1e-9).ceil() as usize + 1;
            UniformGrid::new(dx, n.max(4))
        }
        (None, n) => UniformGrid::spanning(x_max, n.unwrap_or(DEFAULT_POINTS)),
    }
}

fn oracle_grid(x_max: f64, cfg: &RunConfig) -> Result<UniformGrid> {
    if cfg.dx.is_none() && cfg.n_points.is_none() {
        let n = (x_max / ORACLE_DX - 1e-9).ceil() as usize + 1;
        UniformGrid::new(ORACLE_DX, n)
    } else {
        working_grid(x_max, cfg)
    }
}

fn noise_spec(cfg: &RunConfig) -> Option<NoiseSpec> {
    (cfg.epsilon > 0.0).then_some(NoiseSpec {
        epsilon: cfg.epsilon,
        seed: cfg.seed,
        kind: match cfg.noise {
            NoiseArg::Uniform => NoiseKind::MultiplicativeUniform,
            NoiseArg::Gaussian => NoiseKind::AdditiveGaussian,
        },
    })
}

/// Growth law from flags, then a file footer, then unit linear growth.
fn growth_from(cfg: &RunConfig, meta: Option<&BTreeMap<String, String>>) -> Result<GrowthLaw> {
    let footer_kind = meta
        .and_then(|m| m.get("growth"))
        .map(|s| match s.as_str() {
            "exponential" => Ok(GrowthKind::Exponential),
            "linear" => Ok(GrowthKind::Linear),
            other => Err(Error::Parse {
                line: 0,
                message: format!("unknown growth law `{other}`"),
            }),
        });
    let kind = match (cfg.growth, footer_kind) {
        (Some(g), _) => g.into(),
        (None, Some(k)) => k?,
        (None, None) => GrowthKind::Linear,
    };
    let footer_coef = match meta.and_then(|m| m.get("growth_coefficient")) {
        Some(v) => Some(v.parse::<f64>().map_err(|_| Error::Parse {
            line: 0,
            message: format!("growth_coefficient is not a number: `{v}`"),
        })?),
        None => None,
    };
    let coef = cfg.growth_coefficient.or(footer_coef).unwrap_or(1.0);
    GrowthLaw::of_kind(kind, coef)
}

fn read_rate_file(path: &Path) -> Result<(DivisionRate, io::Table)> {
    let text = fs::read_to_string(path)?;
    io::read_rate(text.as_bytes())
}

/// A measured or synthetic profile on the working grid.
struct Dataset {
    density: SizeDensity,
    meta: DatasetMeta,
    /// Nodes where the spline undershot zero.
    spline_clamped: usize,
    from_histogram: bool,
}

fn header_of(text: &str) -> Option<&str> {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
}

fn apply_overrides(meta: &mut DatasetMeta, cfg: &RunConfig) {
    if cfg.doubling_time.is_some() {
        meta.doubling_time = cfg.doubling_time;
    }
    if cfg.mean_volume.is_some() {
        meta.mean_volume = cfg.mean_volume;
    }
    if let Some(l) = &cfg.label {
        meta.label = l.clone();
    }
}

/// Reads a `volume,count` histogram (completed and interpolated onto the
/// working grid) or an `x,N` density (taken on its own grid).
fn load_dataset(path: &Path, cfg: &RunConfig, grid: Option<&UniformGrid>) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let is_histogram = header_of(&text).is_some_and(|h| h.split(',').any(|c| c.trim() == "volume"));
    if is_histogram {
        let mut h = parse_histogram(text.as_bytes())?;
        apply_overrides(&mut h.meta, cfg);
        let (x_max, grid) = match grid {
            Some(g) => (g.x_max(), *g),
            None => {
                let x_max = cfg.x_max.unwrap_or_else(|| default_x_max(&h));
                (x_max, working_grid(x_max, cfg)?)
            }
        };
        let completed = complete_boundaries(&h, x_max)?;
        let (density, spline_clamped) = to_uniform_density(&completed, &grid)?;
        Ok(Dataset {
            density,
            meta: h.meta,
            spline_clamped,
            from_histogram: true,
        })
    } else {
        let (mut density, table) = io::read_density(text.as_bytes())?;
        if let Some(g) = grid {
            g.ensure_matches(density.grid())?;
        }
        density.normalize()?;
        let mut meta = DatasetMeta {
            doubling_time: table.meta_f64("doubling_time_min")?,
            mean_volume: table.meta_f64("mean_volume")?,
            diameter_sigma: table.meta_f64("sigma_um")?,
            label: table.meta.get("label").cloned().unwrap_or_default(),
        };
        apply_overrides(&mut meta, cfg);
        meta.validate()?;
        Ok(Dataset {
            density,
            meta,
            spline_clamped: 0,
            from_histogram: false,
        })
    }
}

fn dataset_meta_lines(meta: &DatasetMeta) -> Vec<(&'static str, String)> {
    let mut lines = Vec::new();
    if !meta.label.is_empty() {
        lines.push(("label", meta.label.clone()));
    }
    if let Some(t) = meta.doubling_time {
        lines.push(("doubling_time_min", t.to_string()));
    }
    if let Some(v) = meta.mean_volume {
        lines.push(("mean_volume", v.to_string()));
    }
    if let Some(s) = meta.diameter_sigma {
        lines.push(("sigma_um", s.to_string()));
    }
    lines
}

fn growth_name(g: &GrowthLaw) -> &'static str {
    match g {
        GrowthLaw::Linear(_) => "linear",
        GrowthLaw::Exponential(_) => "exponential",
    }
}

fn report_grid(report: &mut Report, grid: &UniformGrid) {
    report.push("n_points", grid.n_points());
    report.push("dx", grid.dx());
    report.push("x_max", grid.x_max());
}

fn cmd_eigen(cfg: &RunConfig) -> Result<Report> {
    let input = require_input(cfg)?;
    let (b, table) = read_rate_file(input)?;
    let g = growth_from(cfg, Some(&table.meta))?;
    let grid = *b.grid();
    let solver = SolverConfig::stable_for(&grid, &g, &b, 1.0);
    let (pair, info) = eigenpair_solve_from(None, &b, &g, &solver)?;
    let meta = vec![
        ("lambda", pair.malthus.to_string()),
        ("growth", growth_name(&g).to_string()),
        ("growth_coefficient", g.coefficient().to_string()),
    ];
    write_file(&cfg.output_dir.join("N.csv"), |w| {
        io::write_density(w, &pair.density, &meta)
    })?;
    let mut r = Report::default();
    r.push("command", "eigen");
    r.push("lambda0", pair.malthus);
    r.push("moment_identity", info.moment_rate);
    r.push("cross_check_gap", (pair.malthus - info.moment_rate).abs());
    r.push("cross_check_bound", 10.0 * grid.dx());
    r.push("growth", growth_name(&g));
    r.push("growth_coefficient", g.coefficient());
    r.push("steps", info.steps);
    r.push("time", info.time);
    r.push("last_change", info.last_change);
    r.push("clamped_mass", info.clamped_mass);
    report_grid(&mut r, &grid);
    Ok(r)
}

/// Smooth bump supported on `[x_max/8, 3x_max/8]`, so nothing reaches the
/// right end over moderate run times.
fn compact_start(grid: &UniformGrid) -> Result<SizeDensity> {
    let c = grid.x_max() / 4.0;
    let w = grid.x_max() / 8.0;
    SizeDensity::normalized(
        *grid,
        grid.sample(|x| {
            let s = (x - c) / w;
            if s.abs() < 1.0 {
                (-1.0 / (1.0 - s * s)).exp()
            } else {
                0.0
            }
        }),
    )
}

fn cmd_simulate(cfg: &RunConfig) -> Result<Report> {
    let input = require_input(cfg)?;
    let (b, table) = read_rate_file(input)?;
    let g = growth_from(cfg, Some(&table.meta))?;
    let grid = *b.grid();
    let n0 = match &cfg.data {
        Some(p) => load_dataset(p, cfg, Some(&grid))?.density,
        None => compact_start(&grid)?,
    };
    let t_max = cfg.t_max.unwrap_or(1.0);
    let mut solver = SolverConfig::stable_for(&grid, &g, &b, t_max);
    let steps = (t_max / solver.dt).ceil().max(1.0) as usize;
    solver = solver.with_record_every(cfg.record_every.unwrap_or((steps / 100).max(1)));
    let traj = transient_solve(&n0, &b, &g, &solver)?;
    write_file(&cfg.output_dir.join("trajectory.csv"), |w| {
        traj.write_csv(w)
    })?;
    let last = traj.states.last().expect("at least the initial state");
    let mut r = Report::default();
    r.push("command", "simulate");
    r.push("t_max", t_max);
    r.push("dt", solver.dt);
    r.push("recorded_states", traj.states.len());
    r.push("final_number", last.total_number);
    r.push("final_biomass", last.total_biomass);
    r.push("clamped_mass", traj.clamped_mass);
    match balance_residuals(&traj, &b, &g) {
        Ok((nr, br)) => {
            r.push("number_residual", nr);
            r.push("biomass_residual", br);
        }
        Err(Error::TooFewPoints { .. }) => r.push("balance", "too few recorded states"),
        Err(e) => return Err(e),
    }
    report_grid(&mut r, &grid);
    Ok(r)
}

/// Growth law and `λ` for a calibration run.
struct Calibration {
    growth: GrowthLaw,
    lambda_override: Option<f64>,
    source: LambdaSource,
}

fn calibration(cfg: &RunConfig, data: &Dataset) -> Result<Calibration> {
    let kind: GrowthKind = cfg.growth.unwrap_or(GrowthArg::Linear).into();
    let source = cfg
        .lambda_source
        .unwrap_or(if data.meta.doubling_time.is_some() {
            LambdaSource::Doubling
        } else {
            LambdaSource::Eq7
        });
    match source {
        LambdaSource::Doubling => {
            let (lambda0, law) = growth_constant_from_doubling(&data.meta, &data.density, kind)?;
            let law = match cfg.growth_coefficient {
                Some(c) => GrowthLaw::of_kind(kind, c)?,
                None => law,
            };
            Ok(Calibration {
                growth: law,
                lambda_override: Some(lambda0),
                source,
            })
        }
        LambdaSource::Eq7 => Ok(Calibration {
            growth: GrowthLaw::of_kind(kind, cfg.growth_coefficient.unwrap_or(1.0))?,
            lambda_override: None,
            source,
        }),
    }
}

fn sweep_method(cfg: &RunConfig, grid: &UniformGrid) -> SweepMethod {
    match cfg.method {
        MethodArg::Exact => SweepMethod::Exact,
        MethodArg::Qr => SweepMethod::QuasiReversibility,
        MethodArg::Filter => SweepMethod::Filtering,
        MethodArg::Hybrid => SweepMethod::Hybrid {
            alpha_filter: cfg.alpha_filter.unwrap_or_else(|| {
                if cfg.epsilon > 0.0 {
                    cfg.epsilon.sqrt()
                } else {
                    4.0 * grid.dx()
                }
            }),
        },
    }
}

/// Sweep under the thread cap of `DIVRATE_THREADS`, if set.
fn run_sweep(
    method: SweepMethod,
    n: &SizeDensity,
    alphas: &[f64],
    g: &GrowthLaw,
    lambda: Option<f64>,
) -> Result<AlphaSweep> {
    match std::env::var("DIVRATE_THREADS") {
        Ok(v) => {
            let threads: usize = v.trim().parse().ok().filter(|t| *t > 0).ok_or_else(|| {
                usage(format!(
                    "DIVRATE_THREADS must be a positive integer, got `{v}`"
                ))
            })?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| usage(format!("cannot build thread pool: {e}")))?;
            pool.install(|| sweep_alpha(method, n, alphas, g, lambda))
        }
        Err(_) => sweep_alpha(method, n, alphas, g, lambda),
    }
}

/// A reconstruction and, when α was selected automatically, the sweep
/// behind the choice.
struct Inversion {
    result: ReconstructionResult,
    sweep: Option<AlphaSweep>,
    flat: Option<bool>,
    lcurve_degenerate: Option<bool>,
}

fn invert(cfg: &RunConfig, n: &SizeDensity, cal: &Calibration) -> Result<Inversion> {
    let method = sweep_method(cfg, n.grid());
    if method.method() == Method::Exact {
        return Ok(Inversion {
            result: method.run(n, 0.0, &cal.growth, cal.lambda_override)?,
            sweep: None,
            flat: None,
            lcurve_degenerate: None,
        });
    }
    if let Some(alpha) = cfg.alpha {
        return Ok(Inversion {
            result: method.run(n, alpha, &cal.growth, cal.lambda_override)?,
            sweep: None,
            flat: None,
            lcurve_degenerate: None,
        });
    }
    let alphas: Vec<f64> = if cfg.alphas.is_empty() {
        DEFAULT_ALPHAS.to_vec()
    } else {
        cfg.alphas.clone()
    };
    let sweep = run_sweep(method, n, &alphas, &cal.growth, cal.lambda_override)?;
    let (alpha, flat, degenerate) = match cfg.select.unwrap_or(Select::Ratio) {
        Select::Ratio => {
            let c = select_alpha_ratio(&sweep)?;
            (c.alpha, Some(c.flat), None)
        }
        Select::Lcurve => {
            let norms: Vec<f64> = sweep
                .solution_norms()
                .into_iter()
                .map(|v| v.unwrap_or(f64::NAN))
                .collect();
            let c = select_alpha_lcurve(&sweep, &norms)?;
            (c.alpha, None, Some(c.degenerate))
        }
        Select::None => return Err(usage("--select none requires --alpha")),
    };
    let result = sweep.get(alpha).cloned().ok_or_else(|| {
        Error::NonConverged(format!("selected alpha {alpha} has no reconstruction"))
    })?;
    Ok(Inversion {
        result,
        sweep: Some(sweep),
        flat,
        lcurve_degenerate: degenerate,
    })
}

fn report_inversion(r: &mut Report, inv: &Inversion, growth: &GrowthLaw) {
    let res = &inv.result;
    r.push("method", res.method);
    r.push("growth", growth_name(growth));
    match growth {
        GrowthLaw::Linear(g0) => r.push("g0", g0),
        GrowthLaw::Exponential(k) => r.push("kappa", k),
    }
    r.push("lambda_used", res.lambda_used);
    r.push("alpha", res.alpha);
    if let Some(sweep) = &inv.sweep {
        r.push("alpha_star", res.alpha);
        r.push(
            "swept_alphas",
            sweep
                .alphas()
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
    }
    if let Some(flat) = inv.flat {
        r.push("flat", flat);
    }
    if let Some(d) = inv.lcurve_degenerate {
        r.push("lcurve_degenerate", d);
    }
    r.push("residual", res.residual);
    let d = &res.diagnostics;
    if let Some(w) = d.filter_width {
        r.push("filter_width", w);
    }
    r.push("oversmoothed", d.oversmoothed);
    r.push("clamped_count", d.clamped_count);
    r.push("clamped_mass", d.clamped_mass);
    r.push("division_mass", res.division_mass());
    r.push("floored_count", d.floored_count);
}

fn load_calibration_input(cfg: &RunConfig) -> Result<Dataset> {
    let input = require_input(cfg)?;
    let mut data = load_dataset(input, cfg, None)?;
    if let Some(spec) = noise_spec(cfg) {
        data.density = add_noise(&data.density, &spec)?.density;
    }
    Ok(data)
}

fn write_data_density(cfg: &RunConfig, data: &Dataset) -> Result<()> {
    let meta = dataset_meta_lines(&data.meta);
    write_file(&cfg.output_dir.join("N.csv"), |w| {
        io::write_density(w, &data.density, &meta)
    })
}

fn report_dataset(r: &mut Report, data: &Dataset, cal: &Calibration) {
    if !data.meta.label.is_empty() {
        r.push("label", &data.meta.label);
    }
    r.push(
        "input_kind",
        if data.from_histogram {
            "histogram"
        } else {
            "density"
        },
    );
    if let Some(t) = data.meta.doubling_time {
        r.push("doubling_time_min", t);
    }
    r.push(
        "lambda_source",
        match cal.source {
            LambdaSource::Eq7 => "eq7",
            LambdaSource::Doubling => "doubling",
        },
    );
    if let Some(l) = cal.lambda_override {
        r.push("lambda0", l);
    }
    r.push("spline_clamped", data.spline_clamped);
    report_grid(r, data.density.grid());
}

fn cmd_calibrate(cfg: &RunConfig) -> Result<Report> {
    let data = load_calibration_input(cfg)?;
    let cal = calibration(cfg, &data)?;
    let inv = invert(cfg, &data.density, &cal)?;
    write_data_density(cfg, &data)?;
    write_file(&cfg.output_dir.join("B.csv"), |w| {
        inv.result.write_csv(w, &cal.growth)
    })?;
    if let Some(sweep) = &inv.sweep {
        write_file(&cfg.output_dir.join("sweep.csv"), |w| sweep.write_csv(w))?;
    }
    let mut r = Report::default();
    r.push("command", "calibrate");
    report_dataset(&mut r, &data, &cal);
    if cal.lambda_override.is_none() {
        r.push("lambda0", inv.result.lambda_used);
    }
    report_inversion(&mut r, &inv, &cal.growth);
    Ok(r)
}

fn cmd_sweep(cfg: &RunConfig) -> Result<Report> {
    let data = load_calibration_input(cfg)?;
    let cal = calibration(cfg, &data)?;
    let method = sweep_method(cfg, data.density.grid());
    let alphas: Vec<f64> = if cfg.alphas.is_empty() {
        DEFAULT_ALPHAS.to_vec()
    } else {
        cfg.alphas.clone()
    };
    let sweep = run_sweep(
        method,
        &data.density,
        &alphas,
        &cal.growth,
        cal.lambda_override,
    )?;
    write_file(&cfg.output_dir.join("sweep.csv"), |w| sweep.write_csv(w))?;
    let mut r = Report::default();
    r.push("command", "sweep");
    report_dataset(&mut r, &data, &cal);
    r.push("method", sweep.method);
    r.push("growth", growth_name(&cal.growth));
    r.push(
        "failed",
        sweep.entries.iter().filter(|e| e.outcome.is_err()).count(),
    );
    let ratio = select_alpha_ratio(&sweep)?;
    r.push("ratio_alpha", ratio.alpha);
    r.push("flat", ratio.flat);
    let norms: Vec<f64> = sweep
        .solution_norms()
        .into_iter()
        .map(|v| v.unwrap_or(f64::NAN))
        .collect();
    match select_alpha_lcurve(&sweep, &norms) {
        Ok(c) => {
            r.push("lcurve_alpha", c.alpha);
            r.push("lcurve_degenerate", c.degenerate);
        }
        Err(Error::TooFewPoints { .. }) => r.push("lcurve_alpha", "n/a"),
        Err(e) => return Err(e),
    }
    Ok(r)
}

/// Oracle name or rate file given by `--rate`.
fn rate_source(cfg: &RunConfig) -> Result<(DivisionRate, String, Option<OracleRate>)> {
    let spec = cfg.rate.as_deref().unwrap_or("bump");
    match spec.parse::<OracleRate>() {
        Ok(oracle) => {
            let x_max = cfg.x_max.unwrap_or_else(|| oracle.default_x_max());
            let grid = oracle_grid(x_max, cfg)?;
            Ok((oracle.sample(&grid)?, oracle.to_string(), Some(oracle)))
        }
        Err(_) if Path::new(spec).exists() => {
            let (b, _) = read_rate_file(Path::new(spec))?;
            Ok((b, spec.to_string(), None))
        }
        Err(e) => Err(e),
    }
}

fn cmd_roundtrip(cfg: &RunConfig) -> Result<Report> {
    if cfg.rate.is_some() || cfg.input.is_none() {
        synthetic_roundtrip(cfg)
    } else {
        reconstruction_roundtrip(cfg)
    }
}

/// Forward solve of a reconstructed rate compared with the data it came from.
fn reconstruction_roundtrip(cfg: &RunConfig) -> Result<Report> {
    let input = require_input(cfg)?;
    let (b, table) = read_rate_file(input)?;
    if b.is_identically_zero() {
        return Err(Error::DegenerateInput(
            "division rate is identically zero".to_string(),
        ));
    }
    let g = growth_from(cfg, Some(&table.meta))?;
    let grid = *b.grid();
    let data_in = match &cfg.data {
        Some(p) => load_dataset(p, cfg, Some(&grid))?.density,
        None => {
            let n_used = table.require_column("N_used")?;
            SizeDensity::normalized(grid, n_used)?
        }
    };
    let solver = SolverConfig::stable_for(&grid, &g, &b, 1.0);
    let (pair, info) = eigenpair_solve_from(None, &b, &g, &solver)?;
    write_file(&cfg.output_dir.join("N.csv"), |w| {
        io::write_density(w, &pair.density, &[("lambda", pair.malthus.to_string())])
    })?;
    let lambda_in = match table.meta_f64("lambda")? {
        Some(l) => l,
        None => malthus_from_density(&data_in, &g)?,
    };
    let mut r = Report::default();
    r.push("command", "roundtrip");
    r.push("mode", "reconstruction");
    r.push(
        "l1_distance",
        compare::l1_distance(&pair.density, &data_in)?,
    );
    r.push("lambda_reconstruction", lambda_in);
    r.push("lambda_forward", pair.malthus);
    r.push("lambda_mismatch", (pair.malthus - lambda_in).abs());
    r.push("eigen_steps", info.steps);
    report_grid(&mut r, &grid);
    Ok(r)
}

/// Rate → stationary profile → noise → inversion → stationary profile.
fn synthetic_roundtrip(cfg: &RunConfig) -> Result<Report> {
    let (b_true, name, oracle) = rate_source(cfg)?;
    let grid = *b_true.grid();
    let g = GrowthLaw::of_kind(
        cfg.growth.unwrap_or(GrowthArg::Linear).into(),
        cfg.growth_coefficient.unwrap_or(1.0),
    )?;
    let solver = SolverConfig::stable_for(&grid, &g, &b_true, 1.0);
    let (truth, _) = eigenpair_solve_from(None, &b_true, &g, &solver)?;
    let (data, realized) = match noise_spec(cfg) {
        Some(spec) => {
            let noisy = add_noise(&truth.density, &spec)?;
            (noisy.density, noisy.realized)
        }
        None => (truth.density.clone(), 0.0),
    };
    let lambda_override = match cfg.lambda_source {
        Some(LambdaSource::Doubling) => Some(truth.malthus),
        _ => None,
    };
    let cal = Calibration {
        growth: g,
        lambda_override,
        source: cfg.lambda_source.unwrap_or(LambdaSource::Eq7),
    };
    let inv = invert(cfg, &data, &cal)?;
    let rec = &inv.result;
    let solver = SolverConfig::stable_for(&grid, &g, &rec.rate, 1.0);
    let (out, _) = eigenpair_solve_from(None, &rec.rate, &g, &solver)?;

    let dir = &cfg.output_dir;
    write_file(&dir.join("B_true.csv"), |w| {
        io::write_rate(w, &b_true, &[("rate", name.clone())])
    })?;
    write_file(&dir.join("N_true.csv"), |w| {
        io::write_density(w, &truth.density, &[("lambda", truth.malthus.to_string())])
    })?;
    write_file(&dir.join("N_data.csv"), |w| {
        io::write_density(w, &data, &[])
    })?;
    write_file(&dir.join("B.csv"), |w| rec.write_csv(w, &g))?;
    write_file(&dir.join("N_out.csv"), |w| {
        io::write_density(w, &out.density, &[("lambda", out.malthus.to_string())])
    })?;
    if let Some(sweep) = &inv.sweep {
        write_file(&dir.join("sweep.csv"), |w| sweep.write_csv(w))?;
    }

    let mut r = Report::default();
    r.push("command", "roundtrip");
    r.push("mode", "synthetic");
    r.push("rate", &name);
    r.push("epsilon", cfg.epsilon);
    r.push("seed", cfg.seed);
    r.push("realized_noise", realized);
    r.push("lambda_true", truth.malthus);
    r.push("lambda_forward", out.malthus);
    r.push("lambda_mismatch", (out.malthus - truth.malthus).abs());
    r.push(
        "l1_distance",
        compare::l1_distance(&out.density, &truth.density)?,
    );
    r.push(
        "l1_distance_data",
        compare::l1_distance(&out.density, &data)?,
    );
    r.push(
        "rate_error",
        compare::weighted_rate_error(rec.rate.values(), &b_true, &truth.density, RESOLVED_LEVEL)?,
    );
    if let Some(peak) = oracle.and_then(|o| o.peak()) {
        r.push("rate_peak_true", peak);
        if let Some(p) = compare::resolved_peak(rec.rate.values(), &truth.density, RESOLVED_LEVEL) {
            r.push("rate_peak", p);
        }
    }
    report_inversion(&mut r, &inv, &g);
    report_grid(&mut r, &grid);
    Ok(r)
}

fn cmd_synth(cfg: &RunConfig) -> Result<Report> {
    let oracle: OracleRate = cfg.rate.as_deref().unwrap_or("bump").parse()?;
    let x_max = cfg.x_max.unwrap_or_else(|| oracle.default_x_max());
    let grid = oracle_grid(x_max, cfg)?;
    let (b, pair, _) = oracle_eigenpair(&oracle, &grid)?;
    let scale = match (cfg.doubling_time, cfg.mean_volume) {
        (Some(t), Some(v)) => Some(PhysicalScale {
            doubling_time: t,
            mean_volume: v,
        }),
        (None, None) => None,
        _ => {
            return Err(usage(
                "--doubling-time and --mean-volume must be given together",
            ))
        }
    };
    let scaled = rescale(&b, &pair, scale.as_ref())?;
    let mut spec = SynthSpec::new(cfg.channels);
    if let Some(f) = cfg.channel_floor {
        spec.floor = f;
    }
    spec.noise = noise_spec(cfg);
    spec.label = cfg.label.clone().unwrap_or_else(|| oracle.to_string());
    let hist = sample_histogram(&scaled, &spec, scale.as_ref())?;
    let dir = &cfg.output_dir;
    write_file(&dir.join("histogram.csv"), |w| {
        w.write_all(hist.to_csv().as_bytes())?;
        Ok(())
    })?;
    let growth_meta = vec![
        ("rate", oracle.to_string()),
        ("growth", growth_name(&scaled.growth).to_string()),
        (
            "growth_coefficient",
            scaled.growth.coefficient().to_string(),
        ),
        ("lambda", scaled.malthus.to_string()),
    ];
    write_file(&dir.join("B_true.csv"), |w| {
        io::write_rate(w, &scaled.rate, &growth_meta)
    })?;
    write_file(&dir.join("N_true.csv"), |w| {
        io::write_density(
            w,
            &scaled.density,
            &[("lambda", scaled.malthus.to_string())],
        )
    })?;
    let mut r = Report::default();
    r.push("command", "synth");
    r.push("rate", oracle);
    r.push("label", &spec.label);
    r.push("channels", hist.points.len());
    r.push("epsilon", cfg.epsilon);
    r.push("seed", cfg.seed);
    r.push("lambda0", scaled.malthus);
    r.push("growth_coefficient", scaled.growth.coefficient());
    r.push("max_volume", hist.max_volume());
    report_grid(&mut r, scaled.density.grid());
    Ok(r)
}
