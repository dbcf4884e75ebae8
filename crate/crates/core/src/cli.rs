//! Command-line front end: `synth`, `fit`, `quick`, `batch` and `mc`.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use thiserror::Error;

use crate::dist::{BatchDistribution, BatchSample, DistError, KOLMOGOROV_CRITICAL_5PCT};
use crate::extract::{self, FitError, Weighting};
use crate::io::{self, BatchFile, IoError, RunConfig, SweepColumns, SweepFile, SweepRow};
use crate::model::Topology;
use crate::sim::{self, SimError};

/// Exit status classes.
pub mod exit {
    pub const USAGE: i32 = 2;
    pub const PARSE: i32 = 3;
    pub const NUMERICAL: i32 = 4;
    pub const IO: i32 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Io(IoError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io(IoError::Config { .. }) => exit::USAGE,
            CliError::Io(IoError::Parse { .. }) => exit::PARSE,
            CliError::Io(IoError::Io { .. }) => exit::IO,
            CliError::Fit(_) | CliError::Sim(_) | CliError::Dist(_) => exit::NUMERICAL,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "opamp-crossover",
    version,
    about = "Op-amp crossover frequency from closed-loop gain sweeps"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a gain sweep and write it as CSV.
    Synth {
        #[command(flatten)]
        run: RunArgs,
        /// Output file; stdout when omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Fit f0 by linear regression of 1/Y² against f².
    Fit {
        sweep: PathBuf,
        #[command(flatten)]
        topo: TopoArgs,
        /// Weight points by 1/(1/Y²)², for constant relative gain error.
        #[arg(long)]
        weighted: bool,
        /// Directory for the transformed points and the fitted line.
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Quick f0 from the frequency at which the gain drops by a factor n.
    Quick {
        sweep: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        n: f64,
        #[command(flatten)]
        topo: TopoArgs,
        /// Average the lowest tenth of the sweep for the low-frequency gain.
        #[arg(long)]
        decile: bool,
    },
    /// Distribution analysis of a batch of fitted f0 values.
    Batch {
        batch: PathBuf,
        /// Directory for the ECDF points and the normal CDF curve.
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Repeat synth and fit with per-trial seeds.
    Mc {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Correlation a fit must reach to count as passing.
        #[arg(long, default_value_t = 0.999)]
        corr_threshold: f64,
        /// Batch file of fitted f0 values.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Relative gain noise sigma.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub fmin: Option<f64>,
    #[arg(long)]
    pub fmax: Option<f64>,
    /// linear or log
    #[arg(long)]
    pub spacing: Option<String>,
    /// Crossover frequency of the simulated device in Hz.
    #[arg(long)]
    pub f0: Option<f64>,
    #[command(flatten)]
    pub topo: TopoArgs,
}

#[derive(Debug, Args, Default, Clone, Copy)]
pub struct TopoArgs {
    /// Feedback resistance R in ohms.
    #[arg(long = "R")]
    pub feedback_r: Option<f64>,
    /// Gain resistance r in ohms.
    #[arg(long = "r")]
    pub gain_r: Option<f64>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.noise {
            cfg.sigma_rel = v;
        }
        if let Some(v) = self.points {
            cfg.n_points = v;
        }
        if let Some(v) = self.fmin {
            cfg.f_min = v;
        }
        if let Some(v) = self.fmax {
            cfg.f_max = v;
        }
        if let Some(v) = &self.spacing {
            cfg.spacing = v.clone();
        }
        if let Some(v) = self.f0 {
            cfg.f0_hz = v;
        }
        if let Some(v) = self.topo.feedback_r {
            cfg.feedback_r = v;
        }
        if let Some(v) = self.topo.gain_r {
            cfg.gain_r = Some(v);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl TopoArgs {
    /// Topology from the flags, falling back to the file's metadata.
    fn resolve(&self, file: &SweepFile) -> Result<Option<Topology>, CliError> {
        match (self.feedback_r, self.gain_r) {
            (Some(big), Some(small)) => Topology::new(big, small)
                .map(Some)
                .map_err(|e| CliError::Usage(e.to_string())),
            (None, None) => Ok(file.metadata_topology()?),
            _ => Err(CliError::Usage("--R and --r must be given together".into())),
        }
    }
}

/// Formats with six significant figures, switching to exponent notation
/// outside 1e-4..1e9.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..6).contains(&mag) {
        let decimals = (5 - mag) as usize;
        format!("{x:.decimals$}")
    } else if (6..9).contains(&mag) {
        let scale = 10f64.powi(mag - 5);
        format!("{:.0}", (x / scale).round() * scale)
    } else {
        format!("{x:.5e}")
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let report = match cli.command {
        Command::Synth { run, out: path } => cmd_synth(&run.resolve()?, path.as_deref())?,
        Command::Fit {
            sweep,
            topo,
            weighted,
            plot_data,
        } => cmd_fit(&sweep, topo, weighted, plot_data.as_deref())?,
        Command::Quick {
            sweep,
            n,
            topo,
            decile,
        } => cmd_quick(&sweep, n, topo, decile)?,
        Command::Batch { batch, plot_data } => cmd_batch(&batch, plot_data.as_deref())?,
        Command::Mc {
            run,
            trials,
            corr_threshold,
            out: path,
        } => cmd_mc(&run.resolve()?, trials, corr_threshold, path.as_deref())?,
    };
    out.write_all(report.as_bytes()).map_err(|source| {
        CliError::Io(IoError::Io {
            path: "<stdout>".into(),
            source,
        })
    })
}

/// Renders the synthetic sweep for `cfg`, with the truth as metadata.
pub fn synth_file(cfg: &RunConfig) -> Result<SweepFile, CliError> {
    let dev = cfg.device()?;
    let topo = cfg.topology()?;
    let record = sim::run_sweep(
        &dev,
        &topo,
        &cfg.plan()?,
        &cfg.noise()?,
        &cfg.sim()?,
        cfg.seed,
    )?;

    let mut file = SweepFile::new(SweepColumns::Gain);
    file.push_metadata("source", "synth");
    file.push_metadata("seed", cfg.seed);
    file.push_metadata("f0_hz", cfg.f0_hz);
    file.push_metadata("g0", cfg.g0.map_or("inf".to_string(), |g| g.to_string()));
    file.push_metadata("feedback_r", cfg.feedback_r);
    file.push_metadata(
        "gain_r",
        cfg.gain_r.map_or("open".to_string(), |g| g.to_string()),
    );
    if let (Some(r1), Some(r2)) = (cfg.divider_r1, cfg.divider_r2) {
        file.push_metadata("divider_r1", r1);
        file.push_metadata("divider_r2", r2);
    }
    file.push_metadata("sigma_rel", cfg.sigma_rel);
    file.push_metadata("spacing", &cfg.spacing);
    for p in record.points() {
        file.push_row(SweepRow::Gain {
            frequency_hz: p.f,
            gain: p.y,
        });
    }
    Ok(file)
}

pub fn cmd_synth(cfg: &RunConfig, path: Option<&Path>) -> Result<String, CliError> {
    let file = synth_file(cfg)?;
    match path {
        Some(p) => {
            file.write(p)?;
            Ok(format!(
                "wrote {} points to {} (seed {}, f0 {} Hz)\n",
                file.rows().count(),
                p.display(),
                cfg.seed,
                cfg.f0_hz
            ))
        }
        None => Ok(file.render()),
    }
}

pub fn cmd_fit(
    path: &Path,
    topo: TopoArgs,
    weighted: bool,
    plot_dir: Option<&Path>,
) -> Result<String, CliError> {
    let file = SweepFile::read(path)?;
    let topology = topo.resolve(&file)?;
    let record = file.to_record(topology)?;
    let weighting = if weighted {
        Weighting::RelativeGain
    } else {
        Weighting::Unweighted
    };
    let fit = extract::fit_f0_with(&record, weighting)?;

    let mut r = String::new();
    let _ = writeln!(r, "points      {}", fit.n_points);
    let _ = writeln!(r, "f0_hz       {}", sig6(fit.f0));
    let _ = writeln!(r, "f0_mhz      {}", sig6(fit.f0 / 1e6));
    let _ = writeln!(r, "slope       {}", sig6(fit.slope));
    let _ = writeln!(r, "intercept   {}", sig6(fit.intercept));
    if let (Some(e), Some(d)) = (fit.intercept_expected, fit.intercept_rel_dev) {
        let _ = writeln!(r, "expected    {}", sig6(e));
        let _ = writeln!(r, "deviation   {}", sig6(d));
        if fit.is_miscalibrated() {
            let _ = writeln!(r, "warning: intercept deviates more than 20% from 1/(R/r+1)^2; check gain calibration");
        }
    }
    let _ = writeln!(r, "corr        {}", sig6(fit.corr));

    if let Some(dir) = plot_dir {
        std::fs::create_dir_all(dir).map_err(|source| IoError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let pts = record.transformed();
        let header = "frequency_sq_hz2,inverse_gain_sq";
        io::write_text(
            &dir.join("fit_points.csv"),
            &io::render_xy(header, pts.iter().copied()),
        )?;
        let (u0, u1) = (pts[0].0, pts[pts.len() - 1].0);
        let line = (0..=100).map(|i| {
            let u = u0 + (u1 - u0) * i as f64 / 100.0;
            (u, fit.line_at(u))
        });
        io::write_text(&dir.join("fit_line.csv"), &io::render_xy(header, line))?;
        let _ = writeln!(r, "plot data   {}", dir.display());
    }
    Ok(r)
}

pub fn cmd_quick(path: &Path, n: f64, topo: TopoArgs, decile: bool) -> Result<String, CliError> {
    if !(n > 1.0) || !n.is_finite() {
        return Err(CliError::Usage(format!("--n must be > 1, got {n}")));
    }
    let file = SweepFile::read(path)?;
    let topology = topo.resolve(&file)?;
    let record = file.to_record(topology)?;
    let mode = if decile {
        extract::LowFrequencyGain::LowestDecile
    } else {
        extract::LowFrequencyGain::FirstPoint
    };
    let q = extract::quick_fit_f0_with(&record, n, mode)?;

    let mut r = String::new();
    let _ = writeln!(r, "n           {}", sig6(q.n));
    let _ = writeln!(r, "y0          {}", sig6(q.y0));
    let _ = writeln!(r, "gain used   {}", sig6(q.dc_gain_used));
    let _ = writeln!(
        r,
        "bracket     {},{} .. {},{}",
        q.lower.f, q.lower.y, q.upper.f, q.upper.y
    );
    let _ = writeln!(r, "f_1/n_hz    {}", sig6(q.f_1_over_n));
    let _ = writeln!(r, "f0_hz       {}", sig6(q.f0));
    let _ = writeln!(r, "f0_mhz      {}", sig6(q.f0 / 1e6));
    Ok(r)
}

pub fn cmd_batch(path: &Path, plot_dir: Option<&Path>) -> Result<String, CliError> {
    let samples = BatchFile::read(path)?.samples();
    let mut r = String::new();
    let values: Vec<f64> = samples.iter().map(|s| s.f0).collect();
    let (mean, sd) = crate::dist::batch_stats(&values)?;
    let _ = writeln!(r, "N           {}", samples.len());
    let _ = writeln!(r, "mean_hz     {}", sig6(mean));
    let _ = writeln!(r, "mean_mhz    {}", sig6(mean / 1e6));
    let _ = writeln!(r, "stddev_hz   {}", sig6(sd));
    let _ = writeln!(r, "stddev_mhz  {}", sig6(sd / 1e6));
    if sd == 0.0 {
        let _ = writeln!(
            r,
            "degenerate batch: all f0 values are equal, ECDF and normal fit are undefined"
        );
        return Ok(r);
    }
    let dist = BatchDistribution::analyze(samples)?;
    let _ = writeln!(r, "spread_pct  {}", sig6(100.0 * dist.relative_spread()));
    let _ = writeln!(r, "kolmogorov_d          {}", sig6(dist.kolmogorov_d()));
    let _ = writeln!(
        r,
        "kolmogorov_d_onesided {}",
        sig6(dist.fit.kolmogorov_d_one_sided)
    );
    let _ = writeln!(
        r,
        "sqrt_n_d    {} (5% Kolmogorov critical {})",
        sig6(dist.fit.scaled_d(dist.n)),
        KOLMOGOROV_CRITICAL_5PCT
    );
    let _ = writeln!(r, "cdf_corr    {}", sig6(dist.cdf_corr()));

    if let Some(dir) = plot_dir {
        std::fs::create_dir_all(dir).map_err(|source| IoError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        io::write_text(
            &dir.join("ecdf.csv"),
            &io::render_xy("x,p", dist.ecdf.iter().map(|e| (e.x, e.p))),
        )?;
        let lo = dist.ecdf[0].x.min(-3.0);
        let hi = dist.ecdf[dist.n - 1].x.max(3.0);
        let curve = (0..=200).map(|i| {
            let x = lo + (hi - lo) * i as f64 / 200.0;
            (x, crate::dist::normal_cdf(x))
        });
        io::write_text(&dir.join("normal_cdf.csv"), &io::render_xy("x,phi", curve))?;
        let _ = writeln!(r, "plot data   {}", dir.display());
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub f0: Vec<f64>,
    pub corr: Vec<f64>,
}

/// Simulates the sweep once, then fits `trials` noisy copies with seeds
/// `seed, seed + 1, ...`. Equivalent to running `synth` then `fit` per
/// trial, since the noise is applied after simulation.
pub fn monte_carlo(cfg: &RunConfig, trials: usize) -> Result<McSummary, CliError> {
    if trials < 1 {
        return Err(CliError::Usage("--trials must be >= 1".into()));
    }
    let dev = cfg.device()?;
    let topo = cfg.topology()?;
    let noise = cfg.noise()?;
    let clean = sim::simulate_sweep(&dev, &topo, &cfg.plan()?, &cfg.sim()?)?;
    let fits: Vec<_> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let rec = sim::noisy_record(&clean, &topo, &noise, cfg.seed.wrapping_add(t))?;
            Ok::<_, CliError>(extract::fit_f0(&rec)?)
        })
        .collect::<Result<_, _>>()?;
    Ok(McSummary {
        f0: fits.iter().map(|f| f.f0).collect(),
        corr: fits.iter().map(|f| f.corr).collect(),
    })
}

pub fn cmd_mc(
    cfg: &RunConfig,
    trials: usize,
    corr_threshold: f64,
    path: Option<&Path>,
) -> Result<String, CliError> {
    let mc = monte_carlo(cfg, trials)?;
    let mut r = String::new();
    let _ = writeln!(r, "trials      {trials}");
    let _ = writeln!(r, "truth_hz    {}", sig6(cfg.f0_hz));
    let mean = mc.f0.iter().sum::<f64>() / trials as f64;
    let _ = writeln!(r, "mean_hz     {}", sig6(mean));
    if trials >= 2 {
        let (_, sd) = crate::dist::batch_stats(&mc.f0)?;
        let _ = writeln!(r, "stddev_hz   {}", sig6(sd));
        let _ = writeln!(r, "spread_pct  {}", sig6(100.0 * sd / mean));
    }
    let passing = mc.corr.iter().filter(|&&c| c >= corr_threshold).count();
    let min_corr = mc.corr.iter().copied().fold(f64::INFINITY, f64::min);
    let _ = writeln!(r, "min_corr    {}", sig6(min_corr));
    let _ = writeln!(
        r,
        "pass        {passing}/{trials} with corr >= {corr_threshold} ({}%)",
        sig6(100.0 * passing as f64 / trials as f64)
    );

    if let Some(p) = path {
        let mut batch =
            BatchFile::from_samples(mc.f0.iter().enumerate().map(|(i, &f0)| BatchSample {
                id: format!("trial{i:05}"),
                f0,
            }));
        batch.push_metadata("source", "mc");
        batch.push_metadata("seed", cfg.seed);
        batch.push_metadata("f0_hz", cfg.f0_hz);
        batch.push_metadata("sigma_rel", cfg.sigma_rel);
        batch.write(p)?;
        let _ = writeln!(r, "batch       {}", p.display());
    }
    Ok(r)
}
