//! Command-line front end.
//!
//! Every command that writes a file also writes `<out>.manifest.toml` next to
//! it. The manifest records the fully resolved invocation, so
//! `ingarch replay --manifest <file>` reruns it and reproduces the output.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::{self, BoundMode, CouplingError, CouplingWeights, MixingOptions};
use crate::dist::{DistError, Family, DEFAULT_TAIL_EPS};
use crate::estimate::{self, EstimateError, FitOptions, DEFAULT_OMEGA_MIN};
use crate::io::{self as series_io, fmt_sig, SeriesIoError};
use crate::mc::{self, McError, StudyConfig};
use crate::model::{
    self, ChainState, ModelError, SimulationOptions, VolatilitySpec, DEFAULT_BURN_IN,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DOMAIN: i32 = 3;
pub const EXIT_SINGULAR: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("bad config: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("I/O error on {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Domain(_) => EXIT_DOMAIN,
            CliError::Singular(_) => EXIT_SINGULAR,
            CliError::Io { .. } => EXIT_IO,
            CliError::Other(_) => EXIT_OTHER,
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Spec(_) | ModelError::LagLength { .. } => CliError::Config(e.to_string()),
            ModelError::Dist(DistError::Parameter(_)) => CliError::Config(e.to_string()),
            _ => CliError::Domain(e.to_string()),
        }
    }
}

impl From<CouplingError> for CliError {
    fn from(e: CouplingError) -> Self {
        match e {
            CouplingError::Model(m) => m.into(),
            CouplingError::Dist(DistError::Parameter(_)) => CliError::Config(e.to_string()),
            CouplingError::Dist(_) | CouplingError::TruncationExhausted { .. } => {
                CliError::Domain(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<EstimateError> for CliError {
    fn from(e: EstimateError) -> Self {
        match e {
            EstimateError::Singular { .. } => CliError::Singular(e.to_string()),
            EstimateError::Infeasible(_) => CliError::Other(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<McError> for CliError {
    fn from(e: McError) -> Self {
        CliError::Config(e.to_string())
    }
}

/// Linear volatility recursion `omega + sum alpha_i x_{t-i}^2 + sum beta_j v_{t-j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub omega: f64,
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub beta: Vec<f64>,
}

impl ModelConfig {
    pub fn spec(&self) -> Result<VolatilitySpec, CliError> {
        Ok(VolatilitySpec::linear(
            self.omega,
            self.alpha.clone(),
            self.beta.clone(),
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    pub x_lags: Vec<i64>,
    pub v_lags: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    pub n: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitConfig>,
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

fn default_warmup() -> usize {
    coupling::DEFAULT_WARMUP
}

fn default_tail_eps() -> f64 {
    DEFAULT_TAIL_EPS
}

/// Form of the analytic mixing bound.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundChoice {
    /// Nonnegative or symmetric when the family is, Lipschitz otherwise.
    #[default]
    Auto,
    Nonnegative,
    Symmetric,
    Lipschitz,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixingBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(default = "default_warmup")]
    pub burn_in: usize,
    #[serde(default = "default_tail_eps")]
    pub tail_eps: f64,
    #[serde(default)]
    pub bound: BoundChoice,
    /// Total-variation Lipschitz constant for `bound = "lipschitz"`;
    /// estimated from the family when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz_k: Option<f64>,
}

impl Default for MixingBlock {
    fn default() -> Self {
        MixingBlock {
            n_max: None,
            reps: None,
            burn_in: default_warmup(),
            tail_eps: default_tail_eps(),
            bound: BoundChoice::Auto,
            lipschitz_k: None,
        }
    }
}

fn default_replications() -> usize {
    200
}

fn default_omega_min() -> f64 {
    DEFAULT_OMEGA_MIN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyBlock {
    pub orders: Vec<usize>,
    pub sample_sizes: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Defaults to `[model.omega, model.alpha...]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_theta: Option<Vec<f64>>,
    #[serde(default)]
    pub constrained: bool,
    #[serde(default = "default_omega_min")]
    pub omega_min: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub check_fourth_moment: bool,
    #[serde(default)]
    pub robust_se: bool,
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default = "default_family")]
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixing: Option<MixingBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudyBlock>,
}

fn default_family() -> Family {
    Family::SkellamSym
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))
    }

    fn seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Config("missing field `seed`".into()))
    }

    fn model(&self) -> Result<&ModelConfig, CliError> {
        self.model
            .as_ref()
            .ok_or_else(|| CliError::Config("missing table `[model]`".into()))
    }

    fn resolve_out(&self, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
        flag.or_else(|| self.out.clone())
            .ok_or_else(|| CliError::Config("no output path: pass --out or set `out`".into()))
    }
}

/// Fully resolved invocation, as stored in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Invocation {
    Simulate {
        out: PathBuf,
        config: RunConfig,
    },
    Estimate {
        input: PathBuf,
        out: PathBuf,
        p: usize,
        constrained: bool,
        omega_min: f64,
        robust_se: bool,
    },
    Mixing {
        out: PathBuf,
        n_max: usize,
        reps: usize,
        config: RunConfig,
    },
    Study {
        out: PathBuf,
        config: RunConfig,
    },
    Weights {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        out: Option<PathBuf>,
        c: Vec<f64>,
        d: Vec<f64>,
    },
}

impl Invocation {
    pub fn out(&self) -> Option<&Path> {
        match self {
            Invocation::Simulate { out, .. }
            | Invocation::Estimate { out, .. }
            | Invocation::Mixing { out, .. }
            | Invocation::Study { out, .. } => Some(out),
            Invocation::Weights { out, .. } => out.as_deref(),
        }
    }

    fn set_out(&mut self, path: PathBuf) {
        match self {
            Invocation::Simulate { out, .. }
            | Invocation::Estimate { out, .. }
            | Invocation::Mixing { out, .. }
            | Invocation::Study { out, .. } => *out = path,
            Invocation::Weights { out, .. } => *out = Some(path),
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Invocation::Simulate { config, .. }
            | Invocation::Mixing { config, .. }
            | Invocation::Study { config, .. } => config.seed,
            _ => None,
        }
    }
}

/// Record written beside every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub invocation: Invocation,
}

impl Manifest {
    pub fn new(invocation: Invocation) -> Self {
        Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: invocation.seed(),
            invocation,
        }
    }

    pub fn path_for(out: &Path) -> PathBuf {
        let mut name = out.file_name().map(OsString::from).unwrap_or_default();
        name.push(".manifest.toml");
        out.with_file_name(name)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read manifest {}: {e}", path.display()))
        })?;
        toml::from_str(&text).map_err(|e| {
            CliError::Config(format!("{}: {}", path.display(), e.to_string().trim_end()))
        })
    }

    fn write(&self, out: &Path) -> Result<(), CliError> {
        let text = toml::to_string(self).map_err(|e| CliError::Other(e.to_string()))?;
        let path = Self::path_for(out);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "ingarch",
    version,
    about = "Integer-valued GARCH simulation, coupling diagnostics and estimation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a series and write `t,x,v` CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the squared-count ARCH(p) regression to a series CSV.
    Estimate(EstimateArgs),
    /// Compare coupling-based mixing estimates with the analytic bound.
    Mixing {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        nmax: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a replication study over orders and sample sizes.
    Study {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print metric weights and contraction factor for Lipschitz constants.
    Weights {
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true, allow_negative_numbers = true)]
        c: Vec<f64>,
        #[arg(long, value_delimiter = ',', num_args = 0.., allow_negative_numbers = true)]
        d: Vec<f64>,
        /// Also write the weights to this file (with a manifest).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rerun the invocation recorded in a manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        /// Write to this path instead of the recorded one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub p: usize,
    #[arg(long)]
    pub constrained: bool,
    #[arg(long, default_value_t = DEFAULT_OMEGA_MIN)]
    pub omega_min: f64,
    /// Heteroskedasticity-consistent standard errors.
    #[arg(long)]
    pub robust_se: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses arguments, runs the command and returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command) -> Result<(), CliError> {
    let invocation = match command {
        Command::Simulate { config, out, seed } => {
            let mut cfg = RunConfig::load(&config)?;
            if seed.is_some() {
                cfg.seed = seed;
            }
            let out = cfg.resolve_out(out)?;
            Invocation::Simulate { out, config: cfg }
        }
        Command::Estimate(a) => Invocation::Estimate {
            input: a.input,
            out: a.out,
            p: a.p,
            constrained: a.constrained,
            omega_min: a.omega_min,
            robust_se: a.robust_se,
        },
        Command::Mixing {
            config,
            nmax,
            reps,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let block = cfg.mixing.clone().unwrap_or_default();
            let n_max = nmax.or(block.n_max).ok_or_else(|| {
                CliError::Config("no lag horizon: pass --nmax or set `mixing.n_max`".into())
            })?;
            let reps = reps.or(block.reps).ok_or_else(|| {
                CliError::Config("no replication count: pass --reps or set `mixing.reps`".into())
            })?;
            let out = cfg.resolve_out(out)?;
            Invocation::Mixing {
                out,
                n_max,
                reps,
                config: cfg,
            }
        }
        Command::Study { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let out = cfg.resolve_out(out)?;
            Invocation::Study { out, config: cfg }
        }
        Command::Weights { c, d, out } => Invocation::Weights { out, c, d },
        Command::Replay { manifest, out } => {
            let m = Manifest::load(&manifest)?;
            let mut inv = m.invocation;
            if let Some(o) = out {
                inv.set_out(o);
            }
            inv
        }
    };
    execute(&invocation)
}

/// Runs a resolved invocation and writes its output and manifest.
pub fn execute(inv: &Invocation) -> Result<(), CliError> {
    let bytes = match inv {
        Invocation::Simulate { config, .. } => run_simulate(config)?,
        Invocation::Estimate {
            input,
            p,
            constrained,
            omega_min,
            robust_se,
            ..
        } => run_estimate(
            input,
            *p,
            &FitOptions {
                constrained: *constrained,
                omega_min: *omega_min,
                robust_se: *robust_se,
            },
        )?,
        Invocation::Mixing {
            n_max,
            reps,
            config,
            ..
        } => run_mixing(config, *n_max, *reps)?,
        Invocation::Study { config, .. } => run_study(config)?,
        Invocation::Weights { c, d, .. } => {
            let text = run_weights(c, d)?;
            print!("{}", String::from_utf8_lossy(&text));
            text
        }
    };
    if let Some(out) = inv.out() {
        fs::write(out, &bytes).map_err(|e| CliError::io(out, e))?;
        Manifest::new(inv.clone()).write(out)?;
        log::info!("wrote {}", out.display());
    }
    Ok(())
}

fn run_simulate(cfg: &RunConfig) -> Result<Vec<u8>, CliError> {
    let seed = cfg.seed()?;
    let spec = cfg.model()?.spec()?;
    let block = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::Config("missing table `[simulate]`".into()))?;
    let mut opts = SimulationOptions::new(block.n).burn_in(block.burn_in);
    if let Some(init) = &block.init {
        opts = opts.init(ChainState {
            x_lags: init.x_lags.clone(),
            v_lags: init.v_lags.clone(),
        });
    }
    let records = model::simulate(&spec, &cfg.family, &opts, seed)?;
    let mut buf = Vec::new();
    series_io::write_series(&mut buf, &records).map_err(|e| CliError::Other(e.to_string()))?;
    Ok(buf)
}

fn run_estimate(input: &Path, p: usize, opts: &FitOptions) -> Result<Vec<u8>, CliError> {
    let xs = series_io::read_counts_file(input).map_err(|e| match e {
        SeriesIoError::Io(io) => CliError::io(input, io),
        other => CliError::Config(format!("{}: {other}", input.display())),
    })?;
    let data = estimate::build_regression(&xs, p)?;
    let fit = estimate::fit(&data, opts)?;
    if fit.ill_conditioned {
        log::warn!("normal equations are ill-conditioned; a pseudo-inverse was used");
    }
    let mut buf = Vec::new();
    fit.write_csv(&mut buf)
        .map_err(|e| CliError::Other(e.to_string()))?;
    Ok(buf)
}

fn run_mixing(cfg: &RunConfig, n_max: usize, reps: usize) -> Result<Vec<u8>, CliError> {
    let seed = cfg.seed()?;
    let spec = cfg.model()?.spec()?;
    let block = cfg.mixing.clone().unwrap_or_default();
    let mode = match block.bound {
        BoundChoice::Auto => None,
        BoundChoice::Nonnegative => Some(BoundMode::Nonnegative),
        BoundChoice::Symmetric => Some(BoundMode::Symmetric),
        BoundChoice::Lipschitz => block.lipschitz_k.map(BoundMode::Lipschitz),
    };
    if block.bound == BoundChoice::Lipschitz
        && mode.is_none()
        && BoundMode::for_family(&cfg.family).is_some()
    {
        return Err(CliError::Config(
            "`mixing.bound = \"lipschitz\"` needs `mixing.lipschitz_k` for this family".into(),
        ));
    }
    let opts = MixingOptions {
        n_max,
        reps,
        burn_in: block.burn_in,
        seed,
        tail_eps: block.tail_eps,
        mode,
    };
    let report = coupling::empirical_beta_estimate(&spec, &cfg.family, &opts)?;
    let (bad_d, bad_u) = report.bound_violations(3.0);
    log::info!(
        "kappa = {}, E Delta_0 = {} (se {}), bound violations: disagree {:?}, uncoupled {:?}",
        report.weights.kappa,
        report.e_delta0,
        report.e_delta0_se,
        bad_d,
        bad_u
    );
    let mut buf = Vec::new();
    report
        .write_csv(&mut buf)
        .map_err(|e| CliError::Other(e.to_string()))?;
    Ok(buf)
}

fn run_study(cfg: &RunConfig) -> Result<Vec<u8>, CliError> {
    let block = cfg
        .study
        .as_ref()
        .ok_or_else(|| CliError::Config("missing table `[study]`".into()))?;
    let true_theta = match (&block.true_theta, &cfg.model) {
        (Some(t), _) => t.clone(),
        (None, Some(m)) => std::iter::once(m.omega)
            .chain(m.alpha.iter().copied())
            .collect(),
        (None, None) => {
            return Err(CliError::Config(
                "set `study.true_theta` or a `[model]` table".into(),
            ))
        }
    };
    let study = StudyConfig {
        orders: block.orders.clone(),
        sample_sizes: block.sample_sizes.clone(),
        replications: block.replications,
        true_theta,
        family: cfg.family.clone(),
        seed: cfg.seed()?,
        constrained: block.constrained,
        omega_min: block.omega_min,
        burn_in: block.burn_in,
        check_fourth_moment: block.check_fourth_moment,
        robust_se: block.robust_se,
    };
    let result = mc::run_study(&study)?;
    for c in &result.cells {
        log::info!(
            "p={} T={} fits={} failures={:?}",
            c.p,
            c.t,
            c.fits,
            c.failures
        );
    }
    let mut buf = Vec::new();
    result
        .write_csv(&mut buf)
        .map_err(|e| CliError::Other(e.to_string()))?;
    Ok(buf)
}

fn run_weights(c: &[f64], d: &[f64]) -> Result<Vec<u8>, CliError> {
    let w = CouplingWeights::compute(c, d)?;
    let list = |xs: &[f64]| {
        xs.iter()
            .map(|&x| fmt_sig(x))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let mut buf = Vec::new();
    (|| -> std::io::Result<()> {
        writeln!(buf, "gamma = [{}]", list(&w.gamma))?;
        writeln!(buf, "delta = [{}]", list(&w.delta))?;
        writeln!(buf, "kappa = {}", fmt_sig(w.kappa))?;
        writeln!(buf, "epsilon = {}", fmt_sig(w.epsilon))
    })()
    .map_err(|e| CliError::Other(e.to_string()))?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_output() {
        let text = String::from_utf8(run_weights(&[0.3], &[0.3]).unwrap()).unwrap();
        assert_eq!(
            text,
            "gamma = [0.5]\ndelta = [0.5]\nkappa = 0.6\nepsilon = 0.2\n"
        );
        assert!(matches!(
            run_weights(&[0.7], &[0.4]),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn config_rejects_unknown_keys_with_location() {
        let err = RunConfig::parse("seed = 1\n[model]\nomega = 1.5\nalpha = [0.2]\ngamma = 3\n")
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("gamma") && msg.contains("line 5"), "{msg}");
        assert_eq!(err.exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn config_round_trips_through_manifest() {
        let cfg = RunConfig::parse(
            "seed = 7\n[model]\nomega = 1.5\nalpha = [0.26]\nbeta = [0.3]\n\
             [family]\nkind = \"zero_inflated_skellam\"\npi = 0.4\n\
             [simulate]\nn = 10\n[mixing]\nbound = \"lipschitz\"\nlipschitz_k = 0.5\n\
             [study]\norders = [1]\nsample_sizes = [100, 200]\n",
        )
        .unwrap();
        let m = Manifest::new(Invocation::Mixing {
            out: "m.csv".into(),
            n_max: 5,
            reps: 10,
            config: cfg,
        });
        let text = toml::to_string(&m).unwrap();
        let back: Manifest = toml::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.seed, Some(7));
    }

    #[test]
    fn missing_config_names_path() {
        let err = RunConfig::load(Path::new("/nonexistent/cfg.toml")).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_CONFIG);
        assert!(err.to_string().contains("/nonexistent/cfg.toml"));
    }

    #[test]
    fn manifest_sits_beside_output() {
        assert_eq!(
            Manifest::path_for(Path::new("/tmp/a/series.csv")),
            PathBuf::from("/tmp/a/series.csv.manifest.toml")
        );
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        let e: CliError = EstimateError::Singular { pivot_ratio: 0.0 }.into();
        assert_eq!(e.exit_code(), EXIT_SINGULAR);
        let e: CliError = ModelError::DomainOverflow {
            t: 3,
            family: "binomial(n=2)".into(),
            v: 5.0,
        }
        .into();
        assert_eq!(e.exit_code(), EXIT_DOMAIN);
        assert!(e.to_string().contains("t=3"));
        let e: CliError = ModelError::Spec("x".into()).into();
        assert_eq!(e.exit_code(), EXIT_CONFIG);
    }
}
