//! Command-line flags, the JSON run configuration, and their merge.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use restent::dynamics::{
    builtin_system, parse_matrix, CompactSet, Constraint, IntegratorOptions, SystemModel, SystemParams, TimeKind,
};
use restent::error::{Error, Result};
use restent::spd::BarycenterOptions;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "restent",
    version,
    about = "Restoration-entropy upper bounds from Riemannian metrics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the bound for one metric on a grid over K.
    Bound(BoundArgs),
    /// Evaluate the bound with the automatic metric at several horizons.
    Sweep(SweepArgs),
    /// Finite-time Lyapunov oracle over K.
    Oracle(OracleArgs),
    /// Bound, oracle and equilibrium entropy for the Lanford system.
    Lanford(LanfordArgs),
    /// Randomized property suite for the geometry and metric spectra.
    Props(PropsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SystemArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// lanford, linmap, linode or identity.
    #[arg(long)]
    pub system: Option<String>,
    /// Lanford parameter.
    #[arg(long)]
    pub a: Option<f64>,
    /// System matrix: `diag:2,0.5` or `rows:2,1;0,2`.
    #[arg(long, allow_hyphen_values = true)]
    pub matrix: Option<String>,
    /// Dimension of the identity map.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Declared K as `lo:hi` per axis, comma separated (one entry applies
    /// to every axis). A declared K must pass the invariance spot check.
    #[arg(long = "box", allow_hyphen_values = true)]
    pub box_: Option<String>,
    /// Grid points per axis: `21` or `11,11,21`.
    #[arg(long)]
    pub resolution: Option<String>,
    /// Horizon of the invariance spot check.
    #[arg(long)]
    pub check_horizon: Option<f64>,
    /// RK4 base step.
    #[arg(long)]
    pub step: Option<f64>,
    /// Output file stem.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct MetricArgs {
    /// identity, constant:<matrix.json>, lanford-eq15, auto:<N> or auto:<T>.
    #[arg(long)]
    pub metric: Option<String>,
    /// Time nodes for the continuous-time automatic metric.
    #[arg(long)]
    pub time_samples: Option<usize>,
    /// Barycenter stopping tolerance.
    #[arg(long)]
    pub bary_tol: Option<f64>,
    /// Barycenter cycle budget.
    #[arg(long)]
    pub max_cycles: Option<usize>,
    /// Step of the finite-difference orbital derivative.
    #[arg(long)]
    pub fd_step: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Refine the grid (r → 2r − 1) until the bound settles.
    #[arg(long)]
    pub refine: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Horizons N (discrete) or T (continuous), comma separated.
    #[arg(long)]
    pub horizons: Option<String>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Oracle horizons, comma separated.
    #[arg(long)]
    pub horizons: Option<String>,
}

#[derive(Debug, Args)]
pub struct LanfordArgs {
    /// Lanford parameter (a ≥ 2/3 for the closed form).
    #[arg(long)]
    pub a: Option<f64>,
    /// Grid points per axis for the bound.
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Grid points per axis for the oracle.
    #[arg(long)]
    pub oracle_resolution: Option<usize>,
    #[arg(long)]
    pub horizons: Option<String>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PropsArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Instances per dimension.
    #[arg(long, default_value_t = 200)]
    pub instances: usize,
    /// Dimensions, comma separated.
    #[arg(long, default_value = "1,2,3,5")]
    pub dims: String,
    /// Multiplier applied to every property tolerance.
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub tol: f64,
    /// Run only properties whose name contains this string.
    #[arg(long)]
    pub filter: Option<String>,
}

/// JSON mirror of the flags. Every field is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: Option<String>,
    pub a: Option<f64>,
    /// Row-major matrix.
    pub matrix: Option<Vec<Vec<f64>>>,
    pub dim: Option<usize>,
    #[serde(rename = "box")]
    pub box_: Option<Vec<[f64; 2]>>,
    pub constraint: Option<Constraint>,
    pub resolution: Option<Vec<usize>>,
    pub metric: Option<String>,
    pub horizons: Option<Vec<f64>>,
    pub output: Option<PathBuf>,
    pub time_samples: Option<usize>,
    pub bary_tol: Option<f64>,
    pub max_cycles: Option<usize>,
    pub fd_step: Option<f64>,
    pub check_horizon: Option<f64>,
    pub integrator: Option<IntegratorOptions>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<T>()
                .map_err(|_| Error::InvalidArgument(format!("bad {what} entry `{v}`")))
        })
        .collect()
}

fn parse_box(s: &str) -> Result<Vec<[f64; 2]>> {
    s.split(',')
        .map(|axis| {
            let (lo, hi) = axis
                .split_once(':')
                .ok_or_else(|| Error::InvalidArgument(format!("box axis `{axis}` must be lo:hi")))?;
            let p = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad box bound `{v}`")))
            };
            Ok([p(lo)?, p(hi)?])
        })
        .collect()
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidArgument("matrix must be square and nonempty".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Reads a square matrix from a JSON file of rows.
pub fn load_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read matrix file {}: {e}", path.display())))?;
    let rows: Vec<Vec<f64>> = serde_json::from_str(&text)?;
    matrix_from_rows(&rows)
}

/// Which metric to use, before it is bound to a system.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricChoice {
    Identity,
    Constant(PathBuf),
    LanfordEq15,
    Auto(f64),
}

impl MetricChoice {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "lanford-eq15" => Ok(Self::LanfordEq15),
            _ => {
                if let Some(path) = s.strip_prefix("constant:") {
                    Ok(Self::Constant(PathBuf::from(path)))
                } else if let Some(h) = s.strip_prefix("auto:") {
                    let h: f64 = h
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad horizon in `{s}`")))?;
                    Ok(Self::Auto(h))
                } else {
                    Err(Error::InvalidArgument(format!("unknown metric `{s}`")))
                }
            }
        }
    }
}

/// Flags and configuration file merged into one resolved setup.
#[derive(Debug, Clone)]
pub struct Setup {
    pub system: SystemModel,
    pub declared_set: Option<CompactSet>,
    pub resolution: Option<Vec<usize>>,
    pub check_horizon: Option<f64>,
    pub output: Option<PathBuf>,
    pub metric: Option<MetricChoice>,
    pub horizons: Option<Vec<f64>>,
    pub time_samples: usize,
    pub bary: BarycenterOptions,
    pub fd_step: f64,
}

pub fn resolve(sys: &SystemArgs, metric: Option<&MetricArgs>, horizons: Option<&str>) -> Result<Setup> {
    let cfg = match &sys.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let name = sys
        .system
        .clone()
        .or(cfg.system.clone())
        .unwrap_or_else(|| "lanford".to_string());
    let matrix = match (&sys.matrix, &cfg.matrix) {
        (Some(m), _) => Some(parse_matrix(m)?),
        (None, Some(rows)) => Some(matrix_from_rows(rows)?),
        (None, None) => None,
    };
    let params = SystemParams {
        a: sys.a.or(cfg.a),
        matrix,
        dim: sys.dim.or(cfg.dim),
    };
    let mut system = builtin_system(&name, &params)?;
    let mut integrator = cfg.integrator.unwrap_or_default();
    if let Some(step) = sys.step {
        if !(step > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "integrator step must be positive, got {step}"
            )));
        }
        integrator.step = step;
    }
    system = system.with_integrator(integrator);

    let bounds = match (&sys.box_, &cfg.box_) {
        (Some(b), _) => Some(parse_box(b)?),
        (None, Some(b)) => Some(b.clone()),
        (None, None) => None,
    };
    let declared_set = match bounds {
        Some(mut b) => {
            if b.len() == 1 && system.dim() > 1 {
                b = vec![b[0]; system.dim()];
            }
            if b.len() != system.dim() {
                return Err(Error::DimensionMismatch {
                    expected: system.dim(),
                    got: b.len(),
                });
            }
            let mut set = CompactSet::new(b)?;
            if let Some(c) = cfg.constraint.clone() {
                set = set.with_constraint(c)?;
            }
            Some(set)
        }
        None => {
            if cfg.constraint.is_some() {
                return Err(Error::InvalidArgument("a constraint needs a declared box".into()));
            }
            None
        }
    };
    let resolution = match (&sys.resolution, &cfg.resolution) {
        (Some(r), _) => Some(parse_list::<usize>(r, "resolution")?),
        (None, Some(r)) => Some(r.clone()),
        (None, None) => None,
    };
    let horizons = match (horizons, &cfg.horizons) {
        (Some(h), _) => Some(parse_list::<f64>(h, "horizon")?),
        (None, Some(h)) => Some(h.clone()),
        (None, None) => None,
    };
    let metric_str = metric.and_then(|m| m.metric.clone()).or(cfg.metric.clone());
    let metric_choice = metric_str.as_deref().map(MetricChoice::parse).transpose()?;
    let mut bary = BarycenterOptions::default();
    if let Some(t) = metric.and_then(|m| m.bary_tol).or(cfg.bary_tol) {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "barycenter tolerance must be ≥ 0, got {t}"
            )));
        }
        bary.tol = t;
    }
    if let Some(c) = metric.and_then(|m| m.max_cycles).or(cfg.max_cycles) {
        if c == 0 {
            return Err(Error::InvalidArgument("max cycles must be positive".into()));
        }
        bary.max_cycles = c;
    }
    let time_samples = metric
        .and_then(|m| m.time_samples)
        .or(cfg.time_samples)
        .unwrap_or(restent::entropy::DEFAULT_TIME_SAMPLES);
    let fd_step = metric
        .and_then(|m| m.fd_step)
        .or(cfg.fd_step)
        .unwrap_or(restent::metric::DEFAULT_FD_STEP);
    if let Some(MetricChoice::Auto(h)) = metric_choice {
        validate_horizon(&system, h)?;
    }
    Ok(Setup {
        system,
        declared_set,
        resolution,
        check_horizon: sys.check_horizon.or(cfg.check_horizon),
        output: sys.output.clone().or(cfg.output.clone()),
        metric: metric_choice,
        horizons,
        time_samples,
        bary,
        fd_step,
    })
}

/// Discrete horizons are positive integers, continuous ones positive reals.
pub fn validate_horizon(system: &SystemModel, h: f64) -> Result<()> {
    let ok = match system.time() {
        TimeKind::Discrete => h >= 1.0 && h.fract() == 0.0,
        TimeKind::Continuous => h > 0.0 && h.is_finite(),
    };
    if !ok {
        return Err(Error::InvalidArgument(format!(
            "horizon {h} is not valid for a {} system",
            system.time()
        )));
    }
    Ok(())
}
