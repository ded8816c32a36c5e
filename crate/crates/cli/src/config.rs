//! Solver settings from flags, an optional `key = value` file, and defaults.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use lrd::geometry::{Interpolation, TransformGroup};
use lrd::manifold::ManifoldParams;
use lrd::solver::{Method, MuSchedule, ProjectionSource, SolverConfig};
use lrd::Execution;

use crate::CliError;

/// Flags shared by `decompose` and `compare`. Every field is optional so a
/// config file can fill gaps.
#[derive(Debug, Clone, Default, Args)]
pub struct SolverArgs {
    /// Similarity, translation, affine or projective.
    #[arg(long)]
    pub transform: Option<TransformGroup>,
    /// Sparsity weight [default: 1/sqrt(max(pixels, images))]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Manifold neighbors [default: 7]
    #[arg(long)]
    pub k: Option<usize>,
    /// Manifold residual threshold [default: 0.05]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Manifold residual scale [default: 0.85]
    #[arg(long = "epsilon-prime")]
    pub epsilon_prime: Option<f64>,
    /// decreasing or increasing [default: decreasing]
    #[arg(long = "mu-schedule")]
    pub mu_schedule: Option<MuSchedule>,
    /// Initial penalty [default: 1.25/||Vm||_2]
    #[arg(long)]
    pub mu0: Option<f64>,
    #[arg(long = "max-outer")]
    pub max_outer: Option<usize>,
    #[arg(long = "max-inner")]
    pub max_inner: Option<usize>,
    /// Outer stopping tolerance on the largest parameter change [default: 1e-5]
    #[arg(long)]
    pub tol: Option<f64>,
    /// Inner stopping tolerance on the relative residual [default: 1e-7]
    #[arg(long = "inner-tol")]
    pub inner_tol: Option<f64>,
    /// bilinear or cubic [default: cubic]
    #[arg(long)]
    pub interpolation: Option<Interpolation>,
    /// linearized or reconstruction [default: linearized]
    #[arg(long = "projection-source")]
    pub projection_source: Option<ProjectionSource>,
    /// Let the batch's mean transform drift (no zero-sum increment constraint).
    #[arg(long = "free-gauge")]
    pub free_gauge: bool,
    /// Recompute manifold weights once per outer iteration only.
    #[arg(long = "freeze-manifold")]
    pub freeze_manifold: bool,
    /// Run single-threaded.
    #[arg(long)]
    pub sequential: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Resize inputs to HEIGHTxWIDTH.
    #[arg(long, value_parser = parse_dims)]
    pub resize: Option<(usize, usize)>,
    /// File of `key = value` lines; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HEIGHTxWIDTH, got '{s}'"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in '{s}'"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in '{s}'"))?;
    if h == 0 || w == 0 {
        return Err("dimensions must be positive".into());
    }
    Ok((h, w))
}

/// Parsed config file; keys accept `-` or `_`.
#[derive(Debug, Default)]
pub struct FileConfig {
    table: toml::Table,
    path: PathBuf,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let raw: toml::Table = text
            .parse()
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let table = raw
            .into_iter()
            .map(|(k, v)| (k.replace('-', "_"), v))
            .collect();
        let cfg = FileConfig {
            table,
            path: path.to_path_buf(),
        };
        if let Some(k) = cfg.table.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(CliError::Usage(format!(
                "config {}: unknown key '{k}'",
                path.display()
            )));
        }
        Ok(cfg)
    }

    fn bad(&self, key: &str) -> CliError {
        CliError::Usage(format!(
            "config {}: bad value for '{key}'",
            self.path.display()
        ))
    }

    fn float(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::Float(v)) => Ok(Some(*v)),
            Some(toml::Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(_) => Err(self.bad(key)),
        }
    }

    fn int(&self, key: &str) -> Result<Option<u64>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::Integer(v)) if *v >= 0 => Ok(Some(*v as u64)),
            Some(_) => Err(self.bad(key)),
        }
    }

    fn flag(&self, key: &str) -> Result<bool, CliError> {
        match self.table.get(key) {
            None => Ok(false),
            Some(toml::Value::Boolean(b)) => Ok(*b),
            Some(_) => Err(self.bad(key)),
        }
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => s.parse().map(Some).map_err(|_| self.bad(key)),
            Some(_) => Err(self.bad(key)),
        }
    }

    fn dims(&self, key: &str) -> Result<Option<(usize, usize)>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => parse_dims(s).map(Some).map_err(|_| self.bad(key)),
            Some(_) => Err(self.bad(key)),
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "method",
    "transform",
    "lambda",
    "k",
    "alpha",
    "epsilon_prime",
    "mu_schedule",
    "mu0",
    "max_outer",
    "max_inner",
    "tol",
    "inner_tol",
    "interpolation",
    "projection_source",
    "free_gauge",
    "freeze_manifold",
    "sequential",
    "seed",
    "resize",
];

/// Everything a solver run needs besides the input batch.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub solver: SolverConfig,
    pub group: TransformGroup,
    pub resize: Option<(usize, usize)>,
    pub config_file: Option<PathBuf>,
}

impl SolverArgs {
    /// Merges flags over the config file over built-in defaults.
    pub fn resolve(&self, method: Option<Method>) -> Result<RunSettings, CliError> {
        let file = match &self.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let d = SolverConfig::default();
        let dm = ManifoldParams::default();
        let usize_of = |v: Option<u64>| v.map(|x| x as usize);

        let method = match method {
            Some(m) => m,
            None => file.parsed("method")?.unwrap_or(d.method),
        };
        let sequential = self.sequential || file.flag("sequential")?;
        let solver = SolverConfig {
            method,
            lambda: self.lambda.or(file.float("lambda")?),
            mu0: self.mu0.or(file.float("mu0")?),
            mu_schedule: self
                .mu_schedule
                .or(file.parsed("mu_schedule")?)
                .unwrap_or(d.mu_schedule),
            inner_tol: self.inner_tol.or(file.float("inner_tol")?).unwrap_or(d.inner_tol),
            inner_max_iters: self
                .max_inner
                .or(usize_of(file.int("max_inner")?))
                .unwrap_or(d.inner_max_iters),
            outer_tol: self.tol.or(file.float("tol")?).unwrap_or(d.outer_tol),
            outer_max_iters: self
                .max_outer
                .or(usize_of(file.int("max_outer")?))
                .unwrap_or(d.outer_max_iters),
            manifold: ManifoldParams {
                k: self.k.or(usize_of(file.int("k")?)).unwrap_or(dm.k),
                alpha: self.alpha.or(file.float("alpha")?).unwrap_or(dm.alpha),
                epsilon_prime: self
                    .epsilon_prime
                    .or(file.float("epsilon_prime")?)
                    .unwrap_or(dm.epsilon_prime),
            },
            projection_source: self
                .projection_source
                .or(file.parsed("projection_source")?)
                .unwrap_or(d.projection_source),
            freeze_manifold: self.freeze_manifold || file.flag("freeze_manifold")?,
            fix_gauge: !(self.free_gauge || file.flag("free_gauge")?),
            interpolation: self
                .interpolation
                .or(file.parsed("interpolation")?)
                .unwrap_or(d.interpolation),
            execution: if sequential {
                Execution::Sequential
            } else {
                Execution::Parallel
            },
            seed: self.seed.or(file.int("seed")?).unwrap_or(d.seed),
            ..d
        };
        // Manifold settings are checked even for rasl: they land in the manifest.
        solver
            .validate()
            .and_then(|()| solver.manifold.validate())
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(RunSettings {
            solver,
            group: self
                .transform
                .or(file.parsed("transform")?)
                .unwrap_or(TransformGroup::Similarity),
            resize: self.resize.or(file.dims("resize")?),
            config_file: self.config.clone(),
        })
    }
}
