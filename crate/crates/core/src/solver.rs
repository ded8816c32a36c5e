//! Linearized low-rank + sparse decomposition with per-image alignment.
//!
//! The outer loop linearizes the warp around the current transforms; the
//! inner loop is an ADMM over the low-rank part `Vr`, the sparse part `E`
//! and the per-image parameter increments. In manifold mode every inner
//! iteration first projects the observation columns onto a manifold learned
//! from the batch itself (see [`crate::manifold`]).

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::error::{LrdError, Result};
use crate::exec::Execution;
use crate::geometry::{
    batch_jacobians, compose_update, warp_normalize_batch, Image, Interpolation, TransformStack,
};
use crate::manifold::{
    batch_weights, estimate_intrinsic_dim, project_with_weights, ManifoldParams,
};
use crate::ops::{l1_norm, nuclear_norm, soft_threshold_matrix, spectral_norm, svd, svt_full, DenseMatrix};

/// Smallest image side the solver accepts.
pub const MIN_IMAGE_SIDE: usize = 8;

/// Largest tolerated condition number of a per-image Jacobian.
pub const MAX_JACOBIAN_CONDITION: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Plain linearized nuclear-norm ADMM.
    Rasl,
    /// ADMM with each iterate projected onto the learned manifold.
    Meadmm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rasl => "rasl",
            Method::Meadmm => "meadmm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = LrdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rasl" => Ok(Method::Rasl),
            "meadmm" => Ok(Method::Meadmm),
            _ => Err(LrdError::InvalidArgument(format!("unknown method '{s}'"))),
        }
    }
}

/// How the penalty `mu` evolves across inner iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MuSchedule {
    /// `mu <- max(decay * mu, mu_floor)`.
    Decreasing,
    /// `mu <- min(growth * mu, mu_ceiling)`, the usual inexact-ALM schedule.
    Increasing,
}

impl FromStr for MuSchedule {
    type Err = LrdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decreasing" | "paper" => Ok(MuSchedule::Decreasing),
            "increasing" => Ok(MuSchedule::Increasing),
            _ => Err(LrdError::InvalidArgument(format!("unknown mu schedule '{s}'"))),
        }
    }
}

impl fmt::Display for MuSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MuSchedule::Decreasing => "decreasing",
            MuSchedule::Increasing => "increasing",
        })
    }
}

/// Which matrix the manifold projection is applied to inside the inner loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionSource {
    /// `Vr + E` from the previous iteration.
    Reconstruction,
    /// The linearized observation at the current increments.
    Linearized,
}

impl FromStr for ProjectionSource {
    type Err = LrdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reconstruction" => Ok(ProjectionSource::Reconstruction),
            "linearized" => Ok(ProjectionSource::Linearized),
            _ => Err(LrdError::InvalidArgument(format!(
                "unknown projection source '{s}'"
            ))),
        }
    }
}

impl fmt::Display for ProjectionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProjectionSource::Reconstruction => "reconstruction",
            ProjectionSource::Linearized => "linearized",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    /// Sparsity weight; `None` means `1 / sqrt(max(pixels, B))`.
    pub lambda: Option<f64>,
    /// Initial penalty; `None` means `1.25 / ||Vm||_2`.
    pub mu0: Option<f64>,
    /// Penalty floor for the decreasing schedule; `None` means `1e-7 * mu0`.
    pub mu_floor: Option<f64>,
    pub mu_decay: f64,
    pub mu_growth: f64,
    /// Ceiling for the increasing schedule, as a multiple of `mu0`.
    pub mu_ceiling_ratio: f64,
    pub mu_schedule: MuSchedule,
    pub inner_tol: f64,
    pub inner_max_iters: usize,
    pub outer_tol: f64,
    pub outer_max_iters: usize,
    pub manifold: ManifoldParams,
    pub projection_source: ProjectionSource,
    /// Compute neighbor weights once per outer iteration instead of every
    /// inner iteration.
    pub freeze_manifold: bool,
    /// Constrain the per-image increments to sum to zero, which pins the
    /// batch's mean transform at its initial value.
    pub fix_gauge: bool,
    pub interpolation: Interpolation,
    pub execution: Execution,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: Method::Rasl,
            lambda: None,
            mu0: None,
            mu_floor: None,
            mu_decay: 0.9,
            mu_growth: 1.25,
            mu_ceiling_ratio: 1e7,
            mu_schedule: MuSchedule::Decreasing,
            inner_tol: 1e-7,
            inner_max_iters: 200,
            outer_tol: 1e-5,
            outer_max_iters: 50,
            manifold: ManifoldParams::default(),
            projection_source: ProjectionSource::Linearized,
            freeze_manifold: false,
            fix_gauge: true,
            interpolation: Interpolation::Cubic,
            execution: Execution::Parallel,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(LrdError::InvalidArgument(what.to_string()));
        if let Some(l) = self.lambda {
            if !(l > 0.0) {
                return bad("lambda must be positive");
            }
        }
        if let Some(m) = self.mu0 {
            if !(m > 0.0) {
                return bad("mu0 must be positive");
            }
        }
        if let (Some(floor), Some(mu0)) = (self.mu_floor, self.mu0) {
            if !(floor > 0.0) || floor > mu0 {
                return bad("mu_floor must satisfy 0 < mu_floor <= mu0");
            }
        }
        if !(self.mu_decay > 0.0 && self.mu_decay <= 1.0) {
            return bad("mu_decay must lie in (0, 1]");
        }
        if !(self.mu_growth >= 1.0) || !(self.mu_ceiling_ratio >= 1.0) {
            return bad("mu_growth and mu_ceiling_ratio must be >= 1");
        }
        if !(self.inner_tol > 0.0) || !(self.outer_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.inner_max_iters == 0 || self.outer_max_iters == 0 {
            return bad("iteration limits must be positive");
        }
        if self.method == Method::Meadmm {
            self.manifold.validate()?;
        }
        Ok(())
    }

    pub fn lambda_for(&self, rows: usize, cols: usize) -> f64 {
        self.lambda
            .unwrap_or_else(|| 1.0 / (rows.max(cols) as f64).sqrt())
    }
}

/// Iterate of the inner loop.
#[derive(Debug, Clone)]
pub struct DecompositionState {
    /// Warped-normalized observation at the linearization point.
    pub vm: DenseMatrix,
    pub vr: DenseMatrix,
    pub e: DenseMatrix,
    pub y: DenseMatrix,
    /// Parameter increments, `p x B` (`0 x B` without alignment).
    pub dtau: DenseMatrix,
    pub mu: f64,
    pub iter: usize,
    pub converged: bool,
    /// Relative residual at exit.
    pub relative_residual: f64,
}

/// One line of the iteration trace.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceRecord {
    Iteration {
        outer: usize,
        inner: usize,
        residual: f64,
        objective: f64,
        mu: f64,
        rank: usize,
    },
    Manifold {
        outer: usize,
        /// Mean over inner iterations of `||V'm - source||_F / ||source||_F`.
        projection_shift: f64,
        intrinsic_dim: usize,
    },
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceRecord::Iteration {
                outer,
                inner,
                residual,
                objective,
                mu,
                rank,
            } => write!(
                f,
                "kind=iteration outer={outer} inner={inner} residual={residual:e} objective={objective:e} mu={mu:e} rank={rank}"
            ),
            TraceRecord::Manifold {
                outer,
                projection_shift,
                intrinsic_dim,
            } => write!(
                f,
                "kind=manifold outer={outer} projection_shift={projection_shift:e} intrinsic_dim={intrinsic_dim}"
            ),
        }
    }
}

/// Receives trace records as the solver runs.
pub trait TraceSink {
    fn record(&mut self, record: &TraceRecord);
}

/// Discards everything.
pub struct NoTrace;

impl TraceSink for NoTrace {
    fn record(&mut self, _: &TraceRecord) {}
}

impl TraceSink for Vec<TraceRecord> {
    fn record(&mut self, record: &TraceRecord) {
        self.push(record.clone());
    }
}

#[derive(Debug, Clone)]
pub struct DecompositionResult {
    pub method: Method,
    /// `(height, width)` of the aligned frame; `None` for plain matrices.
    pub image_shape: Option<(usize, usize)>,
    pub vr: DenseMatrix,
    pub e: DenseMatrix,
    /// Warped-normalized observations at the final transforms.
    pub aligned: DenseMatrix,
    pub taus: TransformStack,
    pub objective_trace: Vec<f64>,
    pub inner_iters: Vec<usize>,
    pub converged: bool,
    pub manifold_trace: Vec<TraceRecord>,
}

/// `(Vr + E) - Vm_lin`.
pub fn residual(vr: &DenseMatrix, e: &DenseMatrix, vm_lin: &DenseMatrix) -> Result<DenseMatrix> {
    for m in [e, vm_lin] {
        if m.shape() != vr.shape() {
            return Err(LrdError::ShapeMismatch {
                expected: vr.shape(),
                got: m.shape(),
            });
        }
    }
    Ok(vr + e - vm_lin)
}

/// `||Vr||_* + lambda * ||E||_1`.
pub fn objective(vr: &DenseMatrix, e: &DenseMatrix, lambda: f64) -> Result<f64> {
    if vr.shape() != e.shape() {
        return Err(LrdError::ShapeMismatch {
            expected: vr.shape(),
            got: e.shape(),
        });
    }
    Ok(nuclear_norm(vr)? + lambda * l1_norm(e)?)
}

/// Least-squares solver for one image's parameter increment.
struct LeastSquares {
    jac: DenseMatrix,
    pinv: DenseMatrix,
    /// `(JᵀJ)⁻¹`
    gram_inv: DenseMatrix,
}

fn pseudo_inverses(jacobians: &[DenseMatrix], exec: Execution) -> Result<Vec<LeastSquares>> {
    exec.try_map(jacobians.len(), |i| {
        let j = &jacobians[i];
        let f = svd(j)?;
        let smax = f.sigma.iter().copied().fold(0.0, f64::max);
        let smin = f.sigma.iter().copied().fold(f64::INFINITY, f64::min);
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(condition <= MAX_JACOBIAN_CONDITION) {
            return Err(LrdError::IllConditionedJacobian {
                index: i,
                condition,
            });
        }
        // J† = V Σ^{-1} Uᵀ
        let mut v = f.v.clone();
        for (k, s) in f.sigma.iter().enumerate() {
            v.column_mut(k).scale_mut(1.0 / s);
        }
        Ok(LeastSquares {
            jac: j.clone(),
            gram_inv: &v * v.transpose(),
            pinv: v * f.u.transpose(),
        })
    })
}

fn all_finite(m: &DenseMatrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Runs the inner ADMM on a fixed linearization.
///
/// `vm` is the warped-normalized observation `V_d ∘ tau`; `jacobians`, when
/// present, holds one `pixels x p` Jacobian per column. Without Jacobians the
/// increments stay empty and this is plain robust PCA.
pub fn inner_admm(
    vm: &DenseMatrix,
    jacobians: Option<&[DenseMatrix]>,
    config: &SolverConfig,
    outer: usize,
    trace: &mut dyn TraceSink,
) -> Result<DecompositionState> {
    inner_admm_from(vm, jacobians, config, outer, None, trace)
}

/// Starting iterate for [`inner_admm_from`]; increments start at zero.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub vr: DenseMatrix,
    pub e: DenseMatrix,
    pub y: DenseMatrix,
    pub mu: f64,
}

/// [`inner_admm`] from a given `(Vr, E, Y, mu)` instead of the default
/// `(0, 0, Vm / max(||Vm||_2, max|Vm| / lambda), mu0)`.
pub fn inner_admm_from(
    vm: &DenseMatrix,
    jacobians: Option<&[DenseMatrix]>,
    config: &SolverConfig,
    outer: usize,
    start: Option<&WarmStart>,
    trace: &mut dyn TraceSink,
) -> Result<DecompositionState> {
    config.validate()?;
    let (m, n) = vm.shape();
    if m == 0 || n == 0 {
        return Err(LrdError::InvalidArgument("empty observation matrix".into()));
    }
    if !all_finite(vm) {
        return Err(LrdError::Numeric("observation has non-finite entries".into()));
    }
    let exec = config.execution;
    let solvers = match jacobians {
        Some(js) => {
            if js.len() != n {
                return Err(LrdError::InvalidArgument(format!(
                    "{} Jacobians for {n} columns",
                    js.len()
                )));
            }
            if let Some(bad) = js.iter().find(|j| j.nrows() != m) {
                return Err(LrdError::ShapeMismatch {
                    expected: (m, bad.ncols()),
                    got: bad.shape(),
                });
            }
            Some(pseudo_inverses(js, exec)?)
        }
        None => None,
    };
    let p = jacobians.and_then(|js| js.first()).map_or(0, |j| j.ncols());
    let gauge = match &solvers {
        Some(ls) if config.fix_gauge && p > 0 => {
            let s = ls
                .iter()
                .fold(DenseMatrix::zeros(p, p), |acc, l| acc + &l.gram_inv);
            Some(s.try_inverse().ok_or_else(|| {
                LrdError::Numeric("gauge system is singular".into())
            })?)
        }
        _ => None,
    };

    let lambda = config.lambda_for(m, n);
    let spectral = spectral_norm(vm)?;
    if spectral == 0.0 {
        return Err(LrdError::Numeric("observation matrix is zero".into()));
    }
    let mu0 = config.mu0.unwrap_or(1.25 / spectral);
    let mu_floor = config.mu_floor.unwrap_or(1e-7 * mu0);
    let mu_ceiling = config.mu_ceiling_ratio * mu0;
    let vm_norm = vm.norm();

    let (mut vr, mut e, mut y, mut mu) = match start {
        Some(w) => {
            for got in [&w.vr, &w.e, &w.y] {
                if got.shape() != (m, n) {
                    return Err(LrdError::ShapeMismatch {
                        expected: (m, n),
                        got: got.shape(),
                    });
                }
            }
            if !(w.mu > 0.0 && w.mu.is_finite()) {
                return Err(LrdError::InvalidArgument("warm-start mu must be positive".into()));
            }
            (w.vr.clone(), w.e.clone(), w.y.clone(), w.mu)
        }
        None => {
            let dual_scale = spectral.max(vm.amax() / lambda);
            (
                DenseMatrix::zeros(m, n),
                DenseMatrix::zeros(m, n),
                vm / dual_scale,
                mu0,
            )
        }
    };
    let mut dtau = DenseMatrix::zeros(p, n);
    let mut vm_lin = vm.clone();

    let manifold = config.method == Method::Meadmm;
    let frozen = if manifold && config.freeze_manifold {
        Some(batch_weights(vm, config.manifold, exec)?)
    } else {
        None
    };
    let mut shift_sum = 0.0;

    let mut iter = 0;
    let mut converged = false;
    let mut rel = f64::INFINITY;
    while iter < config.inner_max_iters {
        // (1) manifold projection of the observation
        let target = if manifold {
            let source = if iter == 0 || config.projection_source == ProjectionSource::Linearized {
                vm_lin.clone()
            } else {
                &vr + &e
            };
            let projected = match &frozen {
                Some(w) => project_with_weights(&source, w, &config.manifold, exec)?,
                None => {
                    let w = batch_weights(&source, config.manifold, exec)?;
                    project_with_weights(&source, &w, &config.manifold, exec)?
                }
            };
            let sn = source.norm();
            if sn > 0.0 {
                shift_sum += (&projected - &source).norm() / sn;
            }
            projected
        } else {
            vm_lin.clone()
        };

        // (2) low-rank step
        let y_mu = &y / mu;
        let svt_out = svt_full(&(&target + &y_mu - &e), 1.0 / mu)?;
        vr = svt_out.matrix;

        // (3) sparse step
        e = soft_threshold_matrix(&(&vm_lin + &y_mu - &vr), lambda / mu)?;

        // (4) per-image increments
        if let Some(ls) = &solvers {
            let target = &vr + &e - vm - &y_mu;
            let mut cols = exec.map(n, |i| &ls[i].pinv * target.column(i));
            if let Some(s_inv) = &gauge {
                // Lagrange correction for sum_i dtau_i = 0.
                let total = cols.iter().fold(DVector::zeros(p), |acc, c| acc + c);
                let nu = s_inv * total;
                for (c, l) in cols.iter_mut().zip(ls) {
                    *c -= &l.gram_inv * &nu;
                }
            }
            dtau = DenseMatrix::from_columns(&cols);
            let moved = exec.map(n, |i| &ls[i].jac * dtau.column(i));
            vm_lin = vm.clone();
            for (i, d) in moved.iter().enumerate() {
                let mut c = vm_lin.column_mut(i);
                c += d;
            }
        }

        // (5) multiplier ascent on the constraint violation
        let r = residual(&vr, &e, &vm_lin)?;
        y -= mu * &r;

        if !(all_finite(&vr) && all_finite(&e) && all_finite(&y) && all_finite(&dtau)) {
            return Err(LrdError::Divergence { iteration: iter });
        }

        let rnorm = r.norm();
        rel = rnorm / vm_norm;
        trace.record(&TraceRecord::Iteration {
            outer,
            inner: iter,
            residual: rnorm,
            objective: svt_out.nuclear_norm + lambda * e.iter().map(|v| v.abs()).sum::<f64>(),
            mu,
            rank: svt_out.rank,
        });

        // (6) penalty update
        mu = match config.mu_schedule {
            MuSchedule::Decreasing => (config.mu_decay * mu).max(mu_floor),
            MuSchedule::Increasing => (config.mu_growth * mu).min(mu_ceiling),
        };
        iter += 1;
        if rel < config.inner_tol {
            converged = true;
            break;
        }
    }

    if manifold {
        trace.record(&TraceRecord::Manifold {
            outer,
            projection_shift: shift_sum / iter as f64,
            intrinsic_dim: estimate_intrinsic_dim(vm, 0.95)?,
        });
    }

    Ok(DecompositionState {
        vm: vm.clone(),
        vr,
        e,
        y,
        dtau,
        mu,
        iter,
        converged,
        relative_residual: rel,
    })
}

/// Decomposes a plain matrix (no alignment).
pub fn decompose(
    vm: &DenseMatrix,
    config: &SolverConfig,
    trace: &mut dyn TraceSink,
) -> Result<DecompositionResult> {
    let mut manifold_trace = Vec::new();
    let mut tee = Tee {
        inner: trace,
        manifold: &mut manifold_trace,
    };
    let state = inner_admm(vm, None, config, 0, &mut tee)?;
    let lambda = config.lambda_for(vm.nrows(), vm.ncols());
    Ok(DecompositionResult {
        method: config.method,
        image_shape: None,
        objective_trace: vec![objective(&state.vr, &state.e, lambda)?],
        inner_iters: vec![state.iter],
        converged: state.converged,
        aligned: state.vm,
        vr: state.vr,
        e: state.e,
        taus: TransformStack::new(Vec::new())?,
        manifold_trace,
    })
}

/// Forwards to the caller's sink and keeps manifold records.
struct Tee<'a> {
    inner: &'a mut dyn TraceSink,
    manifold: &'a mut Vec<TraceRecord>,
}

impl TraceSink for Tee<'_> {
    fn record(&mut self, record: &TraceRecord) {
        if matches!(record, TraceRecord::Manifold { .. }) {
            self.manifold.push(record.clone());
        }
        self.inner.record(record);
    }
}

/// Jointly aligns a batch and splits it into low-rank and sparse parts.
pub fn align_and_decompose(
    images: &[Image],
    initial: &TransformStack,
    config: &SolverConfig,
    trace: &mut dyn TraceSink,
) -> Result<DecompositionResult> {
    config.validate()?;
    let b = images.len();
    if b < 2 {
        return Err(LrdError::InvalidArgument(
            "alignment needs at least two images".into(),
        ));
    }
    if initial.len() != b {
        return Err(LrdError::InvalidArgument(format!(
            "{b} images but {} initial transforms",
            initial.len()
        )));
    }
    let shape = images[0].shape();
    if images.iter().any(|i| i.shape() != shape) {
        return Err(LrdError::InvalidArgument(
            "images must share dimensions".into(),
        ));
    }
    if shape.0 < MIN_IMAGE_SIDE || shape.1 < MIN_IMAGE_SIDE {
        return Err(LrdError::InvalidArgument(format!(
            "images must be at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}"
        )));
    }
    if config.method == Method::Meadmm && b < config.manifold.k + 2 {
        return Err(LrdError::InvalidArgument(format!(
            "manifold mode needs at least K + 2 = {} images",
            config.manifold.k + 2
        )));
    }

    let exec = config.execution;
    let interp = config.interpolation;
    let mut manifold_trace = Vec::new();
    let mut tee = Tee {
        inner: trace,
        manifold: &mut manifold_trace,
    };

    let mut taus = initial.clone();
    let mut objective_trace = Vec::new();
    let mut inner_iters = Vec::new();
    let mut converged = false;
    let mut last = None;
    for outer in 0..config.outer_max_iters {
        let vm = warp_normalize_batch(images, &taus, shape, interp, exec)?;
        let jac = batch_jacobians(images, &taus, shape, interp, exec)?;
        let state = inner_admm(&vm, Some(&jac), config, outer, &mut tee)?;
        let lambda = config.lambda_for(vm.nrows(), vm.ncols());
        objective_trace.push(objective(&state.vr, &state.e, lambda)?);
        inner_iters.push(state.iter);
        taus = compose_update(&taus, &state.dtau)?;
        let change = state.dtau.amax();
        last = Some(state);
        if change < config.outer_tol {
            converged = true;
            break;
        }
    }
    let state = last.expect("at least one outer iteration");
    let aligned = warp_normalize_batch(images, &taus, shape, interp, exec)?;
    Ok(DecompositionResult {
        method: config.method,
        image_shape: Some(shape),
        vr: state.vr,
        e: state.e,
        aligned,
        taus,
        objective_trace,
        inner_iters,
        converged,
        manifold_trace,
    })
}

/// Relative Frobenius distance `||a - b||_F / ||b||_F`.
pub fn relative_error(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    (a - b).norm() / b.norm()
}

/// Column-wise helper used by tests and the CLI: unit-normalizes columns.
pub fn normalize_columns(m: &DenseMatrix) -> DenseMatrix {
    let cols: Vec<DVector<f64>> = m
        .column_iter()
        .map(|c| {
            let n = c.norm();
            if n > 0.0 {
                c / n
            } else {
                c.into_owned()
            }
        })
        .collect();
    DenseMatrix::from_columns(&cols)
}
