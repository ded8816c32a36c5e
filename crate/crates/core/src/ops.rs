//! Proximal operators and matrix norms shared by every solver step.

use nalgebra::{DMatrix, DVector};

use crate::error::{LrdError, Result};

/// Column-major dense matrix used for every solver iterate.
pub type DenseMatrix = DMatrix<f64>;

/// Singular values below this fraction of the largest one count as zero when
/// reporting rank.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Thin SVD with singular values sorted non-increasing.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: DenseMatrix,
    pub sigma: DVector<f64>,
    pub v: DenseMatrix,
}

impl SvdFactors {
    pub fn recompose(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }

    /// Number of singular values above `RANK_TOLERANCE * sigma_max`.
    pub fn rank(&self) -> usize {
        let smax = self.sigma.iter().copied().fold(0.0, f64::max);
        if smax == 0.0 {
            return 0;
        }
        self.sigma
            .iter()
            .filter(|&&s| s > RANK_TOLERANCE * smax)
            .count()
    }
}

/// `sign(x) * max(|x| - alpha, 0)`.
pub fn soft_threshold(x: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(shrink(x, alpha))
}

#[inline]
pub(crate) fn shrink(x: f64, alpha: f64) -> f64 {
    if x > alpha {
        x - alpha
    } else if x < -alpha {
        x + alpha
    } else {
        0.0
    }
}

pub fn soft_threshold_matrix(a: &DenseMatrix, alpha: f64) -> Result<DenseMatrix> {
    check_alpha(alpha)?;
    Ok(a.map(|x| shrink(x, alpha)))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(LrdError::InvalidArgument(format!(
            "threshold must be non-negative, got {alpha}"
        )));
    }
    Ok(())
}

fn check_finite(a: &DenseMatrix, what: &str) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(LrdError::Numeric(format!("{what}: non-finite entry in input")))
    }
}

/// Economy SVD of `a`.
pub fn svd(a: &DenseMatrix) -> Result<SvdFactors> {
    check_finite(a, "svd")?;
    let (m, n) = a.shape();
    let k = m.min(n);
    if k == 0 {
        return Ok(SvdFactors {
            u: DenseMatrix::zeros(m, 0),
            sigma: DVector::zeros(0),
            v: DenseMatrix::zeros(n, 0),
        });
    }
    if m < n {
        let t = svd(&a.transpose())?;
        return Ok(SvdFactors { u: t.v, sigma: t.sigma, v: t.u });
    }
    // nalgebra's implicit-shift bidiagonal SVD returns a wrong spectrum on a
    // small fraction of rank-deficient inputs (about 0.6% of random products
    // of rank <= 3). Householder QR followed by one-sided Jacobi on the
    // square factor is accurate there and costs O(m n^2) like before.
    let qr = a.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    let (w, v) = jacobi_columns(r)?;

    let mut order: Vec<usize> = (0..k).collect();
    let norms: Vec<f64> = (0..k).map(|j| w.column(j).norm()).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let mut ur = DenseMatrix::zeros(k, k);
    let mut sv = DenseMatrix::zeros(n, k);
    let mut sigma = DVector::zeros(k);
    let mut filled = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        sigma[dst] = norms[src];
        sv.set_column(dst, &v.column(src));
        if norms[src] > f64::MIN_POSITIVE {
            ur.set_column(dst, &(w.column(src) / norms[src]));
            filled.push(dst);
        }
    }
    complete_basis(&mut ur, &filled);
    Ok(SvdFactors { u: q * ur, sigma, v: sv })
}

/// Rotates the columns of `w` until they are mutually orthogonal and returns
/// them with the accumulated rotation, so that `w_in * v = w_out`.
fn jacobi_columns(mut w: DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    let k = w.ncols();
    let mut v = DenseMatrix::identity(k, k);
    // Columns at rounding-noise level are numerically zero; rotating them
    // against each other never settles.
    let negligible = (f64::EPSILON * w.norm()).powi(2);
    // A computed dot product carries about `rows * eps` relative error.
    let tol = w.nrows().max(1) as f64 * f64::EPSILON;
    for _ in 0..80 {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if alpha <= negligible
                    || beta <= negligible
                    || gamma.abs() <= tol * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut w, &mut v] {
                    for i in 0..mat.nrows() {
                        let (x, y) = (mat[(i, p)], mat[(i, q)]);
                        mat[(i, p)] = c * x - s * y;
                        mat[(i, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            for mut col in w.column_iter_mut() {
                if col.norm_squared() <= negligible {
                    col.fill(0.0);
                }
            }
            return Ok((w, v));
        }
    }
    Err(LrdError::Numeric("svd did not converge".into()))
}

/// Fills the columns of `u` not listed in `filled` with unit vectors
/// orthogonal to every other column.
fn complete_basis(u: &mut DenseMatrix, filled: &[usize]) {
    let k = u.nrows();
    let mut basis: Vec<usize> = filled.to_vec();
    for j in 0..u.ncols() {
        if filled.contains(&j) {
            continue;
        }
        // The standard basis vector with the largest orthogonal remainder
        // keeps at least 1/sqrt(k) of its length.
        let best = (0..k)
            .map(|i| {
                let mut x = DVector::zeros(k);
                x[i] = 1.0;
                for _ in 0..2 {
                    for &b in &basis {
                        let d = u.column(b).dot(&x);
                        x.axpy(-d, &u.column(b), 1.0);
                    }
                }
                x
            })
            .max_by(|x, y| x.norm().total_cmp(&y.norm()))
            .expect("k > 0");
        let n = best.norm();
        u.set_column(j, &(best / n));
        basis.push(j);
    }
}

/// Singular value thresholding: the proximal map of `alpha * ||X||_*`.
pub fn svt(a: &DenseMatrix, alpha: f64) -> Result<DenseMatrix> {
    svt_with_rank(a, alpha).map(|(x, _)| x)
}

/// Result of a thresholding step with the bookkeeping the solver traces.
#[derive(Debug, Clone)]
pub struct SvtOutput {
    pub matrix: DenseMatrix,
    /// Number of singular values kept.
    pub rank: usize,
    /// Nuclear norm of `matrix`.
    pub nuclear_norm: f64,
}

/// Like [`svt`], also returning the number of singular values kept.
pub fn svt_with_rank(a: &DenseMatrix, alpha: f64) -> Result<(DenseMatrix, usize)> {
    svt_full(a, alpha).map(|o| (o.matrix, o.rank))
}

pub fn svt_full(a: &DenseMatrix, alpha: f64) -> Result<SvtOutput> {
    check_alpha(alpha)?;
    let f = svd(a)?;
    let shrunk: Vec<f64> = f.sigma.iter().map(|&s| shrink(s, alpha)).collect();
    let kept = shrunk.iter().take_while(|&&s| s > 0.0).count();
    let (m, n) = a.shape();
    if kept == 0 {
        return Ok(SvtOutput {
            matrix: DenseMatrix::zeros(m, n),
            rank: 0,
            nuclear_norm: 0.0,
        });
    }
    // Only the surviving triplets contribute.
    let kept_factors = SvdFactors {
        u: f.u.columns(0, kept).into_owned(),
        sigma: DVector::from_column_slice(&shrunk[..kept]),
        v: f.v.columns(0, kept).into_owned(),
    };
    Ok(SvtOutput {
        matrix: kept_factors.recompose(),
        rank: kept,
        nuclear_norm: shrunk[..kept].iter().sum(),
    })
}

pub fn nuclear_norm(a: &DenseMatrix) -> Result<f64> {
    Ok(svd(a)?.sigma.iter().sum())
}

pub fn spectral_norm(a: &DenseMatrix) -> Result<f64> {
    Ok(svd(a)?.sigma.iter().copied().fold(0.0, f64::max))
}

pub fn l1_norm(a: &DenseMatrix) -> Result<f64> {
    check_finite(a, "l1_norm")?;
    Ok(a.iter().map(|x| x.abs()).sum())
}

pub fn fro_norm(a: &DenseMatrix) -> Result<f64> {
    check_finite(a, "fro_norm")?;
    Ok(a.norm())
}

/// Numerical rank, treating singular values below `1e-12 * sigma_max` as zero.
pub fn rank(a: &DenseMatrix) -> Result<usize> {
    Ok(svd(a)?.rank())
}
