//! Planar transform groups, image warping and warp Jacobians.
//!
//! Coordinates are centered: pixel `(row, col)` of an `h x w` frame sits at
//! `x = col - (w - 1) / 2`, `y = row - (h - 1) / 2`. A transform maps a point
//! of the output (aligned) frame to the point of the input image it samples,
//! so `warp(img, t)(p) = img(t(p))`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{LrdError, Result};
use crate::exec::Execution;
use crate::ops::DenseMatrix;

/// Minimum |det| of the linear part for a transform to count as invertible.
pub const MIN_DETERMINANT: f64 = 1e-8;

/// Grayscale image, `height x width`, stored column-major so that
/// `as_slice()` is the standard `vec(I)` stacking.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: DMatrix<f64>,
}

impl Image {
    pub fn from_matrix(data: DMatrix<f64>) -> Self {
        Image { data }
    }

    pub fn from_fn(height: usize, width: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        Image {
            data: DMatrix::from_fn(height, width, f),
        }
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Image {
            data: DMatrix::from_element(height, width, value),
        }
    }

    /// Rebuilds an image from a column-major `vec(I)`.
    pub fn from_column(height: usize, width: usize, column: &[f64]) -> Result<Self> {
        if column.len() != height * width {
            return Err(LrdError::ShapeMismatch {
                expected: (height * width, 1),
                got: (column.len(), 1),
            });
        }
        Ok(Image {
            data: DMatrix::from_column_slice(height, width, column),
        })
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.shape()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[(row, col)] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(self.data.as_slice())
    }

    pub fn map(&self, f: impl FnMut(f64) -> f64) -> Image {
        Image {
            data: self.data.map(f),
        }
    }

    /// Reads a pixel, returning 0 outside the frame.
    #[inline]
    fn at(&self, row: isize, col: isize) -> f64 {
        if row < 0 || col < 0 || row as usize >= self.height() || col as usize >= self.width() {
            0.0
        } else {
            self.data[(row as usize, col as usize)]
        }
    }
}

/// Offsets converting centered coordinates to pixel coordinates.
#[inline]
pub fn frame_center(shape: (usize, usize)) -> (f64, f64) {
    let (h, w) = shape;
    ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformGroup {
    Translation,
    Similarity,
    Affine,
    Projective,
}

impl TransformGroup {
    pub const ALL: [TransformGroup; 4] = [
        TransformGroup::Translation,
        TransformGroup::Similarity,
        TransformGroup::Affine,
        TransformGroup::Projective,
    ];

    pub fn param_count(self) -> usize {
        match self {
            TransformGroup::Translation => 2,
            TransformGroup::Similarity => 4,
            TransformGroup::Affine => 6,
            TransformGroup::Projective => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TransformGroup::Translation => "translation",
            TransformGroup::Similarity => "similarity",
            TransformGroup::Affine => "affine",
            TransformGroup::Projective => "projective",
        }
    }

    /// Parameter vector of the identity transform.
    pub fn identity_params(self) -> Vec<f64> {
        match self {
            TransformGroup::Translation => vec![0.0, 0.0],
            TransformGroup::Similarity => vec![1.0, 0.0, 0.0, 0.0],
            TransformGroup::Affine => vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            TransformGroup::Projective => vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
        }
    }
}

impl fmt::Display for TransformGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformGroup {
    type Err = LrdError;

    fn from_str(s: &str) -> Result<Self> {
        TransformGroup::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| LrdError::InvalidArgument(format!("unknown transform group '{s}'")))
    }
}

/// Parameters of one planar transform.
///
/// Charts per group:
/// - translation: `(tx, ty)`
/// - similarity: `(scale, angle, tx, ty)`
/// - affine: `(a11, a12, a21, a22, tx, ty)`
/// - projective: `(h11, h12, h13, h21, h22, h23, h31, h32)` with `h33 = 1`
#[derive(Debug, Clone, PartialEq)]
pub struct TransformParams {
    group: TransformGroup,
    zeta: Vec<f64>,
}

impl TransformParams {
    pub fn new(group: TransformGroup, zeta: Vec<f64>) -> Result<Self> {
        if zeta.len() != group.param_count() {
            return Err(LrdError::InvalidArgument(format!(
                "{group} expects {} parameters, got {}",
                group.param_count(),
                zeta.len()
            )));
        }
        let t = TransformParams { group, zeta };
        t.check_invertible()?;
        Ok(t)
    }

    pub fn identity(group: TransformGroup) -> Self {
        TransformParams {
            group,
            zeta: group.identity_params(),
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        TransformParams {
            group: TransformGroup::Translation,
            zeta: vec![tx, ty],
        }
    }

    pub fn similarity(scale: f64, angle: f64, tx: f64, ty: f64) -> Result<Self> {
        Self::new(TransformGroup::Similarity, vec![scale, angle, tx, ty])
    }

    pub fn group(&self) -> TransformGroup {
        self.group
    }

    pub fn params(&self) -> &[f64] {
        &self.zeta
    }

    fn check_invertible(&self) -> Result<()> {
        if self.zeta.iter().any(|v| !v.is_finite()) {
            return Err(LrdError::InvalidArgument(
                "non-finite transform parameter".into(),
            ));
        }
        let m = self.raw_matrix();
        let det = match self.group {
            TransformGroup::Projective => m.determinant(),
            _ => m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)],
        };
        if det.abs() <= MIN_DETERMINANT {
            return Err(LrdError::InvalidArgument(format!(
                "{} transform is not invertible (det {det:e})",
                self.group
            )));
        }
        Ok(())
    }

    fn raw_matrix(&self) -> Matrix3<f64> {
        let z = &self.zeta;
        match self.group {
            TransformGroup::Translation => {
                Matrix3::new(1.0, 0.0, z[0], 0.0, 1.0, z[1], 0.0, 0.0, 1.0)
            }
            TransformGroup::Similarity => {
                let (s, c) = z[1].sin_cos();
                Matrix3::new(
                    z[0] * c,
                    -z[0] * s,
                    z[2],
                    z[0] * s,
                    z[0] * c,
                    z[3],
                    0.0,
                    0.0,
                    1.0,
                )
            }
            TransformGroup::Affine => {
                Matrix3::new(z[0], z[1], z[4], z[2], z[3], z[5], 0.0, 0.0, 1.0)
            }
            TransformGroup::Projective => {
                Matrix3::new(z[0], z[1], z[2], z[3], z[4], z[5], z[6], z[7], 1.0)
            }
        }
    }

    /// Homogeneous 3x3 form acting on centered coordinates.
    pub fn to_matrix(&self) -> Result<Matrix3<f64>> {
        self.check_invertible()?;
        Ok(self.raw_matrix())
    }

    /// Reads parameters of `group` back from a 3x3 matrix. Components outside
    /// the group (e.g. shear for a similarity) are ignored.
    pub fn from_matrix(group: TransformGroup, m: &Matrix3<f64>) -> Result<Self> {
        let m = if m[(2, 2)].abs() > 0.0 {
            m / m[(2, 2)]
        } else {
            return Err(LrdError::InvalidArgument(
                "matrix has zero bottom-right entry".into(),
            ));
        };
        let zeta = match group {
            TransformGroup::Translation => vec![m[(0, 2)], m[(1, 2)]],
            TransformGroup::Similarity => {
                let scale = m[(0, 0)].hypot(m[(1, 0)]);
                let angle = m[(1, 0)].atan2(m[(0, 0)]);
                vec![scale, angle, m[(0, 2)], m[(1, 2)]]
            }
            TransformGroup::Affine => vec![
                m[(0, 0)],
                m[(0, 1)],
                m[(1, 0)],
                m[(1, 1)],
                m[(0, 2)],
                m[(1, 2)],
            ],
            TransformGroup::Projective => vec![
                m[(0, 0)],
                m[(0, 1)],
                m[(0, 2)],
                m[(1, 0)],
                m[(1, 1)],
                m[(1, 2)],
                m[(2, 0)],
                m[(2, 1)],
            ],
        };
        Self::new(group, zeta)
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .to_matrix()?
            .try_inverse()
            .ok_or_else(|| LrdError::InvalidArgument("transform is not invertible".into()))?;
        Self::from_matrix(self.group, &inv)
    }

    /// `self ∘ other` as matrices (apply `other` first).
    pub fn compose(&self, other: &TransformParams) -> Result<Self> {
        Self::from_matrix(self.group, &(self.to_matrix()? * other.to_matrix()?))
    }

    /// Maps a centered point.
    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let z = &self.zeta;
        match self.group {
            TransformGroup::Translation => (x + z[0], y + z[1]),
            TransformGroup::Similarity => {
                let (s, c) = z[1].sin_cos();
                (
                    z[0] * (c * x - s * y) + z[2],
                    z[0] * (s * x + c * y) + z[3],
                )
            }
            TransformGroup::Affine => (z[0] * x + z[1] * y + z[4], z[2] * x + z[3] * y + z[5]),
            TransformGroup::Projective => {
                let w = z[6] * x + z[7] * y + 1.0;
                (
                    (z[0] * x + z[1] * y + z[2]) / w,
                    (z[3] * x + z[4] * y + z[5]) / w,
                )
            }
        }
    }

    /// Maps a pixel-coordinate point `(x = col, y = row)` of a `canvas`
    /// frame into pixel coordinates of a `source` frame.
    pub fn map_pixel(
        &self,
        point: (f64, f64),
        canvas: (usize, usize),
        source: (usize, usize),
    ) -> (f64, f64) {
        let (cx, cy) = frame_center(canvas);
        let (sx, sy) = frame_center(source);
        let (x, y) = self.apply(point.0 - cx, point.1 - cy);
        (x + sx, y + sy)
    }

    /// Derivatives of the mapped point w.r.t. each parameter, written into
    /// `dx` and `dy` (each of length `p`).
    #[inline]
    fn coordinate_jacobian(&self, x: f64, y: f64, dx: &mut [f64], dy: &mut [f64]) {
        let z = &self.zeta;
        match self.group {
            TransformGroup::Translation => {
                dx.copy_from_slice(&[1.0, 0.0]);
                dy.copy_from_slice(&[0.0, 1.0]);
            }
            TransformGroup::Similarity => {
                let (s, c) = z[1].sin_cos();
                let rx = c * x - s * y;
                let ry = s * x + c * y;
                dx.copy_from_slice(&[rx, -z[0] * ry, 1.0, 0.0]);
                dy.copy_from_slice(&[ry, z[0] * rx, 0.0, 1.0]);
            }
            TransformGroup::Affine => {
                dx.copy_from_slice(&[x, y, 0.0, 0.0, 1.0, 0.0]);
                dy.copy_from_slice(&[0.0, 0.0, x, y, 0.0, 1.0]);
            }
            TransformGroup::Projective => {
                let w = z[6] * x + z[7] * y + 1.0;
                let xp = (z[0] * x + z[1] * y + z[2]) / w;
                let yp = (z[3] * x + z[4] * y + z[5]) / w;
                dx.copy_from_slice(&[
                    x / w,
                    y / w,
                    1.0 / w,
                    0.0,
                    0.0,
                    0.0,
                    -x * xp / w,
                    -y * xp / w,
                ]);
                dy.copy_from_slice(&[
                    0.0,
                    0.0,
                    0.0,
                    x / w,
                    y / w,
                    1.0 / w,
                    -x * yp / w,
                    -y * yp / w,
                ]);
            }
        }
    }
}

/// One transform per image, all from the same group.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformStack {
    per_image: Vec<TransformParams>,
}

impl TransformStack {
    pub fn new(per_image: Vec<TransformParams>) -> Result<Self> {
        if let Some(first) = per_image.first() {
            if per_image.iter().any(|t| t.group != first.group) {
                return Err(LrdError::InvalidArgument(
                    "transform stack mixes groups".into(),
                ));
            }
        }
        Ok(TransformStack { per_image })
    }

    pub fn identity(group: TransformGroup, count: usize) -> Self {
        TransformStack {
            per_image: vec![TransformParams::identity(group); count],
        }
    }

    pub fn len(&self) -> usize {
        self.per_image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_image.is_empty()
    }

    pub fn group(&self) -> Option<TransformGroup> {
        self.per_image.first().map(|t| t.group)
    }

    pub fn get(&self, i: usize) -> &TransformParams {
        &self.per_image[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TransformParams> {
        self.per_image.iter()
    }

    /// Parameters as a `p x B` matrix.
    pub fn param_matrix(&self) -> DenseMatrix {
        let p = self.group().map_or(0, |g| g.param_count());
        DenseMatrix::from_fn(p, self.len(), |r, c| self.per_image[c].zeta[r])
    }
}

/// Additive parameter-space update `tau + dtau`; `dtau` is `p x B`.
pub fn compose_update(taus: &TransformStack, dtau: &DenseMatrix) -> Result<TransformStack> {
    let p = taus.group().map_or(0, |g| g.param_count());
    if dtau.shape() != (p, taus.len()) {
        return Err(LrdError::ShapeMismatch {
            expected: (p, taus.len()),
            got: dtau.shape(),
        });
    }
    let per_image = taus
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let zeta: Vec<f64> = t
                .zeta
                .iter()
                .zip(dtau.column(i).iter())
                .map(|(a, b)| a + b)
                .collect();
            TransformParams::new(t.group, zeta).map_err(|e| LrdError::InvalidUpdate {
                index: i,
                reason: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TransformStack { per_image })
}

/// Resampling kernel used by [`warp`] and [`jacobian`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    Bilinear,
    /// Keys cubic convolution (a = -0.5). Continuously differentiable, and its
    /// derivative at grid points is the central difference.
    #[default]
    Cubic,
}

impl FromStr for Interpolation {
    type Err = LrdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(Interpolation::Bilinear),
            "cubic" => Ok(Interpolation::Cubic),
            _ => Err(LrdError::InvalidArgument(format!(
                "unknown interpolation '{s}'"
            ))),
        }
    }
}

impl fmt::Display for Interpolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Interpolation::Bilinear => "bilinear",
            Interpolation::Cubic => "cubic",
        })
    }
}

#[inline]
fn keys(t: f64) -> f64 {
    let a = t.abs();
    if a <= 1.0 {
        (1.5 * a - 2.5) * a * a + 1.0
    } else if a < 2.0 {
        ((-0.5 * a + 2.5) * a - 4.0) * a + 2.0
    } else {
        0.0
    }
}

#[inline]
fn keys_derivative(t: f64) -> f64 {
    let a = t.abs();
    let d = if a <= 1.0 {
        (4.5 * a - 5.0) * a
    } else if a < 2.0 {
        (-1.5 * a + 5.0) * a - 4.0
    } else {
        0.0
    };
    d * t.signum()
}

impl Interpolation {
    /// Value and spatial gradient `(value, d/dcol, d/drow)` at pixel
    /// coordinates `(col, row)`.
    #[inline]
    pub fn sample_with_gradient(self, img: &Image, col: f64, row: f64) -> (f64, f64, f64) {
        let c0 = col.floor();
        let r0 = row.floor();
        let fc = col - c0;
        let fr = row - r0;
        let (c0, r0) = (c0 as isize, r0 as isize);
        match self {
            Interpolation::Bilinear => {
                let i00 = img.at(r0, c0);
                let i01 = img.at(r0, c0 + 1);
                let i10 = img.at(r0 + 1, c0);
                let i11 = img.at(r0 + 1, c0 + 1);
                let top = i00 + fc * (i01 - i00);
                let bottom = i10 + fc * (i11 - i10);
                let v = top + fr * (bottom - top);
                let gc = (1.0 - fr) * (i01 - i00) + fr * (i11 - i10);
                let gr = bottom - top;
                (v, gc, gr)
            }
            Interpolation::Cubic => {
                let mut wc = [0.0; 4];
                let mut dc = [0.0; 4];
                let mut wr = [0.0; 4];
                let mut dr = [0.0; 4];
                for k in 0..4 {
                    let t = fc - (k as f64 - 1.0);
                    wc[k] = keys(t);
                    dc[k] = keys_derivative(t);
                    let t = fr - (k as f64 - 1.0);
                    wr[k] = keys(t);
                    dr[k] = keys_derivative(t);
                }
                let (mut v, mut gc, mut gr) = (0.0, 0.0, 0.0);
                for (j, (&wrj, &drj)) in wr.iter().zip(&dr).enumerate() {
                    let rr = r0 + j as isize - 1;
                    let (mut sv, mut sd) = (0.0, 0.0);
                    for k in 0..4 {
                        let p = img.at(rr, c0 + k as isize - 1);
                        sv += wc[k] * p;
                        sd += dc[k] * p;
                    }
                    v += wrj * sv;
                    gc += wrj * sd;
                    gr += drj * sv;
                }
                (v, gc, gr)
            }
        }
    }

    #[inline]
    pub fn sample(self, img: &Image, col: f64, row: f64) -> f64 {
        self.sample_with_gradient(img, col, row).0
    }
}

/// Resamples `img` onto an `out_shape` frame: output pixel `p` reads the
/// input at `t(p)`; reads outside the input frame are 0.
pub fn warp(
    img: &Image,
    t: &TransformParams,
    out_shape: (usize, usize),
    interp: Interpolation,
) -> Image {
    let (h, w) = out_shape;
    let (cx, cy) = frame_center(out_shape);
    let (sx, sy) = frame_center(img.shape());
    Image::from_fn(h, w, |r, c| {
        let (x, y) = t.apply(c as f64 - cx, r as f64 - cy);
        interp.sample(img, x + sx, y + sy)
    })
}

/// Warped image vector and the derivative of every pixel w.r.t. the
/// transform parameters (no normalization).
pub fn warp_jacobian(
    img: &Image,
    t: &TransformParams,
    out_shape: (usize, usize),
    interp: Interpolation,
) -> (DVector<f64>, DenseMatrix) {
    let (h, w) = out_shape;
    let p = t.group.param_count();
    let (cx, cy) = frame_center(out_shape);
    let (sx, sy) = frame_center(img.shape());
    let mut q = DVector::zeros(h * w);
    let mut jac = DenseMatrix::zeros(h * w, p);
    let mut dx = vec![0.0; p];
    let mut dy = vec![0.0; p];
    for c in 0..w {
        for r in 0..h {
            let idx = c * h + r;
            let (x, y) = (c as f64 - cx, r as f64 - cy);
            let (xs, ys) = t.apply(x, y);
            let (v, gc, gr) = interp.sample_with_gradient(img, xs + sx, ys + sy);
            q[idx] = v;
            t.coordinate_jacobian(x, y, &mut dx, &mut dy);
            for k in 0..p {
                jac[(idx, k)] = gc * dx[k] + gr * dy[k];
            }
        }
    }
    (q, jac)
}

/// Derivative of `vec(I ∘ t) / ||vec(I ∘ t)||` w.r.t. the parameters of `t`.
pub fn jacobian(
    img: &Image,
    t: &TransformParams,
    out_shape: (usize, usize),
    interp: Interpolation,
) -> Result<DenseMatrix> {
    let (q, raw) = warp_jacobian(img, t, out_shape, interp);
    let n = q.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(LrdError::DegenerateWarp { index: 0 });
    }
    let qhat = q / n;
    // (I - q̂ q̂ᵀ) J / ||q||
    let proj = qhat.transpose() * &raw;
    let mut out = raw - &qhat * proj;
    out /= n;
    Ok(out)
}

/// Column `i` is `vec(I_i ∘ tau_i)` scaled to unit Euclidean norm.
pub fn warp_normalize_batch(
    images: &[Image],
    taus: &TransformStack,
    out_shape: (usize, usize),
    interp: Interpolation,
    exec: Execution,
) -> Result<DenseMatrix> {
    check_batch(images, taus)?;
    let cols = exec.try_map(images.len(), |i| {
        let q = warp(&images[i], taus.get(i), out_shape, interp).to_vector();
        let n = q.norm();
        if n == 0.0 || !n.is_finite() {
            Err(LrdError::DegenerateWarp { index: i })
        } else {
            Ok(q / n)
        }
    })?;
    Ok(DenseMatrix::from_columns(&cols))
}

/// Jacobians of every warped-normalized image in the batch.
pub fn batch_jacobians(
    images: &[Image],
    taus: &TransformStack,
    out_shape: (usize, usize),
    interp: Interpolation,
    exec: Execution,
) -> Result<Vec<DenseMatrix>> {
    check_batch(images, taus)?;
    exec.try_map(images.len(), |i| {
        jacobian(&images[i], taus.get(i), out_shape, interp).map_err(|e| match e {
            LrdError::DegenerateWarp { .. } => LrdError::DegenerateWarp { index: i },
            other => other,
        })
    })
}

fn check_batch(images: &[Image], taus: &TransformStack) -> Result<()> {
    if images.is_empty() {
        return Err(LrdError::InvalidArgument("empty image batch".into()));
    }
    if images.len() != taus.len() {
        return Err(LrdError::InvalidArgument(format!(
            "{} images but {} transforms",
            images.len(),
            taus.len()
        )));
    }
    Ok(())
}

/// Homogeneous point helper used by tests and synthesis.
pub fn apply_matrix(m: &Matrix3<f64>, x: f64, y: f64) -> (f64, f64) {
    let v = m * Vector3::new(x, y, 1.0);
    (v[0] / v[2], v[1] / v[2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob(h: usize, w: usize) -> Image {
        let (cx, cy) = frame_center((h, w));
        Image::from_fn(h, w, |r, c| {
            let x = c as f64 - cx - 1.3;
            let y = r as f64 - cy + 0.7;
            (-(x * x + 1.4 * y * y) / 30.0).exp()
        })
    }

    fn random_params(rng: &mut ChaCha8Rng, group: TransformGroup) -> TransformParams {
        let base = group.identity_params();
        loop {
            let zeta: Vec<f64> = base
                .iter()
                .map(|b| b + rng.random_range(-0.1..0.1))
                .collect();
            if let Ok(t) = TransformParams::new(group, zeta) {
                return t;
            }
        }
    }

    #[test]
    fn identity_matrices() {
        assert_eq!(
            TransformParams::translation(0.0, 0.0).to_matrix().unwrap(),
            Matrix3::identity()
        );
        assert_eq!(
            TransformParams::similarity(1.0, 0.0, 0.0, 0.0)
                .unwrap()
                .to_matrix()
                .unwrap(),
            Matrix3::identity()
        );
        for g in TransformGroup::ALL {
            assert_eq!(
                TransformParams::identity(g).to_matrix().unwrap(),
                Matrix3::identity()
            );
        }
    }

    #[test]
    fn matrix_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for g in TransformGroup::ALL {
            for _ in 0..50 {
                let t = random_params(&mut rng, g);
                let back = TransformParams::from_matrix(g, &t.to_matrix().unwrap()).unwrap();
                for (a, b) in t.params().iter().zip(back.params()) {
                    assert!((a - b).abs() < 1e-12, "{g}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn singular_transforms_rejected() {
        assert!(TransformParams::similarity(0.0, 0.3, 1.0, 1.0).is_err());
        assert!(TransformParams::new(
            TransformGroup::Affine,
            vec![1.0, 2.0, 2.0, 4.0, 0.0, 0.0]
        )
        .is_err());
        assert!(TransformParams::new(TransformGroup::Translation, vec![1.0]).is_err());
    }

    #[test]
    fn apply_matches_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for g in TransformGroup::ALL {
            let t = random_params(&mut rng, g);
            let m = t.to_matrix().unwrap();
            let (a, b) = t.apply(3.5, -2.0);
            let (c, d) = apply_matrix(&m, 3.5, -2.0);
            assert!((a - c).abs() < 1e-12 && (b - d).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = blob(12, 10);
        for interp in [Interpolation::Bilinear, Interpolation::Cubic] {
            let out = warp(&img, &TransformParams::identity(TransformGroup::Affine), img.shape(), interp);
            for r in 0..12 {
                for c in 0..10 {
                    assert!((out.get(r, c) - img.get(r, c)).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn integer_translation_shifts_with_zero_fill() {
        let img = Image::from_fn(10, 12, |r, c| (r * 12 + c) as f64 / 120.0 + 0.01);
        let t = TransformParams::translation(2.0, 3.0);
        for interp in [Interpolation::Bilinear, Interpolation::Cubic] {
            let out = warp(&img, &t, img.shape(), interp);
            for r in 0..10 {
                for c in 0..12 {
                    let expect = if r + 3 < 10 && c + 2 < 12 {
                        img.get(r + 3, c + 2)
                    } else {
                        0.0
                    };
                    assert!((out.get(r, c) - expect).abs() < 1e-14, "{interp:?} {r} {c}");
                }
            }
        }
    }

    #[test]
    fn warp_then_inverse_recovers_smooth_image() {
        let img = blob(32, 32);
        let t = TransformParams::similarity(1.05, 0.12, 1.3, -0.8).unwrap();
        let inv = t.inverse().unwrap();
        let there = warp(&img, &t, img.shape(), Interpolation::Bilinear);
        let back = warp(&there, &inv, img.shape(), Interpolation::Bilinear);
        let mut err = 0.0;
        let mut n = 0;
        for r in 6..26 {
            for c in 6..26 {
                err += (back.get(r, c) - img.get(r, c)).abs();
                n += 1;
            }
        }
        assert!(err / (n as f64) < 2e-2);
    }

    #[test]
    fn warp_is_linear_in_the_image() {
        let a = blob(16, 16);
        let b = Image::from_fn(16, 16, |r, c| ((r as f64) * 0.3).sin() * (c as f64 * 0.2).cos());
        let t = TransformParams::similarity(0.97, -0.1, 0.4, 0.9).unwrap();
        let mix = Image::from_fn(16, 16, |r, c| 0.7 * a.get(r, c) - 1.9 * b.get(r, c));
        for interp in [Interpolation::Bilinear, Interpolation::Cubic] {
            let wm = warp(&mix, &t, (16, 16), interp);
            let wa = warp(&a, &t, (16, 16), interp);
            let wb = warp(&b, &t, (16, 16), interp);
            for (i, v) in wm.as_slice().iter().enumerate() {
                let expect = 0.7 * wa.as_slice()[i] - 1.9 * wb.as_slice()[i];
                assert!((v - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_image_translation_jacobian_vanishes_inside() {
        let img = Image::constant(12, 12, 0.5);
        let t = TransformParams::translation(0.0, 0.0);
        let (_, j) = warp_jacobian(&img, &t, (12, 12), Interpolation::Cubic);
        for c in 2..10 {
            for r in 2..10 {
                assert!(j[(c * 12 + r, 0)].abs() < 1e-14);
                assert!(j[(c * 12 + r, 1)].abs() < 1e-14);
            }
        }
    }

    #[test]
    fn jacobian_shapes() {
        let img = blob(10, 9);
        for g in TransformGroup::ALL {
            let j = jacobian(&img, &TransformParams::identity(g), (10, 9), Interpolation::Cubic)
                .unwrap();
            assert_eq!(j.shape(), (90, g.param_count()));
        }
    }

    #[test]
    fn cubic_gradient_at_grid_is_central_difference() {
        let img = blob(9, 9);
        let (_, gc, gr) = Interpolation::Cubic.sample_with_gradient(&img, 4.0, 3.0);
        assert!((gc - 0.5 * (img.get(3, 5) - img.get(3, 3))).abs() < 1e-15);
        assert!((gr - 0.5 * (img.get(4, 4) - img.get(2, 4))).abs() < 1e-15);
    }

    #[test]
    fn normalized_columns_and_gain_invariance() {
        let imgs = vec![blob(12, 12), blob(12, 12).map(|v| v * 0.3 + 0.1)];
        let taus = TransformStack::new(vec![
            TransformParams::translation(0.3, -0.2),
            TransformParams::translation(-1.0, 0.5),
        ])
        .unwrap();
        let v = warp_normalize_batch(&imgs, &taus, (12, 12), Interpolation::Cubic, Execution::Sequential)
            .unwrap();
        for c in v.column_iter() {
            assert!((c.norm() - 1.0).abs() < 1e-12);
        }
        let scaled: Vec<Image> = imgs.iter().map(|i| i.map(|v| v * 3.7)).collect();
        let v2 = warp_normalize_batch(&scaled, &taus, (12, 12), Interpolation::Cubic, Execution::Parallel)
            .unwrap();
        assert!((v - v2).amax() < 1e-12);
    }

    #[test]
    fn identity_on_unit_inputs_is_vectorization() {
        let img = blob(8, 8);
        let n = img.to_vector().norm();
        let img = img.map(|v| v / n);
        let v = warp_normalize_batch(
            std::slice::from_ref(&img),
            &TransformStack::identity(TransformGroup::Similarity, 1),
            (8, 8),
            Interpolation::Cubic,
            Execution::Sequential,
        )
        .unwrap();
        for (a, b) in v.column(0).iter().zip(img.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_frame_warp_is_degenerate() {
        let imgs = vec![blob(8, 8), blob(8, 8)];
        let taus = TransformStack::new(vec![
            TransformParams::translation(0.0, 0.0),
            TransformParams::translation(50.0, 0.0),
        ])
        .unwrap();
        let err = warp_normalize_batch(&imgs, &taus, (8, 8), Interpolation::Cubic, Execution::Parallel)
            .unwrap_err();
        assert!(matches!(err, LrdError::DegenerateWarp { index: 1 }));
        let err = batch_jacobians(&imgs, &taus, (8, 8), Interpolation::Cubic, Execution::Parallel)
            .unwrap_err();
        assert!(matches!(err, LrdError::DegenerateWarp { index: 1 }));
    }

    #[test]
    fn additive_updates() {
        let taus = TransformStack::new(vec![
            TransformParams::translation(1.0, 2.0),
            TransformParams::translation(-1.0, 0.5),
        ])
        .unwrap();
        assert_eq!(compose_update(&taus, &DenseMatrix::zeros(2, 2)).unwrap(), taus);
        let d = DenseMatrix::from_row_slice(2, 2, &[0.5, 1.0, -1.0, 0.25]);
        let up = compose_update(&taus, &d).unwrap();
        assert_eq!(up.get(0).params(), &[1.5, 1.0]);
        assert_eq!(up.get(1).params(), &[0.0, 0.75]);

        let sim = TransformStack::identity(TransformGroup::Similarity, 1);
        let kill = DenseMatrix::from_column_slice(4, 1, &[-1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            compose_update(&sim, &kill),
            Err(LrdError::InvalidUpdate { index: 0, .. })
        ));
        assert!(compose_update(&sim, &DenseMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn bounded_random_updates_stay_valid_or_raise() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for g in TransformGroup::ALL {
            let p = g.param_count();
            let mut taus = TransformStack::identity(g, 3);
            for _ in 0..200 {
                let d = DenseMatrix::from_fn(p, 3, |_, _| rng.random_range(-0.2..0.2));
                match compose_update(&taus, &d) {
                    Ok(next) => {
                        for t in next.iter() {
                            assert!(t.to_matrix().is_ok());
                        }
                        taus = next;
                    }
                    Err(e) => assert!(matches!(e, LrdError::InvalidUpdate { .. })),
                }
            }
        }
    }
}
