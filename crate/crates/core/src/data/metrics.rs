use crate::error::{LrdError, Result};
use crate::geometry::TransformStack;

use super::Landmark;

/// Landmark error statistics in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    pub mean_error: f64,
    /// Population standard deviation over all landmark distances.
    pub error_std: f64,
    pub max_error: f64,
    /// Mean landmark distance per image.
    pub per_image: Vec<f64>,
}

/// Maps `base_landmarks` through each estimated transform and measures the
/// distance to that image's ground-truth landmark positions.
pub fn landmark_error(
    estimated: &TransformStack,
    truth_landmarks: &[Vec<Landmark>],
    base_landmarks: &[Landmark],
    shape: (usize, usize),
) -> Result<AlignmentReport> {
    if base_landmarks.is_empty() || truth_landmarks.is_empty() {
        return Err(LrdError::InvalidArgument("no landmarks to evaluate".into()));
    }
    if truth_landmarks.len() != estimated.len() {
        return Err(LrdError::InvalidArgument(format!(
            "{} landmark sets for {} transforms",
            truth_landmarks.len(),
            estimated.len()
        )));
    }
    let mut all = Vec::new();
    let mut per_image = Vec::with_capacity(estimated.len());
    for (i, (tau, truth)) in estimated.iter().zip(truth_landmarks).enumerate() {
        if truth.len() != base_landmarks.len() {
            return Err(LrdError::InvalidArgument(format!(
                "image {i} has {} landmarks, expected {}",
                truth.len(),
                base_landmarks.len()
            )));
        }
        let d: Vec<f64> = base_landmarks
            .iter()
            .zip(truth)
            .map(|(&b, &(tx, ty))| {
                let (x, y) = tau.map_pixel(b, shape, shape);
                (x - tx).hypot(y - ty)
            })
            .collect();
        per_image.push(d.iter().sum::<f64>() / d.len() as f64);
        all.extend(d);
    }
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let var = all.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    Ok(AlignmentReport {
        mean_error: mean,
        error_std: var.sqrt(),
        max_error: all.iter().copied().fold(0.0, f64::max),
        per_image,
    })
}
