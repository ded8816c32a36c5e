use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{LrdError, Result};
use crate::geometry::{
    frame_center, warp, Image, Interpolation, TransformGroup, TransformParams, TransformStack,
};

use super::persist::{parse_cell, read_transforms, save_png16, transforms_table, Table, TextDoc};
use super::{ImageBatch, Landmark};

/// Name of the ground-truth document written next to synthesized images.
pub const TRUTH_DOC: &str = "truth.txt";

/// Built-in base images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    /// Ellipse head with two dark eyes; landmarks are the eye centers.
    Face,
    /// Sum of anisotropic Gaussian bumps; landmarks are the two brightest.
    Blobs,
    /// Smoothed checkerboard under a Gaussian envelope.
    Checkerboard,
}

impl Generator {
    pub fn name(self) -> &'static str {
        match self {
            Generator::Face => "face",
            Generator::Blobs => "blobs",
            Generator::Checkerboard => "checkerboard",
        }
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Generator {
    type Err = LrdError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "face" => Ok(Generator::Face),
            "blobs" => Ok(Generator::Blobs),
            "checkerboard" | "checker" => Ok(Generator::Checkerboard),
            _ => Err(LrdError::InvalidArgument(format!(
                "unknown generator '{s}' (face|blobs|checkerboard)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum BaseImage {
    Generator {
        kind: Generator,
        height: usize,
        width: usize,
    },
    Image {
        image: Image,
        landmarks: Vec<Landmark>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Occlusion {
    pub patch_count: usize,
    pub patch_size: usize,
    pub intensity: f64,
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub base: BaseImage,
    pub count: usize,
    /// Maximum absolute rotation in degrees.
    pub rotation_range: f64,
    /// Maximum absolute shift per axis in pixels.
    pub shift_range: f64,
    pub occlusion: Occlusion,
    /// Multiplicative gain drawn uniformly from `[lo, hi]`.
    pub illumination: (f64, f64),
    pub noise_sigma: f64,
    pub seed: u64,
    /// Re-center the drawn distortions so the ground-truth transforms have
    /// identity mean parameters. Batch alignment only recovers transforms up
    /// to a shared one; centering puts the truth in the frame the solver
    /// keeps fixed.
    pub center: bool,
}

impl SynthSpec {
    pub fn new(base: BaseImage, count: usize, seed: u64) -> Self {
        SynthSpec {
            base,
            count,
            rotation_range: 0.0,
            shift_range: 0.0,
            occlusion: Occlusion::default(),
            illumination: (1.0, 1.0),
            noise_sigma: 0.0,
            seed,
            center: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LrdError::InvalidArgument(msg));
        if self.count < 2 {
            return bad(format!("count must be at least 2, got {}", self.count));
        }
        for (name, v) in [
            ("rotation range", self.rotation_range),
            ("shift range", self.shift_range),
            ("noise sigma", self.noise_sigma),
            ("occlusion intensity", self.occlusion.intensity),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.rotation_range > 180.0 {
            return bad(format!("rotation range {} exceeds 180 degrees", self.rotation_range));
        }
        let (lo, hi) = self.illumination;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return bad(format!("illumination range must satisfy 0 < lo <= hi, got ({lo}, {hi})"));
        }
        if self.occlusion.patch_count > 0 && self.occlusion.patch_size == 0 {
            return bad("occlusion patch size must be positive".into());
        }
        let (h, w) = self.shape();
        if h < 2 || w < 2 {
            return bad(format!("base image {h}x{w} is too small"));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        match &self.base {
            BaseImage::Generator { height, width, .. } => (*height, *width),
            BaseImage::Image { image, .. } => image.shape(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    /// Distorted images, with `landmarks` set to the true positions.
    pub batch: ImageBatch,
    /// Per image, the transform that maps it back onto the base frame.
    pub truth: TransformStack,
    pub base: Image,
    pub base_landmarks: Vec<Landmark>,
}

impl SynthOutput {
    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            transforms: self.truth.clone(),
            landmarks: self.batch.landmarks.clone().unwrap_or_default(),
            base_landmarks: self.base_landmarks.clone(),
            shape: self.base.shape(),
        }
    }

    /// Writes `img_000.png ...` (16-bit) and the truth document into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| LrdError::io(dir, e))?;
        let digits = self.batch.len().saturating_sub(1).to_string().len().max(3);
        for (i, img) in self.batch.images.iter().enumerate() {
            save_png16(img, dir.join(format!("img_{i:0digits$}.png")))?;
        }
        save_truth(&self.ground_truth(), dir)
    }
}

/// Soft indicator of an axis-aligned ellipse, about 1 px wide at the rim.
fn ellipse(x: f64, y: f64, cx: f64, cy: f64, a: f64, b: f64) -> f64 {
    let rho = ((x - cx) / a).hypot((y - cy) / b);
    let d = (1.0 - rho) * a.min(b);
    1.0 / (1.0 + (-d / 0.6).exp())
}

fn blend(under: f64, value: f64, mask: f64) -> f64 {
    under * (1.0 - mask) + value * mask
}

/// Renders a generator at `(height, width)` with its landmarks in pixel
/// coordinates.
pub fn generate_base(kind: Generator, height: usize, width: usize) -> (Image, Vec<Landmark>) {
    let (cx, cy) = frame_center((height, width));
    let (h, w) = (height as f64, width as f64);
    match kind {
        Generator::Face => {
            let eye_dx = 0.18 * w;
            let eye_y = -0.08 * h;
            let img = Image::from_fn(height, width, |r, c| {
                let (x, y) = (c as f64 - cx, r as f64 - cy);
                let mut v = 0.1;
                v = blend(v, 0.7, ellipse(x, y, 0.0, 0.02 * h, 0.36 * w, 0.44 * h));
                for sx in [-1.0, 1.0] {
                    v = blend(v, 0.15, ellipse(x, y, sx * eye_dx, eye_y, 0.07 * w, 0.045 * h));
                }
                v = blend(v, 0.55, ellipse(x, y, 0.0, 0.06 * h, 0.04 * w, 0.1 * h));
                blend(v, 0.3, ellipse(x, y, 0.0, 0.22 * h, 0.14 * w, 0.035 * h))
            });
            let lm = vec![(cx - eye_dx, cy + eye_y), (cx + eye_dx, cy + eye_y)];
            (img, lm)
        }
        Generator::Blobs => {
            // (center x, center y, sigma x, sigma y, amplitude), in frame units.
            let blobs = [
                (-0.2, -0.15, 0.1, 0.08, 0.8),
                (0.22, 0.1, 0.08, 0.11, 0.7),
                (-0.05, 0.25, 0.12, 0.06, 0.5),
                (0.15, -0.25, 0.06, 0.06, 0.4),
            ];
            let img = Image::from_fn(height, width, |r, c| {
                let (x, y) = (c as f64 - cx, r as f64 - cy);
                let s: f64 = blobs
                    .iter()
                    .map(|&(bx, by, sx, sy, a)| {
                        let dx = (x - bx * w) / (sx * w);
                        let dy = (y - by * h) / (sy * h);
                        a * (-0.5 * (dx * dx + dy * dy)).exp()
                    })
                    .sum();
                (0.05 + s).min(1.0)
            });
            let lm = blobs[..2]
                .iter()
                .map(|&(bx, by, ..)| (cx + bx * w, cy + by * h))
                .collect();
            (img, lm)
        }
        Generator::Checkerboard => {
            let period = (h.min(w) / 4.0).max(4.0);
            let k = std::f64::consts::TAU / period;
            let env_s = 0.3 * h.min(w);
            let img = Image::from_fn(height, width, |r, c| {
                let (x, y) = (c as f64 - cx, r as f64 - cy);
                let env = (-0.5 * (x * x + y * y) / (env_s * env_s)).exp();
                let checker = 0.5 + 0.5 * (3.0 * (k * x).sin() * (k * y).sin()).tanh();
                0.1 + 0.8 * env * checker
            });
            // Two square centers next to the origin.
            let q = period / 4.0;
            let lm = vec![(cx + q, cy + q), (cx - q, cy + q)];
            (img, lm)
        }
    }
}

/// Picks non-overlapping square patches fully inside the frame.
fn place_patches(
    rng: &mut ChaCha8Rng,
    shape: (usize, usize),
    occ: &Occlusion,
) -> Result<Vec<(usize, usize)>> {
    let (h, w) = shape;
    let s = occ.patch_size;
    if occ.patch_count == 0 {
        return Ok(Vec::new());
    }
    if s > h || s > w || occ.patch_count * s * s > h * w {
        return Err(LrdError::DegenerateSynthesis(format!(
            "{} patches of size {s} do not fit a {h}x{w} image",
            occ.patch_count
        )));
    }
    let mut placed: Vec<(usize, usize)> = Vec::with_capacity(occ.patch_count);
    let mut attempts = 0;
    while placed.len() < occ.patch_count {
        attempts += 1;
        if attempts > 10_000 {
            return Err(LrdError::DegenerateSynthesis(format!(
                "could not place {} disjoint {s}x{s} patches",
                occ.patch_count
            )));
        }
        let r = rng.random_range(0..=h - s);
        let c = rng.random_range(0..=w - s);
        let overlaps = placed
            .iter()
            .any(|&(pr, pc)| r < pr + s && pr < r + s && c < pc + s && pc < c + s);
        if !overlaps {
            placed.push((r, c));
        }
    }
    Ok(placed)
}

/// Fraction of output pixels whose source point lies inside the base frame.
fn coverage(t: &TransformParams, shape: (usize, usize)) -> f64 {
    let (h, w) = shape;
    let inside = (0..h * w)
        .filter(|&i| {
            let (x, y) = t.map_pixel(((i / h) as f64, (i % h) as f64), shape, shape);
            x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64
        })
        .count();
    inside as f64 / (h * w) as f64
}

/// Minimum share of each distorted image that must still show the base.
const MIN_COVERAGE: f64 = 0.5;

/// Draws `count` randomly distorted copies of the base image.
///
/// Image `i` is `base ∘ A_i` for a random rotation-plus-shift `A_i`, scaled
/// by a random gain, with occlusion patches written over it and Gaussian
/// noise added before clamping to [0, 1]. The reported truth is `A_i⁻¹`, and
/// true landmark positions are the base landmarks mapped through it.
pub fn synthesize(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let (base, base_landmarks) = match &spec.base {
        BaseImage::Generator {
            kind,
            height,
            width,
        } => generate_base(*kind, *height, *width),
        BaseImage::Image { image, landmarks } => (image.clone(), landmarks.clone()),
    };
    let shape = base.shape();
    let (h, w) = shape;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| LrdError::InvalidArgument(format!("noise sigma: {e}")))?;
    let max_angle = spec.rotation_range.to_radians();

    // Geometry and gain first, so centering sees the whole batch.
    let mut draws = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let angle = if max_angle > 0.0 {
            rng.random_range(-max_angle..=max_angle)
        } else {
            0.0
        };
        let (tx, ty) = if spec.shift_range > 0.0 {
            (
                rng.random_range(-spec.shift_range..=spec.shift_range),
                rng.random_range(-spec.shift_range..=spec.shift_range),
            )
        } else {
            (0.0, 0.0)
        };
        let (lo, hi) = spec.illumination;
        let gain = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let tau = TransformParams::similarity(1.0, angle, tx, ty)?.inverse()?;
        draws.push((tau, gain));
    }
    if spec.center {
        let b = spec.count as f64;
        let mean: Vec<f64> = (1..4)
            .map(|k| draws.iter().map(|(t, _)| t.params()[k]).sum::<f64>() / b)
            .collect();
        for (tau, _) in draws.iter_mut() {
            let z = tau.params();
            *tau = TransformParams::similarity(1.0, z[1] - mean[0], z[2] - mean[1], z[3] - mean[2])?;
        }
    }

    let mut images = Vec::with_capacity(spec.count);
    let mut truth = Vec::with_capacity(spec.count);
    let mut landmarks = Vec::with_capacity(spec.count);
    for (i, (tau, gain)) in draws.into_iter().enumerate() {
        let distortion = tau.inverse()?;
        let cov = coverage(&distortion, shape);
        if cov < MIN_COVERAGE {
            return Err(LrdError::DegenerateSynthesis(format!(
                "image {i} keeps only {:.0}% of the base in frame",
                100.0 * cov
            )));
        }
        let lm: Vec<Landmark> = base_landmarks
            .iter()
            .map(|&b| tau.map_pixel(b, shape, shape))
            .collect();
        if let Some(&(x, y)) = lm
            .iter()
            .find(|&&(x, y)| x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64)
        {
            return Err(LrdError::DegenerateSynthesis(format!(
                "image {i}: landmark moved out of frame to ({x:.2}, {y:.2})"
            )));
        }

        let mut img = warp(&base, &distortion, shape, Interpolation::Cubic).map(|v| v * gain);
        for (r0, c0) in place_patches(&mut rng, shape, &spec.occlusion)? {
            let s = spec.occlusion.patch_size;
            for c in c0..c0 + s {
                for r in r0..r0 + s {
                    img.set(r, c, spec.occlusion.intensity);
                }
            }
        }
        if spec.noise_sigma > 0.0 {
            img = img.map(|v| v + noise.sample(&mut rng));
        }
        images.push(img.map(|v| v.clamp(0.0, 1.0)));
        truth.push(tau);
        landmarks.push(lm);
    }

    let digits = spec.count.saturating_sub(1).to_string().len().max(3);
    let ids = (0..spec.count)
        .map(|i| format!("img_{i:0digits$}.png"))
        .collect();
    let mut batch = ImageBatch::new(images, ids)?;
    batch.landmarks = Some(landmarks);
    Ok(SynthOutput {
        batch,
        truth: TransformStack::new(truth)?,
        base,
        base_landmarks,
    })
}

/// On-disk ground truth for a synthesized dataset.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub transforms: TransformStack,
    pub landmarks: Vec<Vec<Landmark>>,
    pub base_landmarks: Vec<Landmark>,
    pub shape: (usize, usize),
}

fn landmark_table(name: &str, sets: &[Vec<Landmark>]) -> Table {
    let mut t = Table::new(name, &["image", "landmark", "x", "y"]);
    for (i, set) in sets.iter().enumerate() {
        for (k, (x, y)) in set.iter().enumerate() {
            t.push(vec![i.to_string(), k.to_string(), x.to_string(), y.to_string()]);
        }
    }
    t
}

fn read_landmarks(t: &Table, count: usize, per: usize, path: &Path) -> Result<Vec<Vec<Landmark>>> {
    let mut out = vec![vec![(f64::NAN, f64::NAN); per]; count];
    for row in &t.rows {
        if row.len() != 4 {
            return Err(LrdError::format(path, "landmark row has wrong width"));
        }
        let i: usize = parse_cell(&row[0], path)?;
        let k: usize = parse_cell(&row[1], path)?;
        if i >= count || k >= per {
            return Err(LrdError::format(path, format!("landmark ({i}, {k}) out of range")));
        }
        out[i][k] = (parse_cell(&row[2], path)?, parse_cell(&row[3], path)?);
    }
    if out.iter().flatten().any(|p| p.0.is_nan()) {
        return Err(LrdError::format(path, "landmark table is incomplete"));
    }
    Ok(out)
}

pub fn save_truth(truth: &GroundTruth, dir: impl AsRef<Path>) -> Result<()> {
    let group = truth.transforms.group().unwrap_or(TransformGroup::Similarity);
    let mut doc = TextDoc::default();
    doc.set("group", group);
    doc.set("images", truth.transforms.len());
    doc.set("height", truth.shape.0);
    doc.set("width", truth.shape.1);
    doc.set("landmarks_per_image", truth.base_landmarks.len());
    doc.tables.push(transforms_table("transforms", &truth.transforms));
    doc.tables.push(landmark_table(
        "base_landmarks",
        std::slice::from_ref(&truth.base_landmarks),
    ));
    doc.tables.push(landmark_table("landmarks", &truth.landmarks));
    doc.write(dir.as_ref().join(TRUTH_DOC))
}

/// Reads `truth.txt` from `dir` (or `dir` itself when it names the file).
pub fn load_truth(dir: impl AsRef<Path>) -> Result<GroundTruth> {
    let dir = dir.as_ref();
    let path = if dir.is_dir() {
        dir.join(TRUTH_DOC)
    } else {
        dir.to_path_buf()
    };
    let path = path.as_path();
    let doc = TextDoc::read(path)?;
    let group: TransformGroup = doc.require_parsed("group", path)?;
    let count: usize = doc.require_parsed("images", path)?;
    let per: usize = doc.require_parsed("landmarks_per_image", path)?;
    let shape = (
        doc.require_parsed("height", path)?,
        doc.require_parsed("width", path)?,
    );
    let transforms = read_transforms(doc.require_table("transforms", path)?, group, path)?;
    if transforms.len() != count {
        return Err(LrdError::format(path, "transform count does not match 'images'"));
    }
    let base_landmarks = read_landmarks(doc.require_table("base_landmarks", path)?, 1, per, path)?
        .remove(0);
    let landmarks = read_landmarks(doc.require_table("landmarks", path)?, count, per, path)?;
    Ok(GroundTruth {
        transforms,
        landmarks,
        base_landmarks,
        shape,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::landmark_error;

    fn face_spec(seed: u64) -> SynthSpec {
        SynthSpec::new(
            BaseImage::Generator {
                kind: Generator::Face,
                height: 40,
                width: 36,
            },
            6,
            seed,
        )
    }

    #[test]
    fn zero_ranges_give_identical_copies() {
        let out = synthesize(&face_spec(4)).unwrap();
        for img in &out.batch.images {
            assert_eq!(img, &out.batch.images[0]);
        }
        for t in out.truth.iter() {
            let id = TransformParams::identity(TransformGroup::Similarity);
            for (a, b) in t.params().iter().zip(id.params()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn shift_only_truth_inverts_the_shift() {
        let mut spec = face_spec(11);
        spec.shift_range = 3.0;
        spec.center = false;
        let out = synthesize(&spec).unwrap();
        let shape = out.base.shape();
        let interior = |r: usize, c: usize| r >= 6 && c >= 6 && r < shape.0 - 6 && c < shape.1 - 6;
        for (img, tau) in out.batch.images.iter().zip(out.truth.iter()) {
            let p = tau.params();
            assert!(p[1].abs() < 1e-15 && (p[0] - 1.0).abs() < 1e-15);
            assert!(p[2].abs() <= 3.0 && p[3].abs() <= 3.0);
            // Undoing the distortion brings back the base.
            let back = warp(img, tau, shape, Interpolation::Cubic);
            let mut err = 0.0;
            let mut n = 0;
            for c in 0..shape.1 {
                for r in 0..shape.0 {
                    if interior(r, c) {
                        err += (back.get(r, c) - out.base.get(r, c)).abs();
                        n += 1;
                    }
                }
            }
            assert!(err / (n as f64) < 2e-2);
        }
    }

    #[test]
    fn centered_truth_has_identity_mean() {
        let mut spec = face_spec(12);
        spec.count = 10;
        spec.rotation_range = 8.0;
        spec.shift_range = 2.5;
        let out = synthesize(&spec).unwrap();
        let pm = out.truth.param_matrix();
        for (k, target) in [1.0, 0.0, 0.0, 0.0].into_iter().enumerate() {
            assert!((pm.row(k).mean() - target).abs() < 1e-12);
        }
        spec.center = false;
        let raw = synthesize(&spec).unwrap().truth.param_matrix();
        assert!(raw.row(2).mean().abs() > 1e-6);
    }

    #[test]
    fn same_seed_same_output() {
        let mut spec = face_spec(5);
        spec.rotation_range = 10.0;
        spec.shift_range = 2.0;
        spec.noise_sigma = 0.02;
        spec.illumination = (0.8, 1.2);
        spec.occlusion = Occlusion {
            patch_count: 2,
            patch_size: 5,
            intensity: 1.0,
        };
        let a = synthesize(&spec).unwrap();
        let b = synthesize(&spec).unwrap();
        assert_eq!(a.batch.images, b.batch.images);
        assert_eq!(a.truth, b.truth);
        spec.seed = 6;
        let c = synthesize(&spec).unwrap();
        assert_ne!(a.batch.images, c.batch.images);
    }

    #[test]
    fn truth_landmarks_score_zero() {
        let mut spec = face_spec(8);
        spec.rotation_range = 10.0;
        spec.shift_range = 3.0;
        let out = synthesize(&spec).unwrap();
        let r = landmark_error(
            &out.truth,
            out.batch.landmarks.as_ref().unwrap(),
            &out.base_landmarks,
            out.base.shape(),
        )
        .unwrap();
        assert!(r.max_error < 1e-12);
    }

    #[test]
    fn occlusion_covers_exact_area() {
        let mut spec = face_spec(2);
        spec.occlusion = Occlusion {
            patch_count: 3,
            patch_size: 4,
            intensity: 2.0, // clamps to 1.0, which no base pixel reaches
        };
        let out = synthesize(&spec).unwrap();
        for img in &out.batch.images {
            let n = img.as_slice().iter().filter(|&&v| v == 1.0).count();
            assert_eq!(n, 48);
        }
    }

    #[test]
    fn oversized_ranges_are_degenerate() {
        let mut spec = face_spec(1);
        spec.shift_range = 40.0;
        spec.count = 30;
        assert!(matches!(
            synthesize(&spec),
            Err(LrdError::DegenerateSynthesis(_))
        ));
        let mut spec = face_spec(1);
        spec.occlusion = Occlusion {
            patch_count: 1,
            patch_size: 50,
            intensity: 0.0,
        };
        assert!(matches!(
            synthesize(&spec),
            Err(LrdError::DegenerateSynthesis(_))
        ));
    }

    #[test]
    fn invalid_specs() {
        let mut spec = face_spec(1);
        spec.shift_range = -1.0;
        assert!(synthesize(&spec).is_err());
        let mut spec = face_spec(1);
        spec.count = 1;
        assert!(synthesize(&spec).is_err());
        let mut spec = face_spec(1);
        spec.illumination = (0.0, 1.0);
        assert!(synthesize(&spec).is_err());
    }

    #[test]
    fn generators_have_landmarks_inside() {
        for kind in [Generator::Face, Generator::Blobs, Generator::Checkerboard] {
            let (img, lm) = generate_base(kind, 32, 30);
            assert_eq!(img.shape(), (32, 30));
            assert_eq!(lm.len(), 2);
            assert!(img.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            for (x, y) in lm {
                assert!((0.0..=29.0).contains(&x) && (0.0..=31.0).contains(&y));
            }
            assert_eq!(kind.name().parse::<Generator>().unwrap(), kind);
        }
    }

    #[test]
    fn face_eyes_are_dark() {
        let (img, lm) = generate_base(Generator::Face, 48, 48);
        for (x, y) in lm {
            let v = Interpolation::Bilinear.sample(&img, x, y);
            assert!(v < 0.25, "{v}");
        }
        assert!(img.get(24, 24) > 0.4);
    }

    #[test]
    fn truth_round_trip() {
        let mut spec = face_spec(3);
        spec.rotation_range = 5.0;
        spec.shift_range = 1.5;
        let out = synthesize(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        out.save(dir.path()).unwrap();
        let gt = load_truth(dir.path()).unwrap();
        assert_eq!(gt.transforms, out.truth);
        assert_eq!(&gt.landmarks, out.batch.landmarks.as_ref().unwrap());
        assert_eq!(gt.base_landmarks, out.base_landmarks);
        assert_eq!(gt.shape, (40, 36));
        let loaded = crate::data::load_batch(dir.path(), None).unwrap();
        assert_eq!(loaded.len(), 6);
        for (a, b) in loaded.images.iter().zip(&out.batch.images) {
            assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| (x - y).abs() < 1e-4));
        }
    }
}
