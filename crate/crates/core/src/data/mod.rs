//! Image batches: loading, synthesis with ground truth, landmark metrics and
//! result persistence.

mod metrics;
pub mod persist;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{LrdError, Result};
use crate::geometry::{Image, Interpolation};

pub use metrics::{landmark_error, AlignmentReport};
pub use synth::{
    generate_base, load_truth, save_truth, synthesize, BaseImage, Generator, GroundTruth,
    Occlusion, SynthOutput, SynthSpec, TRUTH_DOC,
};

/// A landmark in pixel coordinates, `(x = column, y = row)`.
pub type Landmark = (f64, f64);

#[derive(Debug, Clone)]
pub struct ImageBatch {
    pub images: Vec<Image>,
    pub source_ids: Vec<String>,
    pub landmarks: Option<Vec<Vec<Landmark>>>,
}

impl ImageBatch {
    pub fn new(images: Vec<Image>, source_ids: Vec<String>) -> Result<Self> {
        if images.len() < 2 {
            return Err(LrdError::InvalidArgument(
                "a batch needs at least two images".into(),
            ));
        }
        if images.len() != source_ids.len() {
            return Err(LrdError::InvalidArgument(
                "one source id per image required".into(),
            ));
        }
        let shape = images[0].shape();
        if let Some(i) = images.iter().position(|im| im.shape() != shape) {
            return Err(LrdError::InvalidArgument(format!(
                "image {} is {:?}, expected {shape:?}",
                source_ids[i],
                images[i].shape()
            )));
        }
        Ok(ImageBatch {
            images,
            source_ids,
            landmarks: None,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.images[0].shape()
    }
}

const IMAGE_EXTENSIONS: &[&str] = &[
    "png", "jpg", "jpeg", "bmp", "gif", "tif", "tiff", "pgm", "ppm", "pnm",
];

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| LrdError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Decodes one file to a grayscale image in [0, 1] (mean of RGB channels).
pub fn load_image(path: &Path) -> Result<Image> {
    let decoded = image::open(path).map_err(|e| LrdError::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    let rgb = decoded.to_rgb32f();
    let (w, h) = rgb.dimensions();
    Ok(Image::from_fn(h as usize, w as usize, |r, c| {
        let p = rgb.get_pixel(c as u32, r as u32).0;
        ((p[0] + p[1] + p[2]) as f64 / 3.0).clamp(0.0, 1.0)
    }))
}

/// Bilinear resampling with pixel-center alignment and replicated borders.
pub fn resize(img: &Image, target: (usize, usize)) -> Image {
    let (h, w) = img.shape();
    let (th, tw) = target;
    if (h, w) == target {
        return img.clone();
    }
    let sy = h as f64 / th as f64;
    let sx = w as f64 / tw as f64;
    let clamp = |v: f64, hi: usize| v.clamp(0.0, (hi - 1) as f64);
    Image::from_fn(th, tw, |r, c| {
        let y = clamp((r as f64 + 0.5) * sy - 0.5, h);
        let x = clamp((c as f64 + 0.5) * sx - 0.5, w);
        Interpolation::Bilinear.sample(img, x, y)
    })
}

/// Loads every image file in `dir` in lexicographic order, converted to
/// grayscale and resized to `target` (`(height, width)`) when given.
pub fn load_batch(dir: impl AsRef<Path>, target: Option<(usize, usize)>) -> Result<ImageBatch> {
    let dir = dir.as_ref();
    let files = image_files(dir)?;
    if files.is_empty() {
        return Err(LrdError::InvalidArgument(format!(
            "no images found in {}",
            dir.display()
        )));
    }
    let mut images = Vec::with_capacity(files.len());
    let mut ids = Vec::with_capacity(files.len());
    for f in &files {
        let img = load_image(f)?;
        images.push(match target {
            Some(t) => resize(&img, t),
            None => img,
        });
        ids.push(
            f.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
    }
    ImageBatch::new(images, ids)
}
