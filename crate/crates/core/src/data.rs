//! Datasets: PNG ingestion, synthetic phantoms, and resizing.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{Class, ClassifiedImage};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Extents {
    pub height: usize,
    pub width: usize,
}

impl Extents {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn square(side: usize) -> Self {
        Self::new(side, side)
    }
}

impl Default for Extents {
    fn default() -> Self {
        Self::square(64)
    }
}

/// Labelled images sharing one set of extents.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    items: Vec<ClassifiedImage>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, items: Vec<ClassifiedImage>) -> Result<Self> {
        if let Some(first) = items.first() {
            let (h, w) = (first.height(), first.width());
            if let Some(odd) = items.iter().find(|i| (i.height(), i.width()) != (h, w)) {
                return Err(Error::InvalidDataset(format!(
                    "{} is {}×{}, expected {h}×{w}",
                    odd.id(),
                    odd.height(),
                    odd.width()
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            items,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn items(&self) -> &[ClassifiedImage] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `(normal, tumor)` counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let tumor = self.items.iter().filter(|i| i.label() == Class::Tumor).count();
        (self.items.len() - tumor, tumor)
    }

    pub fn extents(&self) -> Option<Extents> {
        self.items.first().map(|i| Extents::new(i.height(), i.width()))
    }

    /// Indices of the items of each class, `[normal, tumor]`.
    pub fn indices_by_class(&self) -> [Vec<usize>; 2] {
        let mut out = [Vec::new(), Vec::new()];
        for (i, item) in self.items.iter().enumerate() {
            out[item.label().index()].push(i);
        }
        out
    }

    pub fn require_both_classes(&self) -> Result<()> {
        match self.class_counts() {
            (0, _) => Err(Error::InvalidDataset(format!("{}: no normal images", self.name))),
            (_, 0) => Err(Error::InvalidDataset(format!("{}: no tumor images", self.name))),
            _ => Ok(()),
        }
    }
}

/// Bilinear resampling with half-pixel centers, clamped to `[0, 1]`.
pub fn resize_normalize(image: &ClassifiedImage, target: Extents) -> Result<ClassifiedImage> {
    let pixels = bilinear(image.pixels(), image.height(), image.width(), target)?;
    ClassifiedImage::new(image.id(), target.height, target.width, pixels, image.label())
}

fn bilinear(src: &[f32], height: usize, width: usize, target: Extents) -> Result<Vec<f32>> {
    if target.height == 0 || target.width == 0 {
        return Err(Error::InvalidParameter(format!(
            "target extents {}×{} must be positive",
            target.height, target.width
        )));
    }
    if height == 0 || width == 0 || src.len() != height * width {
        return Err(Error::InvalidShape(format!(
            "{height}×{width} image with {} pixels",
            src.len()
        )));
    }
    let axis = |dst: usize, src_len: usize, dst_len: usize| -> (usize, usize, f32) {
        let scale = src_len as f64 / dst_len as f64;
        let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(src_len - 1);
        (lo, hi, (pos - lo as f64) as f32)
    };
    let cols: Vec<_> = (0..target.width).map(|x| axis(x, width, target.width)).collect();
    let mut out = Vec::with_capacity(target.height * target.width);
    for y in 0..target.height {
        let (y0, y1, fy) = axis(y, height, target.height);
        for &(x0, x1, fx) in &cols {
            let top = src[y0 * width + x0] * (1.0 - fx) + src[y0 * width + x1] * fx;
            let bottom = src[y1 * width + x0] * (1.0 - fx) + src[y1 * width + x1] * fx;
            out.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
        }
    }
    Ok(out)
}

fn sorted_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::InvalidDataset(format!("{}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn load_png(path: &Path, label: Class, id: String, extents: Extents) -> Result<ClassifiedImage> {
    let img = image::open(path)
        .map_err(|e| Error::Ingestion {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    let pixels = img.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect();
    let raw = ClassifiedImage::new(id, h as usize, w as usize, pixels, label)?;
    if raw.height() == extents.height && raw.width() == extents.width {
        Ok(raw)
    } else {
        resize_normalize(&raw, extents)
    }
}

/// Loads `root/normal/*.png` and `root/tumor/*.png` in lexicographic order.
pub fn load_image_dir(root: &Path, extents: Extents) -> Result<Dataset> {
    let mut items = Vec::new();
    for class in [Class::Normal, Class::Tumor] {
        let dir = root.join(class.dir_name());
        let files = sorted_pngs(&dir)?;
        if files.is_empty() {
            return Err(Error::InvalidDataset(format!("{} holds no PNG files", dir.display())));
        }
        for path in files {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let id = format!("{}/{name}", class.dir_name());
            items.push(load_png(&path, class, id, extents)?);
        }
    }
    Dataset::new(root.display().to_string(), items)
}

/// Writes a dataset as 8-bit grayscale PNGs under `root/normal` and
/// `root/tumor`, using the final component of each image id as file name.
pub fn write_image_dir(dataset: &Dataset, root: &Path) -> Result<()> {
    for class in [Class::Normal, Class::Tumor] {
        fs::create_dir_all(root.join(class.dir_name()))?;
    }
    for item in dataset.items() {
        let stem = item.id().rsplit('/').next().unwrap_or(item.id());
        let mut name = stem.to_string();
        if !name.to_ascii_lowercase().ends_with(".png") {
            name.push_str(".png");
        }
        let path = root.join(item.label().dir_name()).join(name);
        let bytes: Vec<u8> = item.pixels().iter().map(|&p| (p * 255.0).round() as u8).collect();
        let buf = image::GrayImage::from_raw(item.width() as u32, item.height() as u32, bytes)
            .expect("pixel count matches extents");
        buf.save(&path).map_err(|e| Error::Ingestion {
            path: path.clone(),
            reason: e.to_string(),
        })?;
    }
    Ok(())
}

/// Parameters of the synthetic brain phantom.
const NOISE_SIGMA: f64 = 0.02;
const BLOB_RADIUS: (f64, f64) = (0.12, 0.15);
const BLOB_AMPLITUDE: (f64, f64) = (0.55, 0.70);

fn phantom<R: Rng + ?Sized>(extents: Extents, tumor: bool, rng: &mut R) -> Vec<f32> {
    let (h, w) = (extents.height as f64, extents.width as f64);
    let cx = w * (0.5 + rng.random_range(-0.04..0.04));
    let cy = h * (0.5 + rng.random_range(-0.04..0.04));
    let ax = w * rng.random_range(0.36..0.42);
    let ay = h * rng.random_range(0.40..0.46);
    let base = rng.random_range(0.40..0.45);
    let (fx, fy) = (rng.random_range(0.5..1.5), rng.random_range(0.5..1.5));
    let (px, py) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));

    let blob = tumor.then(|| {
        let radius = w * rng.random_range(BLOB_RADIUS.0..BLOB_RADIUS.1);
        // `radius` is the Gaussian's standard deviation.
        let sigma = radius;
        let amplitude = rng.random_range(BLOB_AMPLITUDE.0..BLOB_AMPLITUDE.1);
        let angle = rng.random_range(0.0..2.0 * PI);
        let r = 0.55 * rng.random_range(0.0f64..1.0).sqrt();
        let bx = cx + r * ax * angle.cos();
        let by = cy + r * ay * angle.sin();
        (bx, by, sigma, amplitude)
    });

    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let mut out = Vec::with_capacity(extents.height * extents.width);
    for y in 0..extents.height {
        for x in 0..extents.width {
            let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
            let rr = (((xf - cx) / ax).powi(2) + ((yf - cy) / ay).powi(2)).sqrt();
            let edge = smoothstep(1.0, 0.9, rr);
            let field = base + 0.05 * (2.0 * PI * (fx * xf / w + px)).sin() * (2.0 * PI * (fy * yf / h + py)).cos();
            let mut v = field * edge;
            if let Some((bx, by, sigma, amplitude)) = blob {
                let d2 = (xf - bx).powi(2) + (yf - by).powi(2);
                v += amplitude * (-d2 / (2.0 * sigma * sigma)).exp();
            }
            v += noise.sample(rng);
            out.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    out
}

/// 1 below `edge1`, 0 above `edge0`, smooth in between (`edge0 > edge1`).
fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((edge0 - x) / (edge0 - edge1)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Elliptical brain phantoms; tumor images carry one bright Gaussian blob.
/// Normal images come first, then tumor images.
pub fn synth_generate<R: Rng + ?Sized>(
    n_normal: usize,
    n_tumor: usize,
    extents: Extents,
    rng: &mut R,
) -> Result<Dataset> {
    if extents.height == 0 || extents.width == 0 {
        return Err(Error::InvalidParameter("synthetic extents must be positive".into()));
    }
    let mut items = Vec::with_capacity(n_normal + n_tumor);
    for (class, n) in [(Class::Normal, n_normal), (Class::Tumor, n_tumor)] {
        for i in 0..n {
            let pixels = phantom(extents, class == Class::Tumor, rng);
            let id = format!("{}/{:03}.png", class.dir_name(), i);
            items.push(ClassifiedImage::new(id, extents.height, extents.width, pixels, class)?);
        }
    }
    Dataset::new("synthetic", items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img(h: usize, w: usize, pixels: Vec<f32>) -> ClassifiedImage {
        ClassifiedImage::new("t", h, w, pixels, Class::Normal).unwrap()
    }

    #[test]
    fn identity_resize() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let px: Vec<f32> = (0..35).map(|_| rng.random_range(0.0..1.0)).collect();
        let out = resize_normalize(&img(5, 7, px.clone()), Extents::new(5, 7)).unwrap();
        for (a, b) in out.pixels().iter().zip(&px) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_resize() {
        let out = resize_normalize(&img(3, 3, vec![0.3; 9]), Extents::new(7, 5)).unwrap();
        assert!(out.pixels().iter().all(|p| (p - 0.3).abs() < 1e-6));
    }

    #[test]
    fn checkerboard_halving_averages_blocks() {
        let mut px = vec![0.0f32; 16];
        for y in 0..4 {
            for x in 0..4 {
                px[y * 4 + x] = ((x + y) % 2) as f32 * 0.6 + 0.1 * (y / 2 * 2 + x / 2) as f32;
            }
        }
        let out = resize_normalize(&img(4, 4, px.clone()), Extents::new(2, 2)).unwrap();
        for by in 0..2 {
            for bx in 0..2 {
                let mut mean = 0.0;
                for y in 0..2 {
                    for x in 0..2 {
                        mean += px[(by * 2 + y) * 4 + bx * 2 + x] / 4.0;
                    }
                }
                assert!((out.pixels()[by * 2 + bx] - mean).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_target_rejected() {
        assert!(matches!(
            resize_normalize(&img(2, 2, vec![0.0; 4]), Extents::new(0, 2)),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn synth_counts_and_determinism() {
        let a = synth_generate(15, 15, Extents::square(64), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = synth_generate(15, 15, Extents::square(64), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a.len(), 30);
        assert_eq!(a.class_counts(), (15, 15));
        assert_eq!(a, b);
        assert!(a
            .items()
            .iter()
            .flat_map(|i| i.pixels())
            .all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn tumor_images_are_brighter_on_average() {
        let d = synth_generate(15, 15, Extents::square(64), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let mean = |class: Class| {
            let imgs: Vec<_> = d.items().iter().filter(|i| i.label() == class).collect();
            imgs.iter()
                .map(|i| i.pixels().iter().map(|&p| p as f64).sum::<f64>() / i.pixels().len() as f64)
                .sum::<f64>()
                / imgs.len() as f64
        };
        assert!(mean(Class::Tumor) > mean(Class::Normal));
    }

    #[test]
    fn mixed_extents_rejected() {
        let a = img(2, 2, vec![0.0; 4]);
        let b = img(3, 2, vec![0.0; 6]);
        assert!(matches!(Dataset::new("x", vec![a, b]), Err(Error::InvalidDataset(_))));
    }
}
