//! Imbalanced synthetic scenes: one large high-contrast disk and one small
//! low-contrast disk on a noisy background, plus the fixed per-pixel feature
//! stack the trainer consumes.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{LabelField, Rng, ScalarField};
use crate::metrics::Mask;

pub const BACKGROUND_LEVEL: f64 = 0.2;
/// Intensity step of a full-contrast object above the background.
pub const CONTRAST_SPAN: f64 = 0.6;
/// Feature channels produced by [`extract_features`].
pub const NUM_FEATURES: usize = 6;

const PLACEMENT_RETRIES: usize = 200;
/// Minimum pixel gap between the two disks.
const OBJECT_GAP: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub n_scenes: usize,
    pub big_radius: (f64, f64),
    pub small_radius: (f64, f64),
    /// 0 makes the small object invisible in intensity, 1 matches the big one.
    pub small_contrast: f64,
    pub noise_sigma: f64,
    /// Expected foreground fraction the radii were chosen for.
    pub fg_fraction_target: f64,
    /// Label the small object as class 2 instead of 1.
    pub multiclass: bool,
    pub seed: u64,
}

impl SceneConfig {
    /// Foreground around 10% of the image.
    pub fn moderate() -> Self {
        SceneConfig {
            height: 64,
            width: 64,
            n_scenes: 16,
            big_radius: (10.0, 12.0),
            small_radius: (3.0, 4.5),
            small_contrast: 0.3,
            noise_sigma: 0.08,
            fg_fraction_target: 0.10,
            multiclass: false,
            seed: 1,
        }
    }

    /// Foreground around 1% of the image.
    pub fn severe() -> Self {
        SceneConfig {
            height: 96,
            width: 96,
            n_scenes: 16,
            big_radius: (4.0, 5.0),
            small_radius: (2.0, 3.0),
            small_contrast: 0.3,
            noise_sigma: 0.08,
            fg_fraction_target: 0.01,
            multiclass: false,
            seed: 1,
        }
    }

    /// Noise-free, full-contrast variant of `moderate`.
    pub fn easy() -> Self {
        SceneConfig { small_contrast: 1.0, noise_sigma: 0.0, ..SceneConfig::moderate() }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "moderate" => Some(SceneConfig::moderate()),
            "severe" => Some(SceneConfig::severe()),
            "easy" => Some(SceneConfig::easy()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::domain(format!("scene config: {what}")));
        let (h, w) = (self.height as f64, self.width as f64);
        if self.height < 3 || self.width < 3 {
            return bad("image must be at least 3x3");
        }
        for (name, (lo, hi)) in [("big_radius", self.big_radius), ("small_radius", self.small_radius)] {
            if !(lo > 0.0 && lo <= hi) {
                return bad(&format!("{name} range ({lo}, {hi}) must satisfy 0 < min <= max"));
            }
            if 2.0 * hi + 1.0 > h.min(w) {
                return bad(&format!("{name} max {hi} does not fit a {}x{} image", self.height, self.width));
            }
        }
        if !(0.0..=1.0).contains(&self.small_contrast) {
            return bad("small_contrast must lie in [0, 1]");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative");
        }
        if !(self.fg_fraction_target > 0.0 && self.fg_fraction_target < 1.0) {
            return bad("fg_fraction_target must lie in (0, 1)");
        }
        Ok(())
    }
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig::moderate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Disk {
    pub row: f64,
    pub col: f64,
    pub radius: f64,
}

impl Disk {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        let (dr, dc) = (r as f64 - self.row, c as f64 - self.col);
        dr * dr + dc * dc <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub index: usize,
    /// Intensities in [0, 1], dims `[1, H, W]`.
    pub image: ScalarField,
    pub labels: LabelField,
    pub small_object_mask: Mask,
    pub big: Disk,
    pub small: Disk,
}

impl Scene {
    pub fn height(&self) -> usize {
        self.labels.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.labels.dims()[1]
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.labels.data().iter().filter(|&&l| l != 0).count() as f64 / self.labels.len() as f64
    }

    /// Pixels within twice the small radius of the small object's centre:
    /// the window used to score small-object segmentation.
    pub fn small_object_region(&self) -> Mask {
        let around = Disk { radius: 2.0 * self.small.radius, ..self.small };
        let (h, w) = (self.height(), self.width());
        let data = (0..h * w).map(|i| around.contains(i / w, i % w)).collect();
        Mask::new(vec![h, w], data).expect("scene dims")
    }
}

/// Rasterizes the label map and small-object mask from disk geometry.
pub fn rasterize(height: usize, width: usize, big: &Disk, small: &Disk, multiclass: bool) -> (LabelField, Mask) {
    let small_label = if multiclass { 2 } else { 1 };
    let mut labels = vec![0u32; height * width];
    let mut small_mask = vec![false; height * width];
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            if big.contains(r, c) {
                labels[i] = 1;
            } else if small.contains(r, c) {
                labels[i] = small_label;
                small_mask[i] = true;
            }
        }
    }
    (
        LabelField::new(vec![height, width], labels).expect("scene dims"),
        Mask::new(vec![height, width], small_mask).expect("scene dims"),
    )
}

fn place(rng: &mut Rng, radius: f64, height: usize, width: usize) -> Disk {
    let margin = radius.ceil() as usize;
    let row = rng.int_in(margin, height - 1 - margin) as f64;
    let col = rng.int_in(margin, width - 1 - margin) as f64;
    Disk { row, col, radius }
}

/// Scene `index` of `cfg`; pure in `(cfg, index)`.
pub fn gen_scene(cfg: &SceneConfig, index: usize) -> Result<Scene> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = Rng::substream(cfg.seed, index as u64);
    let big_r = rng.real_in(cfg.big_radius.0, cfg.big_radius.1);
    let small_r = rng.real_in(cfg.small_radius.0, cfg.small_radius.1);
    let big = place(&mut rng, big_r, h, w);
    let small = (0..PLACEMENT_RETRIES)
        .map(|_| place(&mut rng, small_r, h, w))
        .find(|s| {
            let d = ((s.row - big.row).powi(2) + (s.col - big.col).powi(2)).sqrt();
            d > big.radius + s.radius + OBJECT_GAP
        })
        .ok_or_else(|| {
            Error::Generation(format!(
                "no room for a radius {small_r:.2} disk beside a radius {big_r:.2} disk in {h}x{w} (scene {index})"
            ))
        })?;

    let (labels, small_object_mask) = rasterize(h, w, &big, &small, cfg.multiclass);
    let small_level = BACKGROUND_LEVEL + cfg.small_contrast * CONTRAST_SPAN;
    let mut image = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let base = if big.contains(r, c) {
                BACKGROUND_LEVEL + CONTRAST_SPAN
            } else if small.contains(r, c) {
                small_level
            } else {
                BACKGROUND_LEVEL
            };
            let noise = if cfg.noise_sigma > 0.0 { cfg.noise_sigma * rng.normal() } else { 0.0 };
            image.push((base + noise).clamp(0.0, 1.0));
        }
    }
    Ok(Scene {
        index,
        image: ScalarField::new(vec![1, h, w], image)?,
        labels,
        small_object_mask,
        big,
        small,
    })
}

/// Fixed prediction/label pair with a confidently segmented large disk and
/// a small disk the prediction all but misses: fg probability 0.97 inside
/// the large disk, 0.7 on its boundary ring, 0.1 on the small disk and 0.03
/// elsewhere. Returns `[2, 32, 32]` probabilities and the label map.
pub fn big_easy_small_missed() -> (ScalarField, LabelField) {
    let (h, w) = (32, 32);
    let big = Disk { row: 12.0, col: 12.0, radius: 8.0 };
    let small = Disk { row: 25.0, col: 25.0, radius: 2.0 };
    let (labels, _) = rasterize(h, w, &big, &small, false);
    let ring = Disk { radius: big.radius - 1.0, ..big };
    let mut probs = vec![0.0; 2 * h * w];
    for r in 0..h {
        for c in 0..w {
            let fg = if ring.contains(r, c) {
                0.97
            } else if big.contains(r, c) {
                0.7
            } else if small.contains(r, c) {
                0.1
            } else {
                0.03
            };
            probs[r * w + c] = 1.0 - fg;
            probs[h * w + r * w + c] = fg;
        }
    }
    (ScalarField::new(vec![2, h, w], probs).expect("fixed dims"), labels)
}

/// Feature stack `[6, H, W]` of a `[1, H, W]` intensity image: intensity,
/// 3x3 box mean, central-difference gradient magnitude, row and column
/// coordinates scaled to [-1, 1], and a constant 1. Edges are replicated.
pub fn extract_features(image: &ScalarField) -> Result<ScalarField> {
    let (h, w) = match image.dims() {
        [1, h, w] => (*h, *w),
        [h, w] => (*h, *w),
        d => return Err(Error::domain(format!("extract_features: expected a 2D image, got dims {d:?}"))),
    };
    let px = image.data();
    let at = |r: isize, c: isize| -> f64 {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        px[r * w + c]
    };
    let scale = |k: usize, n: usize| if n > 1 { 2.0 * k as f64 / (n - 1) as f64 - 1.0 } else { 0.0 };
    let n = h * w;
    let mut out = vec![0.0; NUM_FEATURES * n];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let (ri, ci) = (r as isize, c as isize);
            let mut sum = 0.0;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    sum += at(ri + dr, ci + dc);
                }
            }
            let gx = (at(ri, ci + 1) - at(ri, ci - 1)) / 2.0;
            let gy = (at(ri + 1, ci) - at(ri - 1, ci)) / 2.0;
            out[i] = px[i];
            out[n + i] = sum / 9.0;
            out[2 * n + i] = (gx * gx + gy * gy).sqrt();
            out[3 * n + i] = scale(r, h);
            out[4 * n + i] = scale(c, w);
            out[5 * n + i] = 1.0;
        }
    }
    ScalarField::new(vec![NUM_FEATURES, h, w], out)
}
