//! Dataset ingestion and the context transforms feeding both streams:
//! minimal-bounding-box crops for the fovea, masked whole-scene inputs for
//! the periphery, context/object pixel ratios, and Gaussian context
//! degradation. All transforms are pure; batch order is defined solely by
//! the seed.

mod manifest;
mod ppm;
mod synthetic;

pub use manifest::{
    load_manifest, DatasetManifest, DiskDataset, ManifestAnnotation, ManifestCategory,
    ManifestImage,
};
pub use ppm::{read_ppm, rgb8_to_tensor, tensor_to_rgb8, write_ppm};
pub use synthetic::{generate_synthetic, Split, SyntheticConfig, SyntheticDataset};

use crate::rng::SeededRng;
use crate::tensor::{region_fill, Rect, Scalar, Shape, Tensor};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// One image with its object bounding box, category label, and (for
/// synthetic or annotated data) scene labels. Image values lie in [0,1].
#[derive(Debug, Clone)]
pub struct SceneSample {
    pub image: Tensor<f32>,
    pub bbox: Rect,
    pub category: usize,
    pub scene_class: Option<u32>,
    /// 0/1 indoor/outdoor-style superclass.
    pub scene_superclass: Option<u8>,
}

impl SceneSample {
    pub fn validate(&self) -> Result<()> {
        if self.image.shape().rank() != 3 || self.image.dims()[0] != 3 {
            return Err(Error::Validation(format!(
                "sample image must be [3,H,W], got {}",
                self.image.shape()
            )));
        }
        let (h, w) = (self.image.dims()[1], self.image.dims()[2]);
        if self.bbox.w < 1 || self.bbox.h < 1 {
            return Err(Error::Validation(format!(
                "bbox must be at least 1x1, got {}x{}",
                self.bbox.w, self.bbox.h
            )));
        }
        if self.bbox.x + self.bbox.w > w || self.bbox.y + self.bbox.h > h {
            return Err(Error::Validation(format!(
                "bbox ({},{},{},{}) outside {}x{} image",
                self.bbox.x, self.bbox.y, self.bbox.w, self.bbox.h, w, h
            )));
        }
        Ok(())
    }
}

/// A source of samples: synthetic (rendered on demand) or on disk.
pub enum Dataset {
    Synthetic(SyntheticDataset),
    Disk(DiskDataset),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Synthetic(d) => d.len(),
            Dataset::Disk(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Dataset::Synthetic(d) => d.num_classes(),
            Dataset::Disk(d) => d.num_classes(),
        }
    }

    pub fn sample(&self, i: usize) -> Result<SceneSample> {
        match self {
            Dataset::Synthetic(d) => Ok(d.sample(i)),
            Dataset::Disk(d) => d.sample(i),
        }
    }

    /// Display name of a contiguous class index.
    pub fn category_name(&self, class_index: usize) -> String {
        match self {
            Dataset::Synthetic(d) => d.cfg.category_name(class_index),
            Dataset::Disk(d) => d
                .manifest
                .categories
                .get(class_index)
                .map(|c| c.name.clone())
                .unwrap_or_else(|| format!("category{class_index}")),
        }
    }
}

// ---------------------------------------------------------------------------
// Bilinear resize
// ---------------------------------------------------------------------------

/// Bilinear resize of a sub-rectangle of a [C,H,W] tensor to
/// `out_h` x `out_w`, half-pixel-center coordinates, edge-clamped at the
/// rectangle borders. Interpolation runs in f64.
pub fn resize_region<T: Scalar>(
    src: &Tensor<T>,
    region: Rect,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    if src.shape().rank() != 3 {
        return Err(Error::Shape(format!(
            "resize expects a rank-3 [C,H,W] tensor, got {}",
            src.shape()
        )));
    }
    let (c, h, w) = (src.dims()[0], src.dims()[1], src.dims()[2]);
    if region.w == 0 || region.h == 0 || region.x + region.w > w || region.y + region.h > h {
        return Err(Error::Bounds(format!(
            "resize region ({},{},{},{}) outside {}x{}",
            region.x, region.y, region.w, region.h, w, h
        )));
    }
    let sx = region.w as f64 / out_w as f64;
    let sy = region.h as f64 / out_h as f64;
    let sd = src.data();
    let mut out = vec![T::zero(); c * out_h * out_w];
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, region.h as f64 - 1.0);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(region.h - 1);
        let wy = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, region.w as f64 - 1.0);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(region.w - 1);
            let wx = fx - x0 as f64;
            for ch in 0..c {
                let base = ch * h * w;
                let row0 = base + (region.y + y0) * w + region.x;
                let row1 = base + (region.y + y1) * w + region.x;
                let p00 = sd[row0 + x0].to_f64();
                let p01 = sd[row0 + x1].to_f64();
                let p10 = sd[row1 + x0].to_f64();
                let p11 = sd[row1 + x1].to_f64();
                let top = p00 * (1.0 - wx) + p01 * wx;
                let bot = p10 * (1.0 - wx) + p11 * wx;
                out[(ch * out_h + oy) * out_w + ox] = T::from_f64(top * (1.0 - wy) + bot * wy);
            }
        }
    }
    Tensor::from_vec(Shape::new([c, out_h, out_w])?, out)
}

/// Bilinear resize of the whole image.
pub fn resize_bilinear<T: Scalar>(src: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (h, w) = (src.dims()[1], src.dims()[2]);
    resize_region(src, Rect::new(0, 0, w, h), out_h, out_w)
}

// ---------------------------------------------------------------------------
// Context transforms
// ---------------------------------------------------------------------------

/// Crops the bounding box expanded by `margin * max(w,h)` on each side
/// (clipped to the image), then resizes to `out_side` squared. Aspect ratio
/// is not preserved.
pub fn crop_minimal_context(
    sample: &SceneSample,
    out_side: usize,
    margin: f64,
) -> Result<Tensor<f32>> {
    sample.validate()?;
    if margin < 0.0 {
        return Err(Error::Argument(format!("margin must be >= 0, got {margin}")));
    }
    let (h, w) = (sample.image.dims()[1], sample.image.dims()[2]);
    let b = sample.bbox;
    let e = margin * b.w.max(b.h) as f64;
    let x0 = ((b.x as f64 - e).floor().max(0.0)) as usize;
    let y0 = ((b.y as f64 - e).floor().max(0.0)) as usize;
    let x1 = (((b.x + b.w) as f64 + e).ceil() as usize).min(w);
    let y1 = (((b.y + b.h) as f64 + e).ceil() as usize).min(h);
    if x1 <= x0 || y1 <= y0 {
        return Err(Error::Validation(format!(
            "degenerate crop region from bbox ({},{},{},{})",
            b.x, b.y, b.w, b.h
        )));
    }
    resize_region(
        &sample.image,
        Rect::new(x0, y0, x1 - x0, y1 - y0),
        out_side,
        out_side,
    )
}

/// Bounding box coordinates mapped onto the resized `out_side` grid:
/// endpoints scaled and rounded to the nearest pixel, clamped inside, at
/// least 1x1.
pub fn scaled_bbox(image_w: usize, image_h: usize, bbox: Rect, out_side: usize) -> Rect {
    let sx = out_side as f64 / image_w as f64;
    let sy = out_side as f64 / image_h as f64;
    let x0 = ((bbox.x as f64 * sx).round() as usize).min(out_side - 1);
    let y0 = ((bbox.y as f64 * sy).round() as usize).min(out_side - 1);
    let x1 = (((bbox.x + bbox.w) as f64 * sx).round() as usize).clamp(x0 + 1, out_side);
    let y1 = (((bbox.y + bbox.h) as f64 * sy).round() as usize).clamp(y0 + 1, out_side);
    Rect::new(x0, y0, x1 - x0, y1 - y0)
}

/// The periphery input: the full image resized to `out_side` squared with
/// the scaled bounding box replaced by exact zeros. Masking happens after
/// the resize so masked pixels are exactly 0.
pub fn make_context_input(sample: &SceneSample, out_side: usize) -> Result<Tensor<f32>> {
    sample.validate()?;
    let (h, w) = (sample.image.dims()[1], sample.image.dims()[2]);
    let resized = resize_bilinear(&sample.image, out_side, out_side)?;
    let rect = scaled_bbox(w, h, sample.bbox, out_side);
    region_fill(&resized, rect, 0.0)
}

/// Ratio of context pixels to object pixels: (H*W - w*h) / (w*h).
pub fn context_object_ratio(sample: &SceneSample) -> f64 {
    let (h, w) = (sample.image.dims()[1], sample.image.dims()[2]);
    let object = (sample.bbox.w * sample.bbox.h) as f64;
    ((h * w) as f64 - object) / object
}

// ---------------------------------------------------------------------------
// Gaussian blur
// ---------------------------------------------------------------------------

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k = Vec::with_capacity(2 * radius + 1);
    let denom = 2.0 * sigma * sigma;
    for i in 0..=2 * radius {
        let d = i as f64 - radius as f64;
        k.push((-d * d / denom).exp());
    }
    let sum: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Symmetric reflection of index `i` into [0, n).
fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Separable Gaussian blur (kernel radius ceil(3*sigma), normalised,
/// reflect padding). sigma = 0 returns the input bit-identically. Output is
/// clamped to the input's [min, max] so rounding can never escape the
/// input range.
pub fn gaussian_blur<T: Scalar>(t: &Tensor<T>, sigma: f64) -> Result<Tensor<T>> {
    if sigma < 0.0 {
        return Err(Error::Argument(format!("sigma must be >= 0, got {sigma}")));
    }
    if t.shape().rank() != 3 {
        return Err(Error::Shape(format!(
            "gaussian_blur expects rank-3 [C,H,W], got {}",
            t.shape()
        )));
    }
    if sigma == 0.0 {
        return Ok(t.clone());
    }
    let (c, h, w) = (t.dims()[0], t.dims()[1], t.dims()[2]);
    let kernel = gaussian_kernel(sigma);
    let radius = kernel.len() / 2;

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in t.data() {
        let f = v.to_f64();
        lo = lo.min(f);
        hi = hi.max(f);
    }

    // Horizontal pass in f64.
    let src: Vec<f64> = t.data().iter().map(|&v| v.to_f64()).collect();
    let mut tmp = vec![0.0f64; src.len()];
    for ch in 0..c {
        for y in 0..h {
            let row = (ch * h + y) * w;
            for x in 0..w {
                let mut acc = 0.0;
                for (j, &kv) in kernel.iter().enumerate() {
                    let xi = reflect(x as isize + j as isize - radius as isize, w);
                    acc += kv * src[row + xi];
                }
                tmp[row + x] = acc;
            }
        }
    }
    // Vertical pass.
    let mut out = vec![T::zero(); src.len()];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, &kv) in kernel.iter().enumerate() {
                    let yi = reflect(y as isize + j as isize - radius as isize, h);
                    acc += kv * tmp[(ch * h + yi) * w + x];
                }
                out[(ch * h + y) * w + x] = T::from_f64(acc.clamp(lo, hi));
            }
        }
    }
    Tensor::from_vec(t.shape().clone(), out)
}

/// Degrades the context only: blurs the whole context input, then re-zeroes
/// the masked object region so "not the object" stays exact under bleed.
pub fn blur_context(
    context_input: &Tensor<f32>,
    bbox_scaled: Rect,
    sigma: f64,
) -> Result<Tensor<f32>> {
    if sigma == 0.0 {
        return Ok(context_input.clone());
    }
    let blurred = gaussian_blur(context_input, sigma)?;
    region_fill(&blurred, bbox_scaled, 0.0)
}

/// Ordered Gaussian-blur levels for a context-degradation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlurSchedule {
    pub levels: Vec<f64>,
}

impl BlurSchedule {
    /// 40 levels, sigma_j = j * 0.25 * (side/128): identity through
    /// near-total low-pass, scaled to the context grid.
    pub fn default_for_side(side: usize) -> Self {
        let unit = 0.25 * side as f64 / 128.0;
        BlurSchedule {
            levels: (0..40).map(|j| j as f64 * unit).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Config("blur schedule must not be empty".into()));
        }
        if self.levels[0] != 0.0 {
            return Err(Error::Config(format!(
                "first blur level must be 0, got {}",
                self.levels[0]
            )));
        }
        for pair in self.levels.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::Config(format!(
                    "blur levels must be strictly increasing, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// Index batches under a seeded permutation; the final short batch is
/// emitted. Order is defined solely by the rng state.
pub fn shuffled_batches(n: usize, batch_size: usize, rng: &mut SeededRng) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Argument("batch_size must be >= 1".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    Ok(idx.chunks(batch_size).map(|c| c.to_vec()).collect())
}
