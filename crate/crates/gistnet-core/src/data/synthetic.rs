//! Procedural context-informative dataset generator. Each scene is a
//! striped, palette-coloured background (the context class) with an object
//! glyph composited on its own neutral tile. Glyph geometry identifies the
//! category *pair* exactly; which member of the pair is the label is
//! decided by the context class with probability `fidelity`, else by a fair
//! coin. So a crop-only observer tops out at 0.5 top-1 while a
//! context-using observer reaches fidelity + (1 - fidelity)/2.
//!
//! The background carries two cues for the context class: stripe
//! orientation/frequency (high-frequency, destroyed by blurring) and a
//! superclass palette (warm vs cool, a low-frequency cue that survives
//! blurring). The object tile never depends on the context class, so the
//! bounding-box crop carries no information about the member.

use super::manifest::{DatasetManifest, ManifestAnnotation, ManifestCategory, ManifestImage};
use super::SceneSample;
use crate::rng::SeededRng;
use crate::tensor::{Rect, Shape, Tensor};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Glyph repertoire; each pair gets one shape, so at most this many pairs.
pub const MAX_PAIRS: usize = 8;

const GLYPH_NAMES: [&str; MAX_PAIRS] = [
    "tri", "sq", "cross", "disk", "diamond", "ring", "bars", "quad",
];

/// Generator settings controlling how informative context is about object
/// identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// P ambiguous pairs; categories K = 2P.
    pub num_pairs: usize,
    /// G context classes, even, half per superclass.
    pub num_context_classes: usize,
    /// Probability that the context class determines the within-pair member.
    pub fidelity: f64,
    pub scene_side: usize,
    pub object_side_min: usize,
    pub object_side_max: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub seed: u64,
}

impl SyntheticConfig {
    /// 4 pairs / 8 categories on 128-pixel scenes; the context-effect
    /// experiment default.
    pub fn desk_default(fidelity: f64, seed: u64) -> Self {
        SyntheticConfig {
            num_pairs: 4,
            num_context_classes: 8,
            fidelity,
            scene_side: 128,
            object_side_min: 16,
            object_side_max: 104,
            train_count: 10_000,
            test_count: 2_000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_pairs == 0 || self.num_pairs > MAX_PAIRS {
            return Err(Error::Config(format!(
                "num_pairs must be in 1..={MAX_PAIRS}, got {}",
                self.num_pairs
            )));
        }
        if self.num_context_classes < 2 || self.num_context_classes % 2 != 0 {
            return Err(Error::Config(format!(
                "num_context_classes must be even and >= 2, got {}",
                self.num_context_classes
            )));
        }
        if !(0.0..=1.0).contains(&self.fidelity) {
            return Err(Error::Config(format!(
                "fidelity must lie in [0,1], got {}",
                self.fidelity
            )));
        }
        if self.object_side_min < 4
            || self.object_side_min > self.object_side_max
            || self.object_side_max > self.scene_side
        {
            return Err(Error::Config(format!(
                "object side range ({}, {}) invalid for scene side {}",
                self.object_side_min, self.object_side_max, self.scene_side
            )));
        }
        if self.scene_side < 16 {
            return Err(Error::Config(format!(
                "scene side must be >= 16, got {}",
                self.scene_side
            )));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        2 * self.num_pairs
    }

    /// Category display name: glyph name plus member letter.
    pub fn category_name(&self, category: usize) -> String {
        let pair = category / 2;
        let member = if category % 2 == 0 { "a" } else { "b" };
        format!("{}_{member}", GLYPH_NAMES[pair])
    }
}

/// Which half of the data a handle addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn stream_base(self) -> u64 {
        match self {
            Split::Train => 0x0100_0000_0000,
            Split::Test => 0x0200_0000_0000,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Superclass of a context class: even classes are 0, odd are 1.
pub fn superclass_of(context_class: usize) -> u8 {
    (context_class % 2) as u8
}

/// The fixed pair/context-class mapping that decides the within-pair
/// member when fidelity applies: the context superclass.
fn mapped_member(_pair: usize, context_class: usize) -> usize {
    superclass_of(context_class) as usize
}

fn glyph_inside(pair: usize, u: f64, v: f64) -> bool {
    match pair {
        // Upward triangle via sign tests against its three edges.
        0 => {
            let (ax, ay) = (0.0, -0.75);
            let (bx, by) = (-0.78, 0.62);
            let (cx, cy) = (0.78, 0.62);
            let sign = |x1: f64, y1: f64, x2: f64, y2: f64| (u - x2) * (y1 - y2) - (x1 - x2) * (v - y2);
            let d1 = sign(ax, ay, bx, by);
            let d2 = sign(bx, by, cx, cy);
            let d3 = sign(cx, cy, ax, ay);
            let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
            let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
            !(neg && pos)
        }
        1 => u.abs() <= 0.58 && v.abs() <= 0.58,
        2 => (u.abs() <= 0.24 && v.abs() <= 0.8) || (v.abs() <= 0.24 && u.abs() <= 0.8),
        3 => u * u + v * v <= 0.62 * 0.62,
        4 => u.abs() + v.abs() <= 0.78,
        5 => {
            let r2 = u * u + v * v;
            (0.34 * 0.34..=0.68 * 0.68).contains(&r2)
        }
        6 => u.abs() <= 0.74 && ((v - 0.38).abs() <= 0.2 || (v + 0.38).abs() <= 0.2),
        7 => u.abs() <= 0.7 && v.abs() <= 0.7 && u * v > 0.0,
        _ => unreachable!("validate caps num_pairs at MAX_PAIRS"),
    }
}

const TILE_BG: f32 = 0.12;
const GLYPH_FG: f32 = 0.92;

/// Renders the object tile for a pair. Depends only on (pair, side): the
/// crop carries no context information by construction.
pub(crate) fn render_object_tile(pair: usize, side: usize) -> Vec<f32> {
    let mut tile = vec![TILE_BG; side * side];
    for ty in 0..side {
        let v = (ty as f64 + 0.5) / side as f64 * 2.0 - 1.0;
        for tx in 0..side {
            let u = (tx as f64 + 0.5) / side as f64 * 2.0 - 1.0;
            if glyph_inside(pair, u, v) {
                tile[ty * side + tx] = GLYPH_FG;
            }
        }
    }
    tile
}

/// Warm palette for superclass 0, cool palette for superclass 1, with a
/// small per-class tint so classes within a superclass differ.
fn palette(context_class: usize) -> [f64; 3] {
    let tint = ((context_class >> 1) % 4) as f64 * 0.02;
    if superclass_of(context_class) == 0 {
        [0.72 + tint, 0.44 - tint, 0.20]
    } else {
        [0.20, 0.44 - tint, 0.72 + tint]
    }
}

const STRIPE_AMP: f64 = 0.12;
const NOISE_AMP: f64 = 0.02;

/// Draws (context class, pair, member) in the fixed per-sample order.
fn draw_labels(cfg: &SyntheticConfig, rng: &mut SeededRng) -> (usize, usize, usize) {
    let g = rng.uniform_range(cfg.num_context_classes);
    let pair = rng.uniform_range(cfg.num_pairs);
    let member = if rng.uniform01() < cfg.fidelity {
        mapped_member(pair, g)
    } else {
        rng.uniform_range(2)
    };
    (g, pair, member)
}

fn render_sample(cfg: &SyntheticConfig, rng: &mut SeededRng) -> SceneSample {
    let (g, pair, member) = draw_labels(cfg, rng);
    let superclass = superclass_of(g);
    let category = 2 * pair + member;

    let span = cfg.object_side_max - cfg.object_side_min + 1;
    let obj_side = cfg.object_side_min + rng.uniform_range(span);
    let s = cfg.scene_side;
    let ox = rng.uniform_range(s - obj_side + 1);
    let oy = rng.uniform_range(s - obj_side + 1);

    // Background: palette base + square-wave stripes + pixel noise.
    let base = palette(g);
    let orient = (g >> 1) % 4;
    let (dx, dy) = match orient {
        0 => (0.0, 1.0),
        1 => (1.0, 0.0),
        2 => (std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
        _ => (std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
    };
    let freq = 6.0 + 3.0 * ((g >> 3) % 3) as f64;
    let mut data = vec![0.0f32; 3 * s * s];
    for y in 0..s {
        for x in 0..s {
            let t = (x as f64 * dx + y as f64 * dy) / s as f64;
            let stripe = if (t * freq * std::f64::consts::TAU).sin() >= 0.0 {
                STRIPE_AMP
            } else {
                -STRIPE_AMP
            };
            for c in 0..3 {
                let noise = (rng.uniform01() * 2.0 - 1.0) * NOISE_AMP;
                data[(c * s + y) * s + x] = (base[c] + stripe + noise).clamp(0.0, 1.0) as f32;
            }
        }
    }

    // Composite the object tile; all three channels get the same gray.
    let tile = render_object_tile(pair, obj_side);
    for ty in 0..obj_side {
        for tx in 0..obj_side {
            let v = tile[ty * obj_side + tx];
            for c in 0..3 {
                data[(c * s + oy + ty) * s + ox + tx] = v;
            }
        }
    }

    SceneSample {
        image: Tensor::from_vec(Shape::new([3, s, s]).expect("valid dims"), data)
            .expect("length matches"),
        bbox: Rect::new(ox, oy, obj_side, obj_side),
        category,
        scene_class: Some(g as u32),
        scene_superclass: Some(superclass),
    }
}

/// A lazily rendered synthetic split: sample i is a pure function of
/// (config seed, split, i), so identical configs give bitwise-identical
/// datasets in any access order.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub cfg: SyntheticConfig,
    pub split: Split,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        match self.split {
            Split::Train => self.cfg.train_count,
            Split::Test => self.cfg.test_count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.cfg.num_classes()
    }

    pub fn sample(&self, i: usize) -> SceneSample {
        assert!(i < self.len(), "sample index {i} out of range");
        let mut rng = SeededRng::new(self.cfg.seed, self.split.stream_base() + i as u64);
        render_sample(&self.cfg, &mut rng)
    }

    /// Manifest describing this split with image files named
    /// `{split}_{i:06}.ppm`.
    pub fn manifest(&self) -> DatasetManifest {
        let categories = (0..self.num_classes())
            .map(|c| ManifestCategory {
                id: c as i64,
                name: self.cfg.category_name(c),
            })
            .collect();
        let mut images = Vec::with_capacity(self.len());
        let mut annotations = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            let sample = self.sample(i);
            images.push(ManifestImage {
                id: i as i64,
                file: format!("{}_{i:06}.ppm", self.split.name()),
                width: self.cfg.scene_side as u32,
                height: self.cfg.scene_side as u32,
            });
            annotations.push(ManifestAnnotation {
                image_id: i as i64,
                bbox: [
                    sample.bbox.x as u32,
                    sample.bbox.y as u32,
                    sample.bbox.w as u32,
                    sample.bbox.h as u32,
                ],
                category_id: sample.category as i64,
                scene_class: sample.scene_class,
                scene_superclass: sample.scene_superclass,
            });
        }
        DatasetManifest {
            categories,
            images,
            annotations,
        }
    }
}

/// Validates the config and returns (train, test) dataset handles.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(SyntheticDataset, SyntheticDataset)> {
    cfg.validate()?;
    Ok((
        SyntheticDataset {
            cfg: cfg.clone(),
            split: Split::Train,
        },
        SyntheticDataset {
            cfg: cfg.clone(),
            split: Split::Test,
        },
    ))
}
