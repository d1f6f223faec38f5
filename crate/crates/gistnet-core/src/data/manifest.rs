//! JSON dataset manifests: a COCO-style schema reduced to what recognition
//! needs. Field names are exact; unknown fields are ignored on load.

use super::ppm::{read_ppm, rgb8_to_tensor};
use super::SceneSample;
use crate::tensor::Rect;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestCategory {
    pub id: i64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestImage {
    pub id: i64,
    pub file: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestAnnotation {
    pub image_id: i64,
    /// [x, y, w, h] in integer pixels.
    pub bbox: [u32; 4],
    pub category_id: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_class: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_superclass: Option<u8>,
}

/// The on-disk dataset descriptor: categories, images, annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DatasetManifest {
    pub categories: Vec<ManifestCategory>,
    pub images: Vec<ManifestImage>,
    pub annotations: Vec<ManifestAnnotation>,
}

impl DatasetManifest {
    /// Structural validation: references resolve and boxes fit.
    pub fn validate(&self) -> Result<()> {
        let image_by_id: HashMap<i64, &ManifestImage> =
            self.images.iter().map(|i| (i.id, i)).collect();
        let category_ids: HashMap<i64, usize> = self
            .categories
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id, i))
            .collect();
        if category_ids.len() != self.categories.len() {
            return Err(Error::Validation("duplicate category ids".into()));
        }
        if image_by_id.len() != self.images.len() {
            return Err(Error::Validation("duplicate image ids".into()));
        }
        for (idx, ann) in self.annotations.iter().enumerate() {
            let img = image_by_id.get(&ann.image_id).ok_or_else(|| {
                Error::Validation(format!(
                    "annotation {idx} references unknown image id {}",
                    ann.image_id
                ))
            })?;
            if !category_ids.contains_key(&ann.category_id) {
                return Err(Error::Validation(format!(
                    "annotation {idx} references unknown category id {}",
                    ann.category_id
                )));
            }
            let [x, y, w, h] = ann.bbox;
            if w < 1 || h < 1 {
                return Err(Error::Validation(format!(
                    "annotation {idx} has degenerate bbox {:?}",
                    ann.bbox
                )));
            }
            if x + w > img.width || y + h > img.height {
                return Err(Error::Validation(format!(
                    "annotation {idx} bbox {:?} exceeds image {} ({}x{})",
                    ann.bbox, img.id, img.width, img.height
                )));
            }
            if let Some(sc) = ann.scene_superclass {
                if sc > 1 {
                    return Err(Error::Validation(format!(
                        "annotation {idx} scene_superclass must be 0 or 1, got {sc}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// A validated manifest bound to its image directory. Images are decoded
/// lazily, one sample per annotation.
pub struct DiskDataset {
    pub manifest: DatasetManifest,
    root: PathBuf,
    image_index: HashMap<i64, usize>,
    category_index: HashMap<i64, usize>,
}

impl DiskDataset {
    pub fn len(&self) -> usize {
        self.manifest.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.annotations.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.categories.len()
    }

    /// Contiguous class index of a manifest category id (order of the
    /// categories list).
    pub fn class_index(&self, category_id: i64) -> Option<usize> {
        self.category_index.get(&category_id).copied()
    }

    pub fn sample(&self, i: usize) -> Result<SceneSample> {
        let ann = self
            .manifest
            .annotations
            .get(i)
            .ok_or_else(|| Error::Argument(format!("sample index {i} out of range")))?;
        let img_meta = &self.manifest.images[self.image_index[&ann.image_id]];
        let path = self.root.join(&img_meta.file);
        let (w, h, rgb) = read_ppm(&path)?;
        if (w as u32, h as u32) != (img_meta.width, img_meta.height) {
            return Err(Error::Validation(format!(
                "{}: file is {w}x{h} but manifest says {}x{}",
                path.display(),
                img_meta.width,
                img_meta.height
            )));
        }
        let image = rgb8_to_tensor(w, h, &rgb)?;
        let [x, y, bw, bh] = ann.bbox;
        let sample = SceneSample {
            image,
            bbox: Rect::new(x as usize, y as usize, bw as usize, bh as usize),
            category: self.category_index[&ann.category_id],
            scene_class: ann.scene_class,
            scene_superclass: ann.scene_superclass,
        };
        sample.validate()?;
        Ok(sample)
    }
}

/// Parses and validates a manifest, checking that every referenced image
/// file exists next to it.
pub fn load_manifest(path: &Path) -> Result<DiskDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| {
        Error::Parse(format!(
            "{}: line {} column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })?;
    manifest.validate()?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    for img in &manifest.images {
        let file = root.join(&img.file);
        if !file.is_file() {
            return Err(Error::Io {
                path: file.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "image file missing"),
            });
        }
    }
    let image_index = manifest
        .images
        .iter()
        .enumerate()
        .map(|(i, m)| (m.id, i))
        .collect();
    let category_index = manifest
        .categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id, i))
        .collect();
    Ok(DiskDataset {
        manifest,
        root,
        image_index,
        category_index,
    })
}
