//! Annotation JSON: the on-disk form of an [`AnnotationSet`].
//!
//! ```json
//! {
//!   "schema_version": "1",
//!   "images": [{"id": "frame_000", "width": 640, "height": 480}],
//!   "annotations": [
//!     {"image_id": "frame_000", "bbox": [10.0, 20.0, 30.0, 40.0],
//!      "score": 0.9, "class_id": 0}
//!   ]
//! }
//! ```
//!
//! Round trips are lossless: floats are serialized with their shortest
//! exact decimal representation, so `parse(emit(set)) == set`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{json_error, IoError};
use crate::geometry::{BBox, Detection};
use crate::metrics::{AnnotationSet, ImageInfo};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Serialize, Deserialize)]
struct FileAnnotation {
    image_id: String,
    bbox: [f64; 4],
    score: f64,
    #[serde(default)]
    class_id: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationFile {
    schema_version: String,
    images: Vec<ImageInfo>,
    annotations: Vec<FileAnnotation>,
}

/// Parses and validates annotation JSON into an [`AnnotationSet`].
pub fn parse_annotations(json: &str) -> Result<AnnotationSet, IoError> {
    let file: AnnotationFile = serde_json::from_str(json).map_err(|e| json_error(&e))?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(IoError::SchemaVersion(file.schema_version, SCHEMA_VERSION));
    }
    let mut set = AnnotationSet::new();
    for info in file.images {
        let id = info.id.clone();
        set.add_image(info)
            .map_err(|_| IoError::DuplicateImage(id))?;
    }
    let mut per_image: std::collections::BTreeMap<String, Vec<Detection>> = Default::default();
    for (index, a) in file.annotations.iter().enumerate() {
        let info = set
            .image(&a.image_id)
            .ok_or_else(|| IoError::UnknownImage {
                index,
                image_id: a.image_id.clone(),
            })?;
        let bad = |reason: String| IoError::BadAnnotation {
            index,
            image_id: a.image_id.clone(),
            reason,
        };
        let [x1, y1, x2, y2] = a.bbox;
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(bad("bbox coordinates must be finite".into()));
        }
        if !(x1 < x2 && y1 < y2) {
            return Err(bad(format!("bbox [{x1}, {y1}, {x2}, {y2}] has no area")));
        }
        if x1 < 0.0 || y1 < 0.0 || x2 > f64::from(info.width) || y2 > f64::from(info.height) {
            return Err(bad(format!(
                "bbox [{x1}, {y1}, {x2}, {y2}] exceeds the {}x{} image",
                info.width, info.height
            )));
        }
        if !(0.0..=1.0).contains(&a.score) {
            return Err(bad(format!("score {} outside [0, 1]", a.score)));
        }
        if a.class_id != 0 {
            return Err(bad(format!(
                "class_id {} unsupported (single-class schema)",
                a.class_id
            )));
        }
        per_image
            .entry(a.image_id.clone())
            .or_default()
            .push(Detection::new(BBox::new(x1, y1, x2, y2), a.score));
    }
    for (id, dets) in per_image {
        set.set_annotations(&id, dets).expect("validated above");
    }
    Ok(set)
}

/// Serializes an [`AnnotationSet`] to pretty-printed JSON. Images keep
/// their insertion order; annotations follow image order.
pub fn emit_annotations(set: &AnnotationSet) -> String {
    let mut annotations = Vec::with_capacity(set.total_annotations());
    for info in set.images() {
        for d in set.annotations(&info.id) {
            annotations.push(FileAnnotation {
                image_id: info.id.clone(),
                bbox: [d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2],
                score: d.score,
                class_id: d.class_id,
            });
        }
    }
    let file = AnnotationFile {
        schema_version: SCHEMA_VERSION.to_string(),
        images: set.images().to_vec(),
        annotations,
    };
    serde_json::to_string_pretty(&file).expect("annotation serialization cannot fail")
}

pub fn read_annotations(path: &Path) -> Result<AnnotationSet, IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_annotations(&text)
}

pub fn write_annotations(path: &Path, set: &AnnotationSet) -> Result<(), IoError> {
    std::fs::write(path, emit_annotations(set)).map_err(|source| IoError::Write {
        path: path.display().to_string(),
        source,
    })
}
