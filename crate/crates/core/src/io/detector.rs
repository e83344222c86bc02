//! File-backed detector: per-view prediction files named by a manifest, so
//! real-model TTA outputs can be piped into the fusion stage.
//!
//! Manifest format (paths resolve relative to the manifest's directory):
//!
//! ```json
//! {
//!   "views": [
//!     {"flip": "none", "scale": 1.0, "file": "preds_none_100.json"},
//!     {"flip": "h",    "scale": 0.8, "file": "preds_h_080.json"}
//!   ]
//! }
//! ```
//!
//! Each prediction file uses the annotation schema, with boxes in VIEW
//! coordinates.

use std::path::Path;

use serde::Deserialize;

use super::{json_error, read_annotations, IoError};
use crate::fusion::{Detector, DetectorError};
use crate::geometry::{Detection, Flip, ViewTransform};
use crate::metrics::AnnotationSet;

#[derive(Debug, Deserialize)]
struct ManifestEntry {
    flip: Flip,
    scale: f64,
    file: String,
}

#[derive(Debug, Deserialize)]
struct Manifest {
    views: Vec<ManifestEntry>,
}

/// Detector that serves pre-computed per-view predictions from disk.
pub struct FileViewDetector {
    views: Vec<(ViewTransform, AnnotationSet)>,
}

impl FileViewDetector {
    pub fn from_manifest(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|source| IoError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| json_error(&e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut views = Vec::with_capacity(manifest.views.len());
        for entry in manifest.views {
            let view = ViewTransform::new(entry.flip, entry.scale);
            if views.iter().any(|(v, _): &(ViewTransform, _)| *v == view) {
                return Err(IoError::DuplicateView {
                    flip: format!("{:?}", entry.flip),
                    scale: entry.scale,
                });
            }
            let set = read_annotations(&base.join(&entry.file))?;
            views.push((view, set));
        }
        Ok(Self { views })
    }

    /// Views present in the manifest, in file order.
    pub fn views(&self) -> Vec<ViewTransform> {
        self.views.iter().map(|(v, _)| *v).collect()
    }
}

impl Detector for FileViewDetector {
    fn detect(
        &self,
        image_id: &str,
        view: &ViewTransform,
    ) -> Result<Vec<Detection>, DetectorError> {
        let set = self
            .views
            .iter()
            .find(|(v, _)| v == view)
            .map(|(_, s)| s)
            .ok_or_else(|| {
                DetectorError(format!(
                    "no prediction file for view (flip {:?}, scale {})",
                    view.flip, view.scale
                ))
            })?;
        // An image absent from one view's file simply had no detections there.
        Ok(set.annotations(image_id).to_vec())
    }
}
