//! Detection evaluation: AP at fixed IoU thresholds, COCO-averaged AP and
//! AR, and the greedy matching underneath them.
//!
//! All AP values use 101-point interpolation (precision envelope sampled at
//! recall 0.00, 0.01, ..., 1.00), including AP50. Score ties are broken by
//! input order; that ordering is part of the contract so results are
//! reproducible bit-for-bit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, Detection};

/// IoU thresholds 0.50:0.05:0.95 used for the averaged AP and AR.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

/// Per-image cap on predictions considered by [`average_recall`].
pub const AR_MAX_DETECTIONS: usize = 100;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no ground truth boxes in the dataset")]
    NoGroundTruth,
    #[error("unknown image id `{0}`")]
    UnknownImage(String),
    #[error("duplicate image id `{0}`")]
    DuplicateImage(String),
    #[error("annotation {index} on image `{image_id}` lies outside the image")]
    OutOfBounds { image_id: String, index: usize },
}

/// Image metadata: identifier and pixel dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: String,
    pub width: u32,
    pub height: u32,
    /// Optional path to the raster backing this image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

impl ImageInfo {
    pub fn new(id: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            id: id.into(),
            width,
            height,
            file: None,
        }
    }
}

/// Per-image detection lists keyed by image id, plus the image dimensions.
///
/// This is the mutable "label state" every stage of the pipeline reads and
/// writes. Image order is preserved from insertion and all iteration is in
/// that order, so downstream computations are deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationSet {
    images: Vec<ImageInfo>,
    annotations: BTreeMap<String, Vec<Detection>>,
}

impl AnnotationSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers an image. Fails on duplicate ids.
    pub fn add_image(&mut self, info: ImageInfo) -> Result<(), MetricsError> {
        if self.annotations.contains_key(&info.id) {
            return Err(MetricsError::DuplicateImage(info.id));
        }
        self.annotations.insert(info.id.clone(), Vec::new());
        self.images.push(info);
        Ok(())
    }

    /// Replaces the annotations of `image_id`. Every box must lie inside
    /// the image rectangle.
    pub fn set_annotations(
        &mut self,
        image_id: &str,
        dets: Vec<Detection>,
    ) -> Result<(), MetricsError> {
        let info = self
            .images
            .iter()
            .find(|i| i.id == image_id)
            .ok_or_else(|| MetricsError::UnknownImage(image_id.to_string()))?;
        let (w, h) = (f64::from(info.width), f64::from(info.height));
        for (index, d) in dets.iter().enumerate() {
            let b = &d.bbox;
            if b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > w || b.y2 > h {
                return Err(MetricsError::OutOfBounds {
                    image_id: image_id.to_string(),
                    index,
                });
            }
        }
        self.annotations.insert(image_id.to_string(), dets);
        Ok(())
    }

    pub fn images(&self) -> &[ImageInfo] {
        &self.images
    }

    pub fn image(&self, id: &str) -> Option<&ImageInfo> {
        self.images.iter().find(|i| i.id == id)
    }

    /// Annotations of one image; empty slice when the id is unknown.
    pub fn annotations(&self, image_id: &str) -> &[Detection] {
        self.annotations.get(image_id).map_or(&[], Vec::as_slice)
    }

    /// Total number of annotations across all images.
    pub fn total_annotations(&self) -> usize {
        self.annotations.values().map(Vec::len).sum()
    }

    /// True when every image id of `self` also exists in `other`.
    pub fn ids_subset_of(&self, other: &AnnotationSet) -> Result<(), MetricsError> {
        for info in &self.images {
            if other.image(&info.id).is_none() {
                return Err(MetricsError::UnknownImage(info.id.clone()));
            }
        }
        Ok(())
    }
}

/// Aggregate evaluation report (all values in `[0, 1]`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap50: f64,
    pub ap75: f64,
    pub ap: f64,
    pub ar: f64,
}

/// Greedily matches predictions to ground-truth boxes at one IoU threshold.
///
/// Predictions are processed in descending score order (ties broken by
/// input order); each is assigned the unmatched ground truth with the
/// highest IoU at or above `iou_thr`, ties going to the lowest index.
/// Returns, per input prediction, the matched GT index or `None`.
pub fn match_greedy(preds: &[Detection], gts: &[BBox], iou_thr: f64) -> Vec<Option<usize>> {
    assert!(iou_thr > 0.0 && iou_thr <= 1.0, "iou_thr must be in (0, 1]");
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));

    let mut gt_taken = vec![false; gts.len()];
    let mut matches = vec![None; preds.len()];
    for &pi in &order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_taken[gi] {
                continue;
            }
            let ov = preds[pi].bbox.iou(gt);
            if ov >= iou_thr && best.is_none_or(|(_, b)| ov > b) {
                best = Some((gi, ov));
            }
        }
        if let Some((gi, _)) = best {
            gt_taken[gi] = true;
            matches[pi] = Some(gi);
        }
    }
    matches
}

/// Pools matching over the whole dataset: per image greedy matching, then
/// one global list of (score, is_tp) sorted by descending score with ties
/// kept in image-then-input order. Also returns the total GT count.
fn pooled_matches(
    preds: &AnnotationSet,
    gts: &AnnotationSet,
    iou_thr: f64,
) -> Result<(Vec<(f64, bool)>, usize), MetricsError> {
    preds.ids_subset_of(gts)?;
    let mut pooled = Vec::new();
    let mut total_gt = 0usize;
    for info in gts.images() {
        let gt_boxes: Vec<BBox> = gts.annotations(&info.id).iter().map(|d| d.bbox).collect();
        total_gt += gt_boxes.len();
        let img_preds = preds.annotations(&info.id);
        let matches = match_greedy(img_preds, &gt_boxes, iou_thr);
        for (p, m) in img_preds.iter().zip(&matches) {
            pooled.push((p.score, m.is_some()));
        }
    }
    if total_gt == 0 {
        return Err(MetricsError::NoGroundTruth);
    }
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok((pooled, total_gt))
}

/// 101-point interpolated AP from (recall, precision) prefix points.
///
/// Points must be in non-decreasing recall order (cumulative prefixes are).
fn interpolated_ap(points: &[(f64, f64)]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    // Suffix max of precision: envelope(r) = max precision at recall >= r.
    let mut suffix_max = vec![0.0f64; points.len()];
    let mut running = 0.0f64;
    for i in (0..points.len()).rev() {
        running = running.max(points[i].1);
        suffix_max[i] = running;
    }
    let mut total = 0.0;
    for k in 0..=100u32 {
        let r = f64::from(k) / 100.0;
        // First point with recall >= r.
        let idx = points.partition_point(|&(rec, _)| rec < r);
        if idx < points.len() {
            total += suffix_max[idx];
        }
    }
    total / 101.0
}

/// Average precision at a single IoU threshold, pooled over all images.
pub fn average_precision(
    preds: &AnnotationSet,
    gts: &AnnotationSet,
    iou_thr: f64,
) -> Result<f64, MetricsError> {
    let (pooled, total_gt) = pooled_matches(preds, gts, iou_thr)?;
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(pooled.len());
    for (i, &(_, is_tp)) in pooled.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        let recall = tp as f64 / total_gt as f64;
        let precision = tp as f64 / (i + 1) as f64;
        points.push((recall, precision));
    }
    Ok(interpolated_ap(&points))
}

/// Mean of [`average_precision`] over the ten COCO thresholds.
pub fn coco_ap(preds: &AnnotationSet, gts: &AnnotationSet) -> Result<f64, MetricsError> {
    let thresholds = coco_thresholds();
    let mut sum = 0.0;
    for &t in &thresholds {
        sum += average_precision(preds, gts, t)?;
    }
    Ok(sum / thresholds.len() as f64)
}

/// Recall at one threshold using at most [`AR_MAX_DETECTIONS`] highest-score
/// predictions per image.
fn recall_at(
    preds: &AnnotationSet,
    gts: &AnnotationSet,
    iou_thr: f64,
) -> Result<f64, MetricsError> {
    preds.ids_subset_of(gts)?;
    let mut matched = 0usize;
    let mut total_gt = 0usize;
    for info in gts.images() {
        let gt_boxes: Vec<BBox> = gts.annotations(&info.id).iter().map(|d| d.bbox).collect();
        total_gt += gt_boxes.len();
        let img_preds = preds.annotations(&info.id);
        // Top-k by score, ties by input order, preserving input order within
        // the kept subset so the matcher's tie-break stays the documented one.
        let mut order: Vec<usize> = (0..img_preds.len()).collect();
        order.sort_by(|&a, &b| img_preds[b].score.total_cmp(&img_preds[a].score));
        order.truncate(AR_MAX_DETECTIONS);
        order.sort_unstable();
        let kept: Vec<Detection> = order.iter().map(|&i| img_preds[i]).collect();
        matched += match_greedy(&kept, &gt_boxes, iou_thr)
            .iter()
            .filter(|m| m.is_some())
            .count();
    }
    if total_gt == 0 {
        return Err(MetricsError::NoGroundTruth);
    }
    Ok(matched as f64 / total_gt as f64)
}

/// Mean recall over the ten COCO thresholds (up to 100 detections/image).
pub fn average_recall(preds: &AnnotationSet, gts: &AnnotationSet) -> Result<f64, MetricsError> {
    let thresholds = coco_thresholds();
    let mut sum = 0.0;
    for &t in &thresholds {
        sum += recall_at(preds, gts, t)?;
    }
    Ok(sum / thresholds.len() as f64)
}

/// Full report: AP50, AP75, COCO AP, and AR.
pub fn evaluate(preds: &AnnotationSet, gts: &AnnotationSet) -> Result<EvalReport, MetricsError> {
    preds.ids_subset_of(gts)?;
    Ok(EvalReport {
        ap50: average_precision(preds, gts, 0.5)?,
        ap75: average_precision(preds, gts, 0.75)?,
        ap: coco_ap(preds, gts)?,
        ar: average_recall(preds, gts)?,
    })
}

/// Precision, recall and F1 of `preds` against `gts` at one IoU threshold,
/// pooled over images with greedy matching. Used as the pseudo-label
/// quality measure in the self-training loop.
pub fn f1_at_iou(
    preds: &AnnotationSet,
    gts: &AnnotationSet,
    iou_thr: f64,
) -> Result<PrecisionRecall, MetricsError> {
    let (pooled, total_gt) = pooled_matches(preds, gts, iou_thr)?;
    let tp = pooled.iter().filter(|&&(_, m)| m).count();
    let n_pred = pooled.len();
    let precision = if n_pred == 0 {
        0.0
    } else {
        tp as f64 / n_pred as f64
    };
    let recall = tp as f64 / total_gt as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(PrecisionRecall {
        precision,
        recall,
        f1,
    })
}

/// Precision/recall/F1 triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}
