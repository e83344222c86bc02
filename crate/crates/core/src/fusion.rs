//! Pseudo-label generation: pool detections from augmented views, cluster
//! them greedily, and fuse each cluster by confidence-weighted coordinate
//! averaging.
//!
//! Fused coordinates are `sum(C_i * X_i) / sum(C_i)` per coordinate over the
//! T boxes of a cluster; the fused score is the member mean rescaled by
//! `min(T, n_views) / n_views`, so boxes confirmed by few views are demoted.

use thiserror::Error;

use crate::geometry::{apply_view, invert_view, BBox, Detection, ViewTransform};
use crate::metrics::{AnnotationSet, MetricsError};

/// Clustering and score-rescaling parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// A box joins the first cluster whose fused box overlaps it at least
    /// this much.
    pub cluster_iou_thr: f64,
    /// Input boxes scoring below this are dropped before clustering.
    pub skip_score_thr: f64,
    /// Number of views the score rescaling normalizes against.
    pub n_views: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            cluster_iou_thr: 0.55,
            skip_score_thr: 0.0,
            n_views: 20,
        }
    }
}

impl FusionConfig {
    fn validate(&self) {
        assert!(
            self.cluster_iou_thr > 0.0 && self.cluster_iou_thr <= 1.0,
            "cluster_iou_thr must be in (0, 1]"
        );
        assert!(
            (0.0..1.0).contains(&self.skip_score_thr),
            "skip_score_thr must be in [0, 1)"
        );
        assert!(self.n_views >= 1, "n_views must be >= 1");
    }
}

/// One cluster of boxes assigned to a single object, with its fused result.
#[derive(Debug, Clone)]
pub struct BoxCluster {
    pub members: Vec<Detection>,
    pub fused: Detection,
}

fn fused_bbox(members: &[Detection]) -> BBox {
    let mut weight = 0.0;
    let mut acc = [0.0f64; 4];
    for d in members {
        weight += d.score;
        acc[0] += d.score * d.bbox.x1;
        acc[1] += d.score * d.bbox.y1;
        acc[2] += d.score * d.bbox.x2;
        acc[3] += d.score * d.bbox.y2;
    }
    if weight > 0.0 {
        BBox::new(
            acc[0] / weight,
            acc[1] / weight,
            acc[2] / weight,
            acc[3] / weight,
        )
    } else {
        // All-zero confidences: fall back to the arithmetic mean.
        let n = members.len() as f64;
        let (mut x1, mut y1, mut x2, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for d in members {
            x1 += d.bbox.x1;
            y1 += d.bbox.y1;
            x2 += d.bbox.x2;
            y2 += d.bbox.y2;
        }
        BBox::new(x1 / n, y1 / n, x2 / n, y2 / n)
    }
}

fn fused_score(members: &[Detection], n_views: usize) -> f64 {
    let mean = members.iter().map(|d| d.score).sum::<f64>() / members.len() as f64;
    mean * (members.len().min(n_views) as f64 / n_views as f64)
}

/// Clusters detections greedily and fuses each cluster.
///
/// Boxes are processed in descending score order (ties keep input order);
/// each joins the first cluster whose current fused box reaches
/// `cluster_iou_thr` IoU, otherwise it starts a new cluster. The fused box
/// is recomputed after every join. Exposed for inspection; most callers
/// want [`wbf_fuse`].
pub fn wbf_clusters(dets: &[Detection], cfg: &FusionConfig) -> Vec<BoxCluster> {
    cfg.validate();
    let mut order: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].score >= cfg.skip_score_thr)
        .collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));

    let mut clusters: Vec<BoxCluster> = Vec::new();
    for &i in &order {
        let det = dets[i];
        let joined = clusters
            .iter_mut()
            .find(|c| c.fused.bbox.iou(&det.bbox) >= cfg.cluster_iou_thr);
        match joined {
            Some(c) => {
                c.members.push(det);
                c.fused.bbox = fused_bbox(&c.members);
            }
            None => clusters.push(BoxCluster {
                members: vec![det],
                fused: det,
            }),
        }
    }
    for c in &mut clusters {
        c.fused = Detection::new(fused_bbox(&c.members), fused_score(&c.members, cfg.n_views));
    }
    clusters
}

/// Weighted boxes fusion over one image's pooled detections.
///
/// Output is sorted by fused score descending (ties keep cluster creation
/// order). Empty input gives empty output.
pub fn wbf_fuse(dets: &[Detection], cfg: &FusionConfig) -> Vec<Detection> {
    let mut fused: Vec<Detection> = wbf_clusters(dets, cfg).into_iter().map(|c| c.fused).collect();
    fused.sort_by(|a, b| b.score.total_cmp(&a.score));
    fused
}

/// Failure reported by a [`Detector`] implementation.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct DetectorError(pub String);

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("detector failed on view (flip {flip:?}, scale {scale}): {source}")]
    Detector {
        flip: crate::geometry::Flip,
        scale: f64,
        source: DetectorError,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Source of per-view detections: the simulator, or file-backed predictions
/// from a real model.
///
/// `detect` must return boxes in VIEW coordinates (the frame of the flipped
/// and scaled image) and be deterministic for a given `(image_id, view)`.
pub trait Detector {
    fn detect(&self, image_id: &str, view: &ViewTransform)
        -> Result<Vec<Detection>, DetectorError>;
}

/// Runs the detector over every view, maps boxes back to the original
/// frame, clips them, pools everything and fuses.
///
/// `width`/`height` are the original image dimensions.
pub fn tta_predict(
    detector: &dyn Detector,
    image_id: &str,
    width: f64,
    height: f64,
    views: &[ViewTransform],
    cfg: &FusionConfig,
) -> Result<Vec<Detection>, FusionError> {
    assert!(!views.is_empty(), "views must be non-empty");
    let mut pooled = Vec::new();
    for view in views {
        let dets = detector
            .detect(image_id, view)
            .map_err(|source| FusionError::Detector {
                flip: view.flip,
                scale: view.scale,
                source,
            })?;
        for d in dets {
            let back = invert_view(&d.bbox, view, width, height);
            if let Some(clipped) = back.clip(width, height) {
                pooled.push(Detection {
                    bbox: clipped,
                    ..d
                });
            }
        }
    }
    Ok(wbf_fuse(&pooled, cfg))
}

/// Replaces every image's annotations with the fused detections whose
/// score reaches `accept_thr`. Full replacement each cycle; no merge with
/// the previous labels.
pub fn correct_labels(
    current: &AnnotationSet,
    detector: &dyn Detector,
    views: &[ViewTransform],
    cfg: &FusionConfig,
    accept_thr: f64,
) -> Result<AnnotationSet, FusionError> {
    assert!(accept_thr >= 0.0, "accept_thr must be non-negative");
    let mut out = AnnotationSet::new();
    for info in current.images() {
        out.add_image(info.clone())?;
        let fused = tta_predict(
            detector,
            &info.id,
            f64::from(info.width),
            f64::from(info.height),
            views,
            cfg,
        )?;
        let accepted: Vec<Detection> =
            fused.into_iter().filter(|d| d.score >= accept_thr).collect();
        out.set_annotations(&info.id, accepted)?;
    }
    Ok(out)
}

/// Detector that replays the same detections for every view, in view
/// coordinates. Test and consensus-demo helper.
pub struct ConsensusDetector {
    pub width: f64,
    pub height: f64,
    pub dets: Vec<Detection>,
}

impl Detector for ConsensusDetector {
    fn detect(
        &self,
        _image_id: &str,
        view: &ViewTransform,
    ) -> Result<Vec<Detection>, DetectorError> {
        Ok(self
            .dets
            .iter()
            .map(|d| Detection {
                bbox: apply_view(&d.bbox, view, self.width, self.height),
                ..*d
            })
            .collect())
    }
}
