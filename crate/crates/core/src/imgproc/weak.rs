//! Weak-label generation: classical image-processing pipelines that turn a
//! raw microscopy frame into initial (noisy) box annotations.
//!
//! The operator picks the category per image. Dead cells look like dark
//! rings, so they go straight to edge detection plus a Circle Hough
//! Transform. Alive and inhibited cells are blob-like: blur, edges,
//! closing, hole filling, then distance-transform markers and watershed to
//! split touching blobs.

use super::{
    canny_edges, circle_hough, closing, distance_transform, fill_holes, gaussian_blur,
    label_components, region_boxes, watershed, Connectivity, ImgError, LabelMap, Raster,
};
use crate::geometry::Detection;

/// Visual category an operator assigns to a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellCategory {
    Alive,
    Inhibited,
    Dead,
}

/// Stage parameters of the weak-label pipelines.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct WeakLabelParams {
    /// Pre-smoothing kernel for the blob pipeline (odd sizes).
    pub blur_kx: usize,
    pub blur_ky: usize,
    /// Hysteresis thresholds on the Sobel gradient magnitude.
    pub canny_low: f64,
    pub canny_high: f64,
    /// 3x3 closing iterations after edge detection.
    pub close_iterations: usize,
    /// Components smaller than this area (px^2) are dropped as noise.
    pub min_box_area: f64,
    /// Circle Hough radius search range (dead pipeline).
    pub r_min: usize,
    pub r_max: usize,
    /// Fraction of the ideal vote count a circle peak must reach.
    pub vote_frac: f64,
}

impl Default for WeakLabelParams {
    fn default() -> Self {
        Self {
            blur_kx: 5,
            blur_ky: 5,
            canny_low: 50.0,
            canny_high: 120.0,
            close_iterations: 1,
            min_box_area: 4.0,
            r_min: 5,
            r_max: 30,
            vote_frac: 0.45,
        }
    }
}

impl WeakLabelParams {
    /// Per-category defaults; inhibited cells are fuzzier, so they get a
    /// wider pre-blur and an extra closing pass.
    pub fn default_for(category: CellCategory) -> Self {
        match category {
            CellCategory::Alive | CellCategory::Dead => Self::default(),
            CellCategory::Inhibited => Self {
                blur_kx: 7,
                blur_ky: 7,
                close_iterations: 2,
                ..Self::default()
            },
        }
    }
}

/// Otsu over 256 bins restricted to mask-on pixels. The blob pipeline
/// thresholds the distance transform this way so the dominant zero
/// background cannot pin the threshold at 0.
fn otsu_threshold_masked(img: &Raster, mask: &Raster) -> (Raster, f64) {
    let mut hist = [0u64; 256];
    for (i, &p) in img.pixels().iter().enumerate() {
        if mask.pixels()[i] != 0.0 {
            hist[p.clamp(0.0, 255.0).round() as usize] += 1;
        }
    }
    let thr = super::segment::otsu_from_histogram(&hist) as f64;
    let binary = Raster::from_pixels(
        img.width(),
        img.height(),
        img.pixels()
            .iter()
            .zip(mask.pixels())
            .map(|(&p, &m)| {
                if m != 0.0 && p.clamp(0.0, 255.0).round() > thr {
                    1.0
                } else {
                    0.0
                }
            })
            .collect(),
    );
    (binary, thr)
}

fn dead_pipeline(img: &Raster, params: &WeakLabelParams) -> Vec<Detection> {
    let edges = canny_edges(img, params.canny_low, params.canny_high);
    let circles = circle_hough(&edges, params.r_min, params.r_max, params.vote_frac);
    let (w, h) = (img.width() as f64, img.height() as f64);
    circles
        .iter()
        .filter_map(|c| c.to_bbox().clip(w, h))
        .map(|b| Detection::new(b, 1.0))
        .collect()
}

fn blob_pipeline(img: &Raster, params: &WeakLabelParams) -> Result<Vec<Detection>, ImgError> {
    let blurred = gaussian_blur(img, params.blur_kx, params.blur_ky)?;
    let edges = canny_edges(&blurred, params.canny_low, params.canny_high);
    let closed = closing(&edges, params.close_iterations);
    let filled = fill_holes(&closed);
    if filled.pixels().iter().all(|&p| p == 0.0) {
        return Ok(Vec::new());
    }

    let dist = distance_transform(&filled);
    // Normalize distances per component before thresholding: blobs of very
    // different sizes would otherwise fight over one global threshold and
    // small blobs would lose their markers entirely.
    let comps = label_components(&filled, Connectivity::Eight);
    let mut comp_max = vec![0.0f64; comps.max_label() as usize + 1];
    for y in 0..filled.height() {
        for x in 0..filled.width() {
            let l = comps.get(x, y) as usize;
            if l != 0 {
                comp_max[l] = comp_max[l].max(dist.get(x, y));
            }
        }
    }
    let mut scaled = Raster::new(filled.width(), filled.height());
    for y in 0..filled.height() {
        for x in 0..filled.width() {
            let l = comps.get(x, y) as usize;
            if l != 0 && comp_max[l] > 0.0 {
                scaled.set(x, y, dist.get(x, y) * 255.0 / comp_max[l]);
            }
        }
    }
    let (marker_bin, _) = otsu_threshold_masked(&scaled, &filled);
    let mut markers = label_components(&marker_bin, Connectivity::Eight);
    if markers.max_label() == 0 {
        // Degenerate distance histogram; fall back to plain components.
        markers = label_components(&filled, Connectivity::Eight);
    }

    // Flood the negated distance so blob cores fill first and touching
    // blobs split at the neck.
    let elevation = dist.map(|v| -v);
    let regions = watershed(&elevation, &markers)?;

    // Restrict labels to the filled foreground before measuring boxes.
    let mut masked = LabelMap::new(regions.width(), regions.height());
    for y in 0..regions.height() {
        for x in 0..regions.width() {
            if filled.get(x, y) != 0.0 {
                masked.set(x, y, regions.get(x, y));
            }
        }
    }

    let (w, h) = (img.width() as f64, img.height() as f64);
    Ok(region_boxes(&masked)
        .into_iter()
        .filter(|b| b.area() >= params.min_box_area)
        .filter_map(|b| b.clip(w, h))
        .map(|b| Detection::new(b, 1.0))
        .collect())
}

/// Runs the weak-label pipeline for one frame. All returned detections
/// carry score 1.0: weak labels have no confidence of their own.
pub fn weak_label_pipeline(
    img: &Raster,
    category: CellCategory,
    params: &WeakLabelParams,
) -> Result<Vec<Detection>, ImgError> {
    match category {
        CellCategory::Dead => Ok(dead_pipeline(img, params)),
        CellCategory::Alive | CellCategory::Inhibited => blob_pipeline(img, params),
    }
}
