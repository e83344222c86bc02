//! Desk-scale self-training loop: a parametric detector simulator with the
//! two-phase early-learning/memorization dynamic stands in for the neural
//! network, so the full iterative label-correction cycle (curve watching,
//! TTA fusion, synthetic-image regeneration, mixed-batch sampling) runs and
//! can be verified against a hidden ground truth.
//!
//! Every random decision flows from one `u64` seed through named streams,
//! so identical inputs give bit-identical histories.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloning::{compose_synthetic, BlurStrength, CloneError};
use crate::curvewatch::{detect_transition, CurveError, CurveSeries};
use crate::fusion::{correct_labels, Detector, DetectorError, FusionConfig, FusionError};
use crate::geometry::{apply_view, BBox, Detection, ViewTransform, DEFAULT_SCALES};
use crate::imgproc::Raster;
use crate::metrics::{
    average_precision, f1_at_iou, AnnotationSet, ImageInfo, MetricsError,
};

#[derive(Debug, Error)]
pub enum SelfTrainError {
    #[error("batch size must be even and >= 2, got {0}")]
    BadBatchSize(usize),
    #[error("{0} id list is empty")]
    EmptySide(&'static str),
    #[error("unknown image id `{0}`")]
    UnknownImage(String),
    #[error("invalid loop configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Clone(#[from] CloneError),
}

/// Derives a substream seed from the base seed and a path of labels
/// (FNV-1a; stable across platforms and runs).
fn stream_seed(base: u64, parts: &[&str]) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    for &b in base.to_le_bytes().iter() {
        h = (h ^ u64::from(b)).wrapping_mul(PRIME);
    }
    for part in parts {
        for &b in part.as_bytes() {
            h = (h ^ u64::from(b)).wrapping_mul(PRIME);
        }
        h = (h ^ 0xff).wrapping_mul(PRIME);
    }
    h
}

fn view_key(view: &ViewTransform) -> String {
    format!("{:?}:{:016x}", view.flip, view.scale.to_bits())
}

/// Minimum box side kept after jitter (px).
const MIN_JITTER_SIDE: f64 = 1.0;
/// False-positive boxes are uniform with sides in this range (px).
const FP_SIDE_RANGE: std::ops::Range<f64> = 8.0..24.0;

/// Parameters of the synthetic fixture world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldParams {
    pub n_images: usize,
    pub width: usize,
    pub height: usize,
    pub cells_per_image: usize,
    /// Ellipse semi-axis range of a rendered cell (px).
    pub cell_r_min: f64,
    pub cell_r_max: f64,
    /// Size of the source-dataset id list fed to the batch sampler.
    pub n_source: usize,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            n_images: 6,
            width: 160,
            height: 120,
            cells_per_image: 8,
            cell_r_min: 5.0,
            cell_r_max: 10.0,
            n_source: 12,
        }
    }
}

/// Label corruption applied to the hidden ground truth to manufacture the
/// noisy-and-missing starting condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionParams {
    pub drop_prob: f64,
    pub jitter_sigma: f64,
    /// Expected number of false boxes added per image (Poisson).
    pub fp_rate: f64,
}

impl Default for CorruptionParams {
    fn default() -> Self {
        Self {
            drop_prob: 0.3,
            jitter_sigma: 2.0,
            fp_rate: 0.5,
        }
    }
}

/// The simulated training world. `hidden_gt` is never shown to the loop;
/// it exists so pseudo-label quality can be measured from the outside.
#[derive(Debug, Clone)]
pub struct SimWorld {
    pub hidden_gt: AnnotationSet,
    pub weak_labels: AnnotationSet,
    pub images: BTreeMap<String, Raster>,
    pub source_ids: Vec<String>,
    pub rng_seed: u64,
}

impl SimWorld {
    /// Renders a fixture world: per image a textured background with
    /// non-overlapping bright elliptical cells, ground-truth boxes around
    /// them, and weak labels produced by [`corrupt_labels`].
    pub fn generate(params: &WorldParams, corruption: &CorruptionParams, seed: u64) -> SimWorld {
        let mut hidden_gt = AnnotationSet::new();
        let mut images = BTreeMap::new();
        for i in 0..params.n_images {
            let id = format!("img_{i:03}");
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &["world", &id]));
            let (w, h) = (params.width, params.height);
            let mut raster = Raster::new(w, h);
            for y in 0..h {
                for x in 0..w {
                    raster.set(x, y, 40.0 + rng.random_range(0.0..12.0));
                }
            }
            let mut cells: Vec<(f64, f64, f64, f64)> = Vec::new();
            let mut attempts = 0;
            while cells.len() < params.cells_per_image && attempts < 200 {
                attempts += 1;
                let rx = rng.random_range(params.cell_r_min..params.cell_r_max);
                let ry = rng.random_range(params.cell_r_min..params.cell_r_max);
                let cx = rng.random_range(rx + 2.0..w as f64 - rx - 2.0);
                let cy = rng.random_range(ry + 2.0..h as f64 - ry - 2.0);
                let clear = cells.iter().all(|&(ox, oy, orx, _)| {
                    let d = ((cx - ox).powi(2) + (cy - oy).powi(2)).sqrt();
                    d >= rx.max(ry) + orx + 4.0
                });
                if !clear {
                    continue;
                }
                let value = 150.0 + rng.random_range(0.0..60.0);
                for y in 0..h {
                    for x in 0..w {
                        let nx = (x as f64 - cx) / rx;
                        let ny = (y as f64 - cy) / ry;
                        if nx * nx + ny * ny <= 1.0 {
                            raster.set(x, y, value);
                        }
                    }
                }
                cells.push((cx, cy, rx, ry));
            }
            let mut dets = Vec::new();
            for &(cx, cy, rx, ry) in &cells {
                if let Some(b) =
                    BBox::new(cx - rx, cy - ry, cx + rx, cy + ry).clip(w as f64, h as f64)
                {
                    dets.push(Detection::new(b, 1.0));
                }
            }
            hidden_gt
                .add_image(ImageInfo::new(id.clone(), w as u32, h as u32))
                .expect("generated ids are unique");
            hidden_gt.set_annotations(&id, dets).expect("boxes clipped");
            images.insert(id, raster);
        }
        let weak_labels = corrupt_labels(
            &hidden_gt,
            corruption.drop_prob,
            corruption.jitter_sigma,
            corruption.fp_rate,
            stream_seed(seed, &["corruption"]),
        );
        let source_ids = (0..params.n_source).map(|i| format!("src_{i:03}")).collect();
        SimWorld {
            hidden_gt,
            weak_labels,
            images,
            source_ids,
            rng_seed: seed,
        }
    }
}

fn jitter_box(b: &BBox, sigma: f64, z: [f64; 4], width: f64, height: f64) -> Option<BBox> {
    let xa = b.x1 + sigma * z[0];
    let ya = b.y1 + sigma * z[1];
    let xb = b.x2 + sigma * z[2];
    let yb = b.y2 + sigma * z[3];
    let (mut x1, mut x2) = (xa.min(xb), xa.max(xb));
    let (mut y1, mut y2) = (ya.min(yb), ya.max(yb));
    if x2 - x1 < MIN_JITTER_SIDE {
        let c = (x1 + x2) / 2.0;
        x1 = c - MIN_JITTER_SIDE / 2.0;
        x2 = c + MIN_JITTER_SIDE / 2.0;
    }
    if y2 - y1 < MIN_JITTER_SIDE {
        let c = (y1 + y2) / 2.0;
        y1 = c - MIN_JITTER_SIDE / 2.0;
        y2 = c + MIN_JITTER_SIDE / 2.0;
    }
    BBox { x1, y1, x2, y2 }.clip(width, height)
}

fn random_box(rng: &mut ChaCha8Rng, width: f64, height: f64) -> Option<BBox> {
    let bw = rng.random_range(FP_SIDE_RANGE);
    let bh = rng.random_range(FP_SIDE_RANGE);
    let cx = rng.random_range(0.0..width);
    let cy = rng.random_range(0.0..height);
    BBox {
        x1: cx - bw / 2.0,
        y1: cy - bh / 2.0,
        x2: cx + bw / 2.0,
        y2: cy + bh / 2.0,
    }
    .clip(width, height)
}

fn poisson_count(rng: &mut ChaCha8Rng, rate: f64) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(rate).expect("positive finite rate");
    dist.sample(rng) as usize
}

/// Corrupts ground truth into weak labels: each box is dropped with
/// `drop_prob` (missing labels), survivors get Gaussian corner jitter
/// (noisy labels), and Poisson(`fp_rate`)-many uniform false boxes are
/// added per image. Deterministic per seed.
///
/// The per-box uniform draw is compared against `drop_prob` directly and
/// the jitter normals are drawn regardless of the drop outcome, so runs
/// with the same seed but lower `drop_prob` keep a superset of the same
/// jittered boxes.
pub fn corrupt_labels(
    gt: &AnnotationSet,
    drop_prob: f64,
    jitter_sigma: f64,
    fp_rate: f64,
    seed: u64,
) -> AnnotationSet {
    assert!((0.0..=1.0).contains(&drop_prob), "drop_prob outside [0, 1]");
    assert!(jitter_sigma >= 0.0 && fp_rate >= 0.0);
    let mut out = AnnotationSet::new();
    for info in gt.images() {
        out.add_image(info.clone()).expect("source ids are unique");
        let (w, h) = (f64::from(info.width), f64::from(info.height));
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &["corrupt", &info.id]));
        let mut dets = Vec::new();
        for d in gt.annotations(&info.id) {
            let u: f64 = rng.random();
            let z = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            if u < drop_prob {
                continue;
            }
            if let Some(b) = jitter_box(&d.bbox, jitter_sigma, z, w, h) {
                dets.push(Detection::new(b, 1.0));
            }
        }
        let mut fp_rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &["corrupt-fp", &info.id]));
        for _ in 0..poisson_count(&mut fp_rng, fp_rate) {
            if let Some(b) = random_box(&mut fp_rng, w, h) {
                dets.push(Detection::new(b, 1.0));
            }
        }
        out.set_annotations(&info.id, dets).expect("boxes clipped");
    }
    out
}

/// Shape of the simulated detector.
///
/// Recall follows `r_max * (1 - exp(-epoch / tau))`; box corners are
/// jittered per view; scores decay with distance from the truth as
/// `exp(-score_alpha * (1 - IoU))`. After `mem_epoch` the simulator
/// increasingly reproduces the initial weak labels instead of the truth,
/// which is the memorization phase the transition detector must catch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimDetectorConfig {
    pub r_max: f64,
    pub tau: f64,
    pub mem_epoch: u32,
    pub mem_rate: f64,
    pub jitter_sigma: f64,
    /// Expected false positives per image at the identity view; each view
    /// draws Poisson(`fp_rate` / 4).
    pub fp_rate: f64,
    pub score_alpha: f64,
}

impl Default for SimDetectorConfig {
    fn default() -> Self {
        Self {
            r_max: 0.95,
            tau: 2.0,
            mem_epoch: 8,
            mem_rate: 0.1,
            jitter_sigma: 1.0,
            fp_rate: 0.5,
            score_alpha: 2.0,
        }
    }
}

fn nearest_weak_box(weak: &[Detection], to: &BBox) -> Option<BBox> {
    if weak.is_empty() {
        return None;
    }
    let mut best_i = 0usize;
    let mut best_iou = -1.0f64;
    for (i, d) in weak.iter().enumerate() {
        let ov = d.bbox.iou(to);
        if ov > best_iou {
            best_iou = ov;
            best_i = i;
        }
    }
    if best_iou > 0.0 {
        return Some(weak[best_i].bbox);
    }
    // nothing overlaps: fall back to the nearest center
    let center = |b: &BBox| ((b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0);
    let (tx, ty) = center(to);
    let mut best_i = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, d) in weak.iter().enumerate() {
        let (cx, cy) = center(&d.bbox);
        let dist = (cx - tx).powi(2) + (cy - ty).powi(2);
        if dist < best_d {
            best_d = dist;
            best_i = i;
        }
    }
    Some(weak[best_i].bbox)
}

fn max_iou_to_gt(b: &BBox, gts: &[Detection]) -> f64 {
    gts.iter().map(|d| d.bbox.iou(b)).fold(0.0, f64::max)
}

/// Simulated detector output for one (epoch, image, view), in VIEW
/// coordinates. Deterministic per (world seed, epoch, image, view).
pub fn sim_detect(
    world: &SimWorld,
    cfg: &SimDetectorConfig,
    epoch: u32,
    image_id: &str,
    view: &ViewTransform,
) -> Result<Vec<Detection>, DetectorError> {
    assert!(epoch >= 1, "epochs are 1-based");
    let info = world
        .hidden_gt
        .image(image_id)
        .ok_or_else(|| DetectorError(format!("unknown image id `{image_id}`")))?;
    let (w, h) = (f64::from(info.width), f64::from(info.height));
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(
        world.rng_seed,
        &["detect", &epoch.to_string(), image_id, &view_key(view)],
    ));

    let recall = cfg.r_max * (1.0 - (-f64::from(epoch) / cfg.tau).exp());
    let mem_p = if epoch > cfg.mem_epoch {
        (cfg.mem_rate * f64::from(epoch - cfg.mem_epoch)).min(0.5)
    } else {
        0.0
    };
    let gts = world.hidden_gt.annotations(image_id);
    let weak = world.weak_labels.annotations(image_id);

    let mut out = Vec::new();
    for gt in gts {
        let u_emit: f64 = rng.random();
        if u_emit >= recall {
            continue;
        }
        let z = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let Some(mut b) = jitter_box(&gt.bbox, cfg.jitter_sigma, z, w, h) else {
            continue;
        };
        let u_mem: f64 = rng.random();
        if u_mem < mem_p {
            if let Some(weak_box) = nearest_weak_box(weak, &b) {
                b = weak_box;
            }
        }
        let score = (-cfg.score_alpha * (1.0 - b.iou(&gt.bbox))).exp();
        out.push(Detection::new(apply_view(&b, view, w, h), score));
    }
    for _ in 0..poisson_count(&mut rng, cfg.fp_rate / 4.0) {
        if let Some(b) = random_box(&mut rng, w, h) {
            let score = (-cfg.score_alpha * (1.0 - max_iou_to_gt(&b, gts))).exp();
            out.push(Detection::new(apply_view(&b, view, w, h), score));
        }
    }
    Ok(out)
}

/// [`Detector`] adapter over [`sim_detect`] for a fixed epoch.
pub struct SimDetector<'a> {
    pub world: &'a SimWorld,
    pub cfg: &'a SimDetectorConfig,
    pub epoch: u32,
}

impl Detector for SimDetector<'_> {
    fn detect(
        &self,
        image_id: &str,
        view: &ViewTransform,
    ) -> Result<Vec<Detection>, DetectorError> {
        sim_detect(self.world, self.cfg, self.epoch, image_id, view)
    }
}

/// One mixed batch: equal halves of target and source image ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixedBatch {
    pub target: Vec<String>,
    pub source: Vec<String>,
}

struct ShuffleQueue<'a> {
    ids: &'a [String],
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl<'a> ShuffleQueue<'a> {
    fn new(ids: &'a [String], seed: u64) -> Self {
        Self {
            ids,
            order: Vec::new(),
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn next(&mut self) -> String {
        if self.pos == self.order.len() {
            // Fisher-Yates reshuffle
            self.order = (0..self.ids.len()).collect();
            for i in (1..self.order.len()).rev() {
                let j = self.rng.random_range(0..=i);
                self.order.swap(i, j);
            }
            self.pos = 0;
        }
        let id = self.ids[self.order[self.pos]].clone();
        self.pos += 1;
        id
    }
}

/// Builds one epoch of mixed batches: `batch_size / 2` target ids plus the
/// same number of source ids per batch.
///
/// Batches cover the longer side without replacement; each side cycles
/// through fresh shuffles when exhausted, so the shorter side repeats
/// within the epoch (a single target id would appear in every batch).
/// Deterministic per seed.
pub fn mixed_batches(
    target_ids: &[String],
    source_ids: &[String],
    batch_size: usize,
    seed: u64,
) -> Result<Vec<MixedBatch>, SelfTrainError> {
    if batch_size < 2 || !batch_size.is_multiple_of(2) {
        return Err(SelfTrainError::BadBatchSize(batch_size));
    }
    if target_ids.is_empty() {
        return Err(SelfTrainError::EmptySide("target"));
    }
    if source_ids.is_empty() {
        return Err(SelfTrainError::EmptySide("source"));
    }
    let half = batch_size / 2;
    let longer = target_ids.len().max(source_ids.len());
    let n_batches = longer.div_ceil(half);
    let mut targets = ShuffleQueue::new(target_ids, stream_seed(seed, &["target"]));
    let mut sources = ShuffleQueue::new(source_ids, stream_seed(seed, &["source"]));
    let mut out = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        out.push(MixedBatch {
            target: (0..half).map(|_| targets.next()).collect(),
            source: (0..half).map(|_| sources.next()).collect(),
        });
    }
    Ok(out)
}

/// Loop phase; the transition happens at most once per run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Early,
    SemiSupervised,
}

/// Loop-level knobs. `scales` expands to scales x 4 flips views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopParams {
    pub max_epochs: u32,
    /// Relative-derivative-change trigger threshold.
    pub threshold: f64,
    /// Minimum fused score a pseudo label must reach to be kept. The
    /// default sits just above the single-view ceiling 0.9 * 1/20 = 0.045,
    /// so one-view flukes are rejected.
    pub accept_thr: f64,
    pub batch_size: usize,
    /// Clone-region margin around each pseudo box (px).
    pub margin_px: usize,
    pub scales: Vec<f64>,
}

impl Default for LoopParams {
    fn default() -> Self {
        Self {
            max_epochs: 15,
            threshold: 0.9,
            accept_thr: 0.05,
            batch_size: 8,
            margin_px: 2,
            scales: DEFAULT_SCALES.to_vec(),
        }
    }
}

/// Everything recorded about one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub phase: Phase,
    /// AP50 of the identity-view detections against the initial weak labels.
    pub ap50_vs_weak: f64,
    /// Pseudo-label quality vs the hidden ground truth (IoU 0.5 greedy).
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Label state at the end of this epoch.
    pub labels: AnnotationSet,
    /// Mean intensity of the regenerated synthetic frames (semi-supervised
    /// epochs only).
    pub synth_mean_intensity: Option<f64>,
    /// Synthetic frame of the first image, kept at correction epochs
    /// t, t+3, t+6, t+9 for the frame-series output.
    pub synth_frame: Option<(String, Raster)>,
    pub n_batches: usize,
}

/// Final state and full per-epoch history of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopState {
    pub final_epoch: u32,
    pub phase: Phase,
    pub transition_epoch: Option<u32>,
    pub current_labels: AnnotationSet,
    pub curve: CurveSeries,
    pub history: Vec<EpochRecord>,
    pub warning: Option<String>,
}

/// Runs the full loop.
///
/// Early phase: per epoch, score the simulator's identity-view output
/// against the initial weak labels, extend the curve, and test for the
/// transition. Once it fires, every following epoch (including the trigger
/// epoch) regenerates pseudo labels via TTA + WBF, replaces the label
/// state, and rebuilds the synthetic frames. The mixed-batch sampler runs
/// every epoch to exercise its contract; the simulator's epoch index is
/// the proxy for training progress.
pub fn run_self_training(
    world: &SimWorld,
    det_cfg: &SimDetectorConfig,
    fusion_cfg: &FusionConfig,
    blur: &BlurStrength,
    params: &LoopParams,
) -> Result<LoopState, SelfTrainError> {
    if params.max_epochs < 3 {
        return Err(SelfTrainError::BadConfig(format!(
            "max_epochs must be >= 3, got {}",
            params.max_epochs
        )));
    }
    if params.scales.is_empty() {
        return Err(SelfTrainError::BadConfig("scales list is empty".into()));
    }
    if !(params.threshold > 0.0 && params.threshold < 1.0) {
        return Err(SelfTrainError::BadConfig(format!(
            "threshold must be in (0, 1), got {}",
            params.threshold
        )));
    }
    if !(params.accept_thr >= 0.0 && params.accept_thr.is_finite()) {
        return Err(SelfTrainError::BadConfig(format!(
            "accept_thr must be a non-negative number, got {}",
            params.accept_thr
        )));
    }
    let views = ViewTransform::views_for_scales(&params.scales);
    let target_ids: Vec<String> = world
        .hidden_gt
        .images()
        .iter()
        .map(|i| i.id.clone())
        .collect();

    let mut current = world.weak_labels.clone();
    let mut curve = CurveSeries::new();
    let mut phase = Phase::Early;
    let mut transition: Option<u32> = None;
    let mut history: Vec<EpochRecord> = Vec::new();

    for epoch in 1..=params.max_epochs {
        let batches = mixed_batches(
            &target_ids,
            &world.source_ids,
            params.batch_size,
            stream_seed(world.rng_seed, &["batches", &epoch.to_string()]),
        )?;

        // Identity-view detections drive the monitored curve.
        let mut id_dets = AnnotationSet::new();
        for info in world.hidden_gt.images() {
            id_dets.add_image(info.clone())?;
            let dets = sim_detect(
                world,
                det_cfg,
                epoch,
                &info.id,
                &ViewTransform::identity(),
            )
            .map_err(|e| SelfTrainError::UnknownImage(e.0))?;
            id_dets.set_annotations(&info.id, dets)?;
        }
        let ap50 = average_precision(&id_dets, &world.weak_labels, 0.5)?;

        if phase == Phase::Early {
            curve.push(epoch, ap50)?;
            if let Some(t) = detect_transition(&curve, params.threshold)? {
                phase = Phase::SemiSupervised;
                transition = Some(t);
            }
        }

        let mut synth_mean_intensity = None;
        let mut synth_frame = None;
        if phase == Phase::SemiSupervised {
            let detector = SimDetector {
                world,
                cfg: det_cfg,
                epoch,
            };
            current = correct_labels(&current, &detector, &views, fusion_cfg, params.accept_thr)?;

            let mut total = 0.0;
            let mut count = 0.0;
            for (i, info) in world.hidden_gt.images().iter().enumerate() {
                let img = world
                    .images
                    .get(&info.id)
                    .ok_or_else(|| SelfTrainError::UnknownImage(info.id.clone()))?;
                let synth =
                    compose_synthetic(img, current.annotations(&info.id), blur, params.margin_px)?;
                total += synth.sum() / (synth.width() * synth.height()) as f64;
                count += 1.0;
                let since = epoch - transition.expect("set on phase switch");
                if i == 0 && since.is_multiple_of(3) && since <= 9 {
                    synth_frame = Some((info.id.clone(), synth));
                }
            }
            synth_mean_intensity = Some(total / count);
        }

        let pr = f1_at_iou(&current, &world.hidden_gt, 0.5)?;
        history.push(EpochRecord {
            epoch,
            phase,
            ap50_vs_weak: ap50,
            f1: pr.f1,
            precision: pr.precision,
            recall: pr.recall,
            labels: current.clone(),
            synth_mean_intensity,
            synth_frame,
            n_batches: batches.len(),
        });
    }

    let warning = if phase == Phase::Early {
        Some(format!(
            "transition never fired within {} epochs; loop completed in the early phase",
            params.max_epochs
        ))
    } else {
        None
    };
    Ok(LoopState {
        final_epoch: params.max_epochs,
        phase,
        transition_epoch: transition,
        current_labels: current,
        curve,
        history,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Flip;

    fn grid_world(n_images: usize, boxes_per_image: usize, seed: u64) -> SimWorld {
        // hand-built world without rasters: enough for detector/batch tests
        let mut gt = AnnotationSet::new();
        for i in 0..n_images {
            let id = format!("img_{i:03}");
            gt.add_image(ImageInfo::new(id.clone(), 400, 300)).unwrap();
            let mut dets = Vec::new();
            for k in 0..boxes_per_image {
                let x = 5.0 + (k % 10) as f64 * 38.0;
                let y = 5.0 + (k / 10) as f64 * 28.0;
                dets.push(Detection::new(BBox::new(x, y, x + 20.0, y + 14.0), 1.0));
            }
            gt.set_annotations(&id, dets).unwrap();
        }
        SimWorld {
            weak_labels: gt.clone(),
            hidden_gt: gt,
            images: BTreeMap::new(),
            source_ids: vec!["src_000".into(), "src_001".into()],
            rng_seed: seed,
        }
    }

    #[test]
    fn corrupt_identity_when_noise_free() {
        let world = grid_world(3, 10, 1);
        let out = corrupt_labels(&world.hidden_gt, 0.0, 0.0, 0.0, 42);
        assert_eq!(out, world.hidden_gt);
    }

    #[test]
    fn corrupt_drop_all() {
        let world = grid_world(3, 10, 1);
        let out = corrupt_labels(&world.hidden_gt, 1.0, 0.0, 0.0, 42);
        assert_eq!(out.total_annotations(), 0);
        let with_fp = corrupt_labels(&world.hidden_gt, 1.0, 0.0, 2.0, 42);
        assert!(with_fp.total_annotations() > 0);
    }

    #[test]
    fn corrupt_drop_is_binomial() {
        // 1000 boxes, drop 0.5: survivors within 3 * sqrt(1000 * 0.25) of 500
        let world = grid_world(20, 50, 5);
        let out = corrupt_labels(&world.hidden_gt, 0.5, 0.0, 0.0, 42);
        let kept = out.total_annotations() as f64;
        assert!((kept - 500.0).abs() <= 3.0 * (1000.0f64 * 0.25).sqrt(), "kept {kept}");
    }

    #[test]
    fn corrupt_lower_drop_keeps_superset() {
        let world = grid_world(5, 20, 9);
        for seed in [1u64, 7, 99] {
            let mut prev_f1 = f64::NEG_INFINITY;
            for drop in [0.8, 0.6, 0.4, 0.2, 0.0] {
                let weak = corrupt_labels(&world.hidden_gt, drop, 2.0, 0.5, seed);
                let f1 = f1_at_iou(&weak, &world.hidden_gt, 0.5).unwrap().f1;
                assert!(
                    f1 >= prev_f1 - 1e-12,
                    "seed {seed}: drop {drop} lowered F1 {prev_f1} -> {f1}"
                );
                prev_f1 = f1;
            }
        }
    }

    #[test]
    fn sim_noise_free_limit_reproduces_gt() {
        let world = grid_world(2, 8, 3);
        let cfg = SimDetectorConfig {
            r_max: 1.0,
            tau: 1e-12,
            jitter_sigma: 0.0,
            fp_rate: 0.0,
            mem_epoch: 100,
            ..SimDetectorConfig::default()
        };
        let view = ViewTransform::new(Flip::Horizontal, 1.1);
        let dets = sim_detect(&world, &cfg, 3, "img_000", &view).unwrap();
        let gts = world.hidden_gt.annotations("img_000");
        assert_eq!(dets.len(), gts.len());
        for (d, g) in dets.iter().zip(gts) {
            assert_eq!(d.bbox, apply_view(&g.bbox, &view, 400.0, 300.0));
            assert_eq!(d.score, 1.0);
        }
    }

    #[test]
    fn sim_zero_recall_is_empty() {
        let world = grid_world(2, 8, 3);
        let cfg = SimDetectorConfig {
            r_max: 0.0,
            fp_rate: 0.0,
            ..SimDetectorConfig::default()
        };
        let dets = sim_detect(&world, &cfg, 5, "img_000", &ViewTransform::identity()).unwrap();
        assert!(dets.is_empty());
    }

    #[test]
    fn sim_recall_matches_closed_form_at_tau() {
        // 1000 boxes; at epoch = tau the recall is r_max * (1 - 1/e)
        let world = grid_world(20, 50, 11);
        let cfg = SimDetectorConfig {
            r_max: 0.95,
            tau: 2.0,
            jitter_sigma: 0.0,
            fp_rate: 0.0,
            mem_epoch: 100,
            ..SimDetectorConfig::default()
        };
        let mut emitted = 0usize;
        for info in world.hidden_gt.images() {
            emitted += sim_detect(&world, &cfg, 2, &info.id, &ViewTransform::identity())
                .unwrap()
                .len();
        }
        let p = 0.95 * (1.0 - (-1.0f64).exp());
        let expect = 1000.0 * p;
        let tol = 3.0 * (1000.0 * p * (1.0 - p)).sqrt();
        assert!(
            ((emitted as f64) - expect).abs() <= tol,
            "emitted {emitted}, expected {expect} +- {tol}"
        );
    }

    #[test]
    fn sim_unknown_image_errors() {
        let world = grid_world(1, 1, 3);
        assert!(sim_detect(
            &world,
            &SimDetectorConfig::default(),
            1,
            "ghost",
            &ViewTransform::identity()
        )
        .is_err());
    }

    #[test]
    fn mixed_batches_shape_and_determinism() {
        let targets: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
        let sources: Vec<String> = (0..25).map(|i| format!("s{i}")).collect();
        let batches = mixed_batches(&targets, &sources, 8, 7).unwrap();
        assert_eq!(batches.len(), 25usize.div_ceil(4));
        for b in &batches {
            assert_eq!(b.target.len(), 4);
            assert_eq!(b.source.len(), 4);
        }
        let again = mixed_batches(&targets, &sources, 8, 7).unwrap();
        assert_eq!(batches, again);
        let other = mixed_batches(&targets, &sources, 8, 8).unwrap();
        assert_ne!(batches, other);
    }

    #[test]
    fn mixed_batches_single_target_everywhere() {
        let targets = vec!["only".to_string()];
        let sources: Vec<String> = (0..12).map(|i| format!("s{i}")).collect();
        let batches = mixed_batches(&targets, &sources, 8, 1).unwrap();
        assert_eq!(batches.len(), 3);
        for b in &batches {
            assert!(b.target.iter().all(|t| t == "only"));
        }
    }

    #[test]
    fn mixed_batches_longer_side_without_replacement() {
        let targets: Vec<String> = (0..3).map(|i| format!("t{i}")).collect();
        let sources: Vec<String> = (0..16).map(|i| format!("s{i}")).collect();
        let batches = mixed_batches(&targets, &sources, 8, 3).unwrap();
        let mut seen: Vec<&String> = batches.iter().flat_map(|b| &b.source).collect();
        seen.sort();
        seen.dedup();
        // 16 slots for 16 sources: every source appears exactly once
        assert_eq!(seen.len(), 16);
    }

    #[test]
    fn mixed_batches_rejects_odd_size() {
        let ids = vec!["a".to_string()];
        assert!(matches!(
            mixed_batches(&ids, &ids, 7, 1),
            Err(SelfTrainError::BadBatchSize(7))
        ));
        assert!(matches!(
            mixed_batches(&[], &ids, 8, 1),
            Err(SelfTrainError::EmptySide("target"))
        ));
    }

    #[test]
    fn stream_seed_distinguishes_paths() {
        assert_ne!(stream_seed(1, &["a", "b"]), stream_seed(1, &["ab"]));
        assert_ne!(stream_seed(1, &["a"]), stream_seed(2, &["a"]));
        assert_eq!(stream_seed(5, &["x", "y"]), stream_seed(5, &["x", "y"]));
    }
}
