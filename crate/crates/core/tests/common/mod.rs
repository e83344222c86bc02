//! Shared test oracles: independent reference implementations that the
//! production code is checked against. Everything here is deliberately
//! naive (re-derived from the definitions, quadratic where convenient) and
//! must stay decoupled from the library internals it validates.

// each test binary uses a different subset of the oracles
#![allow(dead_code)]

use rand::Rng;

use relabel_core::fusion::FusionConfig;
use relabel_core::geometry::{BBox, Detection};

/// Random box with corners inside `w x h` and a minimum side of 1 px.
pub fn random_box(rng: &mut impl Rng, w: f64, h: f64) -> BBox {
    let x1 = rng.random_range(0.0..w - 2.0);
    let y1 = rng.random_range(0.0..h - 2.0);
    let bw = rng.random_range(1.0..(w - x1).min(30.0));
    let bh = rng.random_range(1.0..(h - y1).min(30.0));
    BBox::new(x1, y1, x1 + bw, y1 + bh)
}

fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let area = |r: &BBox| (r.x2 - r.x1) * (r.y2 - r.y1);
    let union = area(a) + area(b) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Plain re-derivation of greedy matching: walk predictions in descending
/// score (ties by position), give each the best free ground truth at or
/// above the threshold. Returns the number of matches.
fn naive_true_positives(preds: &[Detection], gts: &[BBox], iou_thr: f64) -> usize {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| preds[j].score.total_cmp(&preds[i].score));
    let mut used = vec![false; gts.len()];
    let mut tp = 0;
    for pi in order {
        let mut best_gt = None;
        let mut best_iou = 0.0;
        for (gi, gt) in gts.iter().enumerate() {
            if used[gi] {
                continue;
            }
            let ov = iou(&preds[pi].bbox, gt);
            if ov >= iou_thr && ov > best_iou {
                best_iou = ov;
                best_gt = Some(gi);
            }
        }
        if let Some(gi) = best_gt {
            used[gi] = true;
            tp += 1;
        }
    }
    tp
}

/// Exhaustive average-precision oracle: enumerate every distinct score as
/// a threshold, re-match the kept predictions from scratch, collect one
/// (recall, precision) point per threshold, then apply the 101-point
/// envelope rule. Assumes tie-free scores.
pub fn ap_oracle(per_image: &[(Vec<Detection>, Vec<BBox>)], iou_thr: f64) -> f64 {
    let total_gt: usize = per_image.iter().map(|(_, g)| g.len()).sum();
    assert!(total_gt > 0, "oracle needs ground truth");
    let mut thresholds: Vec<f64> = per_image
        .iter()
        .flat_map(|(p, _)| p.iter().map(|d| d.score))
        .collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();

    let mut points = Vec::with_capacity(thresholds.len());
    for &s in &thresholds {
        let mut tp = 0usize;
        let mut kept = 0usize;
        for (preds, gts) in per_image {
            let subset: Vec<Detection> =
                preds.iter().filter(|d| d.score >= s).copied().collect();
            kept += subset.len();
            tp += naive_true_positives(&subset, gts, iou_thr);
        }
        points.push((tp as f64 / total_gt as f64, tp as f64 / kept as f64));
    }

    let mut total = 0.0;
    for k in 0..=100u32 {
        let r = f64::from(k) / 100.0;
        let best = points
            .iter()
            .filter(|&&(rec, _)| rec >= r)
            .map(|&(_, p)| p)
            .fold(f64::NEG_INFINITY, f64::max);
        if best.is_finite() {
            total += best;
        }
    }
    total / 101.0
}

/// Confidence-weighted coordinate average (separate passes per coordinate,
/// so the arithmetic path differs from the library's).
fn weighted_box(members: &[Detection]) -> BBox {
    let total: f64 = members.iter().map(|d| d.score).sum();
    let avg = |pick: fn(&BBox) -> f64| -> f64 {
        members
            .iter()
            .map(|d| d.score * pick(&d.bbox))
            .sum::<f64>()
            / total
    };
    BBox::new(
        avg(|b| b.x1),
        avg(|b| b.y1),
        avg(|b| b.x2),
        avg(|b| b.y2),
    )
}

/// Brute-force weighted-boxes-fusion reference: same greedy contract,
/// recomputed from scratch at every step. Requires positive scores.
pub fn wbf_reference(dets: &[Detection], cfg: &FusionConfig) -> Vec<Detection> {
    let mut kept: Vec<Detection> = dets
        .iter()
        .filter(|d| d.score >= cfg.skip_score_thr)
        .copied()
        .collect();
    kept.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut clusters: Vec<Vec<Detection>> = Vec::new();
    for det in kept {
        let mut joined = false;
        for members in clusters.iter_mut() {
            let fused = weighted_box(members);
            if iou(&fused, &det.bbox) >= cfg.cluster_iou_thr {
                members.push(det);
                joined = true;
                break;
            }
        }
        if !joined {
            clusters.push(vec![det]);
        }
    }

    let mut out: Vec<Detection> = clusters
        .iter()
        .map(|members| {
            let mean = members.iter().map(|d| d.score).sum::<f64>() / members.len() as f64;
            let t = members.len().min(cfg.n_views) as f64;
            Detection::new(weighted_box(members), mean * t / cfg.n_views as f64)
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    out
}
