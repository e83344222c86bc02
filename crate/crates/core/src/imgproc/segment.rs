//! Binarization, exact Euclidean distance transform, marker-based
//! watershed, connected components and small binary morphology.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{ImgError, LabelMap, Raster};
use crate::geometry::BBox;

/// Maximizes inter-class variance over thresholds 0..=255 with foreground
/// = bin > t. A tie plateau (empty gap between modes) resolves to its
/// midpoint; a single occupied bin yields that bin (all background).
pub(crate) fn otsu_from_histogram(hist: &[u64; 256]) -> usize {
    let total: f64 = hist.iter().map(|&c| c as f64).sum();
    let total_sum: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut best_lo = 0usize;
    let mut best_hi = 0usize;
    let mut best_var = -1.0f64;
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    for (t, &count) in hist.iter().enumerate() {
        w0 += count as f64;
        sum0 += t as f64 * count as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (total_sum - sum0) / w1;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best_lo = t;
            best_hi = t;
        } else if var == best_var {
            best_hi = t;
        }
    }
    if best_var < 0.0 {
        return hist.iter().position(|&c| c > 0).unwrap_or(0);
    }
    (best_lo + best_hi) / 2
}

/// Otsu binarization over 256 histogram bins.
///
/// Pixels are binned by `clamp(round(v), 0, 255)`; the returned threshold
/// `t` maximizes the inter-class variance with foreground = bin > t, ties
/// resolving to the midpoint of the optimal plateau. A constant image
/// yields all background with threshold equal to the constant.
pub fn otsu_threshold(img: &Raster) -> (Raster, f64) {
    let mut hist = [0u64; 256];
    for &p in img.pixels() {
        hist[p.clamp(0.0, 255.0).round() as usize] += 1;
    }
    let best_t = otsu_from_histogram(&hist);
    let thr = best_t as f64;
    let binary = img.map(|p| if p.clamp(0.0, 255.0).round() > thr { 1.0 } else { 0.0 });
    (binary, thr)
}

const INF: f64 = f64::INFINITY;

/// 1-D squared-distance transform (lower envelope of parabolas).
fn dt_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n]; // parabola vertices
    let mut z = vec![0.0f64; n + 1]; // envelope boundaries
    let mut k = 0usize;
    v[0] = 0;
    z[0] = -INF;
    z[1] = INF;
    for q in 1..n {
        if f[q] == INF {
            continue;
        }
        loop {
            let p = v[k];
            if f[p] == INF {
                // previous vertex unusable; replace it
                if k == 0 {
                    v[0] = q;
                    z[0] = -INF;
                    z[1] = INF;
                    break;
                }
                k -= 1;
                continue;
            }
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64))
                / (2.0 * q as f64 - 2.0 * p as f64);
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = -INF;
                    z[1] = INF;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = INF;
                break;
            }
        }
    }
    if f[v[0]] == INF {
        // no finite source anywhere in this scanline
        return vec![INF; n];
    }
    let mut k = 0usize;
    for (q, dq) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let diff = q as f64 - p as f64;
        *dq = diff * diff + f[p];
    }
    d
}

/// Exact Euclidean distance to the nearest zero (background) pixel, with
/// everything outside the image treated as background. Background pixels
/// get 0.
pub fn distance_transform(binary: &Raster) -> Raster {
    let w = binary.width();
    let h = binary.height();
    // Pad one background ring: the nearest outside point of the plane is
    // always within it.
    let pw = w + 2;
    let ph = h + 2;
    let mut g = vec![0.0f64; pw * ph];
    for y in 0..h {
        for x in 0..w {
            g[(y + 1) * pw + (x + 1)] = if binary.get(x, y) != 0.0 { INF } else { 0.0 };
        }
    }
    // columns then rows on squared distances
    let mut col = vec![0.0f64; ph];
    for x in 0..pw {
        for y in 0..ph {
            col[y] = g[y * pw + x];
        }
        let d = dt_1d(&col);
        for y in 0..ph {
            g[y * pw + x] = d[y];
        }
    }
    let mut row = vec![0.0f64; pw];
    for y in 0..ph {
        row.copy_from_slice(&g[y * pw..(y + 1) * pw]);
        let d = dt_1d(&row);
        g[y * pw..(y + 1) * pw].copy_from_slice(&d);
    }
    let mut out = Raster::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, g[(y + 1) * pw + (x + 1)].sqrt());
        }
    }
    out
}

/// Queue entry ordered so the lowest intensity pops first, ties by
/// insertion order.
struct FloodEntry {
    height: f64,
    seq: u64,
    x: usize,
    y: usize,
}

impl PartialEq for FloodEntry {
    fn eq(&self, other: &Self) -> bool {
        self.height == other.height && self.seq == other.seq
    }
}
impl Eq for FloodEntry {}
impl PartialOrd for FloodEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for FloodEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap, we want a min-heap
        other
            .height
            .total_cmp(&self.height)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

const BOUNDARY: u32 = u32::MAX;

/// Marker-based watershed by priority flooding.
///
/// Markers keep their labels; unlabeled pixels are flooded in increasing
/// intensity order (ties broken by queue insertion order, so the result is
/// deterministic). A pixel whose labeled 4-neighbors disagree becomes
/// boundary (0 in the output).
pub fn watershed(img: &Raster, markers: &LabelMap) -> Result<LabelMap, ImgError> {
    if img.width() != markers.width() || img.height() != markers.height() {
        return Err(ImgError::ShapeMismatch(
            img.width(),
            img.height(),
            markers.width(),
            markers.height(),
        ));
    }
    if markers.labels().iter().all(|&l| l == 0) {
        return Err(ImgError::NoMarkers);
    }
    let w = img.width();
    let h = img.height();
    let mut labels = markers.clone();
    let mut queued = vec![false; w * h];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;

    let neighbors = |x: usize, y: usize| {
        let mut out = [(0usize, 0usize); 4];
        let mut n = 0;
        if x > 0 {
            out[n] = (x - 1, y);
            n += 1;
        }
        if x + 1 < w {
            out[n] = (x + 1, y);
            n += 1;
        }
        if y > 0 {
            out[n] = (x, y - 1);
            n += 1;
        }
        if y + 1 < h {
            out[n] = (x, y + 1);
            n += 1;
        }
        (out, n)
    };

    for y in 0..h {
        for x in 0..w {
            if labels.get(x, y) != 0 {
                let (nb, n) = neighbors(x, y);
                for &(nx, ny) in &nb[..n] {
                    if labels.get(nx, ny) == 0 && !queued[ny * w + nx] {
                        queued[ny * w + nx] = true;
                        heap.push(FloodEntry {
                            height: img.get(nx, ny),
                            seq,
                            x: nx,
                            y: ny,
                        });
                        seq += 1;
                    }
                }
            }
        }
    }

    while let Some(FloodEntry { x, y, .. }) = heap.pop() {
        if labels.get(x, y) != 0 {
            continue;
        }
        let (nb, n) = neighbors(x, y);
        let mut found: Option<u32> = None;
        let mut conflict = false;
        for &(nx, ny) in &nb[..n] {
            let l = labels.get(nx, ny);
            if l != 0 && l != BOUNDARY {
                match found {
                    None => found = Some(l),
                    Some(f) if f != l => conflict = true,
                    _ => {}
                }
            }
        }
        if conflict {
            labels.set(x, y, BOUNDARY);
            continue;
        }
        let Some(label) = found else {
            // Every labeled neighbor was boundary; this pixel is pinched
            // between basins.
            labels.set(x, y, BOUNDARY);
            continue;
        };
        labels.set(x, y, label);
        for &(nx, ny) in &nb[..n] {
            if labels.get(nx, ny) == 0 && !queued[ny * w + nx] {
                queued[ny * w + nx] = true;
                heap.push(FloodEntry {
                    height: img.get(nx, ny),
                    seq,
                    x: nx,
                    y: ny,
                });
                seq += 1;
            }
        }
    }

    let mut out = LabelMap::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let l = labels.get(x, y);
            out.set(x, y, if l == BOUNDARY { 0 } else { l });
        }
    }
    Ok(out)
}

/// Pixel connectivity for component labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// Labels connected components of nonzero pixels, 1-based in
/// first-encounter (row-major) order.
pub fn label_components(binary: &Raster, connectivity: Connectivity) -> LabelMap {
    let w = binary.width();
    let h = binary.height();
    let mut labels = LabelMap::new(w, h);
    let mut next = 0u32;
    let mut stack = Vec::new();
    for sy in 0..h {
        for sx in 0..w {
            if binary.get(sx, sy) == 0.0 || labels.get(sx, sy) != 0 {
                continue;
            }
            next += 1;
            labels.set(sx, sy, next);
            stack.push((sx, sy));
            while let Some((x, y)) = stack.pop() {
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        if matches!(connectivity, Connectivity::Four) && dx != 0 && dy != 0 {
                            continue;
                        }
                        let nx = x as isize + dx;
                        let ny = y as isize + dy;
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if binary.get(nx, ny) != 0.0 && labels.get(nx, ny) == 0 {
                            labels.set(nx, ny, next);
                            stack.push((nx, ny));
                        }
                    }
                }
            }
        }
    }
    labels
}

/// Tight boxes of the nonzero labels of a map, ordered by label. The far
/// corner is exclusive: `x2 = max pixel x + 1`.
pub fn region_boxes(labels: &LabelMap) -> Vec<BBox> {
    let n = labels.max_label();
    if n == 0 || n == BOUNDARY {
        // BOUNDARY never survives into public label maps, but be safe.
        return Vec::new();
    }
    let mut extents: Vec<Option<(usize, usize, usize, usize)>> = vec![None; n as usize];
    for y in 0..labels.height() {
        for x in 0..labels.width() {
            let l = labels.get(x, y);
            if l == 0 {
                continue;
            }
            let e = &mut extents[(l - 1) as usize];
            match e {
                None => *e = Some((x, y, x, y)),
                Some((x1, y1, x2, y2)) => {
                    *x1 = (*x1).min(x);
                    *y1 = (*y1).min(y);
                    *x2 = (*x2).max(x);
                    *y2 = (*y2).max(y);
                }
            }
        }
    }
    extents
        .into_iter()
        .flatten()
        .map(|(x1, y1, x2, y2)| {
            BBox::new(x1 as f64, y1 as f64, (x2 + 1) as f64, (y2 + 1) as f64)
        })
        .collect()
}

/// Boxes of the connected components of a binary raster.
pub fn connected_components(binary: &Raster, connectivity: Connectivity) -> Vec<BBox> {
    region_boxes(&label_components(binary, connectivity))
}

fn dilate3x3(binary: &Raster) -> Raster {
    let w = binary.width();
    let h = binary.height();
    let mut out = Raster::new(w, h);
    for y in 0..h {
        for x in 0..w {
            'search: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let nx = x as isize + dx;
                    let ny = y as isize + dy;
                    if nx >= 0
                        && ny >= 0
                        && nx < w as isize
                        && ny < h as isize
                        && binary.get(nx as usize, ny as usize) != 0.0
                    {
                        out.set(x, y, 1.0);
                        break 'search;
                    }
                }
            }
        }
    }
    out
}

fn erode3x3(binary: &Raster) -> Raster {
    let w = binary.width();
    let h = binary.height();
    let mut out = Raster::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut all = true;
            'search: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let nx = x as isize + dx;
                    let ny = y as isize + dy;
                    // outside the image counts as background
                    if nx < 0
                        || ny < 0
                        || nx >= w as isize
                        || ny >= h as isize
                        || binary.get(nx as usize, ny as usize) == 0.0
                    {
                        all = false;
                        break 'search;
                    }
                }
            }
            if all {
                out.set(x, y, 1.0);
            }
        }
    }
    out
}

/// Morphological closing with a 3x3 square: `iterations` dilations then
/// `iterations` erosions.
pub fn closing(binary: &Raster, iterations: usize) -> Raster {
    let mut cur = binary.clone();
    for _ in 0..iterations {
        cur = dilate3x3(&cur);
    }
    for _ in 0..iterations {
        cur = erode3x3(&cur);
    }
    cur
}

/// Fills holes: background regions not connected to the image border
/// become foreground.
pub fn fill_holes(binary: &Raster) -> Raster {
    let w = binary.width();
    let h = binary.height();
    let mut reachable = vec![false; w * h];
    let mut stack = Vec::new();
    let try_seed = |x: usize, y: usize, stack: &mut Vec<(usize, usize)>,
                    reachable: &mut Vec<bool>| {
        if binary.get(x, y) == 0.0 && !reachable[y * w + x] {
            reachable[y * w + x] = true;
            stack.push((x, y));
        }
    };
    for x in 0..w {
        try_seed(x, 0, &mut stack, &mut reachable);
        try_seed(x, h - 1, &mut stack, &mut reachable);
    }
    for y in 0..h {
        try_seed(0, y, &mut stack, &mut reachable);
        try_seed(w - 1, y, &mut stack, &mut reachable);
    }
    while let Some((x, y)) = stack.pop() {
        let visit = |nx: usize, ny: usize, stack: &mut Vec<(usize, usize)>,
                     reachable: &mut Vec<bool>| {
            if binary.get(nx, ny) == 0.0 && !reachable[ny * w + nx] {
                reachable[ny * w + nx] = true;
                stack.push((nx, ny));
            }
        };
        if x > 0 {
            visit(x - 1, y, &mut stack, &mut reachable);
        }
        if x + 1 < w {
            visit(x + 1, y, &mut stack, &mut reachable);
        }
        if y > 0 {
            visit(x, y - 1, &mut stack, &mut reachable);
        }
        if y + 1 < h {
            visit(x, y + 1, &mut stack, &mut reachable);
        }
    }
    let mut out = binary.clone();
    for y in 0..h {
        for x in 0..w {
            if binary.get(x, y) == 0.0 && !reachable[y * w + x] {
                out.set(x, y, 1.0);
            }
        }
    }
    out
}
