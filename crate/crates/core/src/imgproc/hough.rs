//! Circle Hough Transform on a binary edge map.

use super::Raster;
use crate::geometry::BBox;

/// A detected circle with its accumulator support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
    pub votes: f64,
}

impl Circle {
    /// Axis-aligned box around the circle (`cx +- r`, `cy +- r`).
    pub fn to_bbox(&self) -> BBox {
        BBox::new(
            self.cx - self.r,
            self.cy - self.r,
            self.cx + self.r,
            self.cy + self.r,
        )
    }
}

/// Angle samples for one radius: at least 64, and enough that consecutive
/// samples move about one pixel along the circumference.
fn angle_samples(r: usize) -> usize {
    (std::f64::consts::TAU * r as f64).ceil().max(64.0) as usize
}

/// Votes a 3-D (cx, cy, r) accumulator from the edge pixels and returns
/// the surviving peaks.
///
/// A full circle of radius r deposits about `angle_samples(r)` votes on its
/// center cell, so a peak is kept when its votes reach
/// `vote_frac * angle_samples(r)`. Peaks are 2-D local maxima in their
/// radius plane; after sorting by votes (ties toward smaller radius, then
/// scan order) any peak closer than `r_min` to an accepted stronger one is
/// suppressed. Output is strongest-first.
pub fn circle_hough(edges: &Raster, r_min: usize, r_max: usize, vote_frac: f64) -> Vec<Circle> {
    assert!(r_min >= 1 && r_min <= r_max, "need 1 <= r_min <= r_max");
    assert!(vote_frac > 0.0, "vote_frac must be positive");
    let w = edges.width();
    let h = edges.height();

    let edge_pixels: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| edges.get(x, y) != 0.0)
        .collect();
    if edge_pixels.is_empty() {
        return Vec::new();
    }

    struct Candidate {
        x: usize,
        y: usize,
        r: usize,
        votes: u32,
    }
    let mut candidates: Vec<Candidate> = Vec::new();
    let mut plane = vec![0u32; w * h];

    for r in r_min..=r_max {
        plane.fill(0);
        let n_angles = angle_samples(r);
        // Precompute the center offsets for this radius, deduplicated so a
        // single edge pixel votes each cell at most once per angle step.
        let offsets: Vec<(isize, isize)> = (0..n_angles)
            .map(|k| {
                let theta = std::f64::consts::TAU * k as f64 / n_angles as f64;
                (
                    (r as f64 * theta.cos()).round() as isize,
                    (r as f64 * theta.sin()).round() as isize,
                )
            })
            .collect();
        for &(ex, ey) in &edge_pixels {
            for &(dx, dy) in &offsets {
                let cx = ex as isize - dx;
                let cy = ey as isize - dy;
                if cx >= 0 && cy >= 0 && cx < w as isize && cy < h as isize {
                    plane[cy as usize * w + cx as usize] += 1;
                }
            }
        }
        let min_votes = (vote_frac * n_angles as f64).ceil() as u32;
        for y in 0..h {
            for x in 0..w {
                let v = plane[y * w + x];
                if v < min_votes.max(1) {
                    continue;
                }
                // 2-D local maximum within the radius plane
                let mut is_max = true;
                'nb: for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let nx = x as isize + dx;
                        let ny = y as isize + dy;
                        if nx >= 0
                            && ny >= 0
                            && nx < w as isize
                            && ny < h as isize
                            && plane[ny as usize * w + nx as usize] > v
                        {
                            is_max = false;
                            break 'nb;
                        }
                    }
                }
                if is_max {
                    candidates.push(Candidate { x, y, r, votes: v });
                }
            }
        }
    }

    candidates.sort_by(|a, b| {
        b.votes
            .cmp(&a.votes)
            .then(a.r.cmp(&b.r))
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });

    let mut out: Vec<Circle> = Vec::new();
    let min_sep2 = (r_min * r_min) as f64;
    for c in candidates {
        let cx = c.x as f64;
        let cy = c.y as f64;
        let too_close = out.iter().any(|kept| {
            let dx = kept.cx - cx;
            let dy = kept.cy - cy;
            dx * dx + dy * dy < min_sep2
        });
        if !too_close {
            out.push(Circle {
                cx,
                cy,
                r: c.r as f64,
                votes: f64::from(c.votes),
            });
        }
    }
    out
}

/// Renders the outline of a circle into a binary raster (test and fixture
/// helper: the output doubles as an edge map).
pub fn render_circle_outline(img: &mut Raster, cx: f64, cy: f64, r: f64) {
    let steps = ((std::f64::consts::TAU * r).ceil() as usize * 4).max(64);
    for k in 0..steps {
        let theta = std::f64::consts::TAU * k as f64 / steps as f64;
        let x = (cx + r * theta.cos()).round();
        let y = (cy + r * theta.sin()).round();
        if x >= 0.0 && y >= 0.0 && (x as usize) < img.width() && (y as usize) < img.height() {
            img.set(x as usize, y as usize, 1.0);
        }
    }
}
