//! Seamless cloning with mixed gradients: paste pseudo-labeled cell crops
//! onto a Gaussian-blurred copy of the frame by solving the discrete
//! Poisson equation on each pasted region.
//!
//! Gradients use forward differences and the divergence their backward
//! adjoint, so `div(grad f) = laplacian f` holds exactly in exact
//! arithmetic and the residual check below is meaningful.

use thiserror::Error;

use crate::geometry::Detection;
use crate::imgproc::{gaussian_blur, ImgError, Raster};

#[derive(Debug, Error)]
pub enum CloneError {
    #[error("mask shape {0}x{1} does not match source {2}x{3}")]
    MaskShape(usize, usize, usize, usize),
    #[error("translated mask leaves the target interior at target pixel ({0}, {1})")]
    OutsideInterior(i64, i64),
    #[error("mask pixel ({0}, {1}) touches the source border (1 px margin required)")]
    MaskTouchesSourceBorder(usize, usize),
    #[error("mask is empty")]
    EmptyMask,
    #[error("solver did not converge: residual {residual} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },
    #[error(transparent)]
    Image(#[from] ImgError),
    #[error("cloning box {index} failed: {source}")]
    BoxFailed {
        index: usize,
        #[source]
        source: Box<CloneError>,
    },
}

/// Guidance selection: pure source gradients, or per pixel the stronger of
/// source and target gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloneMode {
    Normal,
    Mixed,
}

/// One cloning job: paste `source` pixels selected by `mask` into `target`
/// at `offset` (translation from source to target coordinates).
///
/// Mask-on pixels must sit >= 1 px inside both rasters: inside the target
/// so the Dirichlet boundary ring exists, and inside the source so every
/// gradient the guidance needs is backed by real data.
#[derive(Debug, Clone)]
pub struct CloneRequest {
    pub target: Raster,
    pub source: Raster,
    pub mask: Raster,
    pub offset: (i64, i64),
    pub mode: CloneMode,
}

impl CloneRequest {
    fn validate(&self) -> Result<(), CloneError> {
        if self.mask.width() != self.source.width() || self.mask.height() != self.source.height()
        {
            return Err(CloneError::MaskShape(
                self.mask.width(),
                self.mask.height(),
                self.source.width(),
                self.source.height(),
            ));
        }
        let (dx, dy) = self.offset;
        let tw = self.target.width() as i64;
        let th = self.target.height() as i64;
        let mut any = false;
        for y in 0..self.mask.height() {
            for x in 0..self.mask.width() {
                if self.mask.get(x, y) != 0.0 {
                    any = true;
                    if x < 1 || y < 1 || x + 1 >= self.mask.width() || y + 1 >= self.mask.height()
                    {
                        return Err(CloneError::MaskTouchesSourceBorder(x, y));
                    }
                    let tx = x as i64 + dx;
                    let ty = y as i64 + dy;
                    if tx < 1 || ty < 1 || tx >= tw - 1 || ty >= th - 1 {
                        return Err(CloneError::OutsideInterior(tx, ty));
                    }
                }
            }
        }
        if !any {
            return Err(CloneError::EmptyMask);
        }
        Ok(())
    }

    /// True when the target pixel `(tx, ty)` lies in the clone region.
    fn in_region(&self, tx: i64, ty: i64) -> bool {
        let sx = tx - self.offset.0;
        let sy = ty - self.offset.1;
        sx >= 0
            && sy >= 0
            && (sx as usize) < self.mask.width()
            && (sy as usize) < self.mask.height()
            && self.mask.get(sx as usize, sy as usize) != 0.0
    }
}

/// Forward-difference gradient pair of `img` at `(x, y)`. The request
/// invariants guarantee all reads are in bounds wherever the guidance is
/// evaluated.
#[inline]
fn fwd_grad(img: &Raster, x: i64, y: i64) -> (f64, f64) {
    let (x, y) = (x as usize, y as usize);
    let v = img.get(x, y);
    (img.get(x + 1, y) - v, img.get(x, y + 1) - v)
}

/// Guidance field `(vx, vy)` in target coordinates.
///
/// Normal mode copies the source gradients; mixed mode keeps, per pixel,
/// whichever of the source and target gradient pairs has the larger
/// 2-vector norm. The field is populated wherever the divergence of a
/// region pixel will need it (the region plus one pixel to the left/top)
/// and zero elsewhere.
pub fn guidance_field(req: &CloneRequest) -> (Raster, Raster) {
    let tw = req.target.width();
    let th = req.target.height();
    let mut vx = Raster::new(tw, th);
    let mut vy = Raster::new(tw, th);
    let (dx, dy) = req.offset;
    for ty in 0..th as i64 {
        for tx in 0..tw as i64 {
            // needed when this pixel or its right/bottom neighbor is in region
            if !(req.in_region(tx, ty) || req.in_region(tx + 1, ty) || req.in_region(tx, ty + 1))
            {
                continue;
            }
            let (gsx, gsy) = fwd_grad(&req.source, tx - dx, ty - dy);
            let (g_x, g_y) = match req.mode {
                CloneMode::Normal => (gsx, gsy),
                CloneMode::Mixed => {
                    let (gtx, gty) = fwd_grad(&req.target, tx, ty);
                    if gtx * gtx + gty * gty > gsx * gsx + gsy * gsy {
                        (gtx, gty)
                    } else {
                        (gsx, gsy)
                    }
                }
            };
            vx.set(tx as usize, ty as usize, g_x);
            vy.set(tx as usize, ty as usize, g_y);
        }
    }
    (vx, vy)
}

/// Divergence of the guidance at a region pixel: backward difference of
/// the forward-difference field.
#[inline]
fn divergence(vx: &Raster, vy: &Raster, x: usize, y: usize) -> f64 {
    let mut d = vx.get(x, y) + vy.get(x, y);
    if x > 0 {
        d -= vx.get(x - 1, y);
    }
    if y > 0 {
        d -= vy.get(x, y - 1);
    }
    d
}

/// Residual tolerance (intensity units, infinity norm).
pub const SOLVE_TOLERANCE: f64 = 1e-4;

/// Solves `laplacian f = div v` on the clone region with Dirichlet data
/// from the target, by conjugate gradient on the 5-point system.
///
/// Returns the target with the region replaced by the solution. Values
/// are NOT clamped here; quantization to [0, 255] happens at raster
/// write-out.
pub fn poisson_solve(req: &CloneRequest) -> Result<Raster, CloneError> {
    req.validate()?;
    let tw = req.target.width();
    let th = req.target.height();
    let (vx, vy) = guidance_field(req);

    // Region indexing in row-major scan order.
    let mut index = vec![usize::MAX; tw * th];
    let mut cells: Vec<(usize, usize)> = Vec::new();
    for y in 0..th {
        for x in 0..tw {
            if req.in_region(x as i64, y as i64) {
                index[y * tw + x] = cells.len();
                cells.push((x, y));
            }
        }
    }
    let n = cells.len();

    // b = sum of boundary Dirichlet values - div v
    let mut b = vec![0.0f64; n];
    for (i, &(x, y)) in cells.iter().enumerate() {
        let mut rhs = -divergence(&vx, &vy, x, y);
        // 1-px interior margin guarantees all 4 neighbors exist
        for (nx, ny) in [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)] {
            if index[ny * tw + nx] == usize::MAX {
                rhs += req.target.get(nx, ny);
            }
        }
        b[i] = rhs;
    }

    // A x = 4 x(p) - sum of in-region neighbors
    let apply = |x_vec: &[f64], out: &mut [f64]| {
        for (i, &(x, y)) in cells.iter().enumerate() {
            let mut acc = 4.0 * x_vec[i];
            for (nx, ny) in [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)] {
                let j = index[ny * tw + nx];
                if j != usize::MAX {
                    acc -= x_vec[j];
                }
            }
            out[i] = acc;
        }
    };
    let inf_norm = |v: &[f64]| v.iter().fold(0.0f64, |a, &x| a.max(x.abs()));

    // Warm start from the current target content.
    let mut x = vec![0.0f64; n];
    for (i, &(px, py)) in cells.iter().enumerate() {
        x[i] = req.target.get(px, py);
    }
    let mut ax = vec![0.0f64; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, axi)| bi - axi).collect();
    let mut p = r.clone();
    let mut rs: f64 = r.iter().map(|ri| ri * ri).sum();

    let max_iter = 10 * n;
    let mut iterations = 0usize;
    let mut converged = inf_norm(&r) < SOLVE_TOLERANCE;
    let mut ap = vec![0.0f64; n];
    while !converged && iterations < max_iter {
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(pi, api)| pi * api).sum();
        if pap.abs() < 1e-300 {
            break;
        }
        let alpha = rs / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        if inf_norm(&r) < SOLVE_TOLERANCE {
            // Guard against recurrence drift: confirm with the true residual.
            apply(&x, &mut ax);
            for i in 0..n {
                r[i] = b[i] - ax[i];
            }
            rs = r.iter().map(|ri| ri * ri).sum();
            if inf_norm(&r) < SOLVE_TOLERANCE {
                converged = true;
                break;
            }
            p.copy_from_slice(&r);
            continue;
        }
        let rs_new: f64 = r.iter().map(|ri| ri * ri).sum();
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    if !converged {
        apply(&x, &mut ax);
        let res = inf_norm(
            &b.iter()
                .zip(&ax)
                .map(|(bi, axi)| bi - axi)
                .collect::<Vec<_>>(),
        );
        if res >= SOLVE_TOLERANCE {
            return Err(CloneError::NonConvergence {
                residual: res,
                iterations,
            });
        }
    }

    let mut out = req.target.clone();
    for (i, &(px, py)) in cells.iter().enumerate() {
        out.set(px, py, x[i]);
    }
    Ok(out)
}

/// Background-blur strength for synthetic-image generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlurKind {
    Weak,
    Strong,
}

/// Blur kind plus its concrete separable kernel sizes.
///
/// Weak is (21, 21). Strong is (13, 33): the nominal (12, 32) rounded up
/// to odd sizes, since the separable convolution needs a center tap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BlurStrength {
    pub kind: BlurKind,
    pub kernel: (usize, usize),
}

impl BlurStrength {
    pub fn weak() -> Self {
        Self {
            kind: BlurKind::Weak,
            kernel: (21, 21),
        }
    }

    pub fn strong() -> Self {
        Self {
            kind: BlurKind::Strong,
            kernel: (13, 33),
        }
    }

    pub fn from_kind(kind: BlurKind) -> Self {
        match kind {
            BlurKind::Weak => Self::weak(),
            BlurKind::Strong => Self::strong(),
        }
    }
}

/// Builds the synthetic-like frame: blur the whole image, then seamlessly
/// clone every annotated cell (expanded by `margin_px`, rectangular mask,
/// mixed gradients) from the original back onto the blurred copy.
///
/// Boxes are processed in descending area so smaller cells pasted later
/// stay intact where regions overlap. With no boxes the plain blurred
/// image is returned. Pixels outside every expanded box are exactly the
/// blurred image.
pub fn compose_synthetic(
    img: &Raster,
    boxes: &[Detection],
    blur: &BlurStrength,
    margin_px: usize,
) -> Result<Raster, CloneError> {
    let mut target = gaussian_blur(img, blur.kernel.0, blur.kernel.1)?;
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| boxes[j].bbox.area().total_cmp(&boxes[i].bbox.area()));

    let w = img.width() as i64;
    let h = img.height() as i64;
    let m = margin_px as i64;
    for &bi in &order {
        let b = &boxes[bi].bbox;
        // Expand by the margin and clamp into the interior so the Dirichlet
        // ring stays inside the frame.
        let x0 = ((b.x1.floor() as i64) - m).max(1);
        let y0 = ((b.y1.floor() as i64) - m).max(1);
        let x1 = ((b.x2.ceil() as i64) + m).min(w - 1);
        let y1 = ((b.y2.ceil() as i64) + m).min(h - 1);
        if x0 >= x1 || y0 >= y1 {
            continue;
        }
        let (rw, rh) = ((x1 - x0) as usize, (y1 - y0) as usize);
        // Crop one extra ring so the guidance gradients at the region rim
        // are backed by real image data; the mask keeps that ring off.
        let source = img.crop(x0 as usize - 1, y0 as usize - 1, rw + 2, rh + 2);
        let mut mask = Raster::new(rw + 2, rh + 2);
        for my in 1..=rh {
            for mx in 1..=rw {
                mask.set(mx, my, 1.0);
            }
        }
        let req = CloneRequest {
            target,
            source,
            mask,
            offset: (x0 - 1, y0 - 1),
            mode: CloneMode::Mixed,
        };
        target = poisson_solve(&req).map_err(|e| CloneError::BoxFailed {
            index: bi,
            source: Box::new(e),
        })?;
    }
    Ok(target)
}
