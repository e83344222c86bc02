//! Separable Gaussian blur and 3x3 Sobel gradients, both with reflected
//! borders.

use super::{ImgError, Raster};

/// Normalized 1-D Gaussian kernel of odd size `k`, with the size-derived
/// sigma `0.3 * ((k - 1) * 0.5 - 1) + 0.8`.
pub fn gaussian_kernel(k: usize) -> Result<Vec<f64>, ImgError> {
    if k == 0 {
        return Err(ImgError::ZeroKernel);
    }
    if k.is_multiple_of(2) {
        return Err(ImgError::EvenKernel(k));
    }
    if k == 1 {
        return Ok(vec![1.0]);
    }
    let sigma = 0.3 * ((k - 1) as f64 * 0.5 - 1.0) + 0.8;
    let half = (k / 2) as isize;
    let mut w: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    Ok(w)
}

fn convolve_1d_rows(img: &Raster, kernel: &[f64]) -> Raster {
    let half = (kernel.len() / 2) as isize;
    let mut out = Raster::new(img.width(), img.height());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let mut acc = 0.0;
            for (j, &w) in kernel.iter().enumerate() {
                acc += w * img.get_reflect(x as isize + j as isize - half, y as isize);
            }
            out.set(x, y, acc);
        }
    }
    out
}

fn convolve_1d_cols(img: &Raster, kernel: &[f64]) -> Raster {
    let half = (kernel.len() / 2) as isize;
    let mut out = Raster::new(img.width(), img.height());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let mut acc = 0.0;
            for (j, &w) in kernel.iter().enumerate() {
                acc += w * img.get_reflect(x as isize, y as isize + j as isize - half);
            }
            out.set(x, y, acc);
        }
    }
    out
}

/// Separable Gaussian blur with kernel sizes `kx` (along x) and `ky`
/// (along y). Both must be odd; sigma follows the size rule of
/// [`gaussian_kernel`].
pub fn gaussian_blur(img: &Raster, kx: usize, ky: usize) -> Result<Raster, ImgError> {
    let wx = gaussian_kernel(kx)?;
    let wy = gaussian_kernel(ky)?;
    let h = convolve_1d_rows(img, &wx);
    Ok(convolve_1d_cols(&h, &wy))
}

const SOBEL_SMOOTH: [f64; 3] = [1.0, 2.0, 1.0];
const SOBEL_DIFF: [f64; 3] = [-1.0, 0.0, 1.0];

/// Standard 3x3 Sobel gradient pair `(gx, gy)` with reflected borders.
/// On the ramp `I(x, y) = x`, interior `gx` is 8 (the weight sum).
pub fn sobel_gradients(img: &Raster) -> (Raster, Raster) {
    let mut gx = Raster::new(img.width(), img.height());
    let mut gy = Raster::new(img.width(), img.height());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let mut ax = 0.0;
            let mut ay = 0.0;
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let v = img.get_reflect(x as isize + dx, y as isize + dy);
                    ax += v
                        * SOBEL_DIFF[(dx + 1) as usize]
                        * SOBEL_SMOOTH[(dy + 1) as usize];
                    ay += v
                        * SOBEL_SMOOTH[(dx + 1) as usize]
                        * SOBEL_DIFF[(dy + 1) as usize];
                }
            }
            gx.set(x, y, ax);
            gy.set(x, y, ay);
        }
    }
    (gx, gy)
}
