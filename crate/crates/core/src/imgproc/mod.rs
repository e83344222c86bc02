//! Raster primitives and the classical weak-label generators: Gaussian
//! blur, Sobel gradients, Canny edges, Otsu thresholding, exact Euclidean
//! distance transform, marker-based watershed, connected components, and
//! the Circle Hough Transform.
//!
//! Everything here is deterministic; there is no randomness in any
//! operation.

mod edges;
mod filter;
mod hough;
mod segment;
mod weak;

pub use edges::canny_edges;
pub use filter::{gaussian_blur, gaussian_kernel, sobel_gradients};
pub use hough::{circle_hough, render_circle_outline, Circle};
pub use segment::{
    closing, connected_components, distance_transform, fill_holes, label_components,
    otsu_threshold, region_boxes, watershed, Connectivity,
};
pub use weak::{weak_label_pipeline, CellCategory, WeakLabelParams};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImgError {
    #[error("kernel size {0} must be odd")]
    EvenKernel(usize),
    #[error("kernel size must be >= 1")]
    ZeroKernel,
    #[error("raster shapes differ: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("watershed requires at least one nonzero marker")]
    NoMarkers,
}

/// 2-D grayscale intensity grid, row-major.
///
/// Stored as `f64` for the math; 8-bit quantization happens only at PGM
/// I/O boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Raster {
    /// All-zero raster.
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1, "raster must be at least 1x1");
        Self {
            width,
            height,
            pixels: vec![0.0; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel count mismatch");
        assert!(pixels.iter().all(|p| p.is_finite()), "intensities must be finite");
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Self {
        Self::from_pixels(width, height, bytes.iter().map(|&b| f64::from(b)).collect())
    }

    /// Constant-valued raster.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::from_pixels(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        debug_assert!(x < self.width && y < self.height);
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        debug_assert!(x < self.width && y < self.height);
        self.pixels[y * self.width + x] = v;
    }

    /// Read with half-sample symmetric reflection at the borders
    /// (`-1 -> 0`, `-2 -> 1`, `w -> w-1`, ...). This border rule keeps a
    /// normalized symmetric kernel mass-preserving.
    #[inline]
    pub fn get_reflect(&self, x: isize, y: isize) -> f64 {
        let xr = reflect_index(x, self.width);
        let yr = reflect_index(y, self.height);
        self.pixels[yr * self.width + xr]
    }

    /// Applies `f` to every pixel, returning a new raster.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| f(p)).collect(),
        }
    }

    /// Quantizes to 8 bits, clamping to [0, 255] and rounding half away
    /// from zero. The only place intensities are clamped.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&p| p.clamp(0.0, 255.0).round() as u8)
            .collect()
    }

    /// Sum of all intensities.
    pub fn sum(&self) -> f64 {
        self.pixels.iter().sum()
    }

    /// Rectangular crop; `x0 + w <= width`, `y0 + h <= height`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Raster {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        let mut pixels = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            pixels.extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x0 + w]);
        }
        Raster::from_pixels(w, h, pixels)
    }
}

#[inline]
fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    // A couple of bounces suffice for kernels narrower than the image; loop
    // anyway so tiny rasters stay correct.
    loop {
        if i < 0 {
            i = -1 - i;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Integer region labels, same shape as the source raster. 0 is
/// background or watershed boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn from_labels(width: usize, height: usize, labels: Vec<u32>) -> Self {
        assert_eq!(labels.len(), width * height, "label count mismatch");
        Self {
            width,
            height,
            labels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u32) {
        self.labels[y * self.width + x] = v;
    }

    /// Largest label present (0 when empty).
    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }
}
