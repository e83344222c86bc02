//! Bounding-box arithmetic and the test-time-augmentation view algebra.
//!
//! Boxes use continuous pixel coordinates (x right, y down) with the far
//! corner exclusive, so `area = (x2 - x1) * (y2 - y1)` with no integer
//! off-by-one convention to track.

use serde::{Deserialize, Serialize};

/// Axis-aligned box in continuous pixel coordinates.
///
/// Invariant: `x1 < x2`, `y1 < y2` (strictly positive area), all
/// coordinates finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Creates a box, panicking if the corner ordering or finiteness
    /// invariant is violated. Use [`BBox::from_unsorted`] when the corner
    /// order is not known in advance.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        assert!(
            x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite(),
            "box coordinates must be finite"
        );
        assert!(x1 < x2 && y1 < y2, "degenerate box ({x1},{y1},{x2},{y2})");
        Self { x1, y1, x2, y2 }
    }

    /// Creates a box from two arbitrary opposite corners, sorting the
    /// coordinates so the invariant holds.
    pub fn from_unsorted(xa: f64, ya: f64, xb: f64, yb: f64) -> Self {
        Self::new(xa.min(xb), ya.min(yb), xa.max(xb), ya.max(yb))
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Intersection area with `other`; 0 when disjoint.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    /// Intersection over union, in `[0, 1]`.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }

    /// Intersects the box with the image rectangle `[0,width] x [0,height]`.
    /// Returns `None` when the clipped result has non-positive area.
    pub fn clip(&self, width: f64, height: f64) -> Option<BBox> {
        let x1 = self.x1.max(0.0);
        let y1 = self.y1.max(0.0);
        let x2 = self.x2.min(width);
        let y2 = self.y2.min(height);
        if x1 < x2 && y1 < y2 {
            Some(BBox { x1, y1, x2, y2 })
        } else {
            None
        }
    }
}

/// Intersection over union of two boxes; symmetric, 0 when disjoint.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

/// One scored, single-class detection.
///
/// `class_id` is always 0 here (one "cell" class); the field exists so the
/// annotation schema stays compatible with multi-class tooling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub class_id: u32,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64) -> Self {
        assert!(
            (0.0..=1.0).contains(&score),
            "score {score} outside [0, 1]"
        );
        Self {
            bbox,
            score,
            class_id: 0,
        }
    }
}

/// Flip component of a TTA view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flip {
    None,
    #[serde(rename = "h")]
    Horizontal,
    #[serde(rename = "v")]
    Vertical,
    #[serde(rename = "hv")]
    Both,
}

impl Flip {
    pub const ALL: [Flip; 4] = [Flip::None, Flip::Horizontal, Flip::Vertical, Flip::Both];
}

/// One test-time-augmentation view: a flip composed with uniform scaling.
///
/// The default set is 5 scales x 4 flips = 20 views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewTransform {
    pub flip: Flip,
    pub scale: f64,
}

/// Scales of the default view set.
pub const DEFAULT_SCALES: [f64; 5] = [0.8, 0.9, 1.0, 1.1, 1.2];

impl ViewTransform {
    pub fn new(flip: Flip, scale: f64) -> Self {
        assert!(scale > 0.0 && scale.is_finite(), "scale must be positive");
        Self { flip, scale }
    }

    /// The identity view (no flip, scale 1).
    pub fn identity() -> Self {
        Self {
            flip: Flip::None,
            scale: 1.0,
        }
    }

    /// The 20 default views: every flip at every default scale.
    pub fn default_views() -> Vec<ViewTransform> {
        let mut views = Vec::with_capacity(20);
        for &scale in &DEFAULT_SCALES {
            for &flip in &Flip::ALL {
                views.push(ViewTransform { flip, scale });
            }
        }
        views
    }

    /// Views for an arbitrary scale list (all four flips per scale).
    pub fn views_for_scales(scales: &[f64]) -> Vec<ViewTransform> {
        let mut views = Vec::with_capacity(scales.len() * 4);
        for &scale in scales {
            for &flip in &Flip::ALL {
                views.push(ViewTransform::new(flip, scale));
            }
        }
        views
    }
}

fn flip_box(b: &BBox, flip: Flip, width: f64, height: f64) -> BBox {
    match flip {
        Flip::None => *b,
        Flip::Horizontal => BBox::from_unsorted(width - b.x1, b.y1, width - b.x2, b.y2),
        Flip::Vertical => BBox::from_unsorted(b.x1, height - b.y1, b.x2, height - b.y2),
        Flip::Both => {
            BBox::from_unsorted(width - b.x1, height - b.y1, width - b.x2, height - b.y2)
        }
    }
}

/// Maps a box from the original frame into view coordinates.
///
/// The flip reflects within the original `width`/`height`; scaling then
/// multiplies all coordinates, so the view's nominal image size is
/// `(width * scale, height * scale)`.
pub fn apply_view(b: &BBox, v: &ViewTransform, width: f64, height: f64) -> BBox {
    let f = flip_box(b, v.flip, width, height);
    BBox::new(
        f.x1 * v.scale,
        f.y1 * v.scale,
        f.x2 * v.scale,
        f.y2 * v.scale,
    )
}

/// Maps a box from view coordinates back to the original frame.
/// `width`/`height` are the ORIGINAL image dimensions.
///
/// Exact inverse for flips; within 1e-9 relative for scales.
pub fn invert_view(b: &BBox, v: &ViewTransform, width: f64, height: f64) -> BBox {
    let unscaled = BBox::new(
        b.x1 / v.scale,
        b.y1 / v.scale,
        b.x2 / v.scale,
        b.y2 / v.scale,
    );
    flip_box(&unscaled, v.flip, width, height)
}
