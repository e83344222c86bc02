//! Canny edge detection: Sobel magnitude, non-maximum suppression over
//! four quantized directions, then hysteresis.

use super::{sobel_gradients, Raster};

/// Binary edge map (pixels in {0, 1}).
///
/// Requires `0 <= low_thr <= high_thr`; thresholds apply to the Sobel
/// gradient magnitude. No smoothing is applied here; blur beforehand if
/// the input is noisy.
pub fn canny_edges(img: &Raster, low_thr: f64, high_thr: f64) -> Raster {
    assert!(
        0.0 <= low_thr && low_thr <= high_thr,
        "thresholds must satisfy 0 <= low <= high"
    );
    let (gx, gy) = sobel_gradients(img);
    let w = img.width();
    let h = img.height();

    let mut mag = Raster::new(w, h);
    for y in 0..h {
        for x in 0..w {
            mag.set(x, y, gx.get(x, y).hypot(gy.get(x, y)));
        }
    }

    // Non-maximum suppression along the quantized gradient direction.
    let mut thin = Raster::new(w, h);
    if w >= 3 && h >= 3 {
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let m = mag.get(x, y);
                if m == 0.0 {
                    continue;
                }
                let dx = gx.get(x, y);
                let dy = gy.get(x, y);
                let mut angle = dy.atan2(dx).to_degrees();
                if angle < 0.0 {
                    angle += 180.0;
                }
                let (n1, n2) = if !(22.5..157.5).contains(&angle) {
                    (mag.get(x - 1, y), mag.get(x + 1, y))
                } else if angle < 67.5 {
                    (mag.get(x + 1, y + 1), mag.get(x - 1, y - 1))
                } else if angle < 112.5 {
                    (mag.get(x, y - 1), mag.get(x, y + 1))
                } else {
                    (mag.get(x - 1, y + 1), mag.get(x + 1, y - 1))
                };
                // strict against the first neighbor so an exact-tie plateau
                // (perfect two-valued step) keeps exactly one pixel
                if m > n1 && m >= n2 {
                    thin.set(x, y, m);
                }
            }
        }
    }

    // Hysteresis: grow from strong pixels through weak ones (8-connected).
    let mut out = Raster::new(w, h);
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if thin.get(x, y) >= high_thr && out.get(x, y) == 0.0 {
                out.set(x, y, 1.0);
                stack.push((x, y));
                while let Some((cx, cy)) = stack.pop() {
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            if dx == 0 && dy == 0 {
                                continue;
                            }
                            let nx = cx as isize + dx;
                            let ny = cy as isize + dy;
                            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                                continue;
                            }
                            let (nx, ny) = (nx as usize, ny as usize);
                            if thin.get(nx, ny) >= low_thr && out.get(nx, ny) == 0.0 {
                                out.set(nx, ny, 1.0);
                                stack.push((nx, ny));
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_no_edges() {
        let img = Raster::filled(16, 16, 77.0);
        let out = canny_edges(&img, 50.0, 100.0);
        assert!(out.pixels().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn vertical_step_single_pixel_line() {
        // step at x = 8: 0 for x < 8, 200 for x >= 8
        let mut img = Raster::new(16, 16);
        for y in 0..16 {
            for x in 8..16 {
                img.set(x, y, 200.0);
            }
        }
        let out = canny_edges(&img, 100.0, 300.0);
        for y in 2..14 {
            let edges_in_row: Vec<usize> =
                (0..16).filter(|&x| out.get(x, y) == 1.0).collect();
            assert_eq!(edges_in_row.len(), 1, "row {y}: {edges_in_row:?}");
            let x = edges_in_row[0];
            assert!(x == 7 || x == 8, "edge at x = {x}");
        }
    }

    #[test]
    fn disk_outline_stays_near_circle() {
        // dark disk on a bright background
        let (cx, cy, r) = (16.0, 16.0, 8.0);
        let mut img = Raster::filled(33, 33, 200.0);
        for y in 0..33 {
            for x in 0..33 {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                if d <= r {
                    img.set(x, y, 20.0);
                }
            }
        }
        let out = canny_edges(&img, 100.0, 300.0);
        let mut count = 0;
        for y in 0..33 {
            for x in 0..33 {
                if out.get(x, y) == 1.0 {
                    count += 1;
                    let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                    assert!((d - r).abs() <= 1.5, "edge pixel at distance {d}");
                }
            }
        }
        // a closed-ish ring has at least the circumference in pixels
        assert!(count as f64 >= 2.0 * std::f64::consts::PI * r * 0.8, "count = {count}");
    }
}
