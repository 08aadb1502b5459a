use crate::error::{Error, Result};
use crate::image::BinaryMask;

/// Axis-aligned box in pixel coordinates, half-open: `[x_min, x_max) x [y_min, y_max)`.
/// Pixel `(x, y)` covers `[x, x + 1) x [y, y + 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BBox {
    pub x_min: f32,
    pub y_min: f32,
    pub x_max: f32,
    pub y_max: f32,
}

impl BBox {
    pub fn new(x_min: f32, y_min: f32, x_max: f32, y_max: f32) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("bounding box coordinate".into()));
        }
        if !(x_min < x_max && y_min < y_max) {
            return Err(Error::invalid(alloc::format!("degenerate box {:?}", b)));
        }
        Ok(b)
    }

    /// The whole `width x height` image.
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x_min: 0.0,
            y_min: 0.0,
            x_max: width as f32,
            y_max: height as f32,
        }
    }

    #[inline]
    pub fn width(&self) -> f32 {
        self.x_max - self.x_min
    }

    #[inline]
    pub fn height(&self) -> f32 {
        self.y_max - self.y_min
    }

    #[inline]
    pub fn center(&self) -> (f32, f32) {
        (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    pub fn area(&self) -> f32 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn from_center(cx: f32, cy: f32, w: f32, h: f32) -> Self {
        Self {
            x_min: cx - 0.5 * w,
            y_min: cy - 0.5 * h,
            x_max: cx + 0.5 * w,
            y_max: cy + 0.5 * h,
        }
    }

    /// Intersection with the image; `None` when nothing is left.
    pub fn clamp_to(&self, width: usize, height: usize) -> Option<Self> {
        let b = Self {
            x_min: self.x_min.max(0.0),
            y_min: self.y_min.max(0.0),
            x_max: self.x_max.min(width as f32),
            y_max: self.y_max.min(height as f32),
        };
        (b.x_min < b.x_max && b.y_min < b.y_max).then_some(b)
    }

    /// Whether the center of pixel `(x, y)` lies inside the box.
    #[inline]
    pub fn contains_pixel(&self, x: usize, y: usize) -> bool {
        let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
        px >= self.x_min && px < self.x_max && py >= self.y_min && py < self.y_max
    }

    /// Intersection-over-union of two boxes.
    pub fn iou(&self, other: &BBox) -> f32 {
        let iw = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let ih = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

/// Tight box around all foreground pixels, `None` when fewer than `min_area`
/// pixels are set (an empty mask is always `None`).
pub fn tight_bbox(mask: &BinaryMask, min_area: usize) -> Option<BBox> {
    let (w, h) = mask.dims();
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    let mut area = 0usize;
    for y in 0..h {
        let row = &mask.data()[y * w..(y + 1) * w];
        for (x, _) in row.iter().enumerate().filter(|(_, &v)| v) {
            area += 1;
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if area == 0 || area < min_area {
        return None;
    }
    Some(BBox {
        x_min: x0 as f32,
        y_min: y0 as f32,
        x_max: (x1 + 1) as f32,
        y_max: (y1 + 1) as f32,
    })
}

/// Scale width and height by `factor` about the center, then clamp to the image.
pub fn enlarge(b: &BBox, factor: f32, width: usize, height: usize) -> BBox {
    let (cx, cy) = b.center();
    let grown = BBox::from_center(cx, cy, b.width() * factor, b.height() * factor);
    grown.clamp_to(width, height).unwrap_or_else(|| {
        // A box entirely outside the image collapses onto the nearest border pixel.
        let x = cx.clamp(0.0, width as f32 - 1.0);
        let y = cy.clamp(0.0, height as f32 - 1.0);
        BBox {
            x_min: libm::floorf(x),
            y_min: libm::floorf(y),
            x_max: libm::floorf(x) + 1.0,
            y_max: libm::floorf(y) + 1.0,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Grid;

    #[test]
    fn single_pixel_box() {
        let mut m = Grid::new(10, 10, false);
        m.set(5, 3, true);
        let b = tight_bbox(&m, 1).unwrap();
        assert_eq!((b.x_min, b.x_max, b.y_min, b.y_max), (5.0, 6.0, 3.0, 4.0));
    }

    #[test]
    fn empty_and_small_masks_have_no_box() {
        let mut m = Grid::new(10, 10, false);
        assert!(tight_bbox(&m, 0).is_none());
        m.set(1, 1, true);
        assert!(tight_bbox(&m, 2).is_none());
        assert!(tight_bbox(&m, 1).is_some());
    }

    #[test]
    fn enlarge_worked_example() {
        let b = BBox::new(0.0, 0.0, 8.0, 8.0).unwrap();
        let e = enlarge(&b, 1.25, 100, 100);
        // width 10 about center 4 is [-1, 9), clamped to [0, 9).
        assert_eq!((e.x_min, e.x_max, e.y_min, e.y_max), (0.0, 9.0, 0.0, 9.0));
        assert_eq!(enlarge(&b, 1.0, 100, 100), b);
    }

    #[test]
    fn enlarged_boxes_stay_inside_the_image() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let x = rng.gen_range(-30.0f32..90.0);
            let y = rng.gen_range(-30.0f32..90.0);
            let b = BBox::new(x, y, x + rng.gen_range(0.5..60.0), y + rng.gen_range(0.5..60.0)).unwrap();
            let e = enlarge(&b, 1.25, 64, 48);
            assert!(e.x_min >= 0.0 && e.y_min >= 0.0 && e.x_max <= 64.0 && e.y_max <= 48.0, "{b:?} -> {e:?}");
            assert!(e.width() > 0.0 && e.height() > 0.0);
        }
    }

    #[test]
    fn degenerate_boxes_are_rejected() {
        assert!(BBox::new(1.0, 0.0, 1.0, 2.0).is_err());
        assert!(BBox::new(0.0, 0.0, f32::NAN, 2.0).is_err());
    }
}
