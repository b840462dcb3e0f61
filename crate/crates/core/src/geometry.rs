//! Half-open pixel boxes on the square canvas.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `[x0, x1) × [y0, y1)` in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::contract(format!(
                "empty box [{x0}, {y0}, {x1}, {y1}]"
            )));
        }
        Ok(BBox { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    /// Center in continuous pixel coordinates.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.x0 + self.x1) as f64 / 2.0,
            (self.y0 + self.y1) as f64 / 2.0,
        )
    }

    pub fn within(&self, canvas: usize) -> bool {
        self.x1 <= canvas && self.y1 <= canvas
    }

    pub fn intersection_area(&self, other: &BBox) -> usize {
        let w = self.x1.min(other.x1).saturating_sub(self.x0.max(other.x0));
        let h = self.y1.min(other.y1).saturating_sub(self.y0.max(other.y0));
        w * h
    }

    pub fn to_array(&self) -> [usize; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Pixel extent of grid cell `(row, col)` when a canvas is split into
/// `grid × grid` cells. Remainder pixels go to the last row and column.
pub fn cell_box(row: usize, col: usize, grid: usize, canvas: usize) -> BBox {
    let edge = |i: usize| i * canvas / grid;
    BBox {
        x0: edge(col),
        y0: edge(row),
        x1: edge(col + 1),
        y1: edge(row + 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlapping_squares() {
        let a = BBox::new(0, 0, 2, 2).unwrap();
        let b = BBox::new(1, 1, 3, 3).unwrap();
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(iou(&a, &a), 1.0);
        let far = BBox::new(5, 5, 6, 6).unwrap();
        assert_eq!(iou(&a, &far), 0.0);
        let touching = BBox::new(2, 0, 4, 2).unwrap();
        assert_eq!(iou(&a, &touching), 0.0);
    }

    #[test]
    fn cells_tile_canvas() {
        let mut total = 0;
        for r in 0..7 {
            for c in 0..7 {
                total += cell_box(r, c, 7, 224).area();
            }
        }
        assert_eq!(total, 224 * 224);
        assert_eq!(cell_box(6, 6, 7, 224), BBox { x0: 192, y0: 192, x1: 224, y1: 224 });
        assert_eq!(cell_box(0, 0, 3, 10).width(), 3);
        assert_eq!(cell_box(0, 2, 3, 10).width(), 4);
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(BBox::new(3, 0, 3, 5).is_err());
    }
}
