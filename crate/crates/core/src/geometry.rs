//! Patch grid geometry and pixel rectangles.

use serde::{Deserialize, Serialize};

use crate::error::{LaserError, Result};

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> u32 {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> u32 {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    /// Integer pixel center (floor of the midpoint).
    pub fn center(&self) -> (u32, u32) {
        ((self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2)
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn intersect(&self, other: &PixelRect) -> Option<PixelRect> {
        let r = PixelRect::new(
            self.x0.max(other.x0),
            self.y0.max(other.y0),
            self.x1.min(other.x1),
            self.y1.min(other.y1),
        );
        (r.x0 < r.x1 && r.y0 < r.y1).then_some(r)
    }
}

/// An `rows × cols` patch grid laid over an image.
///
/// Patches are `image_width / cols` by `image_height / rows` pixels; the last
/// column and row absorb any remainder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct GridGeometry {
    rows: u32,
    cols: u32,
    image_width: u32,
    image_height: u32,
}

#[derive(Deserialize)]
struct RawGrid {
    rows: u32,
    cols: u32,
    image_width: u32,
    image_height: u32,
}

impl TryFrom<RawGrid> for GridGeometry {
    type Error = LaserError;

    fn try_from(r: RawGrid) -> Result<Self> {
        GridGeometry::new(r.rows, r.cols, r.image_width, r.image_height)
    }
}

impl GridGeometry {
    pub fn new(rows: u32, cols: u32, image_width: u32, image_height: u32) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(LaserError::Geometry(format!("grid {rows}x{cols} must be non-empty")));
        }
        if image_width / cols == 0 || image_height / rows == 0 {
            return Err(LaserError::Geometry(format!(
                "image {image_width}x{image_height} too small for a {rows}x{cols} grid"
            )));
        }
        Ok(Self { rows, cols, image_width, image_height })
    }

    pub fn rows(&self) -> u32 {
        self.rows
    }

    pub fn cols(&self) -> u32 {
        self.cols
    }

    pub fn image_width(&self) -> u32 {
        self.image_width
    }

    pub fn image_height(&self) -> u32 {
        self.image_height
    }

    /// Total patch count `P = rows · cols`.
    pub fn patch_count(&self) -> usize {
        self.rows as usize * self.cols as usize
    }

    pub fn patch_width(&self) -> u32 {
        self.image_width / self.cols
    }

    pub fn patch_height(&self) -> u32 {
        self.image_height / self.rows
    }

    /// Row-major index of `(row, col)`.
    pub fn index_of(&self, row: u32, col: u32) -> usize {
        row as usize * self.cols as usize + col as usize
    }

    pub fn row_col(&self, index: usize) -> Result<(u32, u32)> {
        if index >= self.patch_count() {
            return Err(LaserError::Range { what: "patch", index, limit: self.patch_count() });
        }
        let cols = self.cols as usize;
        Ok(((index / cols) as u32, (index % cols) as u32))
    }

    /// Pixel rectangle covered by the patch at `index`.
    pub fn patch_rect(&self, index: usize) -> Result<PixelRect> {
        let (row, col) = self.row_col(index)?;
        let (pw, ph) = (self.patch_width(), self.patch_height());
        let x0 = col * pw;
        let y0 = row * ph;
        let x1 = if col + 1 == self.cols { self.image_width } else { x0 + pw };
        let y1 = if row + 1 == self.rows { self.image_height } else { y0 + ph };
        Ok(PixelRect { x0, y0, x1, y1 })
    }

    /// Grid cell containing pixel `(x, y)`.
    pub fn patch_at_pixel(&self, x: u32, y: u32) -> Result<(u32, u32)> {
        if x >= self.image_width || y >= self.image_height {
            return Err(LaserError::Geometry(format!(
                "pixel ({x},{y}) outside {}x{} image",
                self.image_width, self.image_height
            )));
        }
        let col = (x / self.patch_width()).min(self.cols - 1);
        let row = (y / self.patch_height()).min(self.rows - 1);
        Ok((row, col))
    }

    /// Iterator over all patch rectangles in row-major order.
    pub fn rects(&self) -> impl Iterator<Item = PixelRect> + '_ {
        (0..self.patch_count()).map(move |i| self.patch_rect(i).expect("index in range"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn standard_grid_first_patch() {
        let g = GridGeometry::new(24, 24, 336, 336).unwrap();
        assert_eq!(g.patch_count(), 576);
        assert_eq!(g.patch_rect(0).unwrap(), PixelRect::new(0, 0, 14, 14));
    }

    #[test]
    fn single_patch_is_whole_image() {
        let g = GridGeometry::new(1, 1, 100, 80).unwrap();
        assert_eq!(g.patch_rect(0).unwrap(), PixelRect::new(0, 0, 100, 80));
    }

    #[test]
    fn remainder_goes_to_last_row_and_col() {
        let g = GridGeometry::new(3, 3, 10, 10).unwrap();
        assert_eq!(g.patch_rect(8).unwrap(), PixelRect::new(6, 6, 10, 10));
        assert_eq!(g.patch_rect(4).unwrap(), PixelRect::new(3, 3, 6, 6));
    }

    #[test]
    fn out_of_range_index() {
        let g = GridGeometry::new(2, 2, 4, 4).unwrap();
        assert!(matches!(g.patch_rect(4), Err(LaserError::Range { index: 4, limit: 4, .. })));
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(GridGeometry::new(0, 3, 10, 10).is_err());
        assert!(GridGeometry::new(3, 20, 10, 10).is_err());
    }

    proptest! {
        #[test]
        fn rects_tile_the_image(rows in 1u32..20, cols in 1u32..20, extra_w in 0u32..40, extra_h in 0u32..40) {
            let w = cols + extra_w * cols / 3 + extra_w;
            let h = rows + extra_h * rows / 3 + extra_h;
            let g = GridGeometry::new(rows, cols, w, h).unwrap();
            let total: u64 = g.rects().map(|r| r.area()).sum();
            prop_assert_eq!(total, w as u64 * h as u64);
            let mut owner = vec![usize::MAX; (w * h) as usize];
            for (i, r) in g.rects().enumerate() {
                for y in r.y0..r.y1 {
                    for x in r.x0..r.x1 {
                        let slot = &mut owner[(y * w + x) as usize];
                        prop_assert_eq!(*slot, usize::MAX);
                        *slot = i;
                    }
                }
            }
            prop_assert!(owner.iter().all(|&o| o != usize::MAX));
        }

        #[test]
        fn center_maps_back_to_its_cell(rows in 1u32..30, cols in 1u32..30, pw in 1u32..20, ph in 1u32..20, rem in 0u32..5) {
            let g = GridGeometry::new(rows, cols, cols * pw + rem.min(pw - 1), rows * ph + rem.min(ph - 1)).unwrap();
            for i in 0..g.patch_count() {
                let (cx, cy) = g.patch_rect(i).unwrap().center();
                prop_assert_eq!(g.patch_at_pixel(cx, cy).unwrap(), g.row_col(i).unwrap());
            }
        }
    }
}
