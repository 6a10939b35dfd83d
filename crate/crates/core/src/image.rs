//! In-memory 8-bit RGB images.

use serde::{Deserialize, Serialize};

use crate::error::{LaserError, Result};
use crate::geometry::PixelRect;

/// Which stage of the pipeline produced an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageRole {
    Original,
    /// Zoomed-in positive view.
    CroppedPositive,
    /// Original with evidence patches masked.
    Masked,
    /// Cropped masked view fed to the negative stream.
    Counterfactual,
}

/// Row-major RGB image, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    data: Vec<u8>,
    role: ImageRole,
}

impl ImageBuffer {
    pub const CHANNELS: usize = 3;

    pub fn from_rgb(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        let expected = width as usize * height as usize * Self::CHANNELS;
        if width == 0 || height == 0 {
            return Err(LaserError::Geometry(format!("empty image {width}x{height}")));
        }
        if data.len() != expected {
            return Err(LaserError::Shape(format!(
                "rgb buffer of {} bytes for {width}x{height} image (expected {expected})",
                data.len()
            )));
        }
        Ok(Self { width, height, data, role: ImageRole::Original })
    }

    /// Expands a single-channel image to RGB.
    pub fn from_gray(width: u32, height: u32, gray: &[u8]) -> Result<Self> {
        if gray.len() != width as usize * height as usize {
            return Err(LaserError::Shape(format!(
                "gray buffer of {} bytes for {width}x{height} image",
                gray.len()
            )));
        }
        let data = gray.iter().flat_map(|&g| [g, g, g]).collect();
        Self::from_rgb(width, height, data)
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb.iter().copied().cycle().take(width as usize * height as usize * 3).collect();
        Self::from_rgb(width, height, data)
    }

    pub fn with_role(mut self, role: ImageRole) -> Self {
        self.role = role;
        self
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn role(&self) -> ImageRole {
        self.role
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn bounds(&self) -> PixelRect {
        PixelRect::new(0, 0, self.width, self.height)
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * Self::CHANNELS
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// Fills `rect` (clipped to the image) with a solid color.
    pub fn fill_rect(&mut self, rect: PixelRect, rgb: [u8; 3]) {
        if let Some(r) = rect.intersect(&self.bounds()) {
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    self.set_pixel(x, y, rgb);
                }
            }
        }
    }

    /// Per-channel mean, rounded.
    pub fn mean_color(&self) -> [u8; 3] {
        let mut acc = [0u64; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                acc[c] += px[c] as u64;
            }
        }
        let n = (self.width as u64 * self.height as u64).max(1);
        acc.map(|s| ((s + n / 2) / n) as u8)
    }
}
