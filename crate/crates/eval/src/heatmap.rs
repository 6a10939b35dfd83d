//! Attention heatmaps blended over the input image.
//!
//! Patch values are normalized by the map maximum, upsampled bilinearly
//! between patch centers, colored with a jet ramp (blue → cyan → yellow →
//! red) and blended with opacity `0.6·v`.

use std::path::Path;

use laser_core::localization::CropBox;
use laser_core::{ImageBuffer, LaserError, PatchMap, Scalar};

use crate::error::EvalError;

pub const MAX_ALPHA: f64 = 0.6;
const OUTLINE: [u8; 3] = [255, 255, 0];
const OUTLINE_PX: u32 = 2;

/// Jet color ramp for `v` in `[0, 1]`.
pub fn colormap(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let ch = |center: f64| ((1.5 - (4.0 * v - center).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(3.0), ch(2.0), ch(1.0)]
}

/// Per-axis interpolation: bracketing patch indices and weight of the upper one.
fn axis_weights(centers: &[f64], pixels: u32) -> Vec<(usize, usize, f64)> {
    (0..pixels)
        .map(|p| {
            let x = p as f64 + 0.5;
            let hi = centers.partition_point(|&c| c <= x);
            if hi == 0 {
                (0, 0, 0.0)
            } else if hi == centers.len() {
                (hi - 1, hi - 1, 0.0)
            } else {
                let (a, b) = (centers[hi - 1], centers[hi]);
                (hi - 1, hi, (x - a) / (b - a))
            }
        })
        .collect()
}

/// Map values per pixel, normalized to `[0, 1]`, row-major.
pub fn upsample<T: Scalar>(map: &PatchMap<T>) -> Vec<f64> {
    let g = &map.grid;
    let max = map.values.iter().map(|v| v.as_f64()).fold(0.0, f64::max);
    let norm: Vec<f64> = map.values.iter().map(|v| if max > 0.0 { v.as_f64() / max } else { 0.0 }).collect();
    let col_centers: Vec<f64> = (0..g.cols())
        .map(|c| {
            let r = g.patch_rect(g.index_of(0, c)).expect("in grid");
            (r.x0 + r.x1) as f64 / 2.0
        })
        .collect();
    let row_centers: Vec<f64> = (0..g.rows())
        .map(|row| {
            let r = g.patch_rect(g.index_of(row, 0)).expect("in grid");
            (r.y0 + r.y1) as f64 / 2.0
        })
        .collect();
    let xs = axis_weights(&col_centers, g.image_width());
    let ys = axis_weights(&row_centers, g.image_height());
    let cols = g.cols() as usize;
    let at = |r: usize, c: usize| norm[r * cols + c];
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &(r0, r1, ty) in &ys {
        for &(c0, c1, tx) in &xs {
            let top = at(r0, c0) * (1.0 - tx) + at(r0, c1) * tx;
            let bottom = at(r1, c0) * (1.0 - tx) + at(r1, c1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Heatmap over `image`, optionally outlining `crop`.
pub fn render_overlay<T: Scalar>(map: &PatchMap<T>, image: &ImageBuffer, crop: Option<&CropBox>) -> Result<ImageBuffer, LaserError> {
    let g = &map.grid;
    if (g.image_width(), g.image_height()) != (image.width(), image.height()) {
        return Err(LaserError::Geometry(format!(
            "map grid is for {}x{} but the image is {}x{}",
            g.image_width(),
            g.image_height(),
            image.width(),
            image.height()
        )));
    }
    let values = upsample(map);
    let mut out = image.clone();
    for y in 0..image.height() {
        for x in 0..image.width() {
            let v = values[(y * image.width() + x) as usize];
            if v <= 0.0 {
                continue;
            }
            let a = MAX_ALPHA * v;
            let color = colormap(v);
            let px = image.pixel(x, y);
            let mut blended = [0u8; 3];
            for c in 0..3 {
                blended[c] = ((1.0 - a) * px[c] as f64 + a * color[c] as f64).round() as u8;
            }
            out.set_pixel(x, y, blended);
        }
    }
    if let Some(crop) = crop {
        let r = crop.rect();
        let t = OUTLINE_PX.min(r.width()).min(r.height());
        for edge in [
            laser_core::PixelRect::new(r.x0, r.y0, r.x1, r.y0 + t),
            laser_core::PixelRect::new(r.x0, r.y1 - t, r.x1, r.y1),
            laser_core::PixelRect::new(r.x0, r.y0, r.x0 + t, r.y1),
            laser_core::PixelRect::new(r.x1 - t, r.y0, r.x1, r.y1),
        ] {
            if let Some(e) = edge.intersect(&out.bounds()) {
                out.fill_rect(e, OUTLINE);
            }
        }
    }
    Ok(out)
}

/// Writes PNG, or binary PPM when the extension is `.ppm`.
pub fn write_image(image: &ImageBuffer, path: &Path) -> Result<(), EvalError> {
    let buf = image::RgbImage::from_raw(image.width(), image.height(), image.data().to_vec()).expect("rgb buffer size");
    let format = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("ppm") => image::ImageFormat::Pnm,
        _ => image::ImageFormat::Png,
    };
    buf.save_with_format(path, format).map_err(|source| EvalError::Image { path: path.to_path_buf(), source })
}

pub fn render_heatmap<T: Scalar>(
    map: &PatchMap<T>,
    image: &ImageBuffer,
    crop: Option<&CropBox>,
    path: &Path,
) -> Result<ImageBuffer, EvalError> {
    let out = render_overlay(map, image, crop)?;
    write_image(&out, path)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        assert_eq!(colormap(0.0), [0, 0, 128]);
        assert_eq!(colormap(1.0), [128, 0, 0]);
        assert_eq!(colormap(0.5), [128, 255, 128]);
    }

    #[test]
    fn axis_weights_clamp_and_interpolate() {
        let w = axis_weights(&[5.0, 15.0], 20);
        assert_eq!(w[0], (0, 0, 0.0));
        assert_eq!(w[10], (0, 1, 0.55));
        assert_eq!(w[19], (1, 1, 0.0));
    }
}
