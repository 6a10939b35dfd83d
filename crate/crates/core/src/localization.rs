//! Patch-level localization, constrained cropping and evidence masking.

use serde::{Deserialize, Serialize};

use crate::config::{CropCenter, MaskFill, PipelineConfig};
use crate::contrastive::{contrast_rows, VaqProfile};
use crate::error::{LaserError, Result};
use crate::geometry::{GridGeometry, PixelRect};
use crate::image::{ImageBuffer, ImageRole};
use crate::scalar::{argmax, top_k_indices, Scalar};
use crate::trace::AttentionTrace;

/// Non-negative per-patch map on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMap<T> {
    pub layer: usize,
    pub values: Vec<T>,
    pub grid: GridGeometry,
}

impl<T: Scalar> PatchMap<T> {
    pub fn new(layer: usize, values: Vec<T>, grid: GridGeometry) -> Result<Self> {
        if values.len() != grid.patch_count() {
            return Err(LaserError::Shape(format!(
                "map of {} values on a grid of {} patches",
                values.len(),
                grid.patch_count()
            )));
        }
        if let Some(p) = values.iter().position(|v| !(*v >= T::zero())) {
            return Err(LaserError::Validation(format!("map value at patch {p} is {}", values[p])));
        }
        Ok(Self { layer, values, grid })
    }

    /// Raw with-query attention of `layer`, averaged over `heads`.
    pub fn raw_mean<S: Scalar + Into<T>>(trace: &AttentionTrace<S>, layer: usize, heads: &[usize]) -> Result<Self> {
        let rows: Vec<&[S]> = heads
            .iter()
            .map(|&h| trace.check_index(layer, h).map(|_| trace.with_query_row(layer, h)))
            .collect::<Result<_>>()?;
        Self::new(layer, mean_rows(&rows, trace.patches()).into_iter().map(Into::into).collect(), *trace.grid())
    }

    pub fn total(&self) -> T {
        self.values.iter().copied().sum()
    }
}

/// Running mean, so that identical rows average to themselves bit-exactly.
fn mean_rows<T: Scalar>(rows: &[impl AsRef<[T]>], len: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); len];
    for (i, row) in rows.iter().enumerate() {
        let n = T::count(i + 1);
        for (a, &v) in acc.iter_mut().zip(row.as_ref()) {
            *a = *a + (v - *a) / n;
        }
    }
    acc
}

/// Contrastive map of the selected layer averaged over its top heads.
pub fn aggregate_layer_map<T: Scalar>(trace: &AttentionTrace<T>, profile: &VaqProfile<T>) -> Result<PatchMap<T>> {
    let layer = profile.selected_layer;
    let heads = profile.selected_heads();
    if profile.layer_scores.len() != trace.layers() {
        return Err(LaserError::Shape("profile computed from a different trace".into()));
    }
    let rows: Vec<Vec<T>> = heads
        .iter()
        .map(|&h| {
            trace.check_index(layer, h)?;
            Ok(contrast_rows(trace.with_query_row(layer, h), trace.without_query_row(layer, h)))
        })
        .collect::<Result<_>>()?;
    PatchMap::new(layer, mean_rows(&rows, trace.patches()), *trace.grid())
}

/// Multi-step version of [`aggregate_layer_map`]: heads are re-ranked at
/// every step and the per-step maps are averaged.
pub fn aggregate_over_steps<T: Scalar>(steps: &[&AttentionTrace<T>], layer: usize, k_head: usize) -> Result<PatchMap<T>> {
    let first = steps.first().ok_or_else(|| LaserError::Config("at least one step required".into()))?;
    let mut per_step = Vec::with_capacity(steps.len());
    for trace in steps {
        trace.check_index(layer, 0)?;
        let maps: Vec<Vec<T>> = (0..trace.heads())
            .map(|h| contrast_rows(trace.with_query_row(layer, h), trace.without_query_row(layer, h)))
            .collect();
        let scores: Vec<T> = maps.iter().map(|m| crate::scalar::l2_norm(m)).collect();
        let top: Vec<&Vec<T>> = top_k_indices(&scores, k_head).into_iter().map(|h| &maps[h]).collect();
        per_step.push(mean_rows(&top, trace.patches()));
    }
    PatchMap::new(layer, mean_rows(&per_step, first.patches()), *first.grid())
}

/// Grid coordinates of the highest entry; lowest index on ties.
pub fn peak_patch<T: Scalar>(map: &PatchMap<T>) -> (u32, u32) {
    let idx = argmax(&map.values).unwrap_or(0);
    map.grid.row_col(idx).expect("map length matches grid")
}

/// Pixel the crop box is centered on.
pub fn crop_center<T: Scalar>(map: &PatchMap<T>, mode: CropCenter) -> (u32, u32) {
    let grid = &map.grid;
    let (row, col) = peak_patch(map);
    let peak = grid.patch_rect(grid.index_of(row, col)).expect("peak in grid").center();
    match mode {
        CropCenter::Peak => peak,
        CropCenter::Centroid => {
            let total = map.total().as_f64();
            if total <= 0.0 {
                return peak;
            }
            let (mut sx, mut sy) = (0.0, 0.0);
            for (rect, v) in grid.rects().zip(&map.values) {
                let (cx, cy) = rect.center();
                sx += cx as f64 * v.as_f64();
                sy += cy as f64 * v.as_f64();
            }
            let cx = (sx / total).round().clamp(0.0, (grid.image_width() - 1) as f64);
            let cy = (sy / total).round().clamp(0.0, (grid.image_height() - 1) as f64);
            (cx as u32, cy as u32)
        }
    }
}

/// Pixel-space crop rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox(pub PixelRect);

impl CropBox {
    pub fn rect(&self) -> PixelRect {
        self.0
    }

    pub fn width(&self) -> u32 {
        self.0.width()
    }

    pub fn height(&self) -> u32 {
        self.0.height()
    }
}

/// Crop extent along one dimension: `round(fraction · dim)` when that meets
/// `min_crop`, otherwise the whole dimension (a crop below the lower bound
/// is never produced).
pub fn crop_extent(dim: u32, config: &PipelineConfig) -> u32 {
    let scaled = (config.crop_fraction * dim as f64).round() as u32;
    if scaled >= config.min_crop {
        scaled.clamp(1, dim)
    } else {
        dim
    }
}

fn place(center: u32, extent: u32, dim: u32) -> u32 {
    let start = center as i64 - (extent / 2) as i64;
    start.clamp(0, (dim - extent) as i64) as u32
}

/// Box of the configured size centered on pixel `(cx, cy)`, translated to
/// lie inside a `width × height` image.
pub fn crop_box_around(cx: u32, cy: u32, width: u32, height: u32, config: &PipelineConfig) -> CropBox {
    let w = crop_extent(width, config);
    let h = crop_extent(height, config);
    let x0 = place(cx.min(width - 1), w, width);
    let y0 = place(cy.min(height - 1), h, height);
    CropBox(PixelRect::new(x0, y0, x0 + w, y0 + h))
}

/// Crop box centered on the pixel center of patch `peak`.
pub fn crop_box(peak: (u32, u32), grid: &GridGeometry, config: &PipelineConfig) -> Result<CropBox> {
    let (row, col) = peak;
    if row >= grid.rows() || col >= grid.cols() {
        return Err(LaserError::Geometry(format!("peak ({row},{col}) outside {}x{} grid", grid.rows(), grid.cols())));
    }
    let (cx, cy) = grid.patch_rect(grid.index_of(row, col))?.center();
    Ok(crop_box_around(cx, cy, grid.image_width(), grid.image_height(), config))
}

/// Copies the pixels inside `crop` into a new image.
pub fn apply_crop(image: &ImageBuffer, crop: &CropBox) -> Result<ImageBuffer> {
    let r = crop.rect();
    if r.x0 >= r.x1 || r.y0 >= r.y1 || r.x1 > image.width() || r.y1 > image.height() {
        return Err(LaserError::Geometry(format!(
            "crop {r:?} outside {}x{} image",
            image.width(),
            image.height()
        )));
    }
    let row_bytes = r.width() as usize * 3;
    let mut data = Vec::with_capacity(row_bytes * r.height() as usize);
    let stride = image.width() as usize * 3;
    for y in r.y0..r.y1 {
        let start = y as usize * stride + r.x0 as usize * 3;
        data.extend_from_slice(&image.data()[start..start + row_bytes]);
    }
    Ok(ImageBuffer::from_rgb(r.width(), r.height(), data)?.with_role(ImageRole::CroppedPositive))
}

/// Evidence patches chosen for masking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSet {
    /// Best first.
    pub indices: Vec<usize>,
}

impl PatchSet {
    pub fn empty() -> Self {
        Self { indices: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.contains(&index)
    }

    pub fn sorted(&self) -> Vec<usize> {
        let mut v = self.indices.clone();
        v.sort_unstable();
        v
    }
}

/// The `k` highest patches of the map, ties broken by ascending index.
pub fn top_k_patches<T: Scalar>(map: &PatchMap<T>, k: usize) -> PatchSet {
    PatchSet { indices: top_k_indices(&map.values, k) }
}

/// Same as [`top_k_patches`] with `k` resolved from the configuration.
pub fn select_evidence<T: Scalar>(map: &PatchMap<T>, config: &PipelineConfig) -> PatchSet {
    top_k_patches(map, config.resolve_k_patch(map.values.len()))
}

fn check_dims(image: &ImageBuffer, grid: &GridGeometry) -> Result<()> {
    if image.width() != grid.image_width() || image.height() != grid.image_height() {
        return Err(LaserError::Geometry(format!(
            "image {}x{} does not match grid image {}x{}",
            image.width(),
            image.height(),
            grid.image_width(),
            grid.image_height()
        )));
    }
    Ok(())
}

pub fn fill_color(image: &ImageBuffer, fill: MaskFill) -> [u8; 3] {
    match fill {
        MaskFill::Gray => MaskFill::GRAY,
        MaskFill::Black => [0, 0, 0],
        MaskFill::Mean => image.mean_color(),
    }
}

/// Paints every selected patch with the mask fill.
pub fn mask_patches(image: &ImageBuffer, patches: &PatchSet, grid: &GridGeometry, fill: MaskFill) -> Result<ImageBuffer> {
    check_dims(image, grid)?;
    let color = fill_color(image, fill);
    let mut out = image.clone().with_role(ImageRole::Masked);
    for &p in &patches.indices {
        out.fill_rect(grid.patch_rect(p)?, color);
    }
    Ok(out)
}

/// Masks the evidence on the full image, then applies the crop.
pub fn build_counterfactual(
    image: &ImageBuffer,
    crop: &CropBox,
    patches: &PatchSet,
    grid: &GridGeometry,
    fill: MaskFill,
) -> Result<ImageBuffer> {
    let masked = mask_patches(image, patches, grid, fill)?;
    Ok(apply_crop(&masked, crop)?.with_role(ImageRole::Counterfactual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::layer_vaq;
    use crate::trace::TokenLayout;
    use proptest::prelude::*;

    fn cfg() -> PipelineConfig {
        PipelineConfig::default()
    }

    fn map(values: Vec<f64>, rows: u32, cols: u32) -> PatchMap<f64> {
        PatchMap::new(0, values, GridGeometry::new(rows, cols, cols * 10, rows * 10).unwrap()).unwrap()
    }

    fn checker(w: u32, h: u32) -> ImageBuffer {
        let data = (0..w * h).flat_map(|i| [(i % 251) as u8, (i / 7 % 256) as u8, 9]).collect();
        ImageBuffer::from_rgb(w, h, data).unwrap()
    }

    #[test]
    fn aggregate_averages_selected_heads() {
        let grid = GridGeometry::new(1, 2, 2, 1).unwrap();
        let t = AttentionTrace::new(1, 2, grid, TokenLayout::contiguous(1, 2, 1, 1), vec![0.2, 0.0, 0.0, 0.4], vec![0.0; 4], "t")
            .unwrap();
        let c = PipelineConfig { k_head: Some(2), ..cfg() };
        let m = aggregate_layer_map(&t, &layer_vaq(&t, &c).unwrap()).unwrap();
        assert!((m.values[0] - 0.1f64).abs() < 1e-15 && (m.values[1] - 0.2f64).abs() < 1e-15);
        let c1 = PipelineConfig { k_head: Some(1), ..cfg() };
        let m1 = aggregate_layer_map(&t, &layer_vaq(&t, &c1).unwrap()).unwrap();
        assert_eq!(m1.values, vec![0.0, 0.4]);
    }

    #[test]
    fn peak_and_tie_break() {
        let mut v = vec![0.0; 9];
        v[4] = 1.0;
        assert_eq!(peak_patch(&map(v, 3, 3)), (1, 1));
        assert_eq!(peak_patch(&map(vec![0.5; 9], 3, 3)), (0, 0));
    }

    #[test]
    fn crop_box_examples() {
        // 5x5 grid on 1000x800: patch (2,2) spans x 400..600, y 320..480.
        let g = GridGeometry::new(5, 5, 1000, 800).unwrap();
        assert_eq!(crop_box((2, 2), &g, &cfg()).unwrap().rect(), PixelRect::new(250, 200, 750, 600));
        assert_eq!(crop_box_around(10, 10, 1000, 800, &cfg()).rect(), PixelRect::new(0, 0, 500, 400));
        let paper = GridGeometry::new(24, 24, 336, 336).unwrap();
        assert_eq!(crop_box((3, 20), &paper, &cfg()).unwrap().rect(), PixelRect::new(0, 0, 336, 336));
        let small = GridGeometry::new(24, 24, 300, 300).unwrap();
        for peak in [(0, 0), (12, 5), (23, 23)] {
            assert_eq!(crop_box(peak, &small, &cfg()).unwrap().rect(), PixelRect::new(0, 0, 300, 300));
        }
        assert!(crop_box((5, 0), &g, &cfg()).is_err());
        // one dimension meets the bound, the other does not
        assert_eq!(crop_box_around(100, 100, 600, 400, &cfg()).rect(), PixelRect::new(0, 0, 300, 400));
    }

    #[test]
    fn centroid_mode_uses_weighted_center() {
        let mut v = vec![0.0; 4];
        v[0] = 1.0;
        v[3] = 1.0;
        let m = map(v, 2, 2);
        assert_eq!(crop_center(&m, CropCenter::Peak), (5, 5));
        assert_eq!(crop_center(&m, CropCenter::Centroid), (10, 10));
        assert_eq!(crop_center(&map(vec![0.0; 4], 2, 2), CropCenter::Centroid), (5, 5));
    }

    #[test]
    fn crop_examples() {
        let img = checker(7, 5);
        assert_eq!(apply_crop(&img, &CropBox(img.bounds())).unwrap().data(), img.data());
        let two = ImageBuffer::from_rgb(2, 2, vec![1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4]).unwrap();
        let c = apply_crop(&two, &CropBox(PixelRect::new(1, 0, 2, 1))).unwrap();
        assert_eq!((c.width(), c.height(), c.pixel(0, 0)), (1, 1, [2, 2, 2]));
        assert!(apply_crop(&two, &CropBox(PixelRect::new(1, 0, 3, 1))).is_err());
    }

    #[test]
    fn nested_crops_compose() {
        let img = checker(40, 30);
        let outer = CropBox(PixelRect::new(5, 3, 35, 28));
        let inner = CropBox(PixelRect::new(2, 4, 20, 15));
        let twice = apply_crop(&apply_crop(&img, &outer).unwrap(), &inner).unwrap();
        let once = apply_crop(&img, &CropBox(PixelRect::new(7, 7, 25, 18))).unwrap();
        assert_eq!(twice, once);
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k_patches(&map(vec![0.1, 0.5, 0.3], 1, 3), 2).sorted(), vec![1, 2]);
        assert_eq!(top_k_patches(&map(vec![0.1, 0.5, 0.3], 1, 3), 9).sorted(), vec![0, 1, 2]);
    }

    #[test]
    fn masking_examples() {
        let img = checker(9, 9);
        let g = GridGeometry::new(3, 3, 9, 9).unwrap();
        assert_eq!(mask_patches(&img, &PatchSet::empty(), &g, MaskFill::Gray).unwrap().data(), img.data());
        let all = PatchSet { indices: (0..9).collect() };
        let gray = mask_patches(&img, &all, &g, MaskFill::Gray).unwrap();
        assert!(gray.data().iter().all(|&b| b == 127));
        let one = mask_patches(&img, &PatchSet { indices: vec![5] }, &g, MaskFill::Black).unwrap();
        let changed = img.data().chunks(3).zip(one.data().chunks(3)).filter(|(a, b)| a != b).count();
        assert_eq!(changed as u64, g.patch_rect(5).unwrap().area());
        let wrong = GridGeometry::new(3, 3, 12, 9).unwrap();
        assert!(mask_patches(&img, &all, &wrong, MaskFill::Gray).is_err());
    }

    #[test]
    fn counterfactual_examples() {
        let img = checker(30, 30);
        let g = GridGeometry::new(3, 3, 30, 30).unwrap();
        let crop = CropBox(PixelRect::new(10, 10, 30, 30));
        let plus = apply_crop(&img, &crop).unwrap();
        let none = build_counterfactual(&img, &crop, &PatchSet::empty(), &g, MaskFill::Gray).unwrap();
        assert_eq!(none.data(), plus.data());
        assert_eq!(none.role(), ImageRole::Counterfactual);
        let outside = build_counterfactual(&img, &crop, &PatchSet { indices: vec![0] }, &g, MaskFill::Gray).unwrap();
        assert_eq!(outside.data(), plus.data());
        let covering = build_counterfactual(&img, &crop, &PatchSet { indices: vec![4] }, &g, MaskFill::Gray).unwrap();
        let masked_region = g.patch_rect(4).unwrap().intersect(&crop.rect()).unwrap();
        for y in 0..20 {
            for x in 0..20 {
                let inside = masked_region.contains(x + 10, y + 10);
                assert_eq!(covering.pixel(x, y) != plus.pixel(x, y), inside && plus.pixel(x, y) != [127; 3]);
            }
        }
    }

    proptest! {
        #[test]
        fn masking_is_idempotent(picks in proptest::collection::vec(0usize..16, 0..8)) {
            let img = checker(16, 16);
            let g = GridGeometry::new(4, 4, 16, 16).unwrap();
            let set = PatchSet { indices: picks };
            let once = mask_patches(&img, &set, &g, MaskFill::Gray).unwrap();
            let twice = mask_patches(&once, &set, &g, MaskFill::Gray).unwrap();
            prop_assert_eq!(once.data(), twice.data());
        }

        #[test]
        fn mask_then_crop_equals_crop_then_mask_inside_box(r in 0u32..2, c in 0u32..2) {
            let img = checker(32, 32);
            let g = GridGeometry::new(4, 4, 32, 32).unwrap();
            let crop = CropBox(PixelRect::new(8 * c, 8 * r, 8 * c + 16, 8 * r + 16));
            let idx = g.index_of(r + 1, c);
            let set = PatchSet { indices: vec![idx] };
            let cf = build_counterfactual(&img, &crop, &set, &g, MaskFill::Gray).unwrap();
            let mut manual = apply_crop(&img, &crop).unwrap();
            let rect = g.patch_rect(idx).unwrap();
            let local = PixelRect::new(rect.x0 - crop.rect().x0, rect.y0 - crop.rect().y0, rect.x1 - crop.rect().x0, rect.y1 - crop.rect().y0);
            manual.fill_rect(local, MaskFill::GRAY);
            prop_assert_eq!(cf.data(), manual.data());
        }

        #[test]
        fn aggregation_of_equal_maps_is_identity(v in proptest::collection::vec(0.0f64..0.2, 4), heads in 1usize..4) {
            let grid = GridGeometry::new(2, 2, 2, 2).unwrap();
            let with: Vec<f64> = (0..heads).flat_map(|_| v.iter().copied()).collect();
            let t = AttentionTrace::new(1, heads, grid, TokenLayout::contiguous(1, 4, 1, 1), with, vec![0.0; 4 * heads], "t").unwrap();
            let c = PipelineConfig { k_head: Some(heads), ..Default::default() };
            let m = aggregate_layer_map(&t, &layer_vaq(&t, &c).unwrap()).unwrap();
            prop_assert_eq!(m.values, v);
        }
    }
}
