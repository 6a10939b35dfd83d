//! Stage-one output: which layer, where to crop, what to mask.

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::contrastive::{layer_vaq, VaqProfile};
use crate::error::Result;
use crate::geometry::{GridGeometry, PixelRect};
use crate::localization::{aggregate_layer_map, crop_box_around, crop_center, peak_patch, select_evidence, CropBox, PatchMap, PatchSet};
use crate::scalar::Scalar;
use crate::trace::AttentionTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchCoord {
    pub row: u32,
    pub col: u32,
}

/// Crop-and-mask plan handed to the second stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropPlan {
    pub source_id: String,
    pub selected_layer: usize,
    /// True when the layer came from `fixed_layer` rather than VAQ.
    pub fixed_layer: bool,
    pub layer_vaq: Vec<f64>,
    pub selected_heads: Vec<usize>,
    pub peak_patch: PatchCoord,
    pub crop_box: PixelRect,
    /// Evidence patches to mask, best first.
    pub mask_patches: Vec<usize>,
    pub grid: GridGeometry,
    /// Whether the counterfactual stream should run for this instance.
    pub use_vat: bool,
}

impl CropPlan {
    pub fn crop(&self) -> CropBox {
        CropBox(self.crop_box)
    }

    pub fn patch_set(&self) -> PatchSet {
        PatchSet { indices: self.mask_patches.clone() }
    }
}

/// Everything computed during localization.
#[derive(Debug, Clone)]
pub struct Localization<T> {
    pub profile: VaqProfile<T>,
    pub map: PatchMap<T>,
    pub plan: CropPlan,
}

/// Runs layer selection, aggregation, crop placement and evidence selection.
pub fn plan_localization<T: Scalar>(trace: &AttentionTrace<T>, config: &PipelineConfig) -> Result<Localization<T>> {
    config.validate()?;
    let profile = layer_vaq(trace, config)?;
    let map = aggregate_layer_map(trace, &profile)?;
    let grid = *trace.grid();
    let (row, col) = peak_patch(&map);
    let (cx, cy) = crop_center(&map, config.crop_center);
    let crop = crop_box_around(cx, cy, grid.image_width(), grid.image_height(), config);
    let evidence = select_evidence(&map, config);
    let use_vat = config.vat_enabled
        && match config.vat_gate {
            Some(gate) => profile.peak_to_mean().as_f64() < gate,
            None => true,
        };
    let plan = CropPlan {
        source_id: trace.source_id().to_string(),
        selected_layer: profile.selected_layer,
        fixed_layer: config.fixed_layer.is_some(),
        layer_vaq: profile.layer_scores.iter().map(|v| v.as_f64()).collect(),
        selected_heads: profile.selected_heads().to_vec(),
        peak_patch: PatchCoord { row, col },
        crop_box: crop.rect(),
        mask_patches: evidence.indices,
        grid,
        use_vat,
    };
    Ok(Localization { profile, map, plan })
}
