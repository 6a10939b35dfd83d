//! Training-free, layer-adaptive visual grounding for vision-language models.
//!
//! Given paired prefill attention traces (with and without the question),
//! the engine scores every layer by how strongly the question modulates its
//! visual attention, localizes the evidence on the best layer, plans a
//! constrained crop plus an evidence-masked counterfactual, and combines
//! positive and counterfactual logits during decoding.
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision used by the on-disk formats.

pub mod config;
pub mod contrastive;
pub mod error;
pub mod geometry;
pub mod image;
pub mod localization;
pub mod plan;
pub mod protocol;
pub mod scalar;
pub mod trace;
pub mod trace_file;
pub mod vat;

pub use config::{CropCenter, DecodeMode, MaskFill, PipelineConfig};
pub use contrastive::{contrastive_map, head_vaq, layer_vaq, ContrastiveMap, HeadSelection, VaqProfile};
pub use error::{LaserError, Result};
pub use geometry::{GridGeometry, PixelRect};
pub use image::{ImageBuffer, ImageRole};
pub use localization::{
    aggregate_layer_map, apply_crop, build_counterfactual, crop_box, mask_patches, peak_patch, top_k_patches,
    CropBox, PatchMap, PatchSet,
};
pub use plan::{plan_localization, CropPlan};
pub use scalar::Scalar;
pub use trace::{AttentionTrace, TokenLayout, TokenSpan};
pub use vat::{combine_scores, compute_vat, decode_pair, DecodeBackend, LogitsPair, ScoredLogits};

/// Trace at on-disk precision.
pub type Trace32 = AttentionTrace<f32>;
/// Trace at double precision.
pub type Trace64 = AttentionTrace<f64>;
pub type VaqProfile32 = VaqProfile<f32>;
pub type VaqProfile64 = VaqProfile<f64>;
pub type PatchMap32 = PatchMap<f32>;
pub type PatchMap64 = PatchMap<f64>;
pub type ScoredLogits32 = ScoredLogits<f32>;
pub type ScoredLogits64 = ScoredLogits<f64>;
