//! Pipeline configuration.

use serde::{Deserialize, Serialize};

use crate::error::{LaserError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Greedy,
    Sample,
}

/// How the crop center is derived from the localization map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CropCenter {
    /// Pixel center of the highest-scoring patch.
    #[default]
    Peak,
    /// Attention-weighted centroid of the patch centers.
    Centroid,
}

/// Fill used when masking evidence patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskFill {
    #[default]
    Gray,
    Black,
    /// Per-image mean color.
    Mean,
}

impl MaskFill {
    pub const GRAY: [u8; 3] = [127, 127, 127];
}

/// Knobs of the localization and decoding pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Heads kept per layer; `None` means `ceil(H / 4)`.
    pub k_head: Option<usize>,
    /// Evidence patches masked for the counterfactual; `None` means `ceil(P / 20)`.
    pub k_patch: Option<usize>,
    /// Contrast strength applied to the evidence gain.
    pub alpha: f64,
    /// Lower bound on crop width and height, in pixels.
    pub min_crop: u32,
    /// Crop size as a fraction of the image size.
    pub crop_fraction: f64,
    pub decode_mode: DecodeMode,
    pub temperature: f64,
    pub seed: u64,
    pub vat_enabled: bool,
    pub crop_center: CropCenter,
    pub mask_fill: MaskFill,
    /// Use this layer instead of the VAQ-selected one.
    pub fixed_layer: Option<usize>,
    /// When set, skip the counterfactual stream for instances whose VAQ
    /// profile peak-to-mean ratio reaches this value.
    pub vat_gate: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k_head: None,
            k_patch: None,
            alpha: 1.0,
            min_crop: 224,
            crop_fraction: 0.5,
            decode_mode: DecodeMode::Greedy,
            temperature: 1.0,
            seed: 0,
            vat_enabled: true,
            crop_center: CropCenter::Peak,
            mask_fill: MaskFill::Gray,
            fixed_layer: None,
            vat_gate: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_head == Some(0) {
            return Err(LaserError::Config("k_head must be positive".into()));
        }
        if self.k_patch == Some(0) {
            return Err(LaserError::Config("k_patch must be positive".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(LaserError::Config(format!("alpha must be a finite non-negative number, got {}", self.alpha)));
        }
        if self.min_crop == 0 {
            return Err(LaserError::Config("min_crop must be positive".into()));
        }
        if !(self.crop_fraction > 0.0 && self.crop_fraction <= 1.0) {
            return Err(LaserError::Config(format!("crop_fraction must lie in (0, 1], got {}", self.crop_fraction)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(LaserError::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }

    /// Heads kept per layer for a model with `heads` heads.
    pub fn resolve_k_head(&self, heads: usize) -> Result<usize> {
        let k = self.k_head.unwrap_or_else(|| heads.div_ceil(4).max(1));
        if k == 0 || k > heads {
            return Err(LaserError::Config(format!("k_head {k} not in 1..={heads}")));
        }
        Ok(k)
    }

    /// Evidence patches to mask; saturates at `patches`.
    pub fn resolve_k_patch(&self, patches: usize) -> usize {
        self.k_patch.unwrap_or_else(|| patches.div_ceil(20)).min(patches)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(c.resolve_k_head(2).unwrap(), 1);
        assert_eq!(c.resolve_k_head(32).unwrap(), 8);
        assert_eq!(c.resolve_k_patch(576), 29);
        assert_eq!(c.resolve_k_patch(560), 28);
        assert_eq!(c.resolve_k_patch(16), 1);
    }

    #[test]
    fn explicit_k_head_bounded_by_heads() {
        let c = PipelineConfig { k_head: Some(5), ..Default::default() };
        assert!(c.resolve_k_head(4).is_err());
        assert_eq!(c.resolve_k_head(5).unwrap(), 5);
    }

    #[test]
    fn rejects_bad_values() {
        for c in [
            PipelineConfig { alpha: -1.0, ..Default::default() },
            PipelineConfig { crop_fraction: 0.0, ..Default::default() },
            PipelineConfig { crop_fraction: 1.5, ..Default::default() },
            PipelineConfig { temperature: 0.0, ..Default::default() },
            PipelineConfig { min_crop: 0, ..Default::default() },
            PipelineConfig { k_patch: Some(0), ..Default::default() },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn json_fills_missing_fields_with_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"alpha": 2.0}"#).unwrap();
        assert_eq!(c.alpha, 2.0);
        assert_eq!(c.min_crop, 224);
    }
}
