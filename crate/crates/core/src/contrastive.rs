//! Query-contrastive attention maps and the VAQ layer profile.
//!
//! A contrastive map keeps only the visual attention that appears when the
//! query is present: `max(0, with_query - without_query)` per patch. A head's
//! VAQ is the L2 norm of its map; a layer's VAQ averages its top heads; the
//! layer with the largest VAQ is selected for localization.

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{LaserError, Result};
use crate::scalar::{argmax, l2_norm, top_k_indices, Scalar};
use crate::trace::AttentionTrace;

/// ReLU-clipped with-minus-without attention of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveMap<T> {
    pub layer: usize,
    pub head: usize,
    pub values: Vec<T>,
}

/// Elementwise `max(0, with - without)`.
pub fn contrast_rows<T: Scalar>(with_query: &[T], without_query: &[T]) -> Vec<T> {
    with_query
        .iter()
        .zip(without_query)
        .map(|(&w, &wo)| (w - wo).max(T::zero()))
        .collect()
}

pub fn contrastive_map<T: Scalar>(
    trace: &AttentionTrace<T>,
    layer: usize,
    head: usize,
) -> Result<ContrastiveMap<T>> {
    trace.check_index(layer, head)?;
    Ok(ContrastiveMap {
        layer,
        head,
        values: contrast_rows(trace.with_query_row(layer, head), trace.without_query_row(layer, head)),
    })
}

/// Head-wise VAQ: the L2 norm of the contrastive map.
pub fn head_vaq<T: Scalar>(map: &ContrastiveMap<T>) -> T {
    l2_norm(&map.values)
}

/// Top heads of one layer, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSelection {
    pub layer: usize,
    pub heads: Vec<usize>,
}

impl HeadSelection {
    /// Ranks heads by descending score, lowest index first on ties.
    pub fn rank<T: Scalar>(layer: usize, head_scores: &[T], k: usize) -> Self {
        Self { layer, heads: top_k_indices(head_scores, k) }
    }
}

/// Per-layer VAQ scores and the selected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct VaqProfile<T> {
    /// `layer_scores[l]` is the layer-wise VAQ of layer `l`.
    pub layer_scores: Vec<T>,
    /// `head_scores[l][h]` is the head-wise VAQ; averaged over steps when
    /// the profile spans several decoding steps.
    pub head_scores: Vec<Vec<T>>,
    /// Top heads per layer (of the last step when several are given).
    pub selections: Vec<HeadSelection>,
    pub selected_layer: usize,
    pub k_head: usize,
}

impl<T: Scalar> VaqProfile<T> {
    pub fn selected_heads(&self) -> &[usize] {
        &self.selections[self.selected_layer].heads
    }

    pub fn peak_score(&self) -> T {
        self.layer_scores[self.selected_layer]
    }

    /// Ratio of the peak layer score to the mean layer score; zero when the
    /// whole profile is zero.
    pub fn peak_to_mean(&self) -> T {
        let n = T::count(self.layer_scores.len());
        let mean = self.layer_scores.iter().copied().sum::<T>() / n;
        if mean > T::zero() {
            self.peak_score() / mean
        } else {
            T::zero()
        }
    }

    /// Replaces the VAQ-selected layer, keeping that layer's head ranking.
    pub fn with_fixed_layer(mut self, layer: usize) -> Result<Self> {
        if layer >= self.layer_scores.len() {
            return Err(LaserError::Range { what: "layer", index: layer, limit: self.layer_scores.len() });
        }
        self.selected_layer = layer;
        Ok(self)
    }
}

/// Head VAQ scores `[layer][head]` for one trace.
pub fn head_vaq_table<T: Scalar>(trace: &AttentionTrace<T>) -> Vec<Vec<T>> {
    (0..trace.layers())
        .map(|l| {
            (0..trace.heads())
                .map(|h| {
                    l2_norm(&contrast_rows(trace.with_query_row(l, h), trace.without_query_row(l, h)))
                })
                .collect()
        })
        .collect()
}

/// Layer-wise VAQ at the prefill position, honoring `config.fixed_layer`.
pub fn layer_vaq<T: Scalar>(trace: &AttentionTrace<T>, config: &PipelineConfig) -> Result<VaqProfile<T>> {
    let k_head = config.resolve_k_head(trace.heads())?;
    let profile = layer_vaq_over_steps(&[trace], k_head)?;
    match config.fixed_layer {
        Some(layer) => profile.with_fixed_layer(layer),
        None => Ok(profile),
    }
}

/// Layer-wise VAQ averaged over several decoding steps.
///
/// The top-head set is re-ranked independently at every step. All traces
/// must share the same shape.
pub fn layer_vaq_over_steps<T: Scalar>(steps: &[&AttentionTrace<T>], k_head: usize) -> Result<VaqProfile<T>> {
    let first = steps.first().ok_or_else(|| LaserError::Config("at least one step required".into()))?;
    let (layers, heads) = (first.layers(), first.heads());
    if k_head == 0 || k_head > heads {
        return Err(LaserError::Config(format!("k_head {k_head} not in 1..={heads}")));
    }
    for s in steps {
        if s.layers() != layers || s.heads() != heads || s.patches() != first.patches() {
            return Err(LaserError::Shape("steps have differing trace shapes".into()));
        }
    }
    let n_steps = T::count(steps.len());
    let k = T::count(k_head);
    let mut layer_scores = vec![T::zero(); layers];
    let mut head_scores = vec![vec![T::zero(); heads]; layers];
    let mut selections = Vec::new();
    for (si, trace) in steps.iter().enumerate() {
        let table = head_vaq_table(trace);
        for (l, scores) in table.iter().enumerate() {
            let sel = HeadSelection::rank(l, scores, k_head);
            let top_mean = sel.heads.iter().map(|&h| scores[h]).sum::<T>() / k;
            layer_scores[l] = layer_scores[l] + top_mean / n_steps;
            for (acc, &s) in head_scores[l].iter_mut().zip(scores) {
                *acc = *acc + s / n_steps;
            }
            if si + 1 == steps.len() {
                selections.push(sel);
            }
        }
    }
    let selected_layer = argmax(&layer_scores).unwrap_or(0);
    Ok(VaqProfile { layer_scores, head_scores, selections, selected_layer, k_head })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridGeometry;
    use crate::trace::TokenLayout;

    fn trace(layers: usize, heads: usize, with: Vec<f64>, without: Vec<f64>) -> AttentionTrace<f64> {
        let p = with.len() / (layers * heads);
        let grid = GridGeometry::new(1, p as u32, p as u32, 1).unwrap();
        AttentionTrace::new(layers, heads, grid, TokenLayout::contiguous(1, p, 2, 1), with, without, "unit").unwrap()
    }

    #[test]
    fn map_is_clipped_difference() {
        let t = trace(1, 1, vec![0.5, 0.3, 0.2], vec![0.5, 0.1, 0.4]);
        let m = contrastive_map(&t, 0, 0).unwrap();
        assert_eq!(m.values[0], 0.0);
        assert!((m.values[1] - 0.2).abs() < 1e-15);
        assert_eq!(m.values[2], 0.0);
        assert!((head_vaq(&m) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn identical_conditions_give_zero_map() {
        let t = trace(1, 1, vec![0.2, 0.3], vec![0.2, 0.3]);
        let m = contrastive_map(&t, 0, 0).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
        assert_eq!(head_vaq(&m), 0.0);
    }

    #[test]
    fn out_of_range_head() {
        let t = trace(1, 1, vec![0.2], vec![0.2]);
        assert!(matches!(contrastive_map(&t, 0, 1), Err(LaserError::Range { what: "head", .. })));
        assert!(matches!(contrastive_map(&t, 1, 0), Err(LaserError::Range { what: "layer", .. })));
    }

    #[test]
    fn head_vaq_three_four_five() {
        let m = ContrastiveMap { layer: 0, head: 0, values: vec![0.3f64, 0.4] };
        assert!((head_vaq(&m) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_layer_selection() {
        // Single-patch rows make each head's VAQ equal to its difference.
        let with = vec![0.1, 0.3, 0.2, 0.2];
        let without = vec![0.0; 4];
        let t = trace(2, 2, with, without);
        let cfg = PipelineConfig { k_head: Some(1), ..Default::default() };
        let p = layer_vaq(&t, &cfg).unwrap();
        assert!((p.layer_scores[0] - 0.3).abs() < 1e-15);
        assert!((p.layer_scores[1] - 0.2).abs() < 1e-15);
        assert_eq!(p.selected_layer, 0);
        assert_eq!(p.selections[0].heads, vec![1]);
        assert_eq!(p.selections[1].heads, vec![0]);
    }

    #[test]
    fn ties_resolve_to_lowest_layer() {
        let t = trace(3, 2, vec![0.2; 6], vec![0.1; 6]);
        let p = layer_vaq(&t, &PipelineConfig::default()).unwrap();
        assert_eq!(p.selected_layer, 0);
        let z = trace(3, 2, vec![0.2; 6], vec![0.2; 6]);
        let p = layer_vaq(&z, &PipelineConfig::default()).unwrap();
        assert!(p.layer_scores.iter().all(|&s| s == 0.0));
        assert_eq!(p.selected_layer, 0);
        assert_eq!(p.peak_to_mean(), 0.0);
    }

    #[test]
    fn fixed_layer_overrides_selection() {
        let t = trace(3, 1, vec![0.3, 0.1, 0.2], vec![0.0; 3]);
        let cfg = PipelineConfig { fixed_layer: Some(2), ..Default::default() };
        assert_eq!(layer_vaq(&t, &cfg).unwrap().selected_layer, 2);
        let bad = PipelineConfig { fixed_layer: Some(3), ..Default::default() };
        assert!(layer_vaq(&t, &bad).is_err());
    }

    #[test]
    fn k_head_larger_than_heads_is_rejected() {
        let t = trace(1, 2, vec![0.1, 0.1], vec![0.0; 2]);
        let cfg = PipelineConfig { k_head: Some(3), ..Default::default() };
        assert!(layer_vaq(&t, &cfg).is_err());
    }

    #[test]
    fn multi_step_average_reranks_each_step() {
        let a = trace(1, 2, vec![0.4, 0.0], vec![0.0; 2]);
        let b = trace(1, 2, vec![0.0, 0.2], vec![0.0; 2]);
        let p = layer_vaq_over_steps(&[&a, &b], 1).unwrap();
        // step 1 keeps head 0 (0.4), step 2 keeps head 1 (0.2)
        assert!((p.layer_scores[0] - 0.3).abs() < 1e-15);
        assert_eq!(p.selections[0].heads, vec![1]);
        assert!((p.head_scores[0][0] - 0.2).abs() < 1e-15);
    }
}
