//! Prompt layout and paired prefill attention traces.

use serde::{Deserialize, Serialize};

use crate::error::{LaserError, Result};
use crate::geometry::GridGeometry;
use crate::scalar::Scalar;

/// Visual-slice row sums may exceed one by at most this much.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

/// Half-open token index range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: u32,
    pub end: u32,
}

impl TokenSpan {
    pub fn new(start: u32, end: u32) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Where each prompt segment sits in the with-query token sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub system: TokenSpan,
    pub visual: TokenSpan,
    pub query: TokenSpan,
    pub answer_prefix: TokenSpan,
}

impl TokenLayout {
    /// Builds contiguous spans starting at token 0.
    pub fn contiguous(system: usize, visual: usize, query: usize, answer_prefix: usize) -> Self {
        let mut at = 0u32;
        let mut next = |n: usize| {
            let span = TokenSpan::new(at, at + n as u32);
            at += n as u32;
            span
        };
        Self {
            system: next(system),
            visual: next(visual),
            query: next(query),
            answer_prefix: next(answer_prefix),
        }
    }

    pub fn spans(&self) -> [TokenSpan; 4] {
        [self.system, self.visual, self.query, self.answer_prefix]
    }

    pub fn total_len(&self) -> usize {
        self.answer_prefix.end as usize
    }

    /// Checks ordering, contiguity and the visual span length.
    pub fn validate(&self, patch_count: usize) -> Result<()> {
        let spans = self.spans();
        if spans.iter().any(|s| s.end < s.start) {
            return Err(LaserError::Validation(format!("inverted span in layout {self:?}")));
        }
        if self.system.start != 0 {
            return Err(LaserError::Validation("system span must start at token 0".into()));
        }
        for pair in spans.windows(2) {
            if pair[0].end != pair[1].start {
                return Err(LaserError::Validation(format!(
                    "spans not contiguous: {:?} then {:?}",
                    pair[0], pair[1]
                )));
            }
        }
        if self.visual.len() != patch_count {
            return Err(LaserError::Validation(format!(
                "visual span holds {} tokens but grid has {patch_count} patches",
                self.visual.len()
            )));
        }
        Ok(())
    }

    /// Layout of the same prompt with the query tokens removed.
    pub fn without_query(&self) -> Self {
        Self::contiguous(self.system.len(), self.visual.len(), 0, self.answer_prefix.len())
    }
}

/// Prefill-end attention over visual tokens, with and without the query.
///
/// Tensors are flat `[layer][head][patch]` arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace<T> {
    layers: usize,
    heads: usize,
    grid: GridGeometry,
    layout: TokenLayout,
    with_query: Vec<T>,
    without_query: Vec<T>,
    source_id: String,
}

impl<T: Scalar> AttentionTrace<T> {
    /// Assembles and validates a trace.
    pub fn new(
        layers: usize,
        heads: usize,
        grid: GridGeometry,
        layout: TokenLayout,
        with_query: Vec<T>,
        without_query: Vec<T>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        let trace = Self {
            layers,
            heads,
            grid,
            layout,
            with_query,
            without_query,
            source_id: source_id.into(),
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 {
            return Err(LaserError::Validation(format!(
                "trace needs at least one layer and head (got L={}, H={})",
                self.layers, self.heads
            )));
        }
        let p = self.grid.patch_count();
        self.layout.validate(p)?;
        let expected = self.layers * self.heads * p;
        for (name, t) in [("with_query", &self.with_query), ("without_query", &self.without_query)] {
            if t.len() != expected {
                return Err(LaserError::Shape(format!(
                    "{name} holds {} weights, expected L·H·P = {expected}",
                    t.len()
                )));
            }
        }
        let limit = T::of(1.0 + ROW_SUM_TOLERANCE);
        for layer in 0..self.layers {
            for head in 0..self.heads {
                for (name, row) in [
                    ("with_query", self.with_query_row(layer, head)),
                    ("without_query", self.without_query_row(layer, head)),
                ] {
                    if let Some(p) = row.iter().position(|w| !w.is_finite() || *w < T::zero()) {
                        return Err(LaserError::AttentionRow {
                            layer,
                            head,
                            reason: format!("{name} weight at patch {p} is {}", row[p]),
                        });
                    }
                    let sum: T = row.iter().copied().sum();
                    if sum > limit {
                        return Err(LaserError::AttentionRow {
                            layer,
                            head,
                            reason: format!("{name} visual mass {sum} exceeds 1"),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn patches(&self) -> usize {
        self.grid.patch_count()
    }

    pub fn grid(&self) -> &GridGeometry {
        &self.grid
    }

    pub fn layout(&self) -> &TokenLayout {
        &self.layout
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn with_query(&self) -> &[T] {
        &self.with_query
    }

    pub fn without_query(&self) -> &[T] {
        &self.without_query
    }

    fn row_range(&self, layer: usize, head: usize) -> std::ops::Range<usize> {
        let p = self.patches();
        let start = (layer * self.heads + head) * p;
        start..start + p
    }

    pub fn check_index(&self, layer: usize, head: usize) -> Result<()> {
        if layer >= self.layers {
            return Err(LaserError::Range { what: "layer", index: layer, limit: self.layers });
        }
        if head >= self.heads {
            return Err(LaserError::Range { what: "head", index: head, limit: self.heads });
        }
        Ok(())
    }

    /// Panics if `(layer, head)` is out of range.
    pub fn with_query_row(&self, layer: usize, head: usize) -> &[T] {
        &self.with_query[self.row_range(layer, head)]
    }

    /// Panics if `(layer, head)` is out of range.
    pub fn without_query_row(&self, layer: usize, head: usize) -> &[T] {
        &self.without_query[self.row_range(layer, head)]
    }

    /// Adds the same per-patch component to both conditions of every
    /// `(layer, head)` row, as a query-invariant attention sink would.
    pub fn add_query_invariant(&self, component: &[T]) -> Result<Self> {
        if component.len() != self.patches() {
            return Err(LaserError::Shape(format!(
                "component of length {} for {} patches",
                component.len(),
                self.patches()
            )));
        }
        let add = |t: &[T]| -> Vec<T> {
            t.chunks_exact(self.patches())
                .flat_map(|row| row.iter().zip(component).map(|(&a, &c)| a + c))
                .collect()
        };
        Self::new(
            self.layers,
            self.heads,
            self.grid,
            self.layout,
            add(&self.with_query),
            add(&self.without_query),
            self.source_id.clone(),
        )
    }

    /// Converts the weights to another scalar type.
    pub fn cast<U: Scalar>(&self) -> AttentionTrace<U> {
        let conv = |t: &[T]| t.iter().map(|&v| U::of(v.as_f64())).collect();
        AttentionTrace {
            layers: self.layers,
            heads: self.heads,
            grid: self.grid,
            layout: self.layout,
            with_query: conv(&self.with_query),
            without_query: conv(&self.without_query),
            source_id: self.source_id.clone(),
        }
    }
}
