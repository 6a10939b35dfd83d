use crate::error::ToyError;

/// Shape and seed of a toy model.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyVlmConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub vocab_size: usize,
    /// Side of a square image patch, in pixels.
    pub patch_px: u32,
    /// Largest `(rows, cols)` visual grid; larger images are center-cropped.
    pub max_grid: (u32, u32),
    pub seed: u64,
}

impl Default for ToyVlmConfig {
    fn default() -> Self {
        Self { layers: 6, heads: 4, model_dim: 64, vocab_size: 64, patch_px: 8, max_grid: (12, 12), seed: 0 }
    }
}

/// Room for text tokens beyond the largest visual grid.
pub const MAX_TEXT_TOKENS: usize = 128;

impl ToyVlmConfig {
    pub fn validate(&self) -> Result<(), ToyError> {
        let fail = |m: String| Err(ToyError::Config(m));
        if self.layers == 0 || self.heads == 0 {
            return fail("layers and heads must be positive".into());
        }
        if self.model_dim == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return fail(format!("model_dim {} not divisible by {} heads", self.model_dim, self.heads));
        }
        if self.vocab_size < crate::tokenizer::FIRST_CHAR + 1 {
            return fail(format!("vocab_size {} too small", self.vocab_size));
        }
        if self.patch_px == 0 || self.max_grid.0 == 0 || self.max_grid.1 == 0 {
            return fail("patch size and grid must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn hidden_dim(&self) -> usize {
        self.model_dim * 2
    }

    pub fn max_seq_len(&self) -> usize {
        (self.max_grid.0 * self.max_grid.1) as usize + MAX_TEXT_TOKENS
    }

    /// Values per flattened RGB patch.
    pub fn patch_len(&self) -> usize {
        (self.patch_px * self.patch_px * 3) as usize
    }
}
