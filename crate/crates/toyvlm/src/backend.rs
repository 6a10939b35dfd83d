use laser_core::{DecodeBackend, ImageBuffer, Scalar};

use crate::error::ToyError;
use crate::model::{KvCache, ToyVlm};
use crate::tokenizer::END;

/// An image and question for one decoding stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPrompt {
    pub image: ImageBuffer,
    pub query: String,
}

impl ToyPrompt {
    pub fn new(image: ImageBuffer, query: impl Into<String>) -> Self {
        Self { image, query: query.into() }
    }
}

impl<T: Scalar> DecodeBackend<T> for ToyVlm<T> {
    type Prompt = ToyPrompt;
    type Session = KvCache<T>;
    type Error = ToyError;

    fn prefill(&self, prompt: &ToyPrompt) -> Result<(KvCache<T>, Vec<T>), ToyError> {
        let visual = self.tokenize_image(&prompt.image)?.embeddings;
        let out = self.forward_prefill(&self.prompt(visual, &prompt.query))?;
        Ok((out.cache, out.logits))
    }

    fn step(&self, session: &mut KvCache<T>, token: usize) -> Result<Vec<T>, ToyError> {
        self.decode_step(session, token)
    }

    fn end_token(&self) -> Option<usize> {
        Some(END)
    }
}
