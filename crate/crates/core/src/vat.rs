//! Evidence-contrastive decoding.
//!
//! The positive stream sees the zoomed-in image, the negative stream the same
//! crop with the evidence masked. Their logit difference (the evidence gain)
//! is added back to the positive logits with strength `alpha`, and both
//! streams are fed the token chosen from the combined scores.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::config::{DecodeMode, PipelineConfig};
use crate::error::{LaserError, Result};
use crate::image::ImageBuffer;
use crate::scalar::{argmax, Scalar};

/// Positive and negative logits for one decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsPair<T> {
    pub step: usize,
    pub z_plus: Vec<T>,
    pub z_minus: Vec<T>,
}

impl<T: Scalar> LogitsPair<T> {
    pub fn new(step: usize, z_plus: Vec<T>, z_minus: Vec<T>) -> Result<Self> {
        if z_plus.len() != z_minus.len() {
            return Err(LaserError::Shape(format!(
                "step {step}: z_plus has {} logits but z_minus has {}",
                z_plus.len(),
                z_minus.len()
            )));
        }
        if z_plus.iter().chain(&z_minus).any(|v| !v.is_finite()) {
            return Err(LaserError::Validation(format!("step {step}: non-finite logit")));
        }
        Ok(Self { step, z_plus, z_minus })
    }
}

/// Evidence gain and combined scores for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredLogits<T> {
    pub step: usize,
    pub vat: Vec<T>,
    pub s: Vec<T>,
    pub chosen_token: Option<usize>,
}

impl<T: Scalar> ScoredLogits<T> {
    /// Scores of a positive-only step (no counterfactual stream).
    pub fn positive_only(step: usize, z_plus: Vec<T>) -> Self {
        Self { step, vat: vec![T::zero(); z_plus.len()], s: z_plus, chosen_token: None }
    }
}

/// `z_plus - z_minus`.
pub fn compute_vat<T: Scalar>(pair: &LogitsPair<T>) -> Result<Vec<T>> {
    if pair.z_plus.len() != pair.z_minus.len() {
        return Err(LaserError::Shape(format!("step {}: logit lengths differ", pair.step)));
    }
    Ok(pair.z_plus.iter().zip(&pair.z_minus).map(|(&p, &m)| p - m).collect())
}

/// `s = z_plus + alpha · (z_plus - z_minus)`.
pub fn combine_scores<T: Scalar>(pair: &LogitsPair<T>, alpha: T) -> Result<ScoredLogits<T>> {
    if alpha < T::zero() {
        return Err(LaserError::Config(format!("alpha must be non-negative, got {alpha}")));
    }
    let vat = compute_vat(pair)?;
    let s = pair.z_plus.iter().zip(&vat).map(|(&z, &g)| z + alpha * g).collect();
    Ok(ScoredLogits { step: pair.step, vat, s, chosen_token: None })
}

/// Seeded source of randomness for sampled decoding.
#[derive(Debug, Clone)]
pub struct TokenSampler {
    rng: ChaCha8Rng,
}

impl TokenSampler {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Draws an index from `softmax(scores / temperature)`.
    pub fn sample<T: Scalar>(&mut self, scores: &[T], temperature: f64) -> usize {
        let scaled: Vec<f64> = scores.iter().map(|v| v.as_f64() / temperature).collect();
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut u = self.rng.random::<f64>() * total;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        weights.len().saturating_sub(1)
    }
}

/// Picks the next token from combined scores.
pub fn select_token<T: Scalar>(scores: &[T], mode: DecodeMode, temperature: f64, sampler: &mut TokenSampler) -> usize {
    match mode {
        DecodeMode::Greedy => argmax(scores).unwrap_or(0),
        DecodeMode::Sample => sampler.sample(scores, temperature),
    }
}

/// Which decoding stream an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamTag {
    Positive,
    Negative,
}

impl std::fmt::Display for StreamTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StreamTag::Positive => "+",
            StreamTag::Negative => "-",
        })
    }
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("backend failure in stream ({stream}): {source}")]
    Backend {
        stream: StreamTag,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Engine(#[from] LaserError),
}

/// A model that can prefill a prompt and then produce logits step by step.
pub trait DecodeBackend<T: Scalar> {
    type Prompt;
    type Session;
    type Error: std::error::Error + Send + Sync + 'static;

    /// Runs the prompt and returns the logits for the first answer token.
    fn prefill(&self, prompt: &Self::Prompt) -> std::result::Result<(Self::Session, Vec<T>), Self::Error>;

    /// Appends `token` and returns the logits for the following position.
    fn step(&self, session: &mut Self::Session, token: usize) -> std::result::Result<Vec<T>, Self::Error>;

    /// Token that terminates generation, if any.
    fn end_token(&self) -> Option<usize>;
}

/// Generated tokens with their per-step scores.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput<T> {
    pub tokens: Vec<usize>,
    pub steps: Vec<ScoredLogits<T>>,
    /// Number of streams that were run (1 or 2).
    pub streams: usize,
}

fn tagged<E: std::error::Error + Send + Sync + 'static>(stream: StreamTag) -> impl FnOnce(E) -> DecodeError {
    move |e| DecodeError::Backend { stream, source: Box::new(e) }
}

/// Two-stream decoding with combined scores.
///
/// When `negative` is `None` or `config.vat_enabled` is false only the
/// positive stream runs and scores are its raw logits.
pub fn decode_pair<T: Scalar, B: DecodeBackend<T>>(
    backend: &B,
    positive: &B::Prompt,
    negative: Option<&B::Prompt>,
    config: &PipelineConfig,
    max_new_tokens: usize,
) -> std::result::Result<DecodeOutput<T>, DecodeError> {
    config.validate()?;
    let alpha = T::of(config.alpha);
    let mut sampler = TokenSampler::new(config.seed);
    let negative = negative.filter(|_| config.vat_enabled);

    let (mut pos_session, mut z_plus) = backend.prefill(positive).map_err(tagged(StreamTag::Positive))?;
    let mut neg = match negative {
        Some(prompt) => Some(backend.prefill(prompt).map_err(tagged(StreamTag::Negative))?),
        None => None,
    };
    let streams = if neg.is_some() { 2 } else { 1 };
    let mut tokens = Vec::new();
    let mut steps = Vec::new();
    let mut neg_prefix: Vec<usize> = Vec::new();

    for step in 0..max_new_tokens {
        let mut scored = match &neg {
            Some((_, z_minus)) => combine_scores(&LogitsPair::new(step, z_plus.clone(), z_minus.clone())?, alpha)?,
            None => ScoredLogits::positive_only(step, z_plus.clone()),
        };
        let token = select_token(&scored.s, config.decode_mode, config.temperature, &mut sampler);
        scored.chosen_token = Some(token);
        tokens.push(token);
        steps.push(scored);
        if backend.end_token() == Some(token) || step + 1 == max_new_tokens {
            break;
        }
        z_plus = backend.step(&mut pos_session, token).map_err(tagged(StreamTag::Positive))?;
        if let Some((session, z_minus)) = neg.as_mut() {
            *z_minus = backend.step(session, token).map_err(tagged(StreamTag::Negative))?;
            neg_prefix.push(token);
            assert_eq!(neg_prefix.as_slice(), &tokens[..], "decoding streams desynchronized");
        }
    }
    Ok(DecodeOutput { tokens, steps, streams })
}

/// Plain single-stream decoding of one prompt.
pub fn decode_single<T: Scalar, B: DecodeBackend<T>>(
    backend: &B,
    prompt: &B::Prompt,
    config: &PipelineConfig,
    max_new_tokens: usize,
) -> std::result::Result<DecodeOutput<T>, DecodeError> {
    decode_pair(backend, prompt, None, config, max_new_tokens)
}

/// Length of the linear noise schedule used for noised counterfactuals.
pub const NOISE_SCHEDULE_STEPS: u32 = 1000;

/// Cumulative signal retention `prod(1 - beta_i)` after `steps` steps of a
/// linear beta schedule from 1e-4 to 0.02.
pub fn noise_signal_retention(steps: u32) -> f64 {
    let t = steps.min(NOISE_SCHEDULE_STEPS);
    let (lo, hi) = (1e-4, 0.02);
    let n = NOISE_SCHEDULE_STEPS as f64;
    (0..t).map(|i| 1.0 - (lo + (hi - lo) * i as f64 / (n - 1.0))).product()
}

/// Diffusion-style noised copy of `image` for the noise-contrast baseline.
///
/// Pixels are mapped to `[-1, 1]`, mixed as `sqrt(a)·x + sqrt(1-a)·eps` with
/// `a` = [`noise_signal_retention`], and clamped back to bytes. Zero steps
/// return the image unchanged.
pub fn vcd_counterfactual(image: &ImageBuffer, noise_steps: u32, seed: u64) -> ImageBuffer {
    if noise_steps == 0 {
        return image.clone();
    }
    let a = noise_signal_retention(noise_steps);
    let (keep, mix) = (a.sqrt(), (1.0 - a).sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = image
        .data()
        .iter()
        .map(|&b| {
            let x = b as f64 / 127.5 - 1.0;
            let eps: f64 = rng.sample(StandardNormal);
            (((keep * x + mix * eps) + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
        })
        .collect();
    ImageBuffer::from_rgb(image.width(), image.height(), data).expect("same dimensions")
}
