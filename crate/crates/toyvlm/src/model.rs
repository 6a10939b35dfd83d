//! Pre-norm causal transformer over text and image-patch tokens.

use laser_core::{AttentionTrace, GridGeometry, ImageBuffer, PixelRect, Scalar, TokenLayout};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ToyVlmConfig;
use crate::error::ToyError;
use crate::tensor::{dot, rms_norm, softmax_in_place, Matrix};
use crate::tokenizer::{Tokenizer, ANS, BOS};

const SYSTEM_PROMPT: &str = "describe what you see.";

#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub wq: Matrix<T>,
    pub wk: Matrix<T>,
    pub wv: Matrix<T>,
    pub wo: Matrix<T>,
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Matrix<T>,
}

/// Seeded toy vision-language model.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyVlm<T> {
    pub(crate) config: ToyVlmConfig,
    /// Leading residual dimensions kept free of positional encodings.
    pub(crate) reserved: usize,
    pub(crate) system_text: String,
    pub(crate) token_embed: Matrix<T>,
    pub(crate) patch_proj: Matrix<T>,
    pub(crate) patch_bias: Vec<T>,
    pub(crate) blocks: Vec<Block<T>>,
    pub(crate) unembed: Matrix<T>,
}

/// Visual tokens of an image plus the geometry they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedImage<T> {
    pub embeddings: Vec<Vec<T>>,
    /// Grid over the tokenized region (region-local pixel coordinates).
    pub grid: GridGeometry,
    /// Center-cropped region of the input that was tokenized.
    pub region: PixelRect,
}

/// One prompt position.
#[derive(Debug, Clone, PartialEq)]
pub enum InputToken<T> {
    Text(usize),
    Visual(Vec<T>),
}

/// Per-layer keys and values of every processed position.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache<T> {
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    len: usize,
}

impl<T: Scalar> KvCache<T> {
    pub fn new(layers: usize) -> Self {
        Self { keys: vec![Vec::new(); layers], values: vec![Vec::new(); layers], len: 0 }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Result of a prefill pass.
#[derive(Debug, Clone)]
pub struct Prefill<T> {
    /// Final-position attention over the visual span, `[layer][head][patch]`.
    pub visual_attention: Vec<T>,
    /// Final-position attention over the whole sequence, `[layer][head][token]`.
    pub full_attention: Vec<T>,
    pub logits: Vec<T>,
    pub cache: KvCache<T>,
    pub layout: TokenLayout,
}

/// Token ids of a prompt around its visual tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt<T> {
    pub system: Vec<usize>,
    pub visual: Vec<Vec<T>>,
    pub query: Vec<usize>,
    pub answer_prefix: Vec<usize>,
}

impl<T: Scalar> ToyVlm<T> {
    /// Random model; weights depend only on `config`.
    pub fn new(config: ToyVlmConfig) -> Result<Self, ToyError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.model_dim;
        let hidden = config.hidden_dim();
        let inv = |n: usize| 1.0 / (n as f64).sqrt();
        let token_embed = Matrix::gaussian(config.vocab_size, d, 1.0, &mut rng);
        let patch_proj = Matrix::gaussian(d, config.patch_len(), inv(config.patch_len()) * 2.0, &mut rng);
        let patch_bias = vec![T::zero(); d];
        let blocks = (0..config.layers)
            .map(|_| Block {
                wq: Matrix::gaussian(d, d, inv(d), &mut rng),
                wk: Matrix::gaussian(d, d, inv(d), &mut rng),
                wv: Matrix::gaussian(d, d, inv(d), &mut rng),
                wo: Matrix::gaussian(d, d, inv(d) * 0.5, &mut rng),
                w1: Matrix::gaussian(hidden, d, inv(d), &mut rng),
                b1: vec![T::zero(); hidden],
                w2: Matrix::gaussian(d, hidden, inv(hidden) * 0.5, &mut rng),
            })
            .collect();
        let unembed = Matrix::gaussian(config.vocab_size, d, inv(d), &mut rng);
        Ok(Self { config, reserved: 0, system_text: SYSTEM_PROMPT.to_string(), token_embed, patch_proj, patch_bias, blocks, unembed })
    }

    pub fn config(&self) -> &ToyVlmConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> Tokenizer {
        Tokenizer::new(self.config.vocab_size)
    }

    pub fn blocks(&self) -> &[Block<T>] {
        &self.blocks
    }

    /// Region of `width × height` that tokenization keeps: whole patches,
    /// at most `max_grid`, centered.
    pub fn token_region(&self, width: u32, height: u32) -> Result<(u32, u32, PixelRect), ToyError> {
        let px = self.config.patch_px;
        if width < px || height < px {
            return Err(ToyError::ImageTooSmall { width, height, patch_px: px });
        }
        let rows = (height / px).min(self.config.max_grid.0);
        let cols = (width / px).min(self.config.max_grid.1);
        let (w, h) = (cols * px, rows * px);
        let x0 = (width - w) / 2;
        let y0 = (height - h) / 2;
        Ok((rows, cols, PixelRect::new(x0, y0, x0 + w, y0 + h)))
    }

    /// The part of `image` the model actually sees.
    pub fn prepare_image(&self, image: &ImageBuffer) -> Result<ImageBuffer, ToyError> {
        let (_, _, region) = self.token_region(image.width(), image.height())?;
        if region == image.bounds() {
            return Ok(image.clone());
        }
        Ok(laser_core::apply_crop(image, &laser_core::CropBox(region))?.with_role(image.role()))
    }

    /// One embedding per patch, row-major.
    pub fn tokenize_image(&self, image: &ImageBuffer) -> Result<TokenizedImage<T>, ToyError> {
        let (rows, cols, region) = self.token_region(image.width(), image.height())?;
        let px = self.config.patch_px;
        let grid = GridGeometry::new(rows, cols, region.width(), region.height())?;
        let mut embeddings = Vec::with_capacity(grid.patch_count());
        let mut pixels = Vec::with_capacity(self.config.patch_len());
        for r in 0..rows {
            for c in 0..cols {
                pixels.clear();
                for y in 0..px {
                    for x in 0..px {
                        let p = image.pixel(region.x0 + c * px + x, region.y0 + r * px + y);
                        pixels.extend(p.iter().map(|&b| T::of(b as f64 / 127.5 - 1.0)));
                    }
                }
                let mut e = self.patch_proj.matvec(&pixels);
                for (v, &b) in e.iter_mut().zip(&self.patch_bias) {
                    *v = *v + b;
                }
                embeddings.push(e);
            }
        }
        Ok(TokenizedImage { embeddings, grid, region })
    }

    /// Standard prompt around `visual` with an optional query.
    pub fn prompt(&self, visual: Vec<Vec<T>>, query: &str) -> Prompt<T> {
        let tok = self.tokenizer();
        let mut system = vec![BOS];
        system.extend(tok.encode(&self.system_text));
        Prompt { system, visual, query: tok.encode(query), answer_prefix: vec![ANS] }
    }

    fn position(&self, pos: usize) -> Vec<T> {
        let d = self.config.model_dim;
        let free = d - self.reserved;
        let mut pe = vec![T::zero(); d];
        for j in 0..free {
            let freq = 1.0 / 10000f64.powf((2 * (j / 2)) as f64 / free as f64);
            let angle = pos as f64 * freq;
            pe[self.reserved + j] = T::of(if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
        pe
    }

    fn embed(&self, token: &InputToken<T>, pos: usize) -> Result<Vec<T>, ToyError> {
        let base = match token {
            InputToken::Text(id) if *id < self.config.vocab_size => self.token_embed.row(*id).to_vec(),
            InputToken::Text(id) => return Err(ToyError::Token(*id)),
            InputToken::Visual(e) => e.clone(),
        };
        Ok(base.iter().zip(self.position(pos)).map(|(&a, b)| a + b).collect())
    }

    /// Processes `inputs` after the cached positions. Returns the logits of
    /// the last input and, if requested, its attention rows `[layer][head][key]`.
    pub fn run(
        &self,
        cache: &mut KvCache<T>,
        inputs: &[InputToken<T>],
        capture: bool,
    ) -> Result<(Vec<T>, Vec<T>), ToyError> {
        let limit = self.config.max_seq_len();
        if cache.len + inputs.len() > limit {
            return Err(ToyError::Capacity { len: cache.len + inputs.len(), limit });
        }
        let d = self.config.model_dim;
        let heads = self.config.heads;
        let hd = self.config.head_dim();
        let scale = T::of(1.0 / (hd as f64).sqrt());
        let mut logits = Vec::new();
        let mut captured = Vec::new();
        for (i, input) in inputs.iter().enumerate() {
            let pos = cache.len;
            let last = i + 1 == inputs.len();
            let mut x = self.embed(input, pos)?;
            for (l, block) in self.blocks.iter().enumerate() {
                let h = rms_norm(&x);
                let q = block.wq.matvec(&h);
                cache.keys[l].extend(block.wk.matvec(&h));
                cache.values[l].extend(block.wv.matvec(&h));
                let keys = &cache.keys[l];
                let values = &cache.values[l];
                let n = pos + 1;
                let mut mixed = vec![T::zero(); d];
                for head in 0..heads {
                    let off = head * hd;
                    let qh = &q[off..off + hd];
                    let mut scores: Vec<T> =
                        (0..n).map(|j| dot(qh, &keys[j * d + off..j * d + off + hd]) * scale).collect();
                    softmax_in_place(&mut scores);
                    for (j, &p) in scores.iter().enumerate() {
                        let v = &values[j * d + off..j * d + off + hd];
                        for (m, &vv) in mixed[off..off + hd].iter_mut().zip(v) {
                            *m = *m + p * vv;
                        }
                    }
                    if capture && last {
                        captured.extend(scores);
                    }
                }
                for (xv, o) in x.iter_mut().zip(block.wo.matvec(&mixed)) {
                    *xv = *xv + o;
                }
                let h2 = rms_norm(&x);
                let mut act = block.w1.matvec(&h2);
                for (a, &b) in act.iter_mut().zip(&block.b1) {
                    *a = (*a + b).max(T::zero());
                }
                for (xv, o) in x.iter_mut().zip(block.w2.matvec(&act)) {
                    *xv = *xv + o;
                }
            }
            cache.len += 1;
            if last {
                logits = self.unembed.matvec(&rms_norm(&x));
            }
        }
        Ok((logits, captured))
    }

    /// Runs a prompt and exports the final position's attention.
    pub fn forward_prefill(&self, prompt: &Prompt<T>) -> Result<Prefill<T>, ToyError> {
        let layout = TokenLayout::contiguous(
            prompt.system.len(),
            prompt.visual.len(),
            prompt.query.len(),
            prompt.answer_prefix.len(),
        );
        let inputs: Vec<InputToken<T>> = prompt
            .system
            .iter()
            .map(|&t| InputToken::Text(t))
            .chain(prompt.visual.iter().cloned().map(InputToken::Visual))
            .chain(prompt.query.iter().map(|&t| InputToken::Text(t)))
            .chain(prompt.answer_prefix.iter().map(|&t| InputToken::Text(t)))
            .collect();
        if inputs.is_empty() {
            return Err(ToyError::Config("empty prompt".into()));
        }
        let mut cache = KvCache::new(self.config.layers);
        let (logits, full_attention) = self.run(&mut cache, &inputs, true)?;
        let n = inputs.len();
        let vis = layout.visual.start as usize..layout.visual.end as usize;
        let visual_attention = full_attention.chunks_exact(n).flat_map(|row| row[vis.clone()].iter().copied()).collect();
        Ok(Prefill { visual_attention, full_attention, logits, cache, layout })
    }

    /// Appends one token and returns the next-position logits.
    pub fn decode_step(&self, cache: &mut KvCache<T>, token: usize) -> Result<Vec<T>, ToyError> {
        Ok(self.run(cache, &[InputToken::Text(token)], false)?.0)
    }

    /// Paired with/without-query prefill attention for `image` (already
    /// reduced to the model's token region, see [`Self::prepare_image`]).
    pub fn make_paired_trace(&self, image: &ImageBuffer, query: &str) -> Result<AttentionTrace<T>, ToyError> {
        let tokens = self.tokenize_image(image)?;
        if tokens.region != image.bounds() {
            return Err(ToyError::Engine(laser_core::LaserError::Geometry(format!(
                "image {}x{} exceeds the token region; call prepare_image first",
                image.width(),
                image.height()
            ))));
        }
        let with = self.prompt(tokens.embeddings.clone(), query);
        let without = Prompt { query: Vec::new(), ..with.clone() };
        let a = self.forward_prefill(&with)?;
        let b = self.forward_prefill(&without)?;
        assert_eq!(b.layout, a.layout.without_query(), "prompt structure must match outside the query");
        let source = format!("toy-vlm/seed={}/query={query}", self.config.seed);
        Ok(AttentionTrace::new(
            self.config.layers,
            self.config.heads,
            tokens.grid,
            a.layout,
            a.visual_attention,
            b.visual_attention,
            source,
        )?)
    }

    /// Every parameter, in a fixed order.
    pub fn parameters(&self) -> Vec<T> {
        let mut out = Vec::new();
        out.extend(&self.token_embed.data);
        out.extend(&self.patch_proj.data);
        out.extend(&self.patch_bias);
        for b in &self.blocks {
            for m in [&b.wq, &b.wk, &b.wv, &b.wo, &b.w1, &b.w2] {
                out.extend(&m.data);
            }
            out.extend(&b.b1);
        }
        out.extend(&self.unembed.data);
        out
    }
}
