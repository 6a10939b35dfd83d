//! Toy models with planted circuits and a matching demo scene.
//!
//! The first [`RESERVED`] residual dimensions are cut off from all random
//! weights and carry hand-placed features instead:
//!
//! | dim | feature |
//! |-----|---------|
//! | 0 | constant 1 on every token |
//! | 1 | patch redness, linear in pixels |
//! | 2 | 1 on character tokens (the query) |
//! | 3 | written by a copy head that reads the query |
//! | 4 | patch brightness, linear in pixels |
//! | 5 | redness gathered by the grounding head |
//!
//! Layer 0 head 0 copies "a query is present" into dim 3. Head 0 of the
//! planted layer uses dim 3 as its query and redness as its key, so it looks
//! at red patches only when the question is in the prompt. Sink heads attend
//! bright patches regardless of the question.

use std::str::FromStr;

use laser_core::{apply_crop, build_counterfactual, ImageBuffer, PipelineConfig, PixelRect, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ToyVlmConfig;
use crate::error::ToyError;
use crate::model::{Block, ToyVlm};
use crate::pipeline::{localize, toy_pipeline_config};
use crate::tokenizer::FIRST_CHAR;

pub const RESERVED: usize = 8;
const BIAS: usize = 0;
const EVID: usize = 1;
const QUERY: usize = 2;
const QSEEN: usize = 3;
const SINK: usize = 4;
const EVOUT: usize = 5;

const SCRIPTED_SEED: u64 = 7;
const RANDOM_QK_SCALE: f64 = 0.3;
const COPY_GAIN: f64 = 4.0;
const GROUND_GAIN: f64 = 6.0;
const SINK_GAIN: f64 = 7.0;
const EVOUT_GAIN: f64 = 3.0;
const OTHER_TOKEN_SCALE: f64 = 0.2;

/// Designed first-step logits of the three answer tokens, in the order
/// prior, evidence, absence.
const PLUS_TARGET: [f64; 3] = [8.0, 7.0, 0.0];
const MINUS_ABSENCE: f64 = 9.0;

pub const DEMO_QUERY: &str = "is there a red square?";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    SinkDominant,
    MidLayerGrounding,
    DeepLayerGrounding,
    EvidenceFlipsToken,
}

impl Scenario {
    pub const ALL: [Scenario; 4] =
        [Scenario::SinkDominant, Scenario::MidLayerGrounding, Scenario::DeepLayerGrounding, Scenario::EvidenceFlipsToken];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::SinkDominant => "sink-dominant",
            Scenario::MidLayerGrounding => "mid-layer-grounding",
            Scenario::DeepLayerGrounding => "deep-layer-grounding",
            Scenario::EvidenceFlipsToken => "evidence-flips-token",
        }
    }

    /// Layer whose head 0 grounds the query.
    pub fn planted_layer(self, layers: usize) -> usize {
        match self {
            Scenario::DeepLayerGrounding => layers - 1,
            _ => layers / 2,
        }
    }
}

impl FromStr for Scenario {
    type Err = ToyError;

    fn from_str(s: &str) -> Result<Self, ToyError> {
        Scenario::ALL.into_iter().find(|sc| sc.name() == s).ok_or_else(|| ToyError::UnknownScenario(s.to_string()))
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Answer tokens of the evidence-flips-token scenario with their designed
/// first-step logits on the positive and counterfactual streams.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipTokens {
    pub prior: usize,
    pub evidence: usize,
    pub absence: usize,
    pub plus: [f64; 3],
    pub minus: [f64; 3],
}

impl FlipTokens {
    pub fn ids(&self) -> [usize; 3] {
        [self.prior, self.evidence, self.absence]
    }

    /// First token predicted from the designed logits for a given `alpha`.
    pub fn expected_first_token(&self, alpha: f64) -> usize {
        let s: Vec<f64> = (0..3).map(|i| self.plus[i] + alpha * (self.plus[i] - self.minus[i])).collect();
        let best = laser_core::scalar::argmax(&s).expect("three scores");
        self.ids()[best]
    }
}

/// A scripted model with its demo input and ground truth.
#[derive(Debug, Clone)]
pub struct ScriptedModel<T> {
    pub scenario: Scenario,
    pub model: ToyVlm<T>,
    pub image: ImageBuffer,
    pub query: String,
    pub signal_layer: usize,
    /// Row-major indices of the patches covered by the red target.
    pub evidence_patches: Vec<usize>,
    pub evidence_box: PixelRect,
    pub sink_patch: Option<usize>,
    pub tokens: Option<FlipTokens>,
    pub pipeline: PipelineConfig,
}

/// Builds the named scenario at the default toy configuration.
pub fn make_scripted_model<T: Scalar>(scenario: &str) -> Result<ScriptedModel<T>, ToyError> {
    build_scripted(scenario.parse()?, ToyVlmConfig { seed: SCRIPTED_SEED, ..Default::default() })
}

pub fn build_scripted<T: Scalar>(scenario: Scenario, config: ToyVlmConfig) -> Result<ScriptedModel<T>, ToyError> {
    if config.layers < 2 || config.head_dim() == 0 || config.model_dim <= RESERVED + 2 {
        return Err(ToyError::Config("scripted models need at least 2 layers and model_dim > 10".into()));
    }
    if scenario == Scenario::SinkDominant && config.heads < 2 {
        return Err(ToyError::Config("sink-dominant needs at least 2 heads".into()));
    }
    let px = config.patch_px;
    let side = 12 * px;
    let grid_side = 12u32.min(config.max_grid.0).min(config.max_grid.1);
    if grid_side < 12 {
        return Err(ToyError::Config("scripted scene needs a 12x12 grid".into()));
    }
    let mut model = ToyVlm::<T>::new(config.clone())?;
    let layer = scenario.planted_layer(config.layers);
    plant(&mut model, scenario, layer);

    let scene = demo_scene(px, config.seed);
    let evidence_patches = scene.evidence_patches.clone();
    let mut scripted = ScriptedModel {
        scenario,
        model,
        image: scene.image,
        query: DEMO_QUERY.to_string(),
        signal_layer: layer,
        evidence_patches,
        evidence_box: scene.evidence_box,
        sink_patch: (scenario == Scenario::SinkDominant).then_some(scene.sink_patch),
        tokens: None,
        pipeline: toy_pipeline_config(),
    };
    debug_assert_eq!(scripted.image.width(), side);
    if scenario == Scenario::EvidenceFlipsToken {
        scripted.tokens = Some(calibrate_answer_tokens(&mut scripted)?);
    }
    Ok(scripted)
}

fn isolate_reserved<T: Scalar>(model: &mut ToyVlm<T>) {
    let r = 0..RESERVED;
    model.reserved = RESERVED;
    model.system_text.clear();
    model.token_embed.zero_cols(r.clone());
    model.patch_proj.zero_rows(r.clone());
    model.unembed.zero_cols(r.clone());
    for b in &mut model.blocks {
        for m in [&mut b.wq, &mut b.wk, &mut b.wv, &mut b.w1] {
            m.zero_cols(r.clone());
        }
        b.wo.zero_rows(r.clone());
        b.w2.zero_rows(r.clone());
        b.wq.scale(T::of(RANDOM_QK_SCALE));
        b.wk.scale(T::of(RANDOM_QK_SCALE));
    }
}

/// Replaces one head with a single-feature circuit: query reads `q_from`,
/// key reads `k_from`, and optionally the value copies `(from, to, gain)`.
fn plant_head<T: Scalar>(
    block: &mut Block<T>,
    head: usize,
    head_dim: usize,
    q_from: usize,
    k_from: usize,
    gain: f64,
    value: Option<(usize, usize, f64)>,
) {
    let span = head * head_dim..(head + 1) * head_dim;
    block.wq.zero_rows(span.clone());
    block.wk.zero_rows(span.clone());
    block.wv.zero_rows(span.clone());
    block.wo.zero_cols(span.clone());
    block.wq.set(span.start, q_from, T::of(gain));
    block.wk.set(span.start, k_from, T::of(gain));
    if let Some((from, to, g)) = value {
        block.wv.set(span.start, from, T::one());
        block.wo.set(to, span.start, T::of(g));
    }
}

fn plant<T: Scalar>(model: &mut ToyVlm<T>, scenario: Scenario, layer: usize) {
    isolate_reserved(model);
    let cfg = model.config.clone();
    for t in 0..cfg.vocab_size {
        model.token_embed.set(t, BIAS, T::one());
        if t >= FIRST_CHAR {
            model.token_embed.set(t, QUERY, T::one());
        }
    }
    model.patch_bias[BIAS] = T::one();
    let pixels = (cfg.patch_px * cfg.patch_px) as usize;
    for i in 0..pixels {
        for c in 0..3 {
            let redness = if c == 0 { 1.0 } else { -0.5 };
            model.patch_proj.set(EVID, i * 3 + c, T::of(redness / pixels as f64));
            model.patch_proj.set(SINK, i * 3 + c, T::of(1.0 / (3.0 * pixels as f64)));
        }
    }
    let hd = cfg.head_dim();
    plant_head(&mut model.blocks[0], 0, hd, BIAS, QUERY, COPY_GAIN, Some((QUERY, QSEEN, 1.0)));
    plant_head(&mut model.blocks[layer], 0, hd, QSEEN, EVID, GROUND_GAIN, Some((EVID, EVOUT, EVOUT_GAIN)));
    if scenario == Scenario::SinkDominant {
        for l in 1..cfg.layers {
            for h in 1..cfg.heads {
                plant_head(&mut model.blocks[l], h, hd, BIAS, SINK, SINK_GAIN, None);
            }
        }
    }
}

struct Scene {
    image: ImageBuffer,
    evidence_box: PixelRect,
    evidence_patches: Vec<usize>,
    sink_patch: usize,
}

/// 12×12-patch scene: gray texture, a red 2×2-patch target, a white sink
/// patch and a blue distractor.
fn demo_scene(px: u32, seed: u64) -> Scene {
    let side = 12 * px;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5c3e);
    let gray: Vec<u8> = (0..side * side).map(|_| rng.random_range(110..=140)).collect();
    let mut image = ImageBuffer::from_gray(side, side, &gray).expect("square scene");
    let patch = |r: u32, c: u32| PixelRect::new(c * px, r * px, (c + 1) * px, (r + 1) * px);
    let evidence_box = PixelRect::new(7 * px, 2 * px, 9 * px, 4 * px);
    image.fill_rect(evidence_box, [230, 20, 20]);
    image.fill_rect(patch(9, 2), [255, 255, 255]);
    image.fill_rect(PixelRect::new(8 * px, 8 * px, 10 * px, 10 * px), [20, 20, 230]);
    Scene { image, evidence_box, evidence_patches: vec![31, 32, 43, 44], sink_patch: 9 * 12 + 2 }
}

/// Sets the unembedding rows of three answer tokens so the first-step
/// logits on the actual positive and counterfactual streams hit the design
/// targets.
fn calibrate_answer_tokens<T: Scalar>(s: &mut ScriptedModel<T>) -> Result<FlipTokens, ToyError> {
    let tok = s.model.tokenizer();
    let (prior, evidence, absence) = (tok.char_id('m'), tok.char_id('y'), tok.char_id('n'));
    let (image, _, loc) = localize(&s.model, &s.image, &s.query, &s.pipeline)?;
    let plan = &loc.plan;
    let positive = apply_crop(&image, &plan.crop())?;
    let negative = build_counterfactual(&image, &plan.crop(), &plan.patch_set(), &plan.grid, s.pipeline.mask_fill)?;

    let vocab = s.model.config.vocab_size;
    let d = s.model.config.model_dim;
    for t in 0..vocab {
        for c in 0..d {
            let v = if [prior, evidence, absence].contains(&t) { 0.0 } else { s.model.unembed.get(t, c).as_f64() * OTHER_TOKEN_SCALE };
            s.model.unembed.set(t, c, T::of(v));
        }
    }
    // Probe the normalized final features through the answer-token rows.
    s.model.unembed.set(prior, BIAS, T::one());
    s.model.unembed.set(evidence, EVOUT, T::one());
    let probe = |img: &ImageBuffer| -> Result<(f64, f64), ToyError> {
        let visual = s.model.tokenize_image(img)?.embeddings;
        let z = s.model.forward_prefill(&s.model.prompt(visual, &s.query))?.logits;
        Ok((z[prior].as_f64(), z[evidence].as_f64()))
    };
    let (bias_p, ev_p) = probe(&positive)?;
    let (bias_n, ev_n) = probe(&negative)?;
    let ratio = ev_n / ev_p;
    if !(ev_p > 0.0 && ratio < 0.5) {
        return Err(ToyError::Config(format!("planted evidence too weak to calibrate (ratio {ratio:.3})")));
    }
    let a = PLUS_TARGET[0] / bias_p;
    let c = PLUS_TARGET[1] / ev_p;
    let b0 = MINUS_ABSENCE / (bias_n - bias_p * ratio);
    let b1 = b0 * bias_p / ev_p;
    let u = &mut s.model.unembed;
    u.set(prior, BIAS, T::of(a));
    u.set(evidence, EVOUT, T::of(c));
    u.set(absence, BIAS, T::of(b0));
    u.set(absence, EVOUT, T::of(-b1));
    let minus = [a * bias_n, c * ev_n, b0 * bias_n - b1 * ev_n];
    Ok(FlipTokens { prior, evidence, absence, plus: PLUS_TARGET, minus })
}
