//! Two-stage inference against the toy model.

use laser_core::localization::build_counterfactual;
use laser_core::plan::Localization;
use laser_core::vat::{decode_pair, vcd_counterfactual, DecodeOutput};
use laser_core::{apply_crop, AttentionTrace, ImageBuffer, PipelineConfig, Scalar};

use crate::backend::ToyPrompt;
use crate::error::ToyError;
use crate::model::ToyVlm;

/// Which image feeds the negative stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Cropped evidence-masked counterfactual.
    Laser,
    /// Noised copy of the original image.
    Vcd { noise_steps: u32 },
    /// Original image only, single stream.
    Plain,
}

/// Crop settings that fit the toy model's small images.
pub fn toy_pipeline_config() -> PipelineConfig {
    PipelineConfig { min_crop: 48, ..Default::default() }
}

/// Everything produced by one LASER run.
#[derive(Debug, Clone)]
pub struct LaserRun<T> {
    /// The part of the input the model sees.
    pub image: ImageBuffer,
    pub trace: AttentionTrace<T>,
    pub localization: Localization<T>,
    pub positive: ImageBuffer,
    /// `None` when the plan disables the counterfactual stream.
    pub negative: Option<ImageBuffer>,
    pub output: DecodeOutput<T>,
}

/// Stage one: paired trace and plan on the model's view of `image`.
pub fn localize<T: Scalar>(
    model: &ToyVlm<T>,
    image: &ImageBuffer,
    query: &str,
    config: &PipelineConfig,
) -> Result<(ImageBuffer, AttentionTrace<T>, Localization<T>), ToyError> {
    let image = model.prepare_image(image)?;
    let trace = model.make_paired_trace(&image, query)?;
    let localization = laser_core::plan_localization(&trace, config)?;
    Ok((image, trace, localization))
}

/// Full pipeline: localize, crop, mask, then decode both streams.
pub fn run_laser<T: Scalar>(
    model: &ToyVlm<T>,
    image: &ImageBuffer,
    query: &str,
    config: &PipelineConfig,
    max_new_tokens: usize,
) -> Result<LaserRun<T>, ToyError> {
    let (image, trace, localization) = localize(model, image, query, config)?;
    let plan = &localization.plan;
    let positive = apply_crop(&image, &plan.crop())?;
    let negative = if plan.use_vat {
        Some(build_counterfactual(&image, &plan.crop(), &plan.patch_set(), &plan.grid, config.mask_fill)?)
    } else {
        None
    };
    let pos = ToyPrompt::new(positive.clone(), query);
    let neg = negative.clone().map(|img| ToyPrompt::new(img, query));
    let output = decode_pair(model, &pos, neg.as_ref(), config, max_new_tokens)?;
    Ok(LaserRun { image, trace, localization, positive, negative, output })
}

/// Decoding with a baseline negative stream, or none.
pub fn run_strategy<T: Scalar>(
    model: &ToyVlm<T>,
    image: &ImageBuffer,
    query: &str,
    strategy: Strategy,
    config: &PipelineConfig,
    max_new_tokens: usize,
) -> Result<DecodeOutput<T>, ToyError> {
    match strategy {
        Strategy::Laser => Ok(run_laser(model, image, query, config, max_new_tokens)?.output),
        Strategy::Vcd { noise_steps } => {
            let image = model.prepare_image(image)?;
            let noised = vcd_counterfactual(&image, noise_steps, config.seed);
            let pos = ToyPrompt::new(image, query);
            let neg = ToyPrompt::new(noised, query);
            Ok(decode_pair(model, &pos, Some(&neg), config, max_new_tokens)?)
        }
        Strategy::Plain => {
            let pos = ToyPrompt::new(model.prepare_image(image)?, query);
            Ok(decode_pair(model, &pos, None, config, max_new_tokens)?)
        }
    }
}
