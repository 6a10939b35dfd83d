use std::io::Write;
use std::path::Path;

use laser_core::localization::build_counterfactual;
use laser_core::plan::CropPlan;
use laser_core::protocol::run_scoring_session;
use laser_core::trace_file::{read_trace_as, write_trace_file};
use laser_core::vat::{decode_pair, DecodeOutput};
use laser_core::{apply_crop, layer_vaq, plan_localization, ImageBuffer, PipelineConfig};
use laser_eval::heatmap::{render_heatmap, write_image};
use laser_eval::{gen_synthetic_scene, run_benchmark, BenchConfig, BenchScenario, SceneSpec};
use laser_toyvlm::pipeline::{run_laser, run_strategy, Strategy};
use laser_toyvlm::{make_scripted_model, ToyPrompt, ToyVlm64, ToyVlmConfig};
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::error::CliError;

type CliResult<T = ()> = Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn read_trace(path: &Path) -> CliResult<laser_core::Trace64> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    read_trace_as::<f64, _>(std::io::BufReader::new(file)).map_err(|e| match e {
        laser_core::trace_file::TraceIoError::Stream(io) => CliError::Io(format!("{}: {io}", path.display())),
        other => CliError::Validation(format!("{}: {other}", path.display())),
    })
}

pub fn load_image(path: &Path) -> CliResult<ImageBuffer> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => CliError::Io(format!("{}: {io}", path.display())),
        other => CliError::Validation(format!("{}: {other}", path.display())),
    })?;
    let rgb = img.to_rgb8();
    Ok(ImageBuffer::from_rgb(rgb.width(), rgb.height(), rgb.into_raw())?)
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(io_err(path))
}

fn print(text: &str) -> CliResult {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| CliError::Io(format!("stdout: {e}")))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn validated(args: &PipelineArgs) -> CliResult<PipelineConfig> {
    let config = args.config();
    config.validate()?;
    Ok(config)
}

pub fn vaq_profile(args: &VaqProfileArgs) -> CliResult {
    let config = validated(&args.pipeline)?;
    let trace = read_trace(&args.trace)?;
    let profile = layer_vaq(&trace, &config)?;
    if args.json {
        let report = json!({
            "source_id": trace.source_id(),
            "layers": trace.layers(),
            "heads": trace.heads(),
            "grid": trace.grid(),
            "k_head": profile.k_head,
            "layer_vaq": profile.layer_scores,
            "head_vaq": profile.head_scores,
            "selected_layer": profile.selected_layer,
            "selected_heads": profile.selected_heads(),
            "fixed_layer": config.fixed_layer.is_some(),
        });
        return print(&to_json(&report));
    }
    let g = trace.grid();
    let mut out = format!(
        "trace: {}\nlayers: {}  heads: {}  patches: {} ({}x{})  k_head: {}\n\nlayer        vaq\n",
        trace.source_id(),
        trace.layers(),
        trace.heads(),
        trace.patches(),
        g.rows(),
        g.cols(),
        profile.k_head
    );
    for (l, v) in profile.layer_scores.iter().enumerate() {
        let mark = if l == profile.selected_layer { " *" } else { "" };
        out += &format!("{l:>5} {v:>10.6}{mark}\n");
    }
    out += &format!("\nselected layer: {}\nselected heads: {:?}\n", profile.selected_layer, profile.selected_heads());
    print(&out)
}

pub fn localize(args: &LocalizeArgs) -> CliResult {
    let config = validated(&args.pipeline)?;
    let trace = read_trace(&args.trace)?;
    let image = args.image.as_deref().map(load_image).transpose()?;
    if let Some(img) = &image {
        let g = trace.grid();
        if (img.width(), img.height()) != (g.image_width(), g.image_height()) {
            return Err(CliError::Validation(format!(
                "image is {}x{} but the trace grid covers {}x{}",
                img.width(),
                img.height(),
                g.image_width(),
                g.image_height()
            )));
        }
    }
    let loc = plan_localization(&trace, &config)?;
    if let Some(path) = &args.heatmap {
        let img = image.as_ref().ok_or_else(|| CliError::Validation("--heatmap requires --image".into()))?;
        render_heatmap(&loc.map, img, Some(&loc.plan.crop()), path)?;
    }
    let text = to_json(&loc.plan);
    match &args.out {
        Some(path) => write_text(path, &text),
        None => print(&text),
    }
}

/// Model plus the image and query to run it on.
struct ToyInput {
    model: ToyVlm64,
    image: ImageBuffer,
    query: String,
}

fn toy_input(args: &ModelArgs, scene_seed: u64) -> CliResult<ToyInput> {
    let (model, demo_image, demo_query) = match &args.scenario {
        Some(name) => {
            let s = make_scripted_model::<f64>(name)?;
            (s.model, Some(s.image), Some(s.query))
        }
        None => (ToyVlm64::new(ToyVlmConfig { seed: args.model_seed, ..Default::default() })?, None, None),
    };
    let image = match (&args.image, demo_image) {
        (Some(path), _) => load_image(path)?,
        (None, Some(img)) => img,
        (None, None) => gen_synthetic_scene(&SceneSpec::default(), scene_seed).image,
    };
    let query = args
        .query
        .clone()
        .or(demo_query)
        .unwrap_or_else(|| gen_synthetic_scene(&SceneSpec::default(), scene_seed).query);
    Ok(ToyInput { model, image, query })
}

#[derive(Serialize)]
struct DecodeReport<'a> {
    tokens: &'a [usize],
    text: String,
    streams: usize,
    first_step_vat_max: Option<f64>,
}

fn decode_report(model: &ToyVlm64, out: &DecodeOutput<f64>) -> String {
    let report = DecodeReport {
        tokens: &out.tokens,
        text: model.tokenizer().decode(&out.tokens),
        streams: out.streams,
        first_step_vat_max: out.steps.first().map(|s| s.vat.iter().cloned().fold(f64::MIN, f64::max)),
    };
    to_json(&report)
}

fn decode_text(model: &ToyVlm64, out: &DecodeOutput<f64>) -> String {
    let ids: Vec<String> = out.tokens.iter().map(|t| t.to_string()).collect();
    format!("tokens: {}\ntext: {:?}\nstreams: {}\n", ids.join(" "), model.tokenizer().decode(&out.tokens), out.streams)
}

fn decode_with_plan(input: &ToyInput, plan: &CropPlan, config: &PipelineConfig, max_new: usize) -> CliResult<DecodeOutput<f64>> {
    let image = input.model.prepare_image(&input.image)?;
    if (image.width(), image.height()) != (plan.grid.image_width(), plan.grid.image_height()) {
        return Err(CliError::Validation(format!(
            "plan grid covers {}x{} but the model sees {}x{}",
            plan.grid.image_width(),
            plan.grid.image_height(),
            image.width(),
            image.height()
        )));
    }
    let positive = ToyPrompt::new(apply_crop(&image, &plan.crop())?, &*input.query);
    let negative = if plan.use_vat && config.vat_enabled {
        let img = build_counterfactual(&image, &plan.crop(), &plan.patch_set(), &plan.grid, config.mask_fill)?;
        Some(ToyPrompt::new(img, &*input.query))
    } else {
        None
    };
    decode_pair(&input.model, &positive, negative.as_ref(), config, max_new).map_err(|e| CliError::Validation(e.to_string()))
}

pub fn decode(args: &DecodeArgs) -> CliResult {
    let config = validated(&args.pipeline)?;
    if args.backend == Backend::Coprocess {
        let stdin = std::io::stdin();
        let summary = run_scoring_session(stdin.lock(), std::io::stdout().lock(), config)?;
        log::info!("scoring session ended after {} steps, {} errors", summary.steps, summary.errors);
        return Ok(());
    }
    let input = toy_input(&args.model, 0)?;
    let out = match &args.plan {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            let plan: CropPlan =
                serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            decode_with_plan(&input, &plan, &config, args.max_new_tokens)?
        }
        None => {
            let strategy = match args.strategy {
                StrategyArg::Laser => Strategy::Laser,
                StrategyArg::Vcd => Strategy::Vcd { noise_steps: args.noise_steps },
                StrategyArg::Plain => Strategy::Plain,
            };
            run_strategy(&input.model, &input.image, &input.query, strategy, &config, args.max_new_tokens)?
        }
    };
    print(&if args.json { decode_report(&input.model, &out) } else { decode_text(&input.model, &out) })
}

pub fn run(args: &RunArgs) -> CliResult {
    let config = validated(&args.pipeline)?;
    let input = toy_input(&args.model, 0)?;
    let run = run_laser(&input.model, &input.image, &input.query, &config, args.max_new_tokens)?;
    let plan = &run.localization.plan;
    if let Some(path) = &args.heatmap {
        render_heatmap(&run.localization.map, &run.image, Some(&plan.crop()), path)?;
    }
    if args.json {
        let report = json!({
            "query": input.query,
            "plan": plan,
            "tokens": run.output.tokens,
            "text": input.model.tokenizer().decode(&run.output.tokens),
            "streams": run.output.streams,
        });
        return print(&to_json(&report));
    }
    let c = plan.crop_box;
    let mut out = format!(
        "query: {:?}\nselected layer: {}{}\npeak patch: ({}, {})\ncrop box: [{}, {}, {}, {})\nmasked patches: {:?}\n",
        input.query,
        plan.selected_layer,
        if plan.fixed_layer { " (fixed)" } else { "" },
        plan.peak_patch.row,
        plan.peak_patch.col,
        c.x0,
        c.y0,
        c.x1,
        c.y1,
        plan.mask_patches
    );
    out += &decode_text(&input.model, &run.output);
    print(&out)
}

pub fn toy_trace(args: &ToyTraceArgs) -> CliResult {
    let input = toy_input(&args.model, args.scene_seed)?;
    let image = input.model.prepare_image(&input.image)?;
    let trace = input.model.make_paired_trace(&image, &input.query)?;
    write_trace_file(&trace, &args.out)?;
    if let Some(path) = &args.image_out {
        write_image(&image, path)?;
    }
    let g = trace.grid();
    print(&format!(
        "wrote {} ({} layers, {} heads, {}x{} patches on {}x{})\n",
        args.out.display(),
        trace.layers(),
        trace.heads(),
        g.rows(),
        g.cols(),
        g.image_width(),
        g.image_height()
    ))
}

pub fn bench(args: &BenchArgs) -> CliResult {
    let scenario: BenchScenario = args.scenario.parse()?;
    let pipeline = validated(&args.pipeline)?;
    let mut config = BenchConfig {
        seed: pipeline.seed,
        fixed_layer: args.baseline_layer,
        pipeline,
        sink_ratio: args.sink_ratio,
        timings: args.timings,
        parallel: !args.serial,
        heatmap_dir: args.heatmap.clone(),
        ..Default::default()
    };
    if let Some(snr) = args.snr {
        if !(snr.is_finite() && snr > 0.0) {
            return Err(CliError::Validation(format!("--snr must be positive, got {snr}")));
        }
        config.trace.signal_strength = snr * config.trace.noise_scale;
    }
    if !(config.sink_ratio.is_finite() && config.sink_ratio >= 0.0) {
        return Err(CliError::Validation(format!("--sink-ratio must be non-negative, got {}", config.sink_ratio)));
    }
    let report = run_benchmark(&config, args.n, scenario)?;
    let json = report.to_json() + "\n";
    let table = report.to_table();
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_text(&dir.join("report.json"), &json)?;
        write_text(&dir.join("report.txt"), &table)?;
    }
    print(if args.json { &json } else { &table })
}
