//! Per-instance comparison of localization methods.

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use laser_core::localization::{crop_box_around, crop_center, PatchMap};
use laser_core::{aggregate_layer_map, layer_vaq, plan_localization, AttentionTrace, PipelineConfig, PixelRect, Scalar};
use laser_toyvlm::pipeline::run_laser;
use laser_toyvlm::scripted::{build_scripted, Scenario};
use laser_toyvlm::{ToyVlm, ToyVlmConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::heatmap::render_heatmap;
use crate::metric::{attention_aggregation, patches_in_box};
use crate::scene::{gen_synthetic_scene, SceneSpec};
use crate::synthetic::{gen_synthetic_trace, SyntheticTraceSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchScenario {
    /// Synthetic traces without sinks unless the trace spec sets them.
    SyntheticTrace,
    /// Synthetic traces with sinks stronger than the signal.
    SinkDominant,
    /// Synthetic scenes through a scripted toy model, including decoding.
    ToyEndToEnd,
}

impl BenchScenario {
    pub const ALL: [BenchScenario; 3] = [BenchScenario::SyntheticTrace, BenchScenario::SinkDominant, BenchScenario::ToyEndToEnd];

    pub fn name(self) -> &'static str {
        match self {
            BenchScenario::SyntheticTrace => "synthetic-trace",
            BenchScenario::SinkDominant => "sink-dominant",
            BenchScenario::ToyEndToEnd => "toy-end-to-end",
        }
    }
}

impl FromStr for BenchScenario {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, EvalError> {
        Self::ALL.into_iter().find(|b| b.name() == s).ok_or_else(|| EvalError::Config(format!("unknown scenario '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    RawFixedLayer,
    ContrastiveFixedLayer,
    ContrastiveVaq,
    LaserVat,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::RawFixedLayer, Method::ContrastiveFixedLayer, Method::ContrastiveVaq, Method::LaserVat];

    pub fn name(self) -> &'static str {
        match self {
            Method::RawFixedLayer => "raw-fixed-layer",
            Method::ContrastiveFixedLayer => "contrastive-fixed-layer",
            Method::ContrastiveVaq => "contrastive-VAQ",
            Method::LaserVat => "LASER+VAT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub seed: u64,
    /// Layer of the fixed-layer baselines; `None` means `⌊L/2⌋`.
    pub fixed_layer: Option<usize>,
    pub pipeline: PipelineConfig,
    pub trace: SyntheticTraceSpec,
    pub sink_count: usize,
    /// Sink weight as a multiple of the signal strength (sink-dominant).
    pub sink_ratio: f64,
    pub scene: SceneSpec,
    pub max_new_tokens: usize,
    /// Record wall-clock timings. Off by default so reports are reproducible.
    pub timings: bool,
    pub parallel: bool,
    /// Where toy-end-to-end runs write one heatmap per scene.
    #[serde(skip)]
    pub heatmap_dir: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            fixed_layer: None,
            pipeline: PipelineConfig::default(),
            trace: SyntheticTraceSpec::default(),
            sink_count: 4,
            sink_ratio: 3.0,
            scene: SceneSpec::default(),
            max_new_tokens: 4,
            timings: false,
            parallel: true,
            heatmap_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    /// `None` when the map carries no mass.
    pub aggregation: Option<f64>,
    /// Ground-truth box center lies inside the crop this method would make.
    pub crop_hit: bool,
    pub layer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub index: usize,
    pub seed: u64,
    pub truth: PixelRect,
    pub signal_layer: Option<usize>,
    pub results: Vec<MethodResult>,
    /// Tokens decoded by LASER+VAT (toy-end-to-end only).
    pub tokens: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub n: usize,
    pub undefined: usize,
    pub mean_aggregation: f64,
    pub stderr_aggregation: f64,
    pub crop_hit_rate: f64,
    pub layer_hit_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTiming {
    pub method: Method,
    pub mean_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub scenario: BenchScenario,
    pub n_instances: usize,
    pub config: BenchConfig,
    pub records: Vec<InstanceRecord>,
    pub summaries: Vec<MethodSummary>,
    pub timings: Option<Vec<MethodTiming>>,
}

fn instance_seed(seed: u64, index: usize) -> u64 {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)).random()
}

/// Mean and standard error of the mean (sample standard deviation).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub fn summarize(records: &[InstanceRecord]) -> Vec<MethodSummary> {
    Method::ALL
        .iter()
        .map(|&method| {
            let rows: Vec<(&InstanceRecord, &MethodResult)> =
                records.iter().flat_map(|r| r.results.iter().filter(|m| m.method == method).map(move |m| (r, m))).collect();
            let defined: Vec<f64> = rows.iter().filter_map(|(_, m)| m.aggregation).collect();
            let (mean, se) = mean_stderr(&defined);
            let n = rows.len();
            let rate = |hits: usize, of: usize| if of == 0 { 0.0 } else { hits as f64 / of as f64 };
            let known: Vec<_> = rows.iter().filter_map(|(r, m)| r.signal_layer.map(|l| l == m.layer)).collect();
            MethodSummary {
                method,
                n,
                undefined: n - defined.len(),
                mean_aggregation: mean,
                stderr_aggregation: se,
                crop_hit_rate: rate(rows.iter().filter(|(_, m)| m.crop_hit).count(), n),
                layer_hit_rate: (!known.is_empty()).then(|| rate(known.iter().filter(|&&h| h).count(), known.len())),
            }
        })
        .collect()
}

struct Timed<T> {
    value: T,
    ms: [f64; 4],
}

fn center_hit<T: Scalar>(map: &PatchMap<T>, truth: &PixelRect, config: &PipelineConfig) -> bool {
    let (cx, cy) = crop_center(map, config.crop_center);
    let crop = crop_box_around(cx, cy, map.grid.image_width(), map.grid.image_height(), config).rect();
    let (tx, ty) = truth.center();
    crop.contains(tx, ty)
}

fn map_result<T: Scalar>(method: Method, map: &PatchMap<T>, truth: &PixelRect, config: &PipelineConfig) -> MethodResult {
    MethodResult {
        method,
        aggregation: attention_aggregation(map, truth).ok(),
        crop_hit: center_hit(map, truth, config),
        layer: map.layer,
    }
}

/// Localization methods on one trace; the last entry is LASER+VAT without
/// decoding, scored by the share of masked patches inside the box.
fn localize_all<T: Scalar>(
    trace: &AttentionTrace<T>,
    truth: &PixelRect,
    config: &BenchConfig,
) -> Result<Timed<Vec<MethodResult>>, EvalError> {
    let fixed = config.fixed_layer.unwrap_or(trace.layers() / 2);
    if fixed >= trace.layers() {
        return Err(EvalError::Config(format!("fixed layer {fixed} outside {} layers", trace.layers())));
    }
    let pipeline = &config.pipeline;
    let mut ms = [0.0; 4];
    let mut clock = Instant::now();
    let mut lap = |slot: usize| {
        ms[slot] = clock.elapsed().as_secs_f64() * 1e3;
        clock = Instant::now();
    };
    let heads: Vec<usize> = (0..trace.heads()).collect();
    let raw: PatchMap<T> = PatchMap::raw_mean(trace, fixed, &heads)?;
    lap(0);
    let fixed_cfg = PipelineConfig { fixed_layer: Some(fixed), ..pipeline.clone() };
    let con_fixed = aggregate_layer_map(trace, &layer_vaq(trace, &fixed_cfg)?)?;
    lap(1);
    let loc = plan_localization(trace, pipeline)?;
    lap(2);
    let inside = patches_in_box(&loc.map.grid, truth);
    let masked = &loc.plan.mask_patches;
    let precision = (!masked.is_empty()).then(|| masked.iter().filter(|p| inside.contains(p)).count() as f64 / masked.len() as f64);
    let (tx, ty) = truth.center();
    lap(3);
    let laser = MethodResult {
        method: Method::LaserVat,
        aggregation: precision,
        crop_hit: loc.plan.crop_box.contains(tx, ty),
        layer: loc.plan.selected_layer,
    };
    let value = vec![
        map_result(Method::RawFixedLayer, &raw, truth, pipeline),
        map_result(Method::ContrastiveFixedLayer, &con_fixed, truth, pipeline),
        map_result(Method::ContrastiveVaq, &loc.map, truth, pipeline),
        laser,
    ];
    Ok(Timed { value, ms })
}

fn synthetic_instance(
    scenario: BenchScenario,
    config: &BenchConfig,
    index: usize,
) -> Result<Timed<InstanceRecord>, EvalError> {
    let seed = instance_seed(config.seed, index);
    let mut template = config.trace.clone();
    let sinks = match scenario {
        BenchScenario::SinkDominant => {
            template.sink_strength = config.sink_ratio * template.signal_strength;
            config.sink_count.max(1)
        }
        _ if template.sink_strength > 0.0 => config.sink_count,
        _ => 0,
    };
    let spec = template.randomized(seed, sinks);
    let (trace, truth) = gen_synthetic_trace(&spec)?;
    let timed = localize_all(&trace, &truth.evidence_box, config)?;
    Ok(Timed {
        value: InstanceRecord {
            index,
            seed,
            truth: truth.evidence_box,
            signal_layer: Some(truth.signal_layer),
            results: timed.value,
            tokens: None,
        },
        ms: timed.ms,
    })
}

fn toy_instance(model: &ToyVlm<f32>, config: &BenchConfig, index: usize) -> Result<Timed<InstanceRecord>, EvalError> {
    let seed = instance_seed(config.seed, index);
    let scene = gen_synthetic_scene(&config.scene, seed);
    let (_, _, region) = model.token_region(scene.image.width(), scene.image.height())?;
    let truth = scene
        .truth
        .intersect(&region)
        .map(|t| PixelRect::new(t.x0 - region.x0, t.y0 - region.y0, t.x1 - region.x0, t.y1 - region.y0))
        .unwrap_or(PixelRect::new(0, 0, 0, 0));
    let clock = Instant::now();
    let run = run_laser(model, &scene.image, &scene.query, &config.pipeline, config.max_new_tokens)?;
    let decode_ms = clock.elapsed().as_secs_f64() * 1e3;
    let mut timed = localize_all(&run.trace, &truth, config)?;
    timed.ms[3] += decode_ms;
    if let Some(dir) = &config.heatmap_dir {
        let crop = run.localization.plan.crop();
        render_heatmap(&run.localization.map, &run.image, Some(&crop), &dir.join(format!("scene-{index:04}.png")))?;
    }
    Ok(Timed {
        value: InstanceRecord {
            index,
            seed,
            truth,
            signal_layer: None,
            results: timed.value,
            tokens: Some(run.output.tokens),
        },
        ms: timed.ms,
    })
}

/// Model used by the toy-end-to-end scenario: grounding at the middle layer
/// plus bright-patch sinks.
pub fn bench_toy_model() -> Result<ToyVlm<f32>, EvalError> {
    Ok(build_scripted::<f32>(Scenario::SinkDominant, ToyVlmConfig { seed: 7, ..Default::default() })?.model)
}

pub fn run_benchmark(config: &BenchConfig, n_instances: usize, scenario: BenchScenario) -> Result<BenchReport, EvalError> {
    config.pipeline.validate()?;
    if let Some(dir) = &config.heatmap_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| EvalError::Image { path: dir.clone(), source: image::ImageError::IoError(e) })?;
    }
    let model = match scenario {
        BenchScenario::ToyEndToEnd => Some(bench_toy_model()?),
        _ => None,
    };
    let one = |i: usize| match &model {
        Some(m) => toy_instance(m, config, i),
        None => synthetic_instance(scenario, config, i),
    };
    let timed: Vec<Timed<InstanceRecord>> = if config.parallel {
        (0..n_instances).into_par_iter().map(one).collect::<Result<_, _>>()?
    } else {
        (0..n_instances).map(one).collect::<Result<_, _>>()?
    };
    let timings = config.timings.then(|| {
        Method::ALL
            .iter()
            .enumerate()
            .map(|(slot, &method)| MethodTiming {
                method,
                mean_ms: mean_stderr(&timed.iter().map(|t| t.ms[slot]).collect::<Vec<_>>()).0,
            })
            .collect()
    });
    let records: Vec<InstanceRecord> = timed.into_iter().map(|t| t.value).collect();
    log::info!("{} instances of {}", records.len(), scenario.name());
    Ok(BenchReport {
        scenario,
        n_instances,
        config: config.clone(),
        summaries: summarize(&records),
        records,
        timings,
    })
}

impl BenchReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table of the per-method summaries.
    pub fn to_table(&self) -> String {
        let mut out = format!("scenario: {}  instances: {}\n", self.scenario.name(), self.n_instances);
        out += &format!(
            "{:<24} {:>6} {:>10} {:>8} {:>10} {:>10}",
            "method", "n", "agg %", "± se", "crop hit %", "layer hit %"
        );
        if self.timings.is_some() {
            out += &format!(" {:>9}", "ms");
        }
        out.push('\n');
        for s in &self.summaries {
            let layer = s.layer_hit_rate.map_or("-".to_string(), |r| format!("{:.1}", r * 100.0));
            out += &format!(
                "{:<24} {:>6} {:>10.2} {:>8.2} {:>10.1} {:>10}",
                s.method.name(),
                s.n,
                s.mean_aggregation * 100.0,
                s.stderr_aggregation * 100.0,
                s.crop_hit_rate * 100.0,
                layer
            );
            if let Some(t) = self.timings.as_ref().and_then(|t| t.iter().find(|t| t.method == s.method)) {
                out += &format!(" {:>9.3}", t.mean_ms);
            }
            out.push('\n');
        }
        out
    }
}
