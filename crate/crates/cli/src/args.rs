use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use laser_core::{CropCenter, DecodeMode, MaskFill, PipelineConfig};

#[derive(Debug, Parser)]
#[command(name = "laser", version, about = "Query-contrastive visual grounding and decoding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print per-layer VAQ scores and the selected layer of a trace.
    VaqProfile(VaqProfileArgs),
    /// Stage one: compute the crop-and-mask plan of a trace.
    Localize(LocalizeArgs),
    /// Stage two: decode with the toy model or serve the scoring protocol.
    Decode(DecodeArgs),
    /// Compare localization methods on synthetic data.
    Bench(BenchArgs),
    /// Both stages on the toy model in one call.
    Run(RunArgs),
    /// Write a paired trace produced by the toy model.
    ToyTrace(ToyTraceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DecodeArg {
    Greedy,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CenterArg {
    Peak,
    Centroid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FillArg {
    Gray,
    Black,
    Mean,
}

/// Pipeline knobs shared by all subcommands.
#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Heads kept per layer [default: ceil(H/4)]
    #[arg(long)]
    pub k_head: Option<usize>,
    /// Evidence patches masked in the counterfactual [default: ceil(P/20)]
    #[arg(long)]
    pub k_patch: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Smallest crop side in pixels
    #[arg(long, default_value_t = 224)]
    pub min_crop: u32,
    #[arg(long, default_value_t = 0.5)]
    pub crop_fraction: f64,
    /// Bypass VAQ and localize on this layer
    #[arg(long)]
    pub fixed_layer: Option<usize>,
    /// Run the counterfactual stream
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub vat: Switch,
    #[arg(long, value_enum, default_value_t = DecodeArg::Greedy)]
    pub decode: DecodeArg,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = CenterArg::Peak)]
    pub crop_center: CenterArg,
    #[arg(long, value_enum, default_value_t = FillArg::Gray)]
    pub mask_fill: FillArg,
    /// Skip the counterfactual when the VAQ peak-to-mean ratio reaches this value
    #[arg(long)]
    pub vat_gate: Option<f64>,
}

impl PipelineArgs {
    pub fn config(&self) -> PipelineConfig {
        PipelineConfig {
            k_head: self.k_head,
            k_patch: self.k_patch,
            alpha: self.alpha,
            min_crop: self.min_crop,
            crop_fraction: self.crop_fraction,
            decode_mode: match self.decode {
                DecodeArg::Greedy => DecodeMode::Greedy,
                DecodeArg::Sample => DecodeMode::Sample,
            },
            temperature: self.temperature,
            seed: self.seed,
            vat_enabled: self.vat == Switch::On,
            crop_center: match self.crop_center {
                CenterArg::Peak => CropCenter::Peak,
                CenterArg::Centroid => CropCenter::Centroid,
            },
            mask_fill: match self.mask_fill {
                FillArg::Gray => MaskFill::Gray,
                FillArg::Black => MaskFill::Black,
                FillArg::Mean => MaskFill::Mean,
            },
            fixed_layer: self.fixed_layer,
            vat_gate: self.vat_gate,
        }
    }
}

/// Toy model selection.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Use a scripted model and its demo scene: sink-dominant,
    /// mid-layer-grounding, deep-layer-grounding or evidence-flips-token
    #[arg(long)]
    pub scenario: Option<String>,
    /// Seed of the random toy model
    #[arg(long, default_value_t = 0)]
    pub model_seed: u64,
    /// Input image (PNG or PPM)
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Question text
    #[arg(long)]
    pub query: Option<String>,
}

#[derive(Debug, Args)]
pub struct VaqProfileArgs {
    pub trace: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Emit JSON
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    pub trace: PathBuf,
    /// Image the trace was computed on; its size must match the trace grid
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Write a heatmap overlay (requires --image)
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
    /// Write the plan here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Toy,
    Coprocess,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Laser,
    Vcd,
    Plain,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long, value_enum, default_value_t = Backend::Toy)]
    pub backend: Backend,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Crop plan from `localize`; without it the toy backend localizes itself
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Source of the negative stream
    #[arg(long, value_enum, default_value_t = StrategyArg::Laser)]
    pub strategy: StrategyArg,
    /// Noise steps of the vcd strategy
    #[arg(long, default_value_t = 500)]
    pub noise_steps: u32,
    #[arg(long, default_value_t = 16)]
    pub max_new_tokens: usize,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Emit JSON
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// synthetic-trace, sink-dominant or toy-end-to-end
    #[arg(long, default_value = "synthetic-trace")]
    pub scenario: String,
    /// Number of instances
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Layer of the fixed-layer baselines [default: floor(L/2)]
    #[arg(long)]
    pub baseline_layer: Option<usize>,
    /// Sink weight as a multiple of the signal (sink-dominant)
    #[arg(long, default_value_t = 3.0)]
    pub sink_ratio: f64,
    /// Signal/noise ratio of synthetic traces
    #[arg(long)]
    pub snr: Option<f64>,
    /// Record wall-clock timings (makes reports non-reproducible)
    #[arg(long)]
    pub timings: bool,
    /// Run instances one at a time
    #[arg(long)]
    pub serial: bool,
    /// Directory for report.json and report.txt
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Heatmap directory (toy-end-to-end)
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Print JSON instead of the table
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 16)]
    pub max_new_tokens: usize,
    /// Write a heatmap overlay of the localization map
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Emit JSON
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ToyTraceArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Trace file to write
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the image the model saw
    #[arg(long)]
    pub image_out: Option<PathBuf>,
    /// Seed of the synthetic scene used when no image or scenario is given
    #[arg(long, default_value_t = 0)]
    pub scene_seed: u64,
}
