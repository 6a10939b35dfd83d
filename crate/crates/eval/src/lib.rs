//! Localization metrics, synthetic data, benchmarks and heatmaps.

pub mod bench;
pub mod error;
pub mod heatmap;
pub mod metric;
pub mod scene;
pub mod synthetic;

pub use bench::{run_benchmark, BenchConfig, BenchReport, BenchScenario, Method};
pub use error::EvalError;
pub use heatmap::render_heatmap;
pub use metric::attention_aggregation;
pub use scene::{gen_synthetic_scene, Scene, SceneSpec};
pub use synthetic::{gen_synthetic_trace, SyntheticTraceSpec, SyntheticTruth};
