//! NE/SR/OSR/SPL metrics, seen/unseen benchmarks and the ablation harness.

mod ablation;
mod benchmark;
mod metrics;

pub use ablation::{ablation_suite, AblationAxes, AblationReport, PairedDelta, SeedResult, Variant, VariantKind, VariantModels, VariantResult, ABLATION_COLUMNS};
pub use benchmark::{benchmark_episodes, run_benchmark, BenchmarkConfig, BenchmarkReport, EpisodeRecord, ReportRow, Split, EPISODE_RESULT_COLUMNS, REPORT_COLUMNS};
pub use metrics::{aggregate, episode_metrics, path_metrics, EpisodeResult, MetricCell, SUCCESS_THRESHOLD_M};
