//! Experiment configuration, the staged pipeline with its manifest, and the
//! report tables.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use config::{AttackSettings, EvalSettings, ExperimentConfig, ResolvedBenchmark, VictimConfig, VictimKind};
pub use manifest::{sha256_hex, Manifest, MANIFEST_FILE};
pub use pipeline::{run_pipeline, AttackStages, EvalSummary, Experiment, NominalSet, PipelineReport, METRIC_FILES};
pub use report::{
    perf_report, summary_csv, sweep_csv, transferability, Metrics, PerfReport, SummaryRow, TransferMatrix,
    SUMMARY_HEADER,
};
