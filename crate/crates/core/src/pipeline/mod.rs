//! End-to-end orchestration: configuration, synthetic cohorts, the
//! group-CV / case-test protocol and reporting.

mod config;
mod report;
mod run;
mod synth;

pub use config::{ContrastRef, FoldTuning, GridConfig, Paths, PipelineConfig};
pub use report::{load_summary, render_grid, render_report, GRID_ROWS};
pub use run::{
    finalize_and_test, run_all, run_group_cv, AccessEvent, CaseStore, ContrastData, ContrastEntry, ContrastFailure, ContrastSummary, CvOutcome,
    Delta, FinalOutcome, FoldOutcome, PermutationSummary, Residualizer, ResidualComparison, ResidualVsRaw, RunManifest, RunOutcome, Summary,
    Variant,
};
pub use synth::{generate_synthetic, midpoint_threshold_accuracy, write_synthetic, GeneratorSpec, SyntheticCohort, SyntheticFiles, COVARIATE_NAMES};
