//! Experiment orchestration: configuration, the per-cell solve/evaluate loop,
//! aggregation over seeds and persistence.

mod config;
mod result;
mod run;

pub use config::{AuditSettings, Experiment, ExperimentConfig};
pub use result::{
    aggregate, load, persist, read_rows_csv, write_rows_csv, Aggregate, AuditReport, CellValue, EventEntry,
    ExperimentResult, KernelReference, LatentReport, LatentSeed, Row, RowFailure, SeedValue, SlopeReport, Summary,
    CSV_HEADER, RESULT_FILE, ROWS_FILE,
};
pub use run::{fit_line, run, run_audit, run_fig1, run_latent, run_scaling, run_solve};
