//! Benchmark runner: sequential baseline, initial self-adjusting run,
//! batched updates and collection, with every output checked against the
//! app's sequential oracle.

mod args;
mod report;
mod run;

pub use args::{parse_args, Bench, Format, Options};
pub use report::{derive_columns, emit_report, RunReport, CSV_HEADER};
pub use run::{run_benchmark, BenchError};
