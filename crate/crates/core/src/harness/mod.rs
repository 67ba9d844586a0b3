//! Experiment plumbing: configuration, dataset generation, training,
//! evaluation and plot-data dumps.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod pipeline;
pub mod report;

pub use commands::{
    build_net, cmd_dump, cmd_evaluate, cmd_filter, cmd_fuse, cmd_generate, cmd_train, DumpOptions, DumpSource,
    EvaluateOptions, GenerateOptions, Method, MethodSummary, SimulateOptions, Split, TrainOptions,
};
pub use config::{ExperimentConfig, Protocol, TaskSpec};
pub use dataset::{read_dataset, DatasetHeader, DatasetWriter};
pub use pipeline::{make_record, par_map, run_rng, simulate_run, Record, Run, Stream};
