//! Experiment orchestration: config files, the prepare/train/eval/report
//! pipeline over an output directory, weight-decay sweeps and gradient checks.

mod commands;
mod config;
mod report;

pub use commands::{
    cmd_eval, cmd_experiment, cmd_gradcheck, cmd_prepare, cmd_report, cmd_sweep, cmd_train, load_prepared,
    load_run_model, plan, protocol, DomainManifest, PrepareManifest, Prepared, ResultRecord, RunRecord, RunSpec,
    SweepReport, SweepRow, Workspace, REPORT_FILES,
};
pub use config::{
    DatasetConfig, Datasets, ExperimentConfig, GeneralConfig, SweepConfig, SyntheticSource, TemplatePaths,
    TrainSections, DEFAULT_SEEDS, OUTPUT_DIR_ENV,
};
pub use report::{aggregate_seeds, AggregateReport, AggregateRow, CellKey, SeedRow};
