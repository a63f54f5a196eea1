//! Streaming protocol, four-arm comparison, ablations, theory suite and reports.

mod ablation;
mod artifacts;
mod config;
mod experiment;
mod report;
mod stages;
mod theory;

pub use config::{
    Arm, CheckpointPolicy, DataConfig, ExperimentConfig, FmTrainConfig, TheoryConfig, TransferConfig, VmTrainConfig,
    AE_CHUNK, FM_TRAIN_CHUNKS, TEST_CHUNK, VM_TRAIN_CHUNKS,
};
pub use experiment::{
    load_dataset, log_and_transfer, run_arms, run_seed, run_streaming_experiment, world_spec, ArmResult, ArmSummary,
    Logged, RunReport, SeedReport,
};
pub use stages::{
    build_store, encode_log, fit_ae, fit_codec, fit_rows, fit_transfer, predict_vm, split_store, train_fm, train_vm, Dataset, FmLog, TrainedFm, Transfer, TransferSummary,
    VmContext,
};
pub use ablation::{
    delta_world, run_ablation, AblationAxis, AblationRow, AblationTable, CODEC_VALUES, DIM_VALUES, SEQLEN_VALUES,
    SWEEP_DELTAS,
};
pub use theory::{run_theory_suite, A3Row, BatteryRow, SweepRow, TheorySummary};
pub use report::{
    ablation_json, ablation_plot_tsv, ablation_tsv, arm_summary_tsv, arms_tsv, read_json, theory_battery_tsv,
    theory_lb_grid_tsv, theory_monotone_tsv, theory_sweep_tsv, write_json, write_text, ReportBundle, RUN_JSON,
    SUMMARY_TXT, THEORY_JSON,
};
pub use artifacts::CodeSet;
