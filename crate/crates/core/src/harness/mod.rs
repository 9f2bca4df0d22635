//! Experiment orchestration behind the `acoe` command line: configs,
//! manifests, metrics files and the verification suites.

mod config;
mod manifest;
mod run;
mod verify;

pub use config::{Algo, AttackEntry, EvalSettings, RunConfig, TrainerConfig};
pub use manifest::{sha256_hex, write_atomic, write_json_atomic, EvalInputs, RunKind, RunManifest};
pub use run::{
    attack_diagnostics, eval, eval_from_manifest, evaluate_bundles, grid_points, output_root, read_metrics,
    resolve_bundles, run_dir_name, sweep, sweep_cell_config, train, train_config, train_from_manifest,
    write_attack_steps, AttackStep, AttackSummary, BundleFile, EpisodeRow, EvalOutcome, EvalRequest, EvalRow,
    GridAxis, HarnessOptions, MetricsRow, SweepOutcome, SweepParam, SweepRow, TrainOutcome, OUT_ENV,
};
pub use verify::{
    prop1_proxies, run_verify, thm1_instances, thm2_instances, StressReport, Suite, VerifyOptions, VerifyOutcome,
    PROP1_TOLERANCE,
};

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const VIOLATION: i32 = 2;
    pub const RUNTIME: i32 = 3;
}

/// Usage and configuration problems exit with 1, everything else with 3.
pub fn exit_code(err: &crate::Error) -> i32 {
    use crate::Error;
    match err {
        Error::Config(_) | Error::AttackSpec { .. } | Error::Json(_) => exit::USAGE,
        _ => exit::RUNTIME,
    }
}
