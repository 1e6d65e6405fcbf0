//! Scenario definition, batch execution, logging and figure emission.

mod builtins;
mod output;
mod run;
mod scenario;

pub use builtins::{builtin, BUILTIN_NAMES};
pub use output::{
    emit_outputs, log_to_csv_string, plot_run, plot_schedule, read_log, read_log_file, scatter_x_range, schedule_curve,
    write_log, write_violations, CertificateFile, LOG_HEADER,
};
pub use run::{
    certify_log, replay, run_scenario, Command, FaultMarker, PhaseStats, RecordedCommand, RunResult, Simulation,
    StepOutput, Summary, TrajectoryReportCounts,
};
pub use scenario::{
    smooth_reference, smooth_reference_rate, CertifyOrder, CertifySection, InitKind, InitialConditions, Interpolation,
    ReferenceKnot, ScenarioScript,
};
