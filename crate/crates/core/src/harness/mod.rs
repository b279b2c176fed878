//! Seeded Monte Carlo experiments: configuration, trial execution, SER/NMSE
//! accounting, CSV and plot-data emission, and the scaling benchmark.

mod bench;
mod config;
mod output;
mod run;

pub use bench::{loglog_slope, scaling_benchmark, write_scaling_csv, ScalingConfig, ScalingReport, Timing};
pub use config::{
    db_to_linear, BompSection, ChannelConfig, DictionaryConfig, ExperimentConfig, FrameSection, GeometryConfig,
    PointSetup, Scheme, StopKind, Sweep, SweepParam, SweepPoint,
};
pub use output::{emit_csv, emit_plot_data, write_csv_file, Metric, ResultRow, ResultTable};
pub use run::{
    nmse, nmse_stderr, run_experiment, run_experiment_with_threads, ser, ser_stderr, thread_pool, Prepared, SchemeTally,
    TrialDraw, TrialTrace,
};
