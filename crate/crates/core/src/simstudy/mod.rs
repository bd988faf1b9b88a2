//! Monte Carlo studies of estimator performance.

pub mod design;
pub mod generate;
pub mod metrics;
pub mod study;

pub use design::{OutcomeDesign, SimulationDesign};
pub use generate::{generate_dataset, GeneratedData};
pub use metrics::{bias, coverage, empirical_se, relative_bias, relative_rmse, rmse, MetricReport, ParameterMetrics};
pub use study::{fit_replication, run_study, run_study_with, Attempt, ReplicationFit, StudyOptions, StudyResult};
