//! Tracking metrics and the disturbance evaluation suite.

pub mod metrics;
pub mod report;
pub mod scenario;

pub use metrics::{mpjpe, mpjve, success, success_at, LinkTrajectory, StepError};
pub use report::{report_csv, report_json, write_report, write_text, Comparison};
pub use scenario::{
    run_episode, run_scenario, ClipMetrics, EpisodeOutcome, EvalScenario, MetricsReport, ScenarioName,
};
