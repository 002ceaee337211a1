//! Paired A/B evaluation and the statistics behind it.

pub mod harness;
pub mod stats;

pub use harness::{
    holdout_traces, run_ab, run_interval_ablation, run_nonstationary, standard_suite, CallResult,
    EvalSetup, PolicyEntry, Report, ReportRow, SuiteOptions,
};
pub use stats::{
    mean_ci95, student_t_cdf, student_t_quantile, student_t_two_sided_p, welch_t_test, WelchResult,
};
