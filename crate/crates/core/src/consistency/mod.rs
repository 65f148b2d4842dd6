//! Consistency evaluation: suite and prediction formats, the four
//! inconsistency metrics with belief-based conditioning, the Welch t-test,
//! and a synthetic suite generator.

mod metrics;
mod report;
mod suite;
pub mod synth;
mod welch;

pub use metrics::{
    accuracy, evaluate, tau_negational, tau_semantic, tau_symmetric, tau_transitive,
    ConsistencyReport, Metric, METRIC_NAMES,
};
pub use report::{metric_values, Comparison, EvalReport, MetricSummary};
pub use suite::{ConsistencyCase, LabelSet, PredictionRecord, PredictionSet, Suite, SuiteInstance};
pub use synth::{gen_synthetic_suite, oracle_predictions, random_predictions, SynthBundle, SynthSpec, World};
pub use welch::{
    ln_gamma, regularized_incomplete_beta, student_t_two_sided_p, welch_t_test, WelchResult,
};
