//! Forgetting, equivalence and alignment measurements.

mod digest;
mod metrics;
mod report;

pub use digest::{all_params, frozen_selector, param_digest};
pub use metrics::{
    attribute_accuracy, char_error_rate, levenshtein, perplexity, text_logit_delta,
    AccuracyReport, AttributeScores, ModelSpeaker, SpeechSource, TeacherForced,
};
pub use report::EvalReport;
