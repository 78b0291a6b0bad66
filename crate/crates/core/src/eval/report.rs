use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::AccuracyReport;
use crate::error::{Error, Result};
use crate::synthdata::Attribute;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub phase: String,
    pub sampling: String,
    pub in_domain: AccuracyReport,
    pub ood: AccuracyReport,
    /// In-domain character error rate.
    pub transcript_error_rate: f64,
    pub text_perplexity: f64,
    pub base_text_perplexity: f64,
    pub frozen_digest_match: bool,
    pub max_text_logit_delta: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    /// One row per (test set, attribute) with the chance level alongside.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("set,attribute,accuracy,chance\n");
        for (set, r) in [("in_domain", &self.in_domain), ("ood", &self.ood)] {
            for attr in Attribute::ALL {
                out.push_str(&format!(
                    "{set},{},{:.4},{:.4}\n",
                    attr.name(),
                    r.accuracy.get(attr),
                    attr.chance()
                ));
            }
        }
        out
    }
}
