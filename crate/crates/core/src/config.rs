//! Run configuration, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Sampling};
use crate::seqfmt::Vocabulary;
use crate::synthdata::{CorpusSpec, SPEECH_VOCAB_SIZE};
use crate::train::{PhaseKind, TrainOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub rope_base: f64,
    pub norm_epsilon: f64,
    pub text_vocab_size: usize,
    pub speech_vocab_size: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            layers: 4,
            d_model: 128,
            heads: 4,
            ffn_dim: 256,
            rope_base: 10_000.0,
            norm_epsilon: 1e-6,
            text_vocab_size: 64,
            speech_vocab_size: SPEECH_VOCAB_SIZE,
        }
    }
}

impl ModelSection {
    pub fn to_config(&self) -> Result<ModelConfig> {
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        let cfg = ModelConfig {
            layers: self.layers,
            d_model: self.d_model,
            heads: self.heads,
            head_dim: self.d_model / self.heads,
            ffn_dim: self.ffn_dim,
            rope_base: self.rope_base,
            norm_epsilon: self.norm_epsilon,
            vocab: Vocabulary::new(self.text_vocab_size, self.speech_vocab_size)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseSection {
    pub epochs: usize,
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    pub max_seq_len: usize,
    /// Overrides the shared peak learning rate for this phase.
    pub peak_lr: Option<f64>,
}

impl Default for PhaseSection {
    fn default() -> Self {
        PhaseSection {
            epochs: 1,
            max_steps: None,
            batch_size: 16,
            max_seq_len: 512,
            peak_lr: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhasesSection {
    pub base_text: PhaseSection,
    pub tts_pretrain: PhaseSection,
    pub description_finetune: PhaseSection,
}

impl Default for PhasesSection {
    fn default() -> Self {
        PhasesSection {
            base_text: PhaseSection {
                epochs: 6,
                batch_size: 8,
                peak_lr: Some(1.5e-3),
                ..Default::default()
            },
            tts_pretrain: PhaseSection {
                epochs: 5,
                batch_size: 8,
                peak_lr: Some(5e-4),
                ..Default::default()
            },
            description_finetune: PhaseSection {
                epochs: 4,
                batch_size: 8,
                ..Default::default()
            },
        }
    }
}

impl PhasesSection {
    pub fn get(&self, kind: PhaseKind) -> &PhaseSection {
        match kind {
            PhaseKind::BaseText => &self.base_text,
            PhaseKind::TtsPretrain => &self.tts_pretrain,
            PhaseKind::DescriptionFinetune => &self.description_finetune,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub max_len: usize,
    pub sampling: Sampling,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            max_len: 256,
            sampling: Sampling::Greedy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub data: CorpusSpec,
    pub train: TrainOptions,
    pub phases: PhasesSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            model: ModelSection::default(),
            data: CorpusSpec::default(),
            train: TrainOptions::default(),
            phases: PhasesSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.to_config()?;
        self.data.validate()?;
        for kind in [PhaseKind::BaseText, PhaseKind::TtsPretrain, PhaseKind::DescriptionFinetune] {
            let p = self.phases.get(kind);
            if p.batch_size == 0 || p.max_seq_len == 0 {
                return Err(Error::InvalidConfig(format!(
                    "{}: batch_size and max_seq_len must be positive",
                    kind.name()
                )));
            }
            crate::train::Schedule::new(
                p.peak_lr.unwrap_or(self.train.peak_lr),
                self.train.warmup_ratio,
                1,
                self.train.final_lr,
            )?;
        }
        if !(self.train.new_rows_lr_scale > 0.0 && self.train.new_rows_lr_scale.is_finite()) {
            return Err(Error::InvalidConfig("train.new_rows_lr_scale must be positive".into()));
        }
        if self.eval.max_len == 0 {
            return Err(Error::InvalidConfig("eval.max_len must be positive".into()));
        }
        Ok(())
    }

    /// Training options for one phase (per-phase learning rate applied).
    pub fn train_options(&self, kind: PhaseKind) -> TrainOptions {
        let mut o = self.train;
        if let Some(lr) = self.phases.get(kind).peak_lr {
            o.peak_lr = lr;
        }
        o
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_document_fills_defaults() {
        let cfg = RunConfig::from_toml("seed = 3\n[model]\nlayers = 2\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.model.layers, 2);
        assert_eq!(cfg.model.d_model, 128);
    }

    #[test]
    fn unknown_keys_and_bad_shapes_rejected() {
        assert!(matches!(RunConfig::from_toml("sed = 3"), Err(Error::Config(_))));
        assert!(RunConfig::from_toml("[model]\nd_model = 130\nheads = 4\n").is_err());
        assert!(RunConfig::from_toml("[train]\nwarmup_ratio = 1.5\n").is_err());
    }
}
