use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqfmt::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub rope_base: f64,
    pub norm_epsilon: f64,
    pub vocab: Vocabulary,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.layers == 0 || self.heads == 0 || self.head_dim == 0 || self.ffn_dim == 0 {
            return bad(format!(
                "layers, heads, head_dim and ffn_dim must be >= 1 (got {}, {}, {}, {})",
                self.layers, self.heads, self.head_dim, self.ffn_dim
            ));
        }
        if self.d_model != self.heads * self.head_dim {
            return bad(format!(
                "d_model {} != heads {} * head_dim {}",
                self.d_model, self.heads, self.head_dim
            ));
        }
        if self.head_dim % 2 != 0 {
            return bad(format!("head_dim {} must be even for rotary embeddings", self.head_dim));
        }
        if !(self.norm_epsilon > 0.0) {
            return bad(format!("norm_epsilon must be > 0 (got {})", self.norm_epsilon));
        }
        if !(self.rope_base > 1.0) {
            return bad(format!("rope_base must be > 1 (got {})", self.rope_base));
        }
        Ok(())
    }

    /// Two-layer, d=16 configuration used by the invariant suites.
    pub fn tiny(vocab: Vocabulary) -> Self {
        ModelConfig {
            layers: 2,
            d_model: 16,
            heads: 2,
            head_dim: 8,
            ffn_dim: 32,
            rope_base: 10_000.0,
            norm_epsilon: 1e-6,
            vocab,
        }
    }
}
