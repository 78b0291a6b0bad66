//! The text-only base model and its conversion into the modality-routed model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::network::{Arch, Network};
use super::params::{ExpertPair, ParamId};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::seqfmt::{EncodedSequence, Modality, TokenId, Vocabulary};

const INIT_STD: f64 = 0.02;
const NEW_ROW_NOISE_STD: f64 = 1e-3;

/// Dense transformer over the text-only vocabulary; stands in for a pretrained
/// text LLM.
#[derive(Debug, Clone)]
pub struct BaseModel {
    net: Network,
}

/// Transformer whose normalizations and projections each hold a frozen text
/// expert and a trainable speech expert, selected per token by modality.
#[derive(Debug, Clone)]
pub struct MoeModel {
    net: Network,
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("valid std")
}

impl BaseModel {
    pub fn from_network(net: Network) -> Result<Self> {
        if net.arch() != Arch::Dense {
            return Err(Error::Contract("base model requires a dense text-only network".into()));
        }
        Ok(BaseModel { net })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn into_network(self) -> Network {
        self.net
    }

    pub fn config(&self) -> &ModelConfig {
        self.net.config()
    }

    /// Logits over the text-only vocabulary; columns follow [`Vocabulary::base_ids`].
    pub fn forward(&self, ids: &[TokenId]) -> Result<Mat> {
        self.net.forward_ids(ids)
    }
}

/// Deterministic initialization: normal(0, 0.02) weights, output projections
/// scaled by `1/sqrt(2L)`, norm gains at one.
pub fn init_base(cfg: &ModelConfig, seed: u64) -> Result<BaseModel> {
    let mut net = Network::skeleton(cfg, Arch::Dense)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out_std = INIT_STD / (2.0 * cfg.layers as f64).sqrt();
    for p in net.params_mut() {
        let leaf = p.name.rsplit('.').next().unwrap_or("");
        if p.shape.len() == 1 {
            p.data.iter_mut().for_each(|x| *x = 1.0);
            continue;
        }
        let dist = if leaf == "wo" || leaf == "w_down" {
            normal(out_std)
        } else {
            normal(INIT_STD)
        };
        p.data.iter_mut().for_each(|x| *x = dist.sample(&mut rng));
    }
    BaseModel::from_network(net)
}

/// Copies every routed component of `base` into a frozen text expert and a
/// bitwise-identical trainable speech expert, and appends embedding and output
/// rows for speech ids and SPEECH_EOS (mean of the existing rows plus small
/// seeded noise).
pub fn convert_to_moe(base: &BaseModel, vocab: &Vocabulary, seed: u64) -> Result<MoeModel> {
    let src = base.network();
    let base_vocab = src.config().vocab;
    if base_vocab.text_size() != vocab.text_size() {
        return Err(Error::Conversion(format!(
            "base model has {} text ids but the vocabulary has {}",
            base_vocab.text_size(),
            vocab.text_size()
        )));
    }
    let mut cfg = src.config().clone();
    cfg.vocab = *vocab;
    let mut net = Network::skeleton(&cfg, Arch::Routed)?;
    let d = cfg.d_model;

    for (name, pair) in src.routed_components() {
        let data = src.param(pair.text).data.clone();
        let dst_text = net
            .find(&format!("{name}.text"))
            .ok_or_else(|| Error::Conversion(format!("missing text expert for {name}")))?;
        let dst_speech = net
            .find(&format!("{name}.speech"))
            .ok_or_else(|| Error::Conversion(format!("missing speech expert for {name}")))?;
        net.param_mut(dst_speech).data.clone_from(&data);
        net.param_mut(dst_text).data = data;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = normal(NEW_ROW_NOISE_STD);
    for (base_table, new_table) in [
        (src.embedding(), net.embedding()),
        (src.output_head(), net.output_head()),
    ] {
        let rows = src.param(base_table.base).data.clone();
        let n_rows = rows.len() / d;
        let mut mean = vec![0.0; d];
        for r in 0..n_rows {
            for (m, v) in mean.iter_mut().zip(&rows[r * d..(r + 1) * d]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n_rows as f64);
        net.param_mut(new_table.base).data = rows;
        let extra = new_table.extra.expect("routed network has extra rows");
        let p = net.param_mut(extra);
        for (i, x) in p.data.iter_mut().enumerate() {
            *x = mean[i % d] + noise.sample(&mut rng);
        }
    }
    Ok(MoeModel { net })
}

impl MoeModel {
    pub fn from_network(net: Network) -> Result<Self> {
        if net.arch() != Arch::Routed {
            return Err(Error::Contract("routed model requires a routed network".into()));
        }
        Ok(MoeModel { net })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn into_network(self) -> Network {
        self.net
    }

    pub fn config(&self) -> &ModelConfig {
        self.net.config()
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.net.config().vocab
    }

    /// Logits over the full vocabulary (column = token id).
    pub fn forward(&self, seq: &EncodedSequence) -> Result<Mat> {
        if seq.modality_mask.len() != seq.ids.len() {
            return Err(Error::Shape(format!(
                "modality mask has {} entries for {} ids",
                seq.modality_mask.len(),
                seq.ids.len()
            )));
        }
        for (i, (&id, &m)) in seq.ids.iter().zip(&seq.modality_mask).enumerate() {
            if self.vocab().modality_of(id)? != m {
                return Err(Error::MixedModality(format!(
                    "position {i}: mask disagrees with id {id}"
                )));
            }
        }
        self.net.forward_ids(&seq.ids)
    }

    /// Same weights with every component collapsed onto its text expert.
    pub fn dense_reference(&self) -> Network {
        let mut dense = Network::skeleton(self.config(), Arch::DenseExtended)
            .expect("config already validated");
        for (name, pair) in self.net.routed_components() {
            let id = dense.find(&name).expect("dense layout mirrors routed layout");
            dense.param_mut(id).data = self.net.param(pair.text).data.clone();
        }
        for (src, dst) in [
            (self.net.embedding(), dense.embedding()),
            (self.net.output_head(), dense.output_head()),
        ] {
            dense.param_mut(dst.base).data = self.net.param(src.base).data.clone();
            dense.param_mut(dst.extra.unwrap()).data =
                self.net.param(src.extra.unwrap()).data.clone();
        }
        dense
    }

    pub fn routed_components(&self) -> Vec<(String, ExpertPair)> {
        self.net.routed_components()
    }

    /// Every parameter flagged frozen at conversion time.
    pub fn frozen_params(&self) -> Vec<ParamId> {
        (0..self.net.params().len())
            .map(ParamId)
            .filter(|&id| self.net.param(id).frozen)
            .collect()
    }

    /// Parameters that drive text-modality positions: text experts and the
    /// embedding/output rows of the text vocabulary.
    pub fn text_side_params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.routed_components().iter().map(|(_, p)| p.text).collect();
        ids.push(self.net.embedding().base);
        ids.push(self.net.output_head().base);
        ids.sort();
        ids
    }

    /// Modality mask for a list of ids.
    pub fn modality_mask(&self, ids: &[TokenId]) -> Result<Vec<Modality>> {
        ids.iter().map(|&id| self.vocab().modality_of(id)).collect()
    }
}
