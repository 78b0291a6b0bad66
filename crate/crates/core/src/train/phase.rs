//! Training phases: parameter selection, batching and the update loop.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{accumulate_sequence, scored_count, LossScope};
use super::optim::{AdamWConfig, OptimizerState, Schedule};
use crate::error::{Error, Result};
use crate::eval::{frozen_selector, param_digest};
use crate::model::{Arch, Grads, Network, ParamId};
use crate::seqfmt::{read_corpus, CharTokenizer, EncodedSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    BaseText,
    TtsPretrain,
    DescriptionFinetune,
}

impl PhaseKind {
    pub fn name(self) -> &'static str {
        match self {
            PhaseKind::BaseText => "base_text",
            PhaseKind::TtsPretrain => "tts_pretrain",
            PhaseKind::DescriptionFinetune => "description_finetune",
        }
    }

    pub fn is_moe(self) -> bool {
        self != PhaseKind::BaseText
    }

    pub fn scope(self) -> LossScope {
        match self {
            PhaseKind::BaseText => LossScope::AllPositions,
            _ => LossScope::LossMask,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    None,
    /// Train every parameter, text experts included.
    FullFinetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPhase {
    pub kind: PhaseKind,
    pub corpus: PathBuf,
    pub epochs: usize,
    /// Caps the number of optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    /// Longer sequences are skipped.
    pub max_seq_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub peak_lr: f64,
    pub warmup_ratio: f64,
    pub final_lr: f64,
    /// Global gradient-norm clip; zero disables clipping.
    pub clip_norm: f64,
    pub adamw: AdamWConfig,
    /// Learning-rate multiplier for the embedding and output rows added for
    /// speech, in routed phases.
    pub new_rows_lr_scale: f64,
    #[serde(skip)]
    pub ablation: Ablation,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            peak_lr: 3e-4,
            warmup_ratio: 0.08,
            final_lr: 0.0,
            clip_norm: 1.0,
            adamw: AdamWConfig::default(),
            new_rows_lr_scale: 10.0,
            ablation: Ablation::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub phase: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOutcome {
    pub metrics: Vec<StepMetrics>,
    /// Records dropped for exceeding the length cap.
    pub skipped: usize,
    /// Digest of frozen parameters before and after (routed phases without ablation).
    pub frozen_digest: Option<(String, String)>,
}

/// Parameters a routed phase may update: every speech expert plus the added
/// embedding and output rows, or everything under the full-finetune ablation.
pub fn trainable_set(net: &Network, ablation: Ablation) -> Result<Vec<ParamId>> {
    if net.arch() != Arch::Routed {
        return Err(Error::Contract(
            "trainable set is defined for routed models only".into(),
        ));
    }
    let ids = (0..net.params().len()).map(ParamId);
    Ok(match ablation {
        Ablation::FullFinetune => ids.collect(),
        Ablation::None => ids.filter(|&id| !net.param(id).frozen).collect(),
    })
}

fn selector_for(net: &Network, kind: PhaseKind, ablation: Ablation) -> Result<Vec<ParamId>> {
    match (kind, net.arch()) {
        (PhaseKind::BaseText, Arch::Dense) => Ok((0..net.params().len()).map(ParamId).collect()),
        (PhaseKind::BaseText, _) => Err(Error::Contract(
            "text pretraining needs a dense base model".into(),
        )),
        (_, Arch::Routed) => trainable_set(net, ablation),
        _ => Err(Error::Contract(format!(
            "{} needs a routed model",
            kind.name()
        ))),
    }
}

pub fn trainable_mask(net: &Network, selector: &[ParamId]) -> Vec<bool> {
    let mut mask = vec![false; net.params().len()];
    for id in selector {
        mask[id.0] = true;
    }
    mask
}

/// Loads and encodes the phase corpus, dropping over-long sequences.
pub fn load_phase_data(phase: &TrainPhase, net: &Network) -> Result<(Vec<EncodedSequence>, usize)> {
    let vocab = net.config().vocab;
    let tok = CharTokenizer::new(&vocab)?;
    let records = read_corpus(&phase.corpus)?;
    let mut seqs = Vec::with_capacity(records.len());
    let mut skipped = 0;
    for r in &records {
        let is_text = r.response.is_some();
        if is_text != (phase.kind == PhaseKind::BaseText) {
            return Err(Error::Contract(format!(
                "{} corpus {} holds a record of the wrong kind",
                phase.kind.name(),
                phase.corpus.display()
            )));
        }
        let seq = r.encode(&tok, &vocab)?;
        if seq.len() > phase.max_seq_len {
            skipped += 1;
        } else {
            seqs.push(seq);
        }
    }
    Ok((seqs, skipped))
}

/// Number of optimizer steps a phase will take over `n` sequences.
pub fn planned_steps(phase: &TrainPhase, n: usize) -> usize {
    let per_epoch = n.div_ceil(phase.batch_size.max(1));
    let total = per_epoch * phase.epochs;
    phase.max_steps.map_or(total, |cap| total.min(cap))
}

/// Trains `net` on already-encoded sequences. Batch order is a seeded shuffle
/// per epoch; `on_step` sees each step's metrics as they are produced.
pub fn train_sequences(
    kind: PhaseKind,
    seqs: &[EncodedSequence],
    net: &mut Network,
    phase: &TrainPhase,
    opts: &TrainOptions,
    seed: u64,
    on_step: &mut dyn FnMut(&StepMetrics),
) -> Result<PhaseOutcome> {
    if phase.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    let selector = selector_for(net, kind, opts.ablation)?;
    let check_frozen = kind.is_moe() && opts.ablation == Ablation::None;
    let frozen = frozen_selector(net);
    let before = if check_frozen && !frozen.is_empty() {
        Some(param_digest(net, &frozen)?)
    } else {
        None
    };

    let total = if seqs.is_empty() { 0 } else { planned_steps(phase, seqs.len()) };
    let sched = Schedule::new(opts.peak_lr, opts.warmup_ratio, total, opts.final_lr)?;
    let mut optim = OptimizerState::new(opts.adamw, net.params(), &selector);
    if kind.is_moe() {
        for table in [net.embedding(), net.output_head()] {
            if let Some(extra) = table.extra {
                optim.set_lr_scale(extra, opts.new_rows_lr_scale);
            }
        }
    }
    let mask = trainable_mask(net, &selector);
    let mut grads = Grads::new(net.params(), &mask);
    let scope = kind.scope();

    let mut metrics = Vec::with_capacity(total);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    for step in 0..total {
        if cursor >= order.len() {
            order = (0..seqs.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
            cursor = 0;
            epoch += 1;
        }
        let batch = &order[cursor..(cursor + phase.batch_size).min(order.len())];
        cursor += batch.len();

        let denom: usize = batch.iter().map(|&i| scored_count(&seqs[i], scope)).sum();
        if denom == 0 {
            return Err(Error::EmptyLoss);
        }
        grads.zero();
        let mut loss_sum = 0.0;
        for &i in batch {
            loss_sum += accumulate_sequence(net, &seqs[i], scope, denom as f64, &mut grads)?;
        }
        if opts.clip_norm > 0.0 {
            let norm = grads.norm();
            if norm > opts.clip_norm {
                grads.scale(opts.clip_norm / norm);
            }
        }
        let lr = sched.lr_at(step + 1);
        optim.step(net.params_mut(), &grads, lr)?;
        let m = StepMetrics {
            step,
            lr,
            loss: loss_sum / denom as f64,
            phase: kind.name().to_string(),
        };
        on_step(&m);
        metrics.push(m);
    }

    let frozen_digest = match before {
        Some(b) => {
            let after = param_digest(net, &frozen)?;
            if after != b {
                return Err(Error::FrozenViolation { before: b, after });
            }
            Some((b, after))
        }
        None => None,
    };
    Ok(PhaseOutcome {
        metrics,
        skipped: 0,
        frozen_digest,
    })
}

/// Loads the phase corpus and trains on it.
pub fn run_phase(
    phase: &TrainPhase,
    net: &mut Network,
    opts: &TrainOptions,
    seed: u64,
    on_step: &mut dyn FnMut(&StepMetrics),
) -> Result<PhaseOutcome> {
    selector_for(net, phase.kind, opts.ablation)?;
    let (seqs, skipped) = load_phase_data(phase, net)?;
    let mut out = train_sequences(phase.kind, &seqs, net, phase, opts, seed, on_step)?;
    out.skipped = skipped;
    Ok(out)
}

/// Writes metrics as one JSON object per line.
pub fn write_metrics(path: &std::path::Path, metrics: &[StepMetrics]) -> Result<()> {
    use std::io::Write;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for m in metrics {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
