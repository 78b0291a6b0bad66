//! Invariant suites: conversion equivalence, routing partition, causality,
//! frozen-weight invariance and finite-difference gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::Result;
use crate::eval::{frozen_selector, param_digest};
use crate::linalg::Mat;
use crate::model::{
    convert_to_moe, init_base, moe_apply, BaseModel, ComponentKind, Grads, ModelConfig, MoeModel,
    Network, ParamId,
};
use crate::seqfmt::{EncodedSequence, Modality, Special, TokenId, Vocabulary};
use crate::train::{accumulate_sequence, sequence_loss, trainable_mask, trainable_set, Ablation, LossScope};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Random ids drawn from every part of the vocabulary (text, speech, specials).
pub fn random_ids(vocab: &Vocabulary, len: usize, rng: &mut impl Rng) -> Vec<TokenId> {
    (0..len)
        .map(|_| rng.random_range(0..vocab.total_size() as TokenId))
        .collect()
}

/// Random pure-text ids (text content and text specials).
pub fn random_text_ids(vocab: &Vocabulary, len: usize, rng: &mut impl Rng) -> Vec<TokenId> {
    let ids = vocab.base_ids();
    (0..len).map(|_| ids[rng.random_range(0..ids.len())]).collect()
}

/// Text prefix followed by speech tokens and SPEECH_EOS, with the speech part
/// in the loss mask.
pub fn random_speech_sequence(vocab: &Vocabulary, prefix: usize, speech: usize, rng: &mut impl Rng) -> EncodedSequence {
    let mut ids = random_text_ids(vocab, prefix, rng);
    for _ in 0..speech {
        let local = rng.random_range(0..vocab.speech_size() as u32);
        ids.push(vocab.speech_id(local).expect("in range"));
    }
    ids.push(vocab.special(Special::SpeechEos));
    let mut seq = EncodedSequence::from_ids(ids, vocab).expect("valid ids");
    for (i, m) in seq.loss_mask.iter_mut().enumerate() {
        *m = u8::from(i >= prefix);
    }
    seq
}

/// Overwrites every parameter with `N(0, std)` noise (norm gains around one).
pub fn randomize(net: &mut Network, std: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, std).unwrap();
    for p in net.params_mut() {
        let gain = p.shape.len() == 1;
        for x in &mut p.data {
            *x = dist.sample(&mut rng) + if gain { 1.0 } else { 0.0 };
        }
    }
}

/// Adds noise to every speech expert and the added embedding/output rows.
pub fn perturb_speech_side(m: &mut MoeModel, std: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, std).unwrap();
    let net = m.network_mut();
    for id in (0..net.params().len()).map(ParamId) {
        if !net.param(id).frozen {
            for x in &mut net.param_mut(id).data {
                *x += dist.sample(&mut rng);
            }
        }
    }
}

fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Routed model vs the dense extended model built from the same weights, on
/// `count` random mixed-modality sequences.
pub fn init_equivalence(m: &MoeModel, count: usize, max_len: usize, seed: u64) -> Result<CheckResult> {
    let dense = m.dense_reference();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let len = rng.random_range(1..=max_len);
        let ids = random_ids(m.vocab(), len, &mut rng);
        let a = m.network().forward_ids(&ids)?;
        let b = dense.forward_ids(&ids)?;
        worst = worst.max(max_abs_diff(&a, &b));
    }
    Ok(CheckResult::new(
        "init_equivalence",
        worst == 0.0,
        format!("max |logit diff| = {worst:e} over {count} sequences"),
    ))
}

/// For every routed component (and the final norm): perturbing the speech
/// expert leaves text rows bitwise unchanged, and with equal experts routing is
/// identical to the dense text expert.
pub fn routing_partition(m: &MoeModel, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let base = m.network().clone();
    let t = 7;
    let mut failures = Vec::new();
    let mut checked = 0;
    for (name, pair) in base.routed_components() {
        let shape = base.param(pair.text).shape.clone();
        let kind = if shape.len() == 1 {
            ComponentKind::Norm
        } else {
            ComponentKind::Linear
        };
        let x = Mat::from_vec(t, shape[0], (0..t * shape[0]).map(|_| normal.sample(&mut rng)).collect());
        let mut mask: Vec<Modality> = (0..t)
            .map(|_| if rng.random::<bool>() { Modality::Speech } else { Modality::Text })
            .collect();
        mask[0] = Modality::Text;
        mask[1] = Modality::Speech;
        let before = moe_apply(&base, pair, kind, &x, &mask)?;
        let all_text = moe_apply(&base, pair, kind, &x, &vec![Modality::Text; t])?;
        let mut changed = base.clone();
        let s = pair.speech.expect("routed component");
        for v in &mut changed.param_mut(s).data {
            *v += normal.sample(&mut rng);
        }
        let after = moe_apply(&changed, pair, kind, &x, &mask)?;
        checked += 1;
        for i in 0..t {
            let same = before.row(i) == after.row(i);
            match mask[i] {
                Modality::Text if !same => failures.push(format!("{name}: text row {i} changed")),
                Modality::Speech if same => failures.push(format!("{name}: speech row {i} ignored its expert")),
                _ => {}
            }
        }
        // Experts are still equal copies in `base`, so routing is invisible.
        if before != all_text && base.param(pair.text).data == base.param(s).data {
            failures.push(format!("{name}: equal experts disagree with dense application"));
        }
    }
    Ok(CheckResult::new(
        "routing_partition",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{checked} routed components")
        } else {
            failures.join("; ")
        },
    ))
}

/// For every prefix length, changing later ids leaves earlier logits bitwise
/// unchanged.
pub fn causality(net: &Network, count: usize, len: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let mut pool: Vec<TokenId> = net.columns().to_vec();
    pool.sort();
    for _ in 0..count {
        let ids: Vec<TokenId> = (0..len).map(|_| pool[rng.random_range(0..pool.len())]).collect();
        let full = net.forward_ids(&ids)?;
        for i in 0..len.saturating_sub(1) {
            let mut other = ids.clone();
            for id in &mut other[i + 1..] {
                *id = pool[rng.random_range(0..pool.len())];
            }
            let alt = net.forward_ids(&other)?;
            for r in 0..=i {
                if full.row(r) != alt.row(r) {
                    failures.push(format!("row {r} depends on positions > {i}"));
                }
            }
        }
    }
    Ok(CheckResult::new(
        "causality",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{count} sequences of length {len}, every split point")
        } else {
            failures.join("; ")
        },
    ))
}

/// With speech experts arbitrarily modified, pure-text logits over the text
/// vocabulary match the base model exactly.
pub fn frozen_text_forward(base: &BaseModel, m: &MoeModel, count: usize, seed: u64) -> Result<CheckResult> {
    let mut changed = m.clone();
    perturb_speech_side(&mut changed, 0.5, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let mut corpus = Vec::with_capacity(count);
    for _ in 0..count {
        let len = rng.random_range(1..=24);
        corpus.push(EncodedSequence::from_ids(random_text_ids(m.vocab(), len, &mut rng), m.vocab())?);
    }
    let delta = crate::eval::text_logit_delta(base, &changed, &corpus)?;
    Ok(CheckResult::new(
        "frozen_text_forward",
        delta == 0.0,
        format!("max text logit delta {delta:e} after perturbing speech side"),
    ))
}

/// Digest of frozen parameters compared against a reference digest.
pub fn frozen_digest(m: &MoeModel, expected: &str) -> Result<CheckResult> {
    let got = param_digest(m.network(), &frozen_selector(m.network()))?;
    Ok(CheckResult::new(
        "frozen_digest",
        got == expected,
        format!("expected {expected}, found {got}"),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

/// Central differences (step `h`) against the analytic gradient of the masked
/// loss, on `samples` random trainable coordinates.
pub fn gradcheck(
    net: &Network,
    seqs: &[EncodedSequence],
    scope: LossScope,
    trainable: &[ParamId],
    samples: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mask = trainable_mask(net, trainable);
    let mut grads = Grads::new(net.params(), &mask);
    let denom: usize = seqs.iter().map(|s| crate::train::scored_count(s, scope)).sum();
    for s in seqs {
        accumulate_sequence(net, s, scope, denom as f64, &mut grads)?;
    }
    let loss = |n: &Network| -> Result<f64> {
        let mut total = 0.0;
        for s in seqs {
            let c = crate::train::scored_count(s, scope) as f64;
            total += sequence_loss(n, s, scope)? * c;
        }
        Ok(total / denom as f64)
    };
    let coords: Vec<(ParamId, usize)> = trainable
        .iter()
        .flat_map(|&id| (0..net.param(id).numel()).map(move |k| (id, k)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = net.clone();
    let mut report = GradCheckReport {
        coordinates: 0,
        max_rel_error: 0.0,
        worst: String::new(),
    };
    for _ in 0..samples {
        let (id, k) = coords[rng.random_range(0..coords.len())];
        let orig = work.param(id).data[k];
        work.param_mut(id).data[k] = orig + h;
        let up = loss(&work)?;
        work.param_mut(id).data[k] = orig - h;
        let down = loss(&work)?;
        work.param_mut(id).data[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads.get(id).expect("trainable")[k];
        let scale = analytic.abs().max(numeric.abs());
        let rel = if scale < 1e-10 {
            0.0
        } else {
            (analytic - numeric).abs() / scale
        };
        report.coordinates += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = format!(
                "{}[{k}]: analytic {analytic:e}, numeric {numeric:e}",
                net.param(id).name
            );
        }
    }
    Ok(report)
}

/// Small vocabulary and model (under 10k parameters) for gradient checks.
pub fn gradcheck_config() -> ModelConfig {
    let vocab = Vocabulary::new(20, 12).expect("valid sizes");
    ModelConfig {
        layers: 2,
        d_model: 8,
        heads: 2,
        head_dim: 4,
        ffn_dim: 16,
        rope_base: 10_000.0,
        norm_epsilon: 1e-6,
        vocab,
    }
}

/// Gradient check of the routed model's masked loss with speech experts that
/// differ from the text experts.
pub fn gradcheck_suite(samples: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let cfg = gradcheck_config();
    let mut base = init_base(&cfg, seed)?;
    randomize(base.network_mut(), 0.4, seed ^ 1);
    let mut m = convert_to_moe(&base, &cfg.vocab, seed ^ 2)?;
    perturb_speech_side(&mut m, 0.3, seed ^ 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 4);
    let seqs: Vec<EncodedSequence> = (0..2)
        .map(|_| random_speech_sequence(&cfg.vocab, 5, 6, &mut rng))
        .collect();
    let mut out = Vec::new();
    let params = m.network().num_params();
    for ablation in [Ablation::None, Ablation::FullFinetune] {
        let sel = trainable_set(m.network(), ablation)?;
        let r = gradcheck(m.network(), &seqs, LossScope::LossMask, &sel, samples, 1e-5, seed ^ 5)?;
        out.push(CheckResult::new(
            match ablation {
                Ablation::None => "gradcheck_speech_side",
                Ablation::FullFinetune => "gradcheck_all_params",
            },
            r.max_rel_error <= 1e-4 && r.coordinates >= samples,
            format!(
                "{} params, {} coordinates, max rel error {:e} ({})",
                params, r.coordinates, r.max_rel_error, r.worst
            ),
        ));
    }
    // Dense base model, every position scored.
    let text_seqs: Vec<EncodedSequence> = (0..2)
        .map(|_| EncodedSequence::from_ids(random_text_ids(&cfg.vocab, 9, &mut rng), &cfg.vocab))
        .collect::<Result<_>>()?;
    let all: Vec<ParamId> = (0..base.network().params().len()).map(ParamId).collect();
    let r = gradcheck(base.network(), &text_seqs, LossScope::AllPositions, &all, samples, 1e-5, seed ^ 6)?;
    out.push(CheckResult::new(
        "gradcheck_base",
        r.max_rel_error <= 1e-4 && r.coordinates >= samples,
        format!(
            "{} params, {} coordinates, max rel error {:e} ({})",
            base.network().num_params(),
            r.coordinates,
            r.max_rel_error,
            r.worst
        ),
    ));
    Ok(out)
}

/// Routing partition, causality, init-equivalence and frozen-text invariance on
/// a freshly converted two-layer, d=16 model.
pub fn structural_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let vocab = Vocabulary::new(48, 64)?;
    let cfg = ModelConfig::tiny(vocab);
    let base = init_base(&cfg, seed)?;
    let m = convert_to_moe(&base, &vocab, seed ^ 1)?;
    let mut out = vec![
        init_equivalence(&m, 100, 40, seed ^ 2)?,
        routing_partition(&m, seed ^ 3)?,
        frozen_text_forward(&base, &m, 20, seed ^ 4)?,
    ];
    // Causality with distinct experts so both routes are exercised.
    let mut trained = m.clone();
    perturb_speech_side(&mut trained, 0.1, seed ^ 5);
    let mut c = causality(trained.network(), 3, 24, seed ^ 6)?;
    let dense = causality(base.network(), 2, 24, seed ^ 7)?;
    c.passed &= dense.passed;
    c.detail = format!("routed: {}; dense: {}", c.detail, dense.detail);
    out.push(c);
    Ok(out)
}

/// Checks that need a real converted model: init-equivalence against its dense
/// reference and, when a base model is given, frozen-text invariance.
pub fn model_suite(base: Option<&BaseModel>, m: &MoeModel, seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = vec![init_equivalence(m, 100, 64, seed)?];
    if let Some(b) = base {
        out.push(frozen_text_forward(b, m, 20, seed ^ 1)?);
    }
    Ok(out)
}
