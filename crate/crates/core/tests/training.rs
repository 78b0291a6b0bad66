use voxmoe::config::{ModelSection, PhaseSection};
use voxmoe::eval::{all_params, attribute_accuracy, frozen_selector, param_digest, TeacherForced, ModelSpeaker};
use voxmoe::model::{generate, GenerateOptions, MoeModel, Sampling};
use voxmoe::pipeline::{self, RunLayout};
use voxmoe::seqfmt::{read_corpus, CharTokenizer};
use voxmoe::synthdata::CorpusSpec;
use voxmoe::train::{
    accumulate_sequence, load_phase_data, trainable_mask, trainable_set, Ablation, PhaseKind,
};
use voxmoe::model::Grads;
use voxmoe::RunConfig;

fn small_config() -> RunConfig {
    let phase = |epochs, lr| PhaseSection {
        epochs,
        batch_size: 8,
        peak_lr: Some(lr),
        ..Default::default()
    };
    let mut cfg = RunConfig {
        seed: 11,
        model: ModelSection {
            layers: 2,
            d_model: 32,
            heads: 2,
            ffn_dim: 64,
            ..Default::default()
        },
        data: CorpusSpec {
            base_in: 60,
            base_ood: 60,
            bridge_repeats: 1,
            tts_pretrain: 72,
            finetune: 72,
            test_in: 6,
            test_ood: 6,
            text_eval: 8,
            ..Default::default()
        },
        ..Default::default()
    };
    cfg.phases.base_text = phase(1, 3e-3);
    cfg.phases.tts_pretrain = phase(1, 3e-3);
    cfg.phases.description_finetune = phase(1, 3e-3);
    cfg.eval.max_len = 48;
    cfg
}

fn converted(cfg: &RunConfig, layout: &RunLayout) -> MoeModel {
    pipeline::gen_data(cfg, layout).unwrap();
    let base = pipeline::init_base_model(cfg).unwrap();
    pipeline::convert(cfg, layout, &base).unwrap()
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let cfg = small_config();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut reports = Vec::new();
    for d in &dirs {
        let out = pipeline::run_pipeline(&cfg, &RunLayout::new(d.path()), Ablation::None, &mut |_| {}).unwrap();
        reports.push(out.report);
    }
    assert_eq!(reports[0], reports[1]);
    for rel in [
        "data/base_text.jsonl",
        "data/finetune.jsonl",
        "base.ckpt",
        "moe_init.ckpt",
        "tts.ckpt",
        "final.ckpt",
        "metrics/tts_pretrain.jsonl",
        "metrics/description_finetune.jsonl",
    ] {
        let a = std::fs::read(dirs[0].path().join(rel)).unwrap();
        let b = std::fs::read(dirs[1].path().join(rel)).unwrap();
        assert!(a == b, "{rel} differs between identical runs");
    }
}

#[test]
fn zero_steps_leave_the_model_unchanged() {
    let mut cfg = small_config();
    cfg.phases.tts_pretrain.max_steps = Some(0);
    let dir = tempfile::tempdir().unwrap();
    let layout = RunLayout::new(dir.path());
    let m = converted(&cfg, &layout);
    let before = param_digest(m.network(), &all_params(m.network())).unwrap();
    let (m, out) = pipeline::train_moe(&cfg, &layout, PhaseKind::TtsPretrain, m, Ablation::None, &mut |_| {}).unwrap();
    assert!(out.metrics.is_empty());
    assert_eq!(param_digest(m.network(), &all_params(m.network())).unwrap(), before);
    let reloaded = pipeline::load_moe(&layout.phase_ckpt(PhaseKind::TtsPretrain)).unwrap();
    assert_eq!(param_digest(reloaded.network(), &all_params(reloaded.network())).unwrap(), before);
}

#[test]
fn speech_loss_falls_within_two_hundred_steps() {
    let mut cfg = small_config();
    cfg.phases.tts_pretrain = PhaseSection {
        epochs: 30,
        max_steps: Some(220),
        batch_size: 8,
        peak_lr: Some(3e-3),
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let layout = RunLayout::new(dir.path());
    let m = converted(&cfg, &layout);
    let (_, out) = pipeline::train_moe(&cfg, &layout, PhaseKind::TtsPretrain, m, Ablation::None, &mut |_| {}).unwrap();
    let losses: Vec<f64> = out.metrics.iter().map(|m| m.loss).collect();
    let avg = |r: std::ops::Range<usize>| losses[r.clone()].iter().sum::<f64>() / r.len() as f64;
    let (start, at200) = (avg(0..20), avg(181..201));
    assert!(at200 < start, "moving average {start} -> {at200}");
    assert!(out.frozen_digest.as_ref().is_some_and(|(a, b)| a == b));
}

#[test]
fn trainable_set_is_speech_experts_plus_new_rows() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    let m = converted(&cfg, &RunLayout::new(dir.path()));
    let net = m.network();
    let sel = trainable_set(net, Ablation::None).unwrap();
    let count: usize = sel.iter().map(|&id| net.param(id).numel()).sum();
    let routed: usize = m
        .routed_components()
        .iter()
        .map(|(_, p)| net.param(p.text).numel())
        .sum();
    let v = m.vocab();
    assert_eq!(count, routed + 2 * (v.speech_size() + 1) * cfg.model.d_model);
    let text_side = m.text_side_params();
    assert!(sel.iter().all(|id| !text_side.contains(id)));
    let all = trainable_set(net, Ablation::FullFinetune).unwrap();
    assert_eq!(all.len(), net.params().len());
    assert!(trainable_set(pipeline::init_base_model(&cfg).unwrap().network(), Ablation::None).is_err());
}

#[test]
fn every_trainable_tensor_receives_gradient() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    let layout = RunLayout::new(dir.path());
    let m = converted(&cfg, &layout);
    let net = m.network();
    let phase = pipeline::phase_for(&cfg, PhaseKind::DescriptionFinetune, layout.corpus().finetune);
    let (seqs, _) = load_phase_data(&phase, net).unwrap();
    let sel = trainable_set(net, Ablation::None).unwrap();
    let mut grads = Grads::new(net.params(), &trainable_mask(net, &sel));
    for s in seqs.iter().take(8) {
        accumulate_sequence(net, s, PhaseKind::DescriptionFinetune.scope(), 1.0, &mut grads).unwrap();
    }
    for id in sel {
        let g = grads.get(id).unwrap();
        assert!(g.iter().any(|&x| x != 0.0), "{} receives no gradient", net.param(id).name);
    }
}

#[test]
fn resuming_from_checkpoints_reproduces_metrics() {
    let cfg = small_config();
    let whole = tempfile::tempdir().unwrap();
    let whole_layout = RunLayout::new(whole.path());
    pipeline::run_pipeline(&cfg, &whole_layout, Ablation::None, &mut |_| {}).unwrap();

    let split = tempfile::tempdir().unwrap();
    let layout = RunLayout::new(split.path());
    pipeline::gen_data(&cfg, &layout).unwrap();
    pipeline::train_base(&cfg, &layout, &mut |_| {}).unwrap();
    let base = pipeline::load_base(&layout.base_ckpt()).unwrap();
    pipeline::convert(&cfg, &layout, &base).unwrap();
    for kind in [PhaseKind::TtsPretrain, PhaseKind::DescriptionFinetune] {
        let src = match kind {
            PhaseKind::TtsPretrain => layout.moe_init_ckpt(),
            _ => layout.phase_ckpt(PhaseKind::TtsPretrain),
        };
        let m = pipeline::load_moe(&src).unwrap();
        pipeline::train_moe(&cfg, &layout, kind, m, Ablation::None, &mut |_| {}).unwrap();
    }
    for kind in [PhaseKind::BaseText, PhaseKind::TtsPretrain, PhaseKind::DescriptionFinetune] {
        assert_eq!(
            std::fs::read(whole_layout.metrics(kind)).unwrap(),
            std::fs::read(layout.metrics(kind)).unwrap(),
            "{} metrics differ after resume",
            kind.name()
        );
    }
    assert_eq!(
        std::fs::read(whole_layout.phase_ckpt(PhaseKind::DescriptionFinetune)).unwrap(),
        std::fs::read(layout.phase_ckpt(PhaseKind::DescriptionFinetune)).unwrap()
    );
}

#[test]
fn teacher_forcing_scores_perfectly_and_untrained_model_fails() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    let layout = RunLayout::new(dir.path());
    let m = converted(&cfg, &layout);
    let test = read_corpus(&layout.corpus().test_in).unwrap();

    let r = attribute_accuracy(&TeacherForced, &test).unwrap();
    assert_eq!(r.decodable, test.len());
    assert_eq!(r.accuracy.min(), 1.0);
    assert_eq!(r.transcript_error_rate, 0.0);
    assert_eq!(r.failure_rate, 0.0);

    let speaker = ModelSpeaker::new(&m, GenerateOptions::greedy(cfg.eval.max_len)).unwrap();
    let r = attribute_accuracy(&speaker, &test).unwrap();
    assert!(r.failure_rate >= 0.8, "untrained failure rate {}", r.failure_rate);
}

#[test]
fn cached_and_uncached_generation_agree() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    let layout = RunLayout::new(dir.path());
    let mut m = converted(&cfg, &layout);
    voxmoe::verify::perturb_speech_side(&mut m, 0.5, 4);
    let tok = CharTokenizer::new(m.vocab()).unwrap();
    for (i, r) in read_corpus(&layout.corpus().test_ood).unwrap().iter().enumerate() {
        let prefix = r.prompt(&tok, m.vocab()).unwrap();
        for sampling in [Sampling::Greedy, Sampling::TopK { k: 4, temperature: 0.8 }] {
            let opts = GenerateOptions {
                sampling,
                max_len: 24,
                seed: i as u64,
                use_cache: true,
            };
            let cached = generate(&m, &prefix, opts).unwrap();
            let full = generate(&m, &prefix, GenerateOptions { use_cache: false, ..opts }).unwrap();
            assert_eq!(cached, full);
        }
    }
}

#[test]
fn frozen_digest_survives_speech_phases() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    let layout = RunLayout::new(dir.path());
    let m = converted(&cfg, &layout);
    let before = param_digest(m.network(), &frozen_selector(m.network())).unwrap();
    let (m, _) = pipeline::train_moe(&cfg, &layout, PhaseKind::TtsPretrain, m, Ablation::None, &mut |_| {}).unwrap();
    assert_eq!(param_digest(m.network(), &frozen_selector(m.network())).unwrap(), before);

    let (m, out) = pipeline::train_moe(&cfg, &layout, PhaseKind::DescriptionFinetune, m, Ablation::FullFinetune, &mut |_| {})
        .unwrap();
    assert!(out.frozen_digest.is_none());
    assert_ne!(param_digest(m.network(), &frozen_selector(m.network())).unwrap(), before);
}
