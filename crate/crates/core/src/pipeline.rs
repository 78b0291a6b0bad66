//! Stage functions over a run directory, and the end-to-end pipeline.
//!
//! Run directory layout:
//!
//! ```text
//! data/*.jsonl                corpora
//! base.ckpt                   trained text model
//! moe_init.ckpt               converted model
//! tts.ckpt                    after TTS pretraining
//! final.ckpt                  after description fine-tuning
//! metrics/<phase>.jsonl       per-step loss and learning rate
//! report.json, report.csv     evaluation
//! ```

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{
    attribute_accuracy, frozen_selector, param_digest, perplexity, text_logit_delta, EvalReport,
    ModelSpeaker,
};
use crate::model::{convert_to_moe, init_base, BaseModel, GenerateOptions, MoeModel, Network, Sampling};
use crate::seqfmt::{read_corpus, CharTokenizer, EncodedSequence};
use crate::store::{load_checkpoint, save_checkpoint};
use crate::synthdata::{generate_corpus, CorpusPaths, CorpusSpec};
use crate::train::{
    run_phase, write_metrics, Ablation, PhaseKind, PhaseOutcome, StepMetrics, TrainPhase,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn corpus(&self) -> CorpusPaths {
        CorpusPaths::in_dir(&self.data_dir())
    }

    pub fn base_ckpt(&self) -> PathBuf {
        self.root.join("base.ckpt")
    }

    pub fn moe_init_ckpt(&self) -> PathBuf {
        self.root.join("moe_init.ckpt")
    }

    pub fn phase_ckpt(&self, kind: PhaseKind) -> PathBuf {
        match kind {
            PhaseKind::BaseText => self.base_ckpt(),
            PhaseKind::TtsPretrain => self.root.join("tts.ckpt"),
            PhaseKind::DescriptionFinetune => self.root.join("final.ckpt"),
        }
    }

    pub fn metrics(&self, kind: PhaseKind) -> PathBuf {
        self.root.join("metrics").join(format!("{}.jsonl", kind.name()))
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn report_csv(&self) -> PathBuf {
        self.root.join("report.csv")
    }
}

/// Seed offsets so every stage draws from its own stream.
fn stage_seed(seed: u64, stage: u64) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(stage)
}

pub fn corpus_spec(cfg: &RunConfig) -> CorpusSpec {
    CorpusSpec {
        seed: cfg.seed,
        ..cfg.data.clone()
    }
}

pub fn gen_data(cfg: &RunConfig, layout: &RunLayout) -> Result<CorpusPaths> {
    let (_, paths) = generate_corpus(&corpus_spec(cfg), &layout.data_dir())?;
    Ok(paths)
}

pub fn phase_for(cfg: &RunConfig, kind: PhaseKind, corpus: PathBuf) -> TrainPhase {
    let p = cfg.phases.get(kind);
    TrainPhase {
        kind,
        corpus,
        epochs: p.epochs,
        max_steps: p.max_steps,
        batch_size: p.batch_size,
        max_seq_len: p.max_seq_len,
    }
}

fn corpus_for(layout: &RunLayout, kind: PhaseKind) -> PathBuf {
    let c = layout.corpus();
    match kind {
        PhaseKind::BaseText => c.base,
        PhaseKind::TtsPretrain => c.tts_pretrain,
        PhaseKind::DescriptionFinetune => c.finetune,
    }
}

/// Runs one phase on `net`, then writes its metrics and checkpoint.
pub fn train_stage(
    cfg: &RunConfig,
    layout: &RunLayout,
    kind: PhaseKind,
    net: &mut Network,
    ablation: Ablation,
    on_step: &mut dyn FnMut(&StepMetrics),
) -> Result<PhaseOutcome> {
    let phase = phase_for(cfg, kind, corpus_for(layout, kind));
    let mut opts = cfg.train_options(kind);
    opts.ablation = ablation;
    let seed = stage_seed(cfg.seed, 10 + kind as u64);
    let out = run_phase(&phase, net, &opts, seed, on_step)?;
    write_metrics(&layout.metrics(kind), &out.metrics)?;
    save_checkpoint(net, kind.name(), cfg.seed, &layout.phase_ckpt(kind))?;
    Ok(out)
}

pub fn init_base_model(cfg: &RunConfig) -> Result<BaseModel> {
    init_base(&cfg.model.to_config()?, stage_seed(cfg.seed, 1))
}

pub fn train_base(
    cfg: &RunConfig,
    layout: &RunLayout,
    on_step: &mut dyn FnMut(&StepMetrics),
) -> Result<(BaseModel, PhaseOutcome)> {
    let mut net = init_base_model(cfg)?.into_network();
    let out = train_stage(cfg, layout, PhaseKind::BaseText, &mut net, Ablation::None, on_step)?;
    Ok((BaseModel::from_network(net)?, out))
}

pub fn convert(cfg: &RunConfig, layout: &RunLayout, base: &BaseModel) -> Result<MoeModel> {
    let vocab = cfg.model.to_config()?.vocab;
    let m = convert_to_moe(base, &vocab, stage_seed(cfg.seed, 2))?;
    save_checkpoint(m.network(), "convert", cfg.seed, &layout.moe_init_ckpt())?;
    Ok(m)
}

pub fn train_moe(
    cfg: &RunConfig,
    layout: &RunLayout,
    kind: PhaseKind,
    m: MoeModel,
    ablation: Ablation,
    on_step: &mut dyn FnMut(&StepMetrics),
) -> Result<(MoeModel, PhaseOutcome)> {
    if !kind.is_moe() {
        return Err(Error::Contract(format!("{} is not a routed phase", kind.name())));
    }
    let mut net = m.into_network();
    let out = train_stage(cfg, layout, kind, &mut net, ablation, on_step)?;
    Ok((MoeModel::from_network(net)?, out))
}

pub fn load_base(path: &Path) -> Result<BaseModel> {
    load_checkpoint(path)?.into_base()
}

pub fn load_moe(path: &Path) -> Result<MoeModel> {
    load_checkpoint(path)?.into_moe()
}

/// Encoded pure-text conversations used for perplexity and drift checks.
pub fn text_eval_corpus(layout: &RunLayout, net: &Network) -> Result<Vec<EncodedSequence>> {
    let vocab = net.config().vocab;
    let tok = CharTokenizer::new(&vocab)?;
    read_corpus(&layout.corpus().text_eval)?
        .iter()
        .map(|r| r.encode(&tok, &vocab))
        .collect()
}

/// Digest of the parameters a conversion of `base` freezes.
pub fn reference_frozen_digest(base: &BaseModel) -> Result<String> {
    let m = convert_to_moe(base, &base.config().vocab, 0)?;
    param_digest(m.network(), &frozen_selector(m.network()))
}

pub fn evaluate(
    cfg: &RunConfig,
    layout: &RunLayout,
    base: &BaseModel,
    m: &MoeModel,
    phase: &str,
    sampling: Sampling,
    max_len: usize,
) -> Result<EvalReport> {
    let corpus = layout.corpus();
    let test_in = read_corpus(&corpus.test_in)?;
    let test_ood = read_corpus(&corpus.test_ood)?;
    let text = text_eval_corpus(layout, m.network())?;
    let opts = GenerateOptions {
        sampling,
        max_len,
        seed: stage_seed(cfg.seed, 30),
        use_cache: true,
    };
    let speaker = ModelSpeaker::new(m, opts)?;
    let in_domain = attribute_accuracy(&speaker, &test_in)?;
    let ood = attribute_accuracy(&speaker, &test_ood)?;
    let frozen_now = param_digest(m.network(), &frozen_selector(m.network()))?;
    let report = EvalReport {
        phase: phase.to_string(),
        sampling: match sampling {
            Sampling::Greedy => "greedy".into(),
            Sampling::TopK { k, temperature } => format!("top_k(k={k}, temperature={temperature})"),
        },
        transcript_error_rate: in_domain.transcript_error_rate,
        in_domain,
        ood,
        text_perplexity: perplexity(m.network(), &text)?,
        base_text_perplexity: perplexity(base.network(), &text)?,
        frozen_digest_match: frozen_now == reference_frozen_digest(base)?,
        max_text_logit_delta: text_logit_delta(base, m, &text)?,
    };
    report.write_json(&layout.report_json())?;
    std::fs::write(layout.report_csv(), report.to_csv())
        .map_err(|e| Error::io(layout.report_csv(), e))?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: EvalReport,
    pub phases: Vec<PhaseOutcome>,
}

/// gen-data, train-base, convert, train-tts, finetune, eval.
pub fn run_pipeline(
    cfg: &RunConfig,
    layout: &RunLayout,
    ablation: Ablation,
    log: &mut dyn FnMut(&str),
) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let log = std::cell::RefCell::new(log);
    let say = |msg: &str| (*log.borrow_mut())(msg);
    say("generating corpora");
    gen_data(cfg, layout)?;
    let mut phases = Vec::new();
    let mut progress = |m: &StepMetrics| {
        if m.step % 25 == 0 {
            say(&format!("{} step {} lr {:.3e} loss {:.4}", m.phase, m.step, m.lr, m.loss));
        }
    };
    let (base, out) = train_base(cfg, layout, &mut progress)?;
    phases.push(out);
    say("converting to routed model");
    let m = convert(cfg, layout, &base)?;
    let (m, out) = train_moe(cfg, layout, PhaseKind::TtsPretrain, m, ablation, &mut progress)?;
    phases.push(out);
    let (m, out) = train_moe(cfg, layout, PhaseKind::DescriptionFinetune, m, ablation, &mut progress)?;
    phases.push(out);
    say("evaluating");
    let report = evaluate(
        cfg,
        layout,
        &base,
        &m,
        PhaseKind::DescriptionFinetune.name(),
        cfg.eval.sampling,
        cfg.eval.max_len,
    )?;
    Ok(PipelineOutcome { report, phases })
}
