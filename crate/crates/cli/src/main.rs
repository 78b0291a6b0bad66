use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use voxmoe::model::{generate, GenerateOptions, Sampling};
use voxmoe::pipeline::{self, RunLayout};
use voxmoe::seqfmt::{CharTokenizer, CorpusRecord, Domain, SYSTEM_PROMPT};
use voxmoe::synthdata::{oracle_decode, DecodeMode};
use voxmoe::train::{Ablation, PhaseKind, StepMetrics};
use voxmoe::verify::{self, CheckResult};
use voxmoe::RunConfig;

#[derive(Parser)]
#[command(name = "voxmoe", version, about = "Modality-routed text-to-speech-token language model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationArg {
    None,
    FullFinetune,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::None => Ablation::None,
            AblationArg::FullFinetune => Ablation::FullFinetune,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplingArg {
    Greedy,
    Topk,
}

#[derive(Args, Clone)]
struct Decoding {
    /// Defaults to the configured sampling mode.
    #[arg(long, value_enum)]
    sampling: Option<SamplingArg>,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Maximum generated speech tokens; defaults to the configured value.
    #[arg(long)]
    max_len: Option<usize>,
}

impl Decoding {
    fn resolve(&self, cfg: &RunConfig) -> (Sampling, usize) {
        let sampling = match self.sampling {
            None => cfg.eval.sampling,
            Some(SamplingArg::Greedy) => Sampling::Greedy,
            Some(SamplingArg::Topk) => Sampling::TopK {
                k: self.top_k,
                temperature: self.temperature,
            },
        };
        (sampling, self.max_len.unwrap_or(cfg.eval.max_len))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpora into <out>/data.
    GenData(Common),
    /// Train the dense text model on the base corpus.
    TrainBase(Common),
    /// Convert the base model into the routed model.
    Convert(Common),
    /// Train speech experts on description-free TTS data.
    TrainTts {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "none")]
        ablation: AblationArg,
    },
    /// Fine-tune on description-conditioned data.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "none")]
        ablation: AblationArg,
    },
    /// Score the final model and write report.json / report.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        decoding: Decoding,
        /// Routed checkpoint to score; defaults to <out>/final.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the invariant checks.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Finite-difference samples per gradient check.
        #[arg(long, default_value_t = 250)]
        samples: usize,
        /// Routed checkpoint to check; defaults to <out>/moe_init.ckpt if present.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Generate speech tokens for one description and transcript.
    Infer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        decoding: Decoding,
        #[arg(long)]
        description: String,
        #[arg(long)]
        transcript: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// gen-data, train-base, convert, train-tts, finetune and eval in one go.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "none")]
        ablation: AblationArg,
    },
}

fn load(common: &Common) -> Result<(RunConfig, RunLayout)> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok((cfg, RunLayout::new(&common.out)))
}

fn progress(m: &StepMetrics) {
    if m.step % 25 == 0 {
        eprintln!("{} step {} lr {:.3e} loss {:.4}", m.phase, m.step, m.lr, m.loss);
    }
}

fn print_checks(checks: &[CheckResult]) -> bool {
    let mut ok = true;
    for c in checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    ok
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(common) => {
            let (cfg, layout) = load(&common)?;
            pipeline::gen_data(&cfg, &layout)?;
            println!("corpora written to {}", layout.data_dir().display());
        }
        Command::TrainBase(common) => {
            let (cfg, layout) = load(&common)?;
            let (_, out) = pipeline::train_base(&cfg, &layout, &mut progress)?;
            report_phase(PhaseKind::BaseText, &out, &layout);
        }
        Command::Convert(common) => {
            let (cfg, layout) = load(&common)?;
            let base = pipeline::load_base(&layout.base_ckpt())?;
            pipeline::convert(&cfg, &layout, &base)?;
            println!("routed model written to {}", layout.moe_init_ckpt().display());
        }
        Command::TrainTts { common, ablation } => {
            let (cfg, layout) = load(&common)?;
            let m = pipeline::load_moe(&layout.moe_init_ckpt())?;
            let kind = PhaseKind::TtsPretrain;
            let (_, out) = pipeline::train_moe(&cfg, &layout, kind, m, ablation.into(), &mut progress)?;
            report_phase(kind, &out, &layout);
        }
        Command::Finetune { common, ablation } => {
            let (cfg, layout) = load(&common)?;
            let m = pipeline::load_moe(&layout.phase_ckpt(PhaseKind::TtsPretrain))?;
            let kind = PhaseKind::DescriptionFinetune;
            let (_, out) = pipeline::train_moe(&cfg, &layout, kind, m, ablation.into(), &mut progress)?;
            report_phase(kind, &out, &layout);
        }
        Command::Eval {
            common,
            decoding,
            checkpoint,
        } => {
            let (cfg, layout) = load(&common)?;
            let (sampling, max_len) = decoding.resolve(&cfg);
            let path = checkpoint.unwrap_or_else(|| layout.phase_ckpt(PhaseKind::DescriptionFinetune));
            let ckpt = voxmoe::store::load_checkpoint(&path)?;
            let phase = ckpt.manifest.phase.clone();
            let m = ckpt.into_moe()?;
            let base = pipeline::load_base(&layout.base_ckpt())?;
            let report = pipeline::evaluate(&cfg, &layout, &base, &m, &phase, sampling, max_len)?;
            println!("{}", report.to_json()?);
            if !report.frozen_digest_match {
                bail!("frozen-parameter invariant violated: frozen digest differs from the base model");
            }
        }
        Command::Verify {
            common,
            samples,
            checkpoint,
        } => {
            let (cfg, layout) = load(&common)?;
            let mut checks = verify::structural_suite(cfg.seed)?;
            checks.extend(verify::gradcheck_suite(samples, cfg.seed)?);
            let path = checkpoint.or_else(|| Some(layout.moe_init_ckpt()).filter(|p| p.exists()));
            if let Some(path) = path {
                let m = pipeline::load_moe(&path)?;
                let base_path = layout.base_ckpt();
                let base = if base_path.exists() {
                    Some(pipeline::load_base(&base_path)?)
                } else {
                    None
                };
                checks.extend(verify::model_suite(base.as_ref(), &m, cfg.seed)?);
                if let Some(b) = &base {
                    let expected = pipeline::reference_frozen_digest(b)?;
                    checks.push(verify::frozen_digest(&m, &expected)?);
                }
            }
            if !print_checks(&checks) {
                let failed: Vec<_> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
                bail!("invariant check failed: {}", failed.join(", "));
            }
        }
        Command::Infer {
            common,
            decoding,
            description,
            transcript,
            checkpoint,
        } => {
            let (cfg, layout) = load(&common)?;
            let (sampling, max_len) = decoding.resolve(&cfg);
            let path = checkpoint.unwrap_or_else(|| layout.phase_ckpt(PhaseKind::DescriptionFinetune));
            let m = pipeline::load_moe(&path)?;
            let record = CorpusRecord {
                system: SYSTEM_PROMPT.into(),
                description: Some(description),
                transcript,
                speech: Vec::new(),
                attrs: None,
                domain: Domain::InDomain,
                response: None,
            };
            let tok = CharTokenizer::new(m.vocab())?;
            let prefix = record.prompt(&tok, m.vocab()).context("encoding the prompt")?;
            let opts = GenerateOptions {
                sampling,
                max_len,
                seed: cfg.seed,
                use_cache: true,
            };
            let tokens = generate(&m, &prefix, opts)?;
            let decoded = oracle_decode(&tokens, DecodeMode::Tolerant).ok();
            let out = serde_json::json!({
                "tokens": tokens,
                "attributes": decoded.as_ref().map(|d| d.attrs),
                "transcript": decoded.as_ref().map(|d| d.transcript.clone()),
                "well_formed": decoded.as_ref().is_some_and(|d| d.valid),
            });
            println!("{out}");
        }
        Command::Pipeline { common, ablation } => {
            let (cfg, layout) = load(&common)?;
            let out = pipeline::run_pipeline(&cfg, &layout, ablation.into(), &mut |msg| eprintln!("{msg}"))?;
            println!("{}", out.report.to_json()?);
            if !out.report.frozen_digest_match {
                bail!("frozen-parameter invariant violated: frozen digest differs from the base model");
            }
        }
    }
    Ok(())
}

fn report_phase(kind: PhaseKind, out: &voxmoe::train::PhaseOutcome, layout: &RunLayout) {
    let last = out.metrics.last().map(|m| m.loss).unwrap_or(f64::NAN);
    println!(
        "{}: {} steps, {} sequences skipped, final loss {last:.4}, checkpoint {}",
        kind.name(),
        out.metrics.len(),
        out.skipped,
        layout.phase_ckpt(kind).display()
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
