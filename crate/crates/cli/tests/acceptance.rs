//! End-to-end acceptance run. Drives the `voxmoe` binary with the default desk
//! configuration and prints one PASS/FAIL line per criterion.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use voxmoe::eval::EvalReport;
use voxmoe::model::{Grads, Param, ParamId, Role};
use voxmoe::pipeline;
use voxmoe::store::{load_checkpoint, save_checkpoint};
use voxmoe::synthdata::Attribute;
use voxmoe::train::{AdamWConfig, OptimizerState, Schedule};
use voxmoe::verify;

const PIPELINE_BUDGET: Duration = Duration::from_secs(45 * 60);

struct Outcome {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
}

fn voxmoe(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_voxmoe"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "voxmoe {} exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or("")
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn read_report(dir: &Path) -> Result<EvalReport, String> {
    let text = std::fs::read_to_string(dir.join("report.json")).map_err(|e| e.to_string())?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn copy_into(from: &Path, to: &Path, items: &[&str]) -> Result<(), String> {
    std::fs::create_dir_all(to.join("data")).map_err(|e| e.to_string())?;
    for item in items {
        let src = from.join(item);
        if src.is_dir() {
            for entry in std::fs::read_dir(&src).map_err(|e| e.to_string())? {
                let p = entry.map_err(|e| e.to_string())?.path();
                std::fs::copy(&p, to.join(item).join(p.file_name().unwrap())).map_err(|e| e.to_string())?;
            }
        } else {
            std::fs::copy(&src, to.join(item)).map_err(|e| e.to_string())?;
        }
    }
    Ok(())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn init_equivalence(run: &Path) -> Result<(bool, String), String> {
    let m = pipeline::load_moe(&run.join("moe_init.ckpt")).map_err(|e| e.to_string())?;
    let r = verify::init_equivalence(&m, 100, 96, 101).map_err(|e| e.to_string())?;
    Ok((r.passed, r.detail))
}

fn no_forgetting(report: &EvalReport) -> (bool, String) {
    let passed = report.frozen_digest_match
        && report.max_text_logit_delta == 0.0
        && report.text_perplexity == report.base_text_perplexity;
    (
        passed,
        format!(
            "digest match {}, max text logit delta {:e}, perplexity {} vs base {}",
            report.frozen_digest_match,
            report.max_text_logit_delta,
            report.text_perplexity,
            report.base_text_perplexity
        ),
    )
}

fn ablation(run: &Path, scratch: &Path) -> Result<(bool, String), String> {
    let dir = scratch.join("ablation");
    copy_into(run, &dir, &["data", "base.ckpt", "moe_init.ckpt"])?;
    voxmoe(&["train-tts", "--out", s(&dir), "--ablation", "full-finetune"])?;
    voxmoe(&["finetune", "--out", s(&dir), "--ablation", "full-finetune"])?;
    // eval exits nonzero here by design: the frozen digest no longer matches.
    let _ = voxmoe(&["eval", "--out", s(&dir)]);
    let r = read_report(&dir)?;
    let changed = (r.text_perplexity - r.base_text_perplexity).abs();
    Ok((
        r.max_text_logit_delta > 0.0 && changed > 0.0 && !r.frozen_digest_match,
        format!(
            "max text logit delta {:.4e}, perplexity {:.6} vs base {:.6}",
            r.max_text_logit_delta, r.text_perplexity, r.base_text_perplexity
        ),
    ))
}

fn gradients() -> Result<(bool, String), String> {
    let checks = verify::gradcheck_suite(250, 17).map_err(|e| e.to_string())?;
    let detail = checks.iter().map(|c| format!("{}: {}", c.name, c.detail)).collect::<Vec<_>>().join("; ");
    Ok((checks.iter().all(|c| c.passed), detail))
}

fn structure() -> Result<(bool, String), String> {
    let checks = verify::structural_suite(3).map_err(|e| e.to_string())?;
    let detail = checks
        .iter()
        .map(|c| format!("{} {}", c.name, if c.passed { "ok" } else { "FAILED" }))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((checks.iter().all(|c| c.passed), detail))
}

fn learnability(report: &EvalReport, elapsed: Duration) -> (bool, String) {
    let mut passed = elapsed < PIPELINE_BUDGET && report.in_domain.transcript_error_rate <= 0.10;
    let mut parts = Vec::new();
    for a in Attribute::ALL {
        let (inn, ood) = (report.in_domain.accuracy.get(a), report.ood.accuracy.get(a));
        passed &= inn >= 0.90 && ood > a.chance();
        parts.push(format!("{} {:.2}/{:.2} (chance {:.2})", a.name(), inn, ood, a.chance()));
    }
    (
        passed,
        format!(
            "in/ood accuracy: {}; CER {:.3}; pipeline {:.1} min",
            parts.join(", "),
            report.in_domain.transcript_error_rate,
            elapsed.as_secs_f64() / 60.0
        ),
    )
}

fn schedule_and_optimizer() -> Result<(bool, String), String> {
    let sched = Schedule::new(3e-4, 0.08, 1000, 0.0).map_err(|e| e.to_string())?;
    let w = sched.warmup_steps();
    let sched_ok = sched.lr_at(0) == 0.0 && sched.lr_at(w) == 3e-4 && sched.lr_at(1000) == 0.0;

    // Decimal reference for w0 = 1, g = (0.5, -0.25), lr = 1e-3, default AdamW.
    let expected = [0.998_990_000_02, 0.998_712_902_413_224_1];
    let mut params = vec![Param {
        name: "w".into(),
        role: Role::Speech,
        frozen: false,
        shape: vec![1],
        data: vec![1.0],
    }];
    let mut opt = OptimizerState::new(AdamWConfig::default(), &params, &[ParamId(0)]);
    let mut grads = Grads::new(&params, &[true]);
    let mut worst: f64 = 0.0;
    for (g, want) in [0.5, -0.25].into_iter().zip(expected) {
        grads.slots[0].as_mut().unwrap()[0] = g;
        opt.step(&mut params, &grads, 1e-3).map_err(|e| e.to_string())?;
        worst = worst.max((params[0].data[0] - want).abs());
    }
    Ok((
        sched_ok && worst <= 1e-12,
        format!("warmup_steps {w}, lr_at(warmup) {:e}; AdamW trace error {worst:e}", sched.lr_at(w)),
    ))
}

fn persistence(run: &Path, scratch: &Path) -> Result<(bool, String), String> {
    let ckpt = run.join("final.ckpt");
    let loaded = load_checkpoint(&ckpt).map_err(|e| e.to_string())?;
    let again = scratch.join("roundtrip.ckpt");
    save_checkpoint(&loaded.network, &loaded.manifest.phase, loaded.manifest.seed, &again).map_err(|e| e.to_string())?;
    let bitwise = std::fs::read(&ckpt).map_err(|e| e.to_string())? == std::fs::read(&again).map_err(|e| e.to_string())?;

    let dir = scratch.join("resume");
    copy_into(run, &dir, &["data", "base.ckpt", "moe_init.ckpt", "tts.ckpt"])?;
    voxmoe(&["finetune", "--out", s(&dir)])?;
    let metrics = "metrics/description_finetune.jsonl";
    let same_log = std::fs::read(run.join(metrics)).ok() == std::fs::read(dir.join(metrics)).ok();
    let same_ckpt = std::fs::read(&ckpt).ok() == std::fs::read(dir.join("final.ckpt")).ok();
    Ok((
        bitwise && same_log && same_ckpt,
        format!("round trip bitwise {bitwise}; resumed finetune log identical {same_log}, checkpoint identical {same_ckpt}"),
    ))
}

fn main() {
    let scratch = tempfile::tempdir().expect("temp dir");
    let run: PathBuf = scratch.path().join("run");
    let mut results: Vec<Outcome> = Vec::new();
    let mut record = |id, name, start: Instant, r: Result<(bool, String), String>| {
        let (passed, detail) = r.unwrap_or_else(|e| (false, format!("error: {e}")));
        let o = Outcome { id, name, passed, detail, elapsed: start.elapsed() };
        println!(
            "criterion {} {:<28} {} ({:.1}s) {}",
            o.id,
            o.name,
            if o.passed { "PASS" } else { "FAIL" },
            o.elapsed.as_secs_f64(),
            o.detail
        );
        results.push(o);
    };

    let t = Instant::now();
    record(4, "gradient correctness", t, gradients());
    let t = Instant::now();
    record(5, "routing and causality", t, structure());
    let t = Instant::now();
    record(7, "schedule and optimizer", t, schedule_and_optimizer());

    let t = Instant::now();
    let pipeline_run = voxmoe(&["pipeline", "--out", s(&run)]);
    let pipeline_time = t.elapsed();
    let report = pipeline_run.and_then(|_| read_report(&run));

    let t = Instant::now();
    record(1, "init equivalence", t, init_equivalence(&run));
    record(2, "no forgetting", t, report.as_ref().map(no_forgetting).map_err(Clone::clone));
    record(
        6,
        "desk-scale learnability",
        t,
        report.as_ref().map(|r| learnability(r, pipeline_time)).map_err(Clone::clone),
    );
    let t = Instant::now();
    record(3, "ablation contrast", t, ablation(&run, scratch.path()));
    let t = Instant::now();
    record(8, "persistence and resume", t, persistence(&run, scratch.path()));

    results.sort_by_key(|o| o.id);
    let failed: Vec<String> = results.iter().filter(|o| !o.passed).map(|o| o.id.to_string()).collect();
    println!("acceptance: {}/{} criteria pass", results.len() - failed.len(), results.len());
    drop(scratch);
    if !failed.is_empty() {
        eprintln!("failing criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
}
