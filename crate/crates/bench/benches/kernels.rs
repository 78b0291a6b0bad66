use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use voxmoe::linalg::{matmul, Mat};
use voxmoe::model::{convert_to_moe, generate, init_base, GenerateOptions, Grads};
use voxmoe::seqfmt::{CharTokenizer, CorpusRecord, Domain, EncodedSequence, SYSTEM_PROMPT};
use voxmoe::verify::random_speech_sequence;
use voxmoe::RunConfig;

fn filled(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut x = seed;
    let data = (0..rows * cols)
        .map(|_| {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect();
    Mat::from_vec(rows, cols, data)
}

fn bench_matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for &t in &[64usize, 256] {
        let a = filled(t, 128, 1);
        let b = filled(128, 256, 2);
        g.bench_with_input(BenchmarkId::from_parameter(t), &t, |bch, _| {
            bch.iter(|| matmul(black_box(&a), black_box(&b)))
        });
    }
    g.finish();
}

fn desk_model() -> voxmoe::model::MoeModel {
    let cfg = RunConfig::default().model.to_config().unwrap();
    let base = init_base(&cfg, 1).unwrap();
    convert_to_moe(&base, &cfg.vocab, 2).unwrap()
}

fn sample_sequence(m: &voxmoe::model::MoeModel) -> EncodedSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    random_speech_sequence(m.vocab(), 80, 120, &mut rng)
}

fn bench_model(c: &mut Criterion) {
    let m = desk_model();
    let seq = sample_sequence(&m);
    let net = m.network();
    c.bench_function("forward_200", |b| b.iter(|| net.forward_ids(black_box(&seq.ids)).unwrap()));

    let trainable: Vec<bool> = net.params().iter().map(|p| !p.frozen).collect();
    let mut grads = Grads::new(net.params(), &trainable);
    c.bench_function("forward_backward_200", |b| {
        b.iter(|| {
            let (logits, trace) = net.forward_traced(&seq.ids).unwrap();
            grads.zero();
            net.backward(&trace, &logits, &mut grads).unwrap();
        })
    });

    let record = CorpusRecord {
        system: SYSTEM_PROMPT.into(),
        description: Some("a female speaker with a high pitch speaks at a fast pace in a calm tone.".into()),
        transcript: "red moon over the sea".into(),
        speech: Vec::new(),
        attrs: None,
        domain: Domain::InDomain,
        response: None,
    };
    let tok = CharTokenizer::new(m.vocab()).unwrap();
    let prefix = record.prompt(&tok, m.vocab()).unwrap();
    let mut g = c.benchmark_group("generate_32");
    g.sample_size(10);
    for use_cache in [true, false] {
        let opts = GenerateOptions {
            use_cache,
            ..GenerateOptions::greedy(32)
        };
        g.bench_with_input(BenchmarkId::from_parameter(if use_cache { "cached" } else { "uncached" }), &opts, |b, o| {
            b.iter(|| generate(&m, &prefix, *o))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_matmul, bench_model);
criterion_main!(benches);
