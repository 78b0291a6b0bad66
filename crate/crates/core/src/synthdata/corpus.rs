//! Seeded corpus generation for every training phase and the two test sets.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attrs::{Attribute, VoiceAttributes};
use super::grammar::speech_encode;
use super::templates::{
    attribute_code, bridge_sentence, render_description, value_name, FamilyKind, TemplateFamily,
};
use crate::error::{Error, Result};
use crate::seqfmt::{write_corpus, CorpusRecord, Domain, SYSTEM_PROMPT};

/// Transcript vocabulary.
pub const WORDS: [&str; 50] = [
    "the", "cat", "dog", "sun", "red", "big", "run", "sky", "blue", "tree", "fish", "bird", "milk",
    "rain", "hot", "cold", "old", "new", "day", "night", "moon", "star", "road", "home", "book",
    "door", "hand", "song", "time", "life", "water", "fire", "stone", "light", "green", "sweet",
    "happy", "small", "quick", "bread", "apple", "river", "house", "smile", "cloud", "snow", "wind",
    "sea", "ship", "gold",
];

pub const MIN_WORDS: usize = 3;
pub const MAX_WORDS: usize = 12;

pub const BASE_FILE: &str = "base_text.jsonl";
pub const TTS_FILE: &str = "tts_pretrain.jsonl";
pub const FINETUNE_FILE: &str = "finetune.jsonl";
pub const TEST_IN_FILE: &str = "test_in.jsonl";
pub const TEST_OOD_FILE: &str = "test_ood.jsonl";
pub const TEXT_EVAL_FILE: &str = "text_eval.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub seed: u64,
    /// Text conversations with in-domain descriptions.
    pub base_in: usize,
    /// Text conversations with ood descriptions.
    pub base_ood: usize,
    /// Copies of each bridge sentence (each copy picks its own in-domain synonym).
    pub bridge_repeats: usize,
    pub tts_pretrain: usize,
    pub finetune: usize,
    pub test_in: usize,
    pub test_ood: usize,
    /// Held-out text conversations for perplexity and drift checks.
    pub text_eval: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            seed: 7,
            base_in: 1500,
            base_ood: 1500,
            bridge_repeats: 4,
            tts_pretrain: 6000,
            finetune: 3000,
            test_in: 20,
            test_ood: 40,
            text_eval: 40,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let combos = VoiceAttributes::all().len();
        for (name, n) in [
            ("base_in", self.base_in),
            ("base_ood", self.base_ood),
            ("tts_pretrain", self.tts_pretrain),
            ("finetune", self.finetune),
        ] {
            if n < combos {
                return Err(Error::InvalidConfig(format!(
                    "{name} = {n} cannot cover all {combos} attribute combinations"
                )));
            }
        }
        for (name, n) in [
            ("bridge_repeats", self.bridge_repeats),
            ("test_in", self.test_in),
            ("test_ood", self.test_ood),
            ("text_eval", self.text_eval),
        ] {
            if n == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub base: Vec<CorpusRecord>,
    pub tts_pretrain: Vec<CorpusRecord>,
    pub finetune: Vec<CorpusRecord>,
    pub test_in: Vec<CorpusRecord>,
    pub test_ood: Vec<CorpusRecord>,
    pub text_eval: Vec<CorpusRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusPaths {
    pub base: PathBuf,
    pub tts_pretrain: PathBuf,
    pub finetune: PathBuf,
    pub test_in: PathBuf,
    pub test_ood: PathBuf,
    pub text_eval: PathBuf,
}

impl CorpusPaths {
    pub fn in_dir(dir: &Path) -> Self {
        CorpusPaths {
            base: dir.join(BASE_FILE),
            tts_pretrain: dir.join(TTS_FILE),
            finetune: dir.join(FINETUNE_FILE),
            test_in: dir.join(TEST_IN_FILE),
            test_ood: dir.join(TEST_OOD_FILE),
            text_eval: dir.join(TEXT_EVAL_FILE),
        }
    }
}

#[derive(Clone, Copy)]
enum Split {
    Base = 1,
    Tts = 2,
    Finetune = 3,
    TestIn = 4,
    TestOod = 5,
    TextEval = 6,
    Bridge = 7,
    Order = 8,
}

/// splitmix64 finalizer over (seed, split, index).
fn derive_seed(seed: u64, split: Split, index: u64) -> u64 {
    let mut z = seed
        ^ (split as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rng_for(seed: u64, split: Split, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, split, index))
}

pub fn random_transcript<R: Rng>(rng: &mut R) -> String {
    let n = rng.random_range(MIN_WORDS..=MAX_WORDS);
    (0..n)
        .map(|_| *WORDS.choose(rng).expect("non-empty"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn fresh_transcript<R: Rng>(rng: &mut R, held_out: &BTreeSet<String>) -> String {
    loop {
        let t = random_transcript(rng);
        if !held_out.contains(&t) {
            return t;
        }
    }
}

/// Attribute assignment cycling through reshuffled passes over all combinations.
fn balanced_attrs(seed: u64, split: Split, n: usize) -> Vec<VoiceAttributes> {
    let all = VoiceAttributes::all();
    let mut out = Vec::with_capacity(n);
    let mut pass = 0u64;
    while out.len() < n {
        let mut perm = all.clone();
        perm.shuffle(&mut rng_for(seed, Split::Order, (split as u64) << 32 | pass));
        out.extend(perm.into_iter().take(n - out.len()));
        pass += 1;
    }
    out
}

fn family_domain(kind: FamilyKind) -> Domain {
    match kind {
        FamilyKind::InDomain => Domain::InDomain,
        FamilyKind::OodProxy => Domain::OutOfDomain,
    }
}

/// Text conversation: description and transcript in, code and transcript out.
fn text_record(
    attrs: VoiceAttributes,
    family: &TemplateFamily,
    transcript: String,
    rng: &mut ChaCha8Rng,
) -> Result<CorpusRecord> {
    let description = render_description(&attrs, family, rng.random())?;
    Ok(CorpusRecord {
        system: SYSTEM_PROMPT.into(),
        description: Some(description),
        response: Some(format!("{}{transcript}", attribute_code(&attrs))),
        transcript,
        speech: Vec::new(),
        attrs: Some(attrs),
        domain: family_domain(family.kind),
    })
}

fn speech_record(
    attrs: VoiceAttributes,
    family: Option<&TemplateFamily>,
    transcript: String,
    rng: &mut ChaCha8Rng,
) -> Result<CorpusRecord> {
    let description = match family {
        Some(f) => Some(render_description(&attrs, f, rng.random())?),
        None => None,
    };
    Ok(CorpusRecord {
        system: SYSTEM_PROMPT.into(),
        description,
        speech: speech_encode(&attrs, &transcript)?,
        transcript,
        attrs: Some(attrs),
        domain: family.map_or(Domain::InDomain, |f| family_domain(f.kind)),
        response: None,
    })
}

fn bridges(spec: &CorpusSpec, in_fam: &TemplateFamily, ood_fam: &TemplateFamily) -> Result<Vec<CorpusRecord>> {
    let mut out = Vec::new();
    let mut k = 0u64;
    for attr in Attribute::ALL {
        let mut values: Vec<&'static str> = VoiceAttributes::all()
            .iter()
            .map(|a| value_name(a, attr))
            .collect();
        values.dedup();
        let values: Vec<_> = values.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        for value in values {
            for phrase in ood_fam.phrases(attr, value)? {
                for _ in 0..spec.bridge_repeats {
                    let mut rng = rng_for(spec.seed, Split::Bridge, k);
                    k += 1;
                    let word = in_fam.phrases(attr, value)?.choose(&mut rng).expect("non-empty");
                    out.push(CorpusRecord {
                        system: SYSTEM_PROMPT.into(),
                        description: Some(bridge_sentence(attr, phrase, word)),
                        transcript: String::new(),
                        speech: Vec::new(),
                        attrs: None,
                        domain: Domain::OutOfDomain,
                        response: Some(String::new()),
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Builds every split in memory. Identical specs give identical corpora.
pub fn build_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let in_fam = TemplateFamily::in_domain();
    let ood_fam = TemplateFamily::ood_proxy();
    in_fam.validate()?;
    ood_fam.validate()?;
    let seed = spec.seed;

    // Held-out transcripts first so training splits can avoid them.
    let mut held_out = BTreeSet::new();
    let mut held = |split: Split, n: usize| -> Vec<String> {
        (0..n)
            .map(|i| {
                let t = fresh_transcript(&mut rng_for(seed, split, i as u64), &held_out);
                held_out.insert(t.clone());
                t
            })
            .collect()
    };
    let test_in_t = held(Split::TestIn, spec.test_in);
    let test_ood_t = held(Split::TestOod, spec.test_ood);
    let eval_t = held(Split::TextEval, spec.text_eval);

    let mut corpus = Corpus::default();
    for (i, (a, t)) in balanced_attrs(seed, Split::TestIn, spec.test_in)
        .into_iter()
        .zip(test_in_t)
        .enumerate()
    {
        let mut rng = rng_for(seed, Split::TestIn, 1 << 40 | i as u64);
        corpus.test_in.push(speech_record(a, Some(&in_fam), t, &mut rng)?);
    }
    for (i, (a, t)) in balanced_attrs(seed, Split::TestOod, spec.test_ood)
        .into_iter()
        .zip(test_ood_t)
        .enumerate()
    {
        let mut rng = rng_for(seed, Split::TestOod, 1 << 40 | i as u64);
        corpus.test_ood.push(speech_record(a, Some(&ood_fam), t, &mut rng)?);
    }
    for (i, (a, t)) in balanced_attrs(seed, Split::TextEval, spec.text_eval)
        .into_iter()
        .zip(eval_t)
        .enumerate()
    {
        let mut rng = rng_for(seed, Split::TextEval, 1 << 40 | i as u64);
        let fam = if i % 2 == 0 { &in_fam } else { &ood_fam };
        corpus.text_eval.push(text_record(a, fam, String::new(), &mut rng).map(|mut r| {
            r.response = Some(format!("{}{t}", attribute_code(&a)));
            r.transcript = t;
            r
        })?);
    }

    let n_base = spec.base_in + spec.base_ood;
    let mut base_attrs = balanced_attrs(seed, Split::Base, spec.base_in);
    base_attrs.extend(balanced_attrs(seed ^ 1, Split::Base, spec.base_ood));
    for (i, a) in base_attrs.into_iter().enumerate() {
        let mut rng = rng_for(seed, Split::Base, i as u64);
        let t = fresh_transcript(&mut rng, &held_out);
        let fam = if i < spec.base_in { &in_fam } else { &ood_fam };
        corpus.base.push(text_record(a, fam, t, &mut rng)?);
    }
    debug_assert_eq!(corpus.base.len(), n_base);
    corpus.base.extend(bridges(spec, &in_fam, &ood_fam)?);
    corpus
        .base
        .shuffle(&mut rng_for(seed, Split::Order, u64::MAX));

    for (i, a) in balanced_attrs(seed, Split::Tts, spec.tts_pretrain).into_iter().enumerate() {
        let mut rng = rng_for(seed, Split::Tts, i as u64);
        let t = fresh_transcript(&mut rng, &held_out);
        corpus.tts_pretrain.push(speech_record(a, None, t, &mut rng)?);
    }
    for (i, a) in balanced_attrs(seed, Split::Finetune, spec.finetune).into_iter().enumerate() {
        let mut rng = rng_for(seed, Split::Finetune, i as u64);
        let t = fresh_transcript(&mut rng, &held_out);
        corpus.finetune.push(speech_record(a, Some(&in_fam), t, &mut rng)?);
    }
    Ok(corpus)
}

/// Builds the corpus and writes one JSONL file per split into `dir`.
pub fn generate_corpus(spec: &CorpusSpec, dir: &Path) -> Result<(Corpus, CorpusPaths)> {
    let corpus = build_corpus(spec)?;
    let paths = CorpusPaths::in_dir(dir);
    write_corpus(&paths.base, &corpus.base)?;
    write_corpus(&paths.tts_pretrain, &corpus.tts_pretrain)?;
    write_corpus(&paths.finetune, &corpus.finetune)?;
    write_corpus(&paths.test_in, &corpus.test_in)?;
    write_corpus(&paths.test_ood, &corpus.test_ood)?;
    write_corpus(&paths.text_eval, &corpus.text_eval)?;
    Ok((corpus, paths))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::grammar::{oracle_decode, DecodeMode};

    fn small() -> CorpusSpec {
        CorpusSpec {
            seed: 3,
            base_in: 40,
            base_ood: 40,
            bridge_repeats: 1,
            tts_pretrain: 36,
            finetune: 50,
            test_in: 20,
            test_ood: 40,
            text_eval: 6,
        }
    }

    #[test]
    fn vocabulary_is_fifty_distinct_words() {
        let set: BTreeSet<_> = WORDS.iter().collect();
        assert_eq!(set.len(), 50);
    }

    #[test]
    fn split_sizes_and_rules() {
        let c = build_corpus(&small()).unwrap();
        assert_eq!(c.test_in.len(), 20);
        assert_eq!(c.test_ood.len(), 40);
        assert_eq!(c.tts_pretrain.len(), 36);
        assert!(c.finetune.iter().all(|r| r.domain == Domain::InDomain && r.description.is_some()));
        assert!(c.tts_pretrain.iter().all(|r| r.description.is_none()));
        assert!(c.test_ood.iter().all(|r| r.domain == Domain::OutOfDomain));
        assert!(c.base.iter().all(|r| r.response.is_some() && r.speech.is_empty()));
        assert!(c.base.iter().any(|r| r.domain == Domain::OutOfDomain && r.attrs.is_some()));
        assert!(c.base.iter().any(|r| r.attrs.is_none()));
    }

    #[test]
    fn every_combination_in_training_splits() {
        let c = build_corpus(&small()).unwrap();
        let all: BTreeSet<_> = VoiceAttributes::all().into_iter().collect();
        for split in [&c.tts_pretrain, &c.finetune] {
            let seen: BTreeSet<_> = split.iter().filter_map(|r| r.attrs).collect();
            assert_eq!(seen, all);
        }
        let seen: BTreeSet<_> = c.test_ood.iter().filter_map(|r| r.attrs).collect();
        assert_eq!(seen, all);
    }

    #[test]
    fn test_transcripts_held_out() {
        let c = build_corpus(&small()).unwrap();
        let train: BTreeSet<_> = c
            .base
            .iter()
            .chain(&c.tts_pretrain)
            .chain(&c.finetune)
            .map(|r| r.transcript.clone())
            .collect();
        for r in c.test_in.iter().chain(&c.test_ood) {
            assert!(!train.contains(&r.transcript), "{}", r.transcript);
        }
    }

    #[test]
    fn speech_targets_decode() {
        let c = build_corpus(&small()).unwrap();
        for r in c.finetune.iter().chain(&c.test_ood) {
            let d = oracle_decode(&r.speech, DecodeMode::Strict).unwrap();
            assert_eq!(Some(d.attrs), r.attrs);
            assert_eq!(d.transcript, r.transcript);
        }
    }

    #[test]
    fn too_small_split_rejected() {
        let spec = CorpusSpec {
            finetune: 10,
            ..small()
        };
        assert!(matches!(build_corpus(&spec), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn files_are_byte_identical_across_runs() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_corpus(&small(), a.path()).unwrap();
        generate_corpus(&small(), b.path()).unwrap();
        for f in [BASE_FILE, TTS_FILE, FINETUNE_FILE, TEST_IN_FILE, TEST_OOD_FILE, TEXT_EVAL_FILE] {
            let x = std::fs::read(a.path().join(f)).unwrap();
            let y = std::fs::read(b.path().join(f)).unwrap();
            assert!(!x.is_empty());
            assert_eq!(x, y, "{f}");
        }
    }
}
