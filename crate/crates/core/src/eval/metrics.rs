//! Text-retention metrics and attribute/content accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{generate, BaseModel, GenerateOptions, MoeModel, Network};
use crate::seqfmt::{CharTokenizer, CorpusRecord, EncodedSequence, Modality};
use crate::synthdata::{oracle_decode, Attribute, DecodeMode};

fn require_text(seq: &EncodedSequence) -> Result<()> {
    match seq.modality_mask.iter().position(|&m| m != Modality::Text) {
        Some(i) => Err(Error::Contract(format!(
            "text corpus holds a speech token at position {i}"
        ))),
        None => Ok(()),
    }
}

/// Largest absolute difference between the base model's logits and the routed
/// model's logits over text-vocabulary columns, across every position.
pub fn text_logit_delta(base: &BaseModel, m: &MoeModel, corpus: &[EncodedSequence]) -> Result<f64> {
    let cols: Vec<usize> = base
        .network()
        .columns()
        .iter()
        .map(|&id| {
            m.network()
                .column_of(id)
                .ok_or_else(|| Error::Contract(format!("routed model lacks text id {id}")))
        })
        .collect::<Result<_>>()?;
    let mut worst = 0.0f64;
    for seq in corpus {
        require_text(seq)?;
        let a = base.forward(&seq.ids)?;
        let b = m.forward(seq)?;
        for i in 0..a.rows {
            for (j, &c) in cols.iter().enumerate() {
                worst = worst.max((a.row(i)[j] - b.row(i)[c]).abs());
            }
        }
    }
    Ok(worst)
}

/// `exp` of the mean next-token NLL over every position of a pure-text corpus,
/// with logits renormalized over the text vocabulary.
pub fn perplexity(net: &Network, corpus: &[EncodedSequence]) -> Result<f64> {
    let text_ids = net.config().vocab.base_ids();
    let cols: Vec<usize> = text_ids
        .iter()
        .map(|&id| net.column_of(id).expect("every network covers the text vocabulary"))
        .collect();
    let mut sum = 0.0;
    let mut count = 0usize;
    for seq in corpus {
        require_text(seq)?;
        let logits = net.forward_ids(&seq.ids)?;
        for i in 0..seq.ids.len().saturating_sub(1) {
            let row = logits.row(i);
            let sub: Vec<f64> = cols.iter().map(|&c| row[c]).collect();
            let target = text_ids
                .iter()
                .position(|&id| id == seq.ids[i + 1])
                .expect("checked text above");
            sum += crate::train::position_nll(&sub, target);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Contract("perplexity of an empty corpus".into()));
    }
    Ok((sum / count as f64).exp())
}

/// Produces speech tokens (local ids) for a test record.
pub trait SpeechSource {
    fn speak(&self, index: usize, record: &CorpusRecord) -> Result<Vec<u32>>;
}

/// Reads the description and transcript, then decodes from the model.
pub struct ModelSpeaker<'a> {
    pub model: &'a MoeModel,
    pub tokenizer: CharTokenizer,
    pub options: GenerateOptions,
}

impl<'a> ModelSpeaker<'a> {
    pub fn new(model: &'a MoeModel, options: GenerateOptions) -> Result<Self> {
        Ok(ModelSpeaker {
            tokenizer: CharTokenizer::new(model.vocab())?,
            model,
            options,
        })
    }
}

impl SpeechSource for ModelSpeaker<'_> {
    fn speak(&self, index: usize, record: &CorpusRecord) -> Result<Vec<u32>> {
        let prefix = record.prompt(&self.tokenizer, self.model.vocab())?;
        let opts = GenerateOptions {
            seed: self.options.seed.wrapping_add(index as u64),
            ..self.options
        };
        generate(self.model, &prefix, opts)
    }
}

/// Returns each record's reference tokens; pins the scoring pipeline at 1.0.
pub struct TeacherForced;

impl SpeechSource for TeacherForced {
    fn speak(&self, _index: usize, record: &CorpusRecord) -> Result<Vec<u32>> {
        Ok(record.speech.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeScores {
    pub gender: f64,
    pub pitch: f64,
    pub speed: f64,
    pub style: f64,
}

impl AttributeScores {
    pub fn get(&self, attr: Attribute) -> f64 {
        match attr {
            Attribute::Gender => self.gender,
            Attribute::Pitch => self.pitch,
            Attribute::Speed => self.speed,
            Attribute::Style => self.style,
        }
    }

    pub fn min(&self) -> f64 {
        Attribute::ALL.iter().map(|&a| self.get(a)).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub total: usize,
    pub decodable: usize,
    /// Matches over tolerant-decodable outputs.
    pub accuracy: AttributeScores,
    /// Undecodable (tolerant) over total.
    pub failure_rate: f64,
    /// Outputs the strict decoder rejects, over total.
    pub strict_failure_rate: f64,
    /// Mean character error rate against the reference transcript, capped at 1
    /// per record; undecodable outputs count as 1.
    pub transcript_error_rate: f64,
}

/// Edit distance between two character sequences.
pub fn levenshtein(a: &[char], b: &[char]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn char_error_rate(hyp: &str, reference: &str) -> f64 {
    let h: Vec<char> = hyp.chars().collect();
    let r: Vec<char> = reference.chars().collect();
    let d = levenshtein(&h, &r) as f64;
    (d / r.len().max(1) as f64).min(1.0)
}

/// Generates for every record, decodes with the oracle and scores each
/// attribute and the transcript.
pub fn attribute_accuracy(source: &dyn SpeechSource, testset: &[CorpusRecord]) -> Result<AccuracyReport> {
    let mut hits = [0usize; 4];
    let mut decodable = 0;
    let mut strict_fail = 0;
    let mut cer_sum = 0.0;
    for (i, rec) in testset.iter().enumerate() {
        let truth = rec
            .attrs
            .ok_or_else(|| Error::Contract(format!("test record {i} has no attributes")))?;
        let tokens = source.speak(i, rec)?;
        if oracle_decode(&tokens, DecodeMode::Strict).is_err() {
            strict_fail += 1;
        }
        match oracle_decode(&tokens, DecodeMode::Tolerant) {
            Ok(d) => {
                decodable += 1;
                for (k, attr) in Attribute::ALL.iter().enumerate() {
                    if d.attrs.value_index(*attr) == truth.value_index(*attr) {
                        hits[k] += 1;
                    }
                }
                cer_sum += char_error_rate(&d.transcript, &rec.transcript);
            }
            Err(_) => cer_sum += 1.0,
        }
    }
    let total = testset.len();
    let frac = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    Ok(AccuracyReport {
        total,
        decodable,
        accuracy: AttributeScores {
            gender: frac(hits[0], decodable),
            pitch: frac(hits[1], decodable),
            speed: frac(hits[2], decodable),
            style: frac(hits[3], decodable),
        },
        failure_rate: frac(total - decodable, total),
        strict_failure_rate: frac(strict_fail, total),
        transcript_error_rate: if total == 0 { 0.0 } else { cer_sum / total as f64 },
    })
}
