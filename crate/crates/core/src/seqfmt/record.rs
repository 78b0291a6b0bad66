//! Line-delimited corpus records.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::chars::CharTokenizer;
use super::template::{assemble_example, assemble_text_chat, ChatExample, EncodedSequence};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::synthdata::VoiceAttributes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    #[serde(rename = "in")]
    InDomain,
    #[serde(rename = "ood")]
    OutOfDomain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub system: String,
    pub description: Option<String>,
    pub transcript: String,
    /// Local speech ids in `[0, Vs)`.
    pub speech: Vec<u32>,
    pub attrs: Option<VoiceAttributes>,
    pub domain: Domain,
    /// Text answer of the assistant; only present in base-model text records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
}

impl CorpusRecord {
    pub fn to_chat_example(&self, tok: &CharTokenizer, vocab: &Vocabulary) -> Result<ChatExample> {
        let speech = self
            .speech
            .iter()
            .map(|&s| {
                vocab
                    .speech_id(s)
                    .map_err(|_| Error::MixedModality(format!("speech token {s} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ChatExample {
            system: tok.encode(&self.system)?,
            description: match &self.description {
                Some(d) => tok.encode(d)?,
                None => Vec::new(),
            },
            transcript: tok.encode(&self.transcript)?,
            speech,
        })
    }

    /// Training sequence for this record: a text conversation when it carries a
    /// text response, otherwise the speech template with target.
    pub fn encode(&self, tok: &CharTokenizer, vocab: &Vocabulary) -> Result<EncodedSequence> {
        match &self.response {
            Some(resp) => {
                let ex = self.to_chat_example(tok, vocab)?;
                assemble_text_chat(
                    &ex.system,
                    &ex.description,
                    &ex.transcript,
                    &tok.encode(resp)?,
                    vocab,
                )
            }
            None => assemble_example(&self.to_chat_example(tok, vocab)?, vocab, true),
        }
    }

    /// Generation prefix (assistant turn open, no target).
    pub fn prompt(&self, tok: &CharTokenizer, vocab: &Vocabulary) -> Result<EncodedSequence> {
        let mut ex = self.to_chat_example(tok, vocab)?;
        ex.speech.clear();
        assemble_example(&ex, vocab, false)
    }
}

pub fn write_corpus(path: &Path, records: &[CorpusRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            Error::Parse(format!("{}:{}: {e}", path.display(), n + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}
